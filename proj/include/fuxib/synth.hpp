#pragma once

#include "fuxib/data.hpp"

namespace fuxib {

// Deterministic cyclic-pattern dataset: every user walks the item cycle
// 1 -> 2 -> ... -> item_count -> 1 from a random phase, one step per day.
// The successor of any item is exactly determined, so a model that learns
// the transition ranks every held-out target first.
inline Dataset make_cyclic_dataset(int users, int item_count, int min_len,
                                   int max_len_seq, int max_len,
                                   std::uint64_t seed) {
  if (users < 1 || item_count < 2) throw config_error("cyclic dataset too small");
  if (min_len < 3 || max_len_seq < min_len)
    throw config_error("cyclic dataset lengths invalid");
  Dataset ds;
  ds.item_count = item_count;
  ds.max_len = max_len;
  Rng rng(seed);
  ds.users.reserve(static_cast<std::size_t>(users));
  for (int u = 0; u < users; ++u) {
    UserData ud;
    ud.user_id = u + 1;
    int len = static_cast<int>(rng.uniform_int(min_len, max_len_seq));
    auto item = static_cast<std::int32_t>(rng.uniform_int(1, item_count));
    std::int64_t t = rng.uniform_int(0, 1000) * 86400;
    for (int k = 0; k < len; ++k) {
      ud.items.push_back(item);
      ud.timestamps.push_back(t);
      item = item % item_count + 1;
      t += 86400;
    }
    ds.users.push_back(std::move(ud));
  }
  return ds;
}

}  // namespace fuxib
