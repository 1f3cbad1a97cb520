#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fuxib/common.hpp"

namespace fuxib {

struct RawInteraction {
  int user_id = 0;
  int item_id = 0;   // remapped to dense 1..item_count after parsing
  int rating = 0;    // parsed but ignored downstream
  std::int64_t timestamp = 0;
};

// One user's retained interactions, chronological.
struct UserData {
  int user_id = 0;
  std::vector<std::int32_t> items;
  std::vector<std::int64_t> timestamps;
};

// Parsed, filtered, remapped interactions plus the sequence-length setting.
// This is the unit of serialization; splits are materialized from it.
struct Dataset {
  int item_count = 0;
  int max_len = 0;
  std::vector<UserData> users;

  std::uint64_t interaction_count() const {
    std::uint64_t n = 0;
    for (const auto& u : users) n += u.items.size();
    return n;
  }
};

// A fixed-length model input: items/timestamps are left-aligned with
// trailing padding (item index 0), target is the next item after the last
// non-padded position.
struct InteractionSequence {
  int user_id = 0;
  std::vector<std::int32_t> items;       // size max_len, 0 = padding
  std::vector<std::int64_t> timestamps;  // size max_len, 0 at padding
  int true_length = 0;
  std::int32_t target = 0;

  // training target for position k (shifted next item)
  std::int32_t target_at(int k) const {
    return k + 1 < true_length ? items[static_cast<std::size_t>(k + 1)] : target;
  }
};

struct SplitDataset {
  int item_count = 0;
  int user_count = 0;
  int max_len = 0;
  std::vector<InteractionSequence> train;
  std::vector<InteractionSequence> validation;
  std::vector<InteractionSequence> test;
};

enum class SourceFormat { auto_detect, dat, csv };

namespace datadetail {

inline bool parse_i64(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

inline bool parse_rating(std::string_view s, int& out) {
  std::int64_t i;
  if (parse_i64(s, i)) {
    out = static_cast<int>(i);
    return true;
  }
  double d;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
  if (ec != std::errc() || p != s.data() + s.size()) return false;
  out = static_cast<int>(std::lround(d));
  return true;
}

inline std::vector<std::string_view> split_sv(std::string_view line,
                                              std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + sep.size();
  }
  return out;
}

[[noreturn]] inline void line_error(std::size_t lineno, const std::string& what) {
  throw parse_error("parse error at line " + std::to_string(lineno) + ": " + what);
}

}  // namespace datadetail

// Parses a MovieLens-format interaction log. `.dat` lines are
// UserID::MovieID::Rating::Timestamp; `.csv` starts with the header
// userId,movieId,rating,timestamp. Users with fewer than min_interactions
// interactions are dropped, per-user lists are sorted by timestamp with ties
// kept in file order, and item ids are remapped to dense 1..item_count.
inline Dataset parse_movielens(const std::string& path, int min_interactions,
                               SourceFormat format = SourceFormat::auto_detect) {
  using namespace datadetail;
  if (format == SourceFormat::auto_detect) {
    format = path.size() >= 4 && path.substr(path.size() - 4) == ".csv"
                 ? SourceFormat::csv
                 : SourceFormat::dat;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open input file: " + path);

  std::map<int, std::vector<RawInteraction>> by_user;  // ordered for determinism
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (format == SourceFormat::csv && !saw_header) {
      saw_header = true;
      if (line != "userId,movieId,rating,timestamp")
        line_error(lineno, "expected header userId,movieId,rating,timestamp");
      continue;
    }
    auto fields = format == SourceFormat::csv ? split_sv(line, ",")
                                              : split_sv(line, "::");
    if (fields.size() != 4) line_error(lineno, "expected 4 fields");
    RawInteraction r;
    std::int64_t v;
    if (!parse_i64(fields[0], v) || v < 1) line_error(lineno, "bad user id");
    r.user_id = static_cast<int>(v);
    if (!parse_i64(fields[1], v) || v < 1) line_error(lineno, "bad item id");
    r.item_id = static_cast<int>(v);
    if (!parse_rating(fields[2], r.rating)) line_error(lineno, "bad rating");
    if (!parse_i64(fields[3], r.timestamp) || r.timestamp < 0)
      line_error(lineno, "bad timestamp");
    by_user[r.user_id].push_back(r);
  }

  Dataset ds;
  std::unordered_set<int> retained_items;
  for (auto& [uid, recs] : by_user) {
    if (static_cast<int>(recs.size()) < min_interactions) continue;
    std::stable_sort(recs.begin(), recs.end(),
                     [](const RawInteraction& a, const RawInteraction& b) {
                       return a.timestamp < b.timestamp;
                     });
    for (const auto& r : recs) retained_items.insert(r.item_id);
    UserData u;
    u.user_id = uid;
    u.items.reserve(recs.size());
    u.timestamps.reserve(recs.size());
    for (const auto& r : recs) {
      u.items.push_back(r.item_id);  // remapped below
      u.timestamps.push_back(r.timestamp);
    }
    ds.users.push_back(std::move(u));
  }
  if (ds.users.empty())
    throw parse_error("empty dataset: no user has >= " +
                      std::to_string(min_interactions) + " interactions");

  // dense remap in ascending original-id order
  std::vector<int> ids(retained_items.begin(), retained_items.end());
  std::sort(ids.begin(), ids.end());
  std::unordered_map<int, std::int32_t> remap;
  remap.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    remap[ids[i]] = static_cast<std::int32_t>(i + 1);
  for (auto& u : ds.users)
    for (auto& it : u.items) it = remap[it];
  ds.item_count = static_cast<int>(ids.size());
  return ds;
}

// Leave-one-out splits: the final interaction is the test target, the
// second-to-last the validation target, and training predicts the shifted
// next item over the prefix before both.
inline SplitDataset build_sequences(const Dataset& ds, int n) {
  if (n < 2) throw config_error("max sequence length must be >= 2");
  SplitDataset out;
  out.item_count = ds.item_count;
  out.max_len = n;
  auto window = [&](const UserData& u, int end_exclusive, std::int32_t target) {
    InteractionSequence s;
    s.user_id = u.user_id;
    s.items.assign(static_cast<std::size_t>(n), 0);
    s.timestamps.assign(static_cast<std::size_t>(n), 0);
    int start = std::max(0, end_exclusive - n);
    s.true_length = end_exclusive - start;
    for (int k = 0; k < s.true_length; ++k) {
      s.items[static_cast<std::size_t>(k)] = u.items[static_cast<std::size_t>(start + k)];
      s.timestamps[static_cast<std::size_t>(k)] =
          u.timestamps[static_cast<std::size_t>(start + k)];
    }
    s.target = target;
    return s;
  };
  for (const auto& u : ds.users) {
    const int T = static_cast<int>(u.items.size());
    if (T < 3)
      throw config_error("user " + std::to_string(u.user_id) +
                         " has fewer than 3 interactions");
    // train/validation input: prefix before the validation target
    out.train.push_back(window(u, T - 2, u.items[static_cast<std::size_t>(T - 2)]));
    out.validation.push_back(window(u, T - 2, u.items[static_cast<std::size_t>(T - 2)]));
    out.test.push_back(window(u, T - 1, u.items[static_cast<std::size_t>(T - 1)]));
  }
  out.user_count = static_cast<int>(ds.users.size());
  return out;
}

// N uniform draws from 1..item_count excluding `exclude`; duplicates among
// the negatives are allowed.
inline std::vector<std::int32_t> sample_negatives(Rng& rng, int item_count,
                                                  const std::unordered_set<std::int32_t>& exclude,
                                                  int n_samples) {
  if (n_samples < 1) throw config_error("negative sample count must be >= 1");
  if (item_count <= static_cast<int>(exclude.size()))
    throw config_error("cannot sample negatives: exclusion covers the item set");
  std::vector<std::int32_t> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  while (static_cast<int>(out.size()) < n_samples) {
    auto v = static_cast<std::int32_t>(rng.uniform_int(1, item_count));
    if (exclude.count(v)) continue;
    out.push_back(v);
  }
  return out;
}

// ---- binary dataset file ----
// magic FXB1 | u32 version | u32 users | u32 items | u32 max_len |
// u64 interactions | per user: u32 user_id, u32 m, m x (u32 item, i64 ts).
// All integers little-endian.

namespace datadetail {

inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& b;
  std::size_t pos = 0;
  std::uint32_t u32() {
    if (pos + 4 > b.size()) throw parse_error("dataset file truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    if (pos + 8 > b.size()) throw parse_error("dataset file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 8;
    return v;
  }
};

}  // namespace datadetail

inline std::string serialize_dataset(const Dataset& ds) {
  using namespace datadetail;
  std::string b;
  b += "FXB1";
  put_u32(b, 1);
  put_u32(b, static_cast<std::uint32_t>(ds.users.size()));
  put_u32(b, static_cast<std::uint32_t>(ds.item_count));
  put_u32(b, static_cast<std::uint32_t>(ds.max_len));
  put_u64(b, ds.interaction_count());
  for (const auto& u : ds.users) {
    put_u32(b, static_cast<std::uint32_t>(u.user_id));
    put_u32(b, static_cast<std::uint32_t>(u.items.size()));
    for (std::size_t i = 0; i < u.items.size(); ++i) {
      put_u32(b, static_cast<std::uint32_t>(u.items[i]));
      put_u64(b, static_cast<std::uint64_t>(u.timestamps[i]));
    }
  }
  return b;
}

inline Dataset deserialize_dataset(const std::string& bytes) {
  using namespace datadetail;
  if (bytes.size() < 4 || bytes.substr(0, 4) != "FXB1")
    throw parse_error("not a dataset file (bad magic)");
  Reader r{bytes, 4};
  std::uint32_t version = r.u32();
  if (version != 1) throw parse_error("unsupported dataset file version");
  Dataset ds;
  std::uint32_t users = r.u32();
  ds.item_count = static_cast<int>(r.u32());
  ds.max_len = static_cast<int>(r.u32());
  std::uint64_t interactions = r.u64();
  ds.users.resize(users);
  std::uint64_t seen = 0;
  for (auto& u : ds.users) {
    u.user_id = static_cast<int>(r.u32());
    std::uint32_t m = r.u32();
    u.items.resize(m);
    u.timestamps.resize(m);
    for (std::uint32_t i = 0; i < m; ++i) {
      u.items[i] = static_cast<std::int32_t>(r.u32());
      u.timestamps[i] = static_cast<std::int64_t>(r.u64());
    }
    seen += m;
  }
  if (seen != interactions) throw parse_error("dataset file interaction count mismatch");
  return ds;
}

inline void write_dataset_file(const std::string& path, const Dataset& ds) {
  std::string bytes = serialize_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw parse_error("cannot write dataset file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw parse_error("failed writing dataset file: " + path);
}

inline Dataset read_dataset_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open dataset file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return deserialize_dataset(bytes);
}

inline std::string dataset_hash(const Dataset& ds) {
  std::string bytes = serialize_dataset(ds);
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

}  // namespace fuxib
