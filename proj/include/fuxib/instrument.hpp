#pragma once

#include <cstdint>

namespace fuxib::instrument {

// Classification of matmul work for complexity accounting. Call sites tag
// each product so counted multiplies can be mapped back onto the closed-form
// leading terms (projection ~ n*d^2, attention map ~ n^2*d, ffn ~ n*d_ffn*d).
enum class FlopTag : int {
  untagged = 0,
  projection = 1,
  attention_map = 2,
  ffn = 3,
};
inline constexpr int kNumTags = 4;

struct Counters {
  std::uint64_t mults[kNumTags] = {0, 0, 0, 0};
  // data-dependent indexed reads into learnable tables
  std::uint64_t gathers = 0;

  std::uint64_t total_mults() const {
    std::uint64_t t = 0;
    for (auto m : mults) t += m;
    return t;
  }
};

inline Counters& counters() {
  thread_local Counters c;
  return c;
}

inline void reset() { counters() = Counters{}; }

inline Counters snapshot() { return counters(); }

inline void add_mults(FlopTag tag, std::uint64_t n) {
  counters().mults[static_cast<int>(tag)] += n;
}

inline void add_gathers(std::uint64_t n) { counters().gathers += n; }

}  // namespace fuxib::instrument
