#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace wavjepa {

using Rng = std::mt19937_64;

/// Builds a generator from a base seed and any number of stream tags
/// (step, instance, purpose...). Equal tag lists give equal streams.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq tagged(words.begin(), words.end());
  return Rng(tagged);
}

/// Stream tags, so that independent consumers of one seed never collide.
enum class Stream : std::uint64_t {
  init = 1,
  data_order = 2,
  crops = 3,
  sampler = 4,
  scene = 5,
  probe = 6,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace wavjepa
