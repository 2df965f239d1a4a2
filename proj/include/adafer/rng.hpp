#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace adafer {

/// Tags that separate the random streams drawn from one base seed.
enum class Stream : std::uint64_t {
  SynthMeta = 1,
  SynthSample = 2,
  Mining = 3,
  HeadInit = 4,
  ShuffleSource = 5,
  ShuffleTarget = 6,
  ShuffleTriplets = 7,
  Split = 8,
};

// Engine for the stream identified by (seed, tag, keys...). Two calls with
// the same arguments yield identical sequences regardless of call order.
inline std::mt19937_64 keyed_engine(std::uint64_t seed, Stream tag,
                                    std::initializer_list<std::uint64_t> keys = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(4 + 2 * keys.size());
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  push(static_cast<std::uint64_t>(tag));
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

template <class Engine>
std::vector<std::size_t> random_permutation(std::size_t n, Engine& engine) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(engine)]);
  }
  return order;
}

}  // namespace adafer
