#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace orca {

using TokenId = std::int32_t;
// Position of a pretraining example inside its expanded corpus. All
// "smallest id" tie-breaks are taken on this index.
using ExampleIndex = std::uint32_t;

inline constexpr std::string_view kVersion = "0.3.1";

// Invalid configuration or arguments. The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent data (bad JSONL, dangling ids, empty inputs).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Not enough eligible examples to fill a selection request.
class SelectionShortfall : public std::runtime_error {
 public:
  SelectionShortfall(std::size_t requested, std::size_t eligible)
      : std::runtime_error("selection shortfall: requested " + std::to_string(requested) +
                           " examples but only " + std::to_string(eligible) + " are eligible"),
        requested_(requested),
        eligible_(eligible) {}
  std::size_t requested() const { return requested_; }
  std::size_t eligible() const { return eligible_; }

 private:
  std::size_t requested_;
  std::size_t eligible_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
// FNV-1a; stable across platforms, used to derive per-document seeds.
std::uint64_t hash_string(std::string_view s);

// Seeded generator with portable derived draws. The standard distributions
// are implementation-defined, so bounded integers, uniforms and normals are
// computed here from the raw mt19937_64 stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next() { return engine_(); }
  // Unbiased draw from [0, n) by rejection; n > 0.
  std::size_t uniform_index(std::size_t n);
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double normal();
  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Runs fn(i) for i in [0, n) on `workers` threads with static contiguous
// chunks. Results must be written to preallocated per-index slots.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn);

}  // namespace orca

#include "orca/parallel_impl.hpp"
