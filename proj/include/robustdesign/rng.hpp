#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string_view>

namespace robustdesign {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Counter-based generator: the n-th output is a pure function of (key, n),
/// so streams can be split by index without any shared state.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : key_(detail::mix64(seed ^ detail::kGolden)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  /// Independent child stream keyed by an integer (draw index, restart, ...).
  Rng split(std::uint64_t index) const {
    Rng child;
    child.key_ = detail::mix64(key_ ^ detail::mix64(index + 0x632BE59BD9B4E019ULL));
    return child;
  }

  /// Independent child stream keyed by a name ("inner", "prior", ...).
  Rng split(std::string_view tag) const { return split(detail::hash_tag(tag)); }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Standard-normal draws from a dedicated stream.
class NormalStream {
 public:
  explicit NormalStream(Rng rng) : rng_(rng) {}
  double operator()() { return dist_(rng_); }

 private:
  Rng rng_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace robustdesign
