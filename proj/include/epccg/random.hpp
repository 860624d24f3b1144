#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace epccg {

// Portable sampling helpers over std::mt19937_64. The standard
// distributions are implementation-defined, so everything that has to be
// reproducible goes through these instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // Index drawn proportionally to non-negative weights.
  template <typename Weights>
  std::size_t categorical(const Weights& w) {
    double total = 0.0;
    for (double x : w) total += x;
    double r = uniform() * total;
    std::size_t last = 0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(w.size()); ++i) {
      if (w[i] <= 0.0) continue;
      last = i;
      if (r < w[i]) return i;
      r -= w[i];
    }
    return last;
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace epccg
