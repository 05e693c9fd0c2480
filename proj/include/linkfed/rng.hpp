#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace linkfed {

// splitmix64 step; used to derive independent stream seeds from one root seed
// so that adding a consumer never shifts the draws of another.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream_id) {
  std::uint64_t s = root ^ (0x6a09e667f3bcc909ULL + stream_id * 0x9e3779b97f4a7c15ULL);
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  return a ^ (b << 1);
}

// mt19937_64 with hand-rolled draw helpers. std::uniform_*_distribution is
// implementation-defined, which would silently break byte-identical reports
// across toolchain upgrades; these helpers pin the mapping.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1) with 53 bits of mantissa
  double next_unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return next_unit() < p; }

  // uniform integer in [lo, hi] inclusive, rejection-sampled to avoid modulo bias
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1ULL;
    if (span == 0) return static_cast<std::int64_t>(eng_());  // full 64-bit range
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t draw;
    do {
      draw = eng_();
    } while (draw >= limit);
    return lo + static_cast<std::int64_t>(draw % span);
  }

  double uniform_real(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // standard normal via Box-Muller (polar form avoided to keep draw count fixed)
  double gaussian() {
    double u1 = next_unit();
    while (u1 <= 0.0) u1 = next_unit();
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  Eigen::VectorXd unit_vector(int dim) {
    if (dim < 1) throw std::invalid_argument("unit_vector: dim < 1");
    Eigen::VectorXd w(dim);
    double norm = 0.0;
    do {
      for (int i = 0; i < dim; ++i) w[i] = gaussian();
      norm = w.norm();
    } while (norm < 1e-12);
    return w / norm;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace linkfed
