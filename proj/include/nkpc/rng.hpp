#pragma once

#include <cstdint>
#include <random>

#include "nkpc/types.hpp"

namespace nkpc {

/// SplitMix64 finalizer; used to derive independent engine seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// A seeded random stream identified by (seed, stream id).
///
/// Streams are splittable: `child(k)` yields a stream whose id is a hash of the
/// parent id and k, so per-feature and per-noise-source streams can be created in
/// any order and still reproduce the same draws.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) : seed_(seed), stream_(stream_id) {
    const std::uint64_t a = splitmix64(seed);
    const std::uint64_t b = splitmix64(stream_id ^ 0x5851f42d4c957f2dULL);
    std::seed_seq seq{std::uint32_t(a), std::uint32_t(a >> 32), std::uint32_t(b),
                      std::uint32_t(b >> 32)};
    engine_.seed(seq);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }

  RngStream child(std::uint64_t k) const {
    return RngStream(seed_, splitmix64(stream_ * 0x2545f4914f6cdd1dULL + splitmix64(k + 1)));
  }

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

  template <typename Scalar = double>
  Vector<Scalar> standard_normal(Eigen::Index n) {
    Vector<Scalar> z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = Scalar(normal());
    return z;
  }

  template <typename Scalar = double>
  Matrix<Scalar> standard_normal(Eigen::Index rows, Eigen::Index cols) {
    Matrix<Scalar> z(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) z(i, j) = Scalar(normal());
    return z;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace nkpc
