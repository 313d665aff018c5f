#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sorscn {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Each distinct (base, path) pair maps to its own substream, so parallel
// candidates, trials and grid points never share generator state.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t p : path) {
    h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  }
  return h;
}

inline Rng make_stream(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(base, path));
}

template <typename Derived>
void fill_uniform(Eigen::DenseBase<Derived>& m, typename Derived::Scalar lo,
                  typename Derived::Scalar hi, Rng& rng) {
  std::uniform_real_distribution<typename Derived::Scalar> dist(lo, hi);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      m(i, j) = dist(rng);
    }
  }
}

template <typename Derived>
void fill_normal(Eigen::DenseBase<Derived>& m, typename Derived::Scalar stddev, Rng& rng) {
  std::normal_distribution<typename Derived::Scalar> dist(0, stddev);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      m(i, j) = dist(rng);
    }
  }
}

}  // namespace sorscn
