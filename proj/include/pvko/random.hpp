#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace pvko {

/// SplitMix64 finalizer; used to derive independent stream keys from (seed, stream id).
constexpr std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t stream)
{
  return splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
}

/// Uniform double in [0, 1) that depends only on (key, counter).
constexpr double counter_uniform(std::uint64_t key, std::uint64_t counter)
{
  return static_cast<double>(splitmix64(key ^ splitmix64(counter)) >> 11) * 0x1.0p-53;
}

/// Sequential generator with a bit-reproducible double conversion (no std distributions,
/// whose output is implementation defined).
class Rng
{
public:
  explicit Rng(std::uint64_t key) : engine_(key) {}
  Rng(std::uint64_t seed, std::uint64_t stream) : engine_(stream_key(seed, stream)) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  Eigen::VectorXd uniform(const Eigen::VectorXd & lo, const Eigen::VectorXd & hi)
  {
    Eigen::VectorXd v(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) { v(i) = uniform(lo(i), hi(i)); }
    return v;
  }

  /// Symmetric Dirichlet(1, ..., 1) sample via normalized exponentials.
  Eigen::VectorXd dirichlet(int k)
  {
    Eigen::VectorXd v(k);
    for (int i = 0; i < k; ++i) { v(i) = -std::log(1.0 - uniform()); }
    return v / v.sum();
  }

private:
  std::mt19937_64 engine_;
};

}  // namespace pvko
