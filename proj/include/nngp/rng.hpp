#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace nngp {

// Splittable deterministic RNG: independent streams are derived from
// (seed, stream id) through a splitmix64 mix, so per-chain and per-location
// substreams never overlap in practice and threading cannot change draws.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    base_ = splitmix64(x);
    std::uint64_t s[4];
    for (auto& v : s) v = splitmix64(x);
    std::seed_seq seq{s[0], s[1], s[2], s[3]};
    gen_.seed(seq);
  }

  // Independent substream keyed off this stream's identity, not its state.
  RngStream split(std::uint64_t substream) const {
    return RngStream(base_, substream + 1);
  }

  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(gen_);
  }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }

  double normal() {
    return std::normal_distribution<double>(0.0, 1.0)(gen_);
  }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = normal();
    return z;
  }

  double gamma(double shape, double scale) {
    return std::gamma_distribution<double>(shape, scale)(gen_);
  }

  // X ~ IG(a, b): 1 / Gamma(a, 1/b)
  double inverse_gamma(double shape, double rate) {
    return 1.0 / std::gamma_distribution<double>(shape, 1.0 / rate)(gen_);
  }

  std::uint64_t integer(std::uint64_t bound) {
    return std::uniform_int_distribution<std::uint64_t>(0, bound - 1)(gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t base_ = 0;
  std::mt19937_64 gen_;
};

}  // namespace nngp
