#pragma once

#include <cstdint>
#include <random>

namespace atv {

// splitmix64 finalizer; used to derive independent seed streams from
// (base_seed, epoch, sample_index) style keys.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix(uint64_t a, uint64_t b) { return mix64(mix64(a) ^ (b + 0x632be59bd9b4e019ULL)); }

inline uint64_t mix(uint64_t a, uint64_t b, uint64_t c) { return mix(mix(a, b), c); }

// Seeded generator wrapper. All randomness in the project flows through
// this type so that every run is reproducible from explicit 64-bit seeds.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }

  double normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen_);
  }

  // uniform integer in [0, n)
  int64_t index(int64_t n) {
    std::uniform_int_distribution<int64_t> d(0, n - 1);
    return d(gen_);
  }

  bool bernoulli(double p) {
    std::bernoulli_distribution d(p);
    return d(gen_);
  }

  uint64_t next() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace atv
