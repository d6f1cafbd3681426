#pragma once

#include <algorithm>
#include <random>

#include "hyperinvert/core/tensor.hpp"

namespace hyperinvert {

// Seeded RNG wrapper; every stochastic component draws from its own Rng so
// runs are reproducible given the experiment seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // Stable sub-seed for a named stream (data sampling, init, proxies, ...).
  static uint64_t derive(uint64_t seed, uint64_t salt) {
    uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL + salt * 0xbf58476d1ce4e5b9ULL);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
  }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
    return std::uniform_int_distribution<int64_t>(lo, hi)(gen_);
  }

  template <class T>
  void fill_normal(Tensor<T>& t, double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> dist(mean, stddev);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(gen_));
  }

  template <class T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(gen_));
  }

  template <class It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace hyperinvert
