#pragma once

// Hand-rolled generators for property tests. They use std::mt19937_64 so that
// test inputs never depend on the library's own random stream.

#include <cstdint>
#include <random>
#include <vector>

#include "tscn/numeric.hpp"

namespace gen {

class Source {
public:
  explicit Source(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(eng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_); }
  template <typename T>
  const T& pick(const std::vector<T>& v) { return v[index(v.size())]; }

  tscn::Matrix<double> matrix(std::size_t r, std::size_t c, double sd = 1.0) {
    tscn::Matrix<double> m(r, c);
    for (auto& x : m.data()) x = normal(sd);
    return m;
  }

  tscn::Matrix<double> symmetric(std::size_t n) {
    auto m = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j) m(j, i) = m(i, j);
    return m;
  }

  std::vector<std::uint32_t> labels(std::size_t n, std::uint32_t classes) {
    std::vector<std::uint32_t> y(n);
    for (auto& v : y) v = static_cast<std::uint32_t>(index(classes));
    return y;
  }

  std::mt19937_64& engine() { return eng_; }

private:
  std::mt19937_64 eng_;
};

} // namespace gen
