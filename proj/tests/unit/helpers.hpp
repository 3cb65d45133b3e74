#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "getcap/tensor.hpp"

namespace testing {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const getcap::Tensor& a, const getcap::Tensor& b) {
  return max_abs_diff(a.data(), b.data());
}

inline bool bit_equal(const getcap::Tensor& a, const getcap::Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

inline std::span<const double> row_span(const getcap::Tensor& t, std::size_t i) {
  return t.data().subspan(i * t.cols(), t.cols());
}

inline bool bit_equal_rows(const getcap::Tensor& a, const getcap::Tensor& b, std::size_t row) {
  const std::size_t c = a.cols();
  return std::memcmp(a.data().data() + row * c, b.data().data() + row * c, c * sizeof(double)) == 0;
}

}  // namespace testing
