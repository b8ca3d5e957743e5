#ifndef CRAID_TENSOR_HPP_
#define CRAID_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <vector>

#include "craid/common.hpp"

namespace craid {

// Channel-major (C, H, W) dense tensor of doubles. Images use C = 3.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  double& at(int ch, int y, int x) {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  double at(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow for large |x|.
inline double softplus(double x) {
  double m = x > 0.0 ? x : 0.0;
  return m + std::log1p(std::exp(-std::fabs(x)));
}

}  // namespace craid

#endif  // CRAID_TENSOR_HPP_
