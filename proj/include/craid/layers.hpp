#ifndef CRAID_LAYERS_HPP_
#define CRAID_LAYERS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "craid/tensor.hpp"

namespace craid {

// One learnable tensor: value plus gradient and first/second moments for the
// optimizer. Optimizer updates skip params with trainable == false, which is
// what keeps frozen masks bit-identical across a stage.
struct Param {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> m1;
  std::vector<double> m2;
  bool trainable = true;

  void resize(std::size_t n) {
    value.assign(n, 0.0);
    grad.assign(n, 0.0);
    m1.assign(n, 0.0);
    m2.assign(n, 0.0);
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

void gaussian_init(Param& p, double stddev, Rng& rng);
void he_init_conv(Param& weight, int in_c, int k, Rng& rng);

struct Conv2d {
  int in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0;
  Param weight;  // [out_c][in_c][k][k]
  Param bias;    // [out_c]

  void configure(const std::string& name, int in_channels, int out_channels, int kernel,
                 int stride_, int pad_);
  void init(Rng& rng);

  int out_h(int h) const { return (h + 2 * pad - k) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - k) / stride + 1; }

  Tensor forward(const Tensor& x) const;
  // Accumulates weight/bias gradients and returns the gradient w.r.t. x.
  Tensor backward(const Tensor& x, const Tensor& grad_out);

  void collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

struct Linear {
  int in_dim = 0, out_dim = 0;
  Param weight;  // [out_dim][in_dim]
  Param bias;    // [out_dim]

  void configure(const std::string& name, int in, int out);
  void init(Rng& rng);

  std::vector<double> forward(const std::vector<double>& x) const;
  std::vector<double> backward(const std::vector<double>& x, const std::vector<double>& grad_out);

  void collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

Tensor relu(const Tensor& x);
// grad_in = grad_out where pre > 0, else 0.
Tensor relu_backward(const Tensor& pre, const Tensor& grad_out);

struct MaxPool {
  int k = 3, stride = 2, pad = 1;
  Tensor forward(const Tensor& x, std::vector<int>& argmax) const;
  Tensor backward(const Tensor& x, const std::vector<int>& argmax, const Tensor& grad_out) const;
};

// Residual unit. Basic blocks (two 3x3 convs) back the small configurations;
// bottlenecks (1x1 / 3x3 / 1x1) back the 50-layer configuration. A 1x1
// projection is added on the skip path whenever shape changes.
struct ResBlock {
  enum class Kind { Basic, Bottleneck };
  Kind kind = Kind::Basic;
  Conv2d conv1, conv2, conv3;
  std::optional<Conv2d> proj;

  struct Cache {
    Tensor x;
    Tensor a1, a2, a3;  // pre-activation outputs of each conv
    Tensor r1, r2;      // post-relu intermediates
    Tensor pre;         // sum with the skip path, before the final relu
  };

  static ResBlock basic(const std::string& name, int in_c, int out_c, int stride, Rng& rng);
  static ResBlock bottleneck(const std::string& name, int in_c, int mid_c, int out_c, int stride,
                             Rng& rng);

  Tensor forward(const Tensor& x, Cache& cache) const;
  Tensor backward(const Cache& cache, const Tensor& grad_out);
  void collect(std::vector<Param*>& out);
};

std::vector<double> global_average_pool(const Tensor& x);
Tensor global_average_pool_backward(const Tensor& x, const std::vector<double>& grad_pooled);

}  // namespace craid

#endif  // CRAID_LAYERS_HPP_
