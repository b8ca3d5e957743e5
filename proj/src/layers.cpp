#include "craid/layers.hpp"

#include <cmath>

namespace craid {

void gaussian_init(Param& p, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : p.value) v = dist(rng);
}

void he_init_conv(Param& weight, int in_c, int k, Rng& rng) {
  double fan_in = static_cast<double>(in_c) * k * k;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : weight.value) v = dist(rng);
}

void Conv2d::configure(const std::string& name, int in_channels, int out_channels, int kernel,
                       int stride_, int pad_) {
  in_c = in_channels;
  out_c = out_channels;
  k = kernel;
  stride = stride_;
  pad = pad_;
  weight.name = name + ".weight";
  bias.name = name + ".bias";
  weight.resize(static_cast<std::size_t>(out_c) * in_c * k * k);
  bias.resize(static_cast<std::size_t>(out_c));
}

void Conv2d::init(Rng& rng) { he_init_conv(weight, in_c, k, rng); }

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.c != in_c) throw ShapeError("Conv2d " + weight.name + ": channel mismatch");
  int oh = out_h(x.h), ow = out_w(x.w);
  Tensor y(out_c, oh, ow);
  const double* wp = weight.value.data();
  for (int oc = 0; oc < out_c; ++oc) {
    double b = bias.value[oc];
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b;
        int iy0 = oy * stride - pad;
        int ix0 = ox * stride - pad;
        for (int ic = 0; ic < in_c; ++ic) {
          const double* wrow = wp + ((static_cast<std::size_t>(oc) * in_c + ic) * k) * k;
          for (int ky = 0; ky < k; ++ky) {
            int iy = iy0 + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              int ix = ix0 + kx;
              if (ix < 0 || ix >= x.w) continue;
              acc += wrow[ky * k + kx] * x.at(ic, iy, ix);
            }
          }
        }
        y.at(oc, oy, ox) = acc;
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& grad_out) {
  int oh = out_h(x.h), ow = out_w(x.w);
  if (grad_out.c != out_c || grad_out.h != oh || grad_out.w != ow)
    throw ShapeError("Conv2d " + weight.name + ": gradient shape mismatch");
  Tensor gx(x.c, x.h, x.w);
  const double* wp = weight.value.data();
  double* gw = weight.grad.data();
  for (int oc = 0; oc < out_c; ++oc) {
    double gb = 0.0;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double g = grad_out.at(oc, oy, ox);
        if (g == 0.0) continue;
        gb += g;
        int iy0 = oy * stride - pad;
        int ix0 = ox * stride - pad;
        for (int ic = 0; ic < in_c; ++ic) {
          std::size_t wbase = (static_cast<std::size_t>(oc) * in_c + ic) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            int iy = iy0 + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              int ix = ix0 + kx;
              if (ix < 0 || ix >= x.w) continue;
              double xv = x.at(ic, iy, ix);
              gw[wbase + ky * k + kx] += g * xv;
              gx.at(ic, iy, ix) += g * wp[wbase + ky * k + kx];
            }
          }
        }
      }
    }
    bias.grad[oc] += gb;
  }
  return gx;
}

void Linear::configure(const std::string& name, int in, int out) {
  in_dim = in;
  out_dim = out;
  weight.name = name + ".weight";
  bias.name = name + ".bias";
  weight.resize(static_cast<std::size_t>(out_dim) * in_dim);
  bias.resize(static_cast<std::size_t>(out_dim));
}

void Linear::init(Rng& rng) {
  double stddev = std::sqrt(2.0 / (in_dim + out_dim));
  gaussian_init(weight, stddev, rng);
}

std::vector<double> Linear::forward(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != in_dim)
    throw ShapeError("Linear " + weight.name + ": input size mismatch");
  std::vector<double> y(out_dim);
  for (int o = 0; o < out_dim; ++o) {
    double acc = bias.value[o];
    const double* wrow = weight.value.data() + static_cast<std::size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) acc += wrow[i] * x[i];
    y[o] = acc;
  }
  return y;
}

std::vector<double> Linear::backward(const std::vector<double>& x,
                                     const std::vector<double>& grad_out) {
  std::vector<double> gx(in_dim, 0.0);
  for (int o = 0; o < out_dim; ++o) {
    double g = grad_out[o];
    bias.grad[o] += g;
    const double* wrow = weight.value.data() + static_cast<std::size_t>(o) * in_dim;
    double* gwrow = weight.grad.data() + static_cast<std::size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) {
      gwrow[i] += g * x[i];
      gx[i] += g * wrow[i];
    }
  }
  return gx;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data)
    if (v < 0.0) v = 0.0;
  return y;
}

Tensor relu_backward(const Tensor& pre, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (pre.data[i] <= 0.0) g.data[i] = 0.0;
  return g;
}

Tensor MaxPool::forward(const Tensor& x, std::vector<int>& argmax) const {
  int oh = (x.h + 2 * pad - k) / stride + 1;
  int ow = (x.w + 2 * pad - k) / stride + 1;
  Tensor y(x.c, oh, ow);
  argmax.assign(y.size(), -1);
  for (int c = 0; c < x.c; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -1e300;
        int best_idx = -1;
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.w) continue;
            double v = x.at(c, iy, ix);
            if (v > best) {
              best = v;
              best_idx = (c * x.h + iy) * x.w + ix;
            }
          }
        }
        y.at(c, oy, ox) = best_idx >= 0 ? best : 0.0;
        argmax[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] = best_idx;
      }
    }
  }
  return y;
}

Tensor MaxPool::backward(const Tensor& x, const std::vector<int>& argmax,
                         const Tensor& grad_out) const {
  Tensor gx(x.c, x.h, x.w);
  for (std::size_t i = 0; i < grad_out.data.size(); ++i) {
    int idx = argmax[i];
    if (idx >= 0) gx.data[idx] += grad_out.data[i];
  }
  return gx;
}

ResBlock ResBlock::basic(const std::string& name, int in_c, int out_c, int stride, Rng& rng) {
  ResBlock b;
  b.kind = Kind::Basic;
  b.conv1.configure(name + ".conv1", in_c, out_c, 3, stride, 1);
  b.conv2.configure(name + ".conv2", out_c, out_c, 3, 1, 1);
  b.conv1.init(rng);
  b.conv2.init(rng);
  if (stride != 1 || in_c != out_c) {
    Conv2d p;
    p.configure(name + ".proj", in_c, out_c, 1, stride, 0);
    p.init(rng);
    b.proj = std::move(p);
  }
  return b;
}

ResBlock ResBlock::bottleneck(const std::string& name, int in_c, int mid_c, int out_c, int stride,
                              Rng& rng) {
  ResBlock b;
  b.kind = Kind::Bottleneck;
  b.conv1.configure(name + ".conv1", in_c, mid_c, 1, 1, 0);
  b.conv2.configure(name + ".conv2", mid_c, mid_c, 3, stride, 1);
  b.conv3.configure(name + ".conv3", mid_c, out_c, 1, 1, 0);
  b.conv1.init(rng);
  b.conv2.init(rng);
  b.conv3.init(rng);
  if (stride != 1 || in_c != out_c) {
    Conv2d p;
    p.configure(name + ".proj", in_c, out_c, 1, stride, 0);
    p.init(rng);
    b.proj = std::move(p);
  }
  return b;
}

Tensor ResBlock::forward(const Tensor& x, Cache& cache) const {
  cache.x = x;
  Tensor out;
  if (kind == Kind::Basic) {
    cache.a1 = conv1.forward(x);
    cache.r1 = relu(cache.a1);
    cache.a2 = conv2.forward(cache.r1);
    out = cache.a2;
  } else {
    cache.a1 = conv1.forward(x);
    cache.r1 = relu(cache.a1);
    cache.a2 = conv2.forward(cache.r1);
    cache.r2 = relu(cache.a2);
    cache.a3 = conv3.forward(cache.r2);
    out = cache.a3;
  }
  Tensor skip = proj ? proj->forward(x) : x;
  if (!skip.same_shape(out)) throw ShapeError("ResBlock: skip path shape mismatch");
  cache.pre = out;
  for (std::size_t i = 0; i < cache.pre.data.size(); ++i) cache.pre.data[i] += skip.data[i];
  return relu(cache.pre);
}

Tensor ResBlock::backward(const Cache& cache, const Tensor& grad_out) {
  Tensor g_pre = relu_backward(cache.pre, grad_out);
  Tensor gx;
  if (kind == Kind::Basic) {
    Tensor g_r1 = conv2.backward(cache.r1, g_pre);
    Tensor g_a1 = relu_backward(cache.a1, g_r1);
    gx = conv1.backward(cache.x, g_a1);
  } else {
    Tensor g_r2 = conv3.backward(cache.r2, g_pre);
    Tensor g_a2 = relu_backward(cache.a2, g_r2);
    Tensor g_r1 = conv2.backward(cache.r1, g_a2);
    Tensor g_a1 = relu_backward(cache.a1, g_r1);
    gx = conv1.backward(cache.x, g_a1);
  }
  if (proj) {
    Tensor g_skip = proj->backward(cache.x, g_pre);
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g_skip.data[i];
  } else {
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g_pre.data[i];
  }
  return gx;
}

void ResBlock::collect(std::vector<Param*>& out) {
  conv1.collect(out);
  conv2.collect(out);
  if (kind == Kind::Bottleneck) conv3.collect(out);
  if (proj) proj->collect(out);
}

std::vector<double> global_average_pool(const Tensor& x) {
  std::vector<double> out(x.c, 0.0);
  double inv = 1.0 / (static_cast<double>(x.h) * x.w);
  for (int c = 0; c < x.c; ++c) {
    double acc = 0.0;
    for (int y = 0; y < x.h; ++y)
      for (int xx = 0; xx < x.w; ++xx) acc += x.at(c, y, xx);
    out[c] = acc * inv;
  }
  return out;
}

Tensor global_average_pool_backward(const Tensor& x, const std::vector<double>& grad_pooled) {
  Tensor gx(x.c, x.h, x.w);
  double inv = 1.0 / (static_cast<double>(x.h) * x.w);
  for (int c = 0; c < x.c; ++c) {
    double g = grad_pooled[c] * inv;
    for (int y = 0; y < x.h; ++y)
      for (int xx = 0; xx < x.w; ++xx) gx.at(c, y, xx) = g;
  }
  return gx;
}

}  // namespace craid
