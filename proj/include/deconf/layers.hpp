#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "deconf/common.hpp"
#include "deconf/matrix.hpp"
#include "deconf/rng.hpp"

namespace deconf::numkit {

// ---------------------------------------------------------------------------
// affine layer
// ---------------------------------------------------------------------------

inline Vector affine_forward(const Vector& x, const Matrix& W,
                             const Vector& b) {
  if (W.cols != x.size() || W.rows != b.size()) {
    throw DimensionError("affine_forward: W is " + std::to_string(W.rows) +
                         "x" + std::to_string(W.cols) + ", x has " +
                         std::to_string(x.size()) + ", b has " +
                         std::to_string(b.size()));
  }
  Vector y(W.rows);
  for (std::size_t i = 0; i < W.rows; ++i) {
    const double* wi = W.row(i);
    double acc = b[i];
    for (std::size_t j = 0; j < W.cols; ++j) acc += wi[j] * x[j];
    y[i] = acc;
  }
  return y;
}

struct AffineGrads {
  Vector grad_x;
  Matrix grad_w;
  Vector grad_b;
};

// grad_W = grad_out (x) xT, grad_x = WT grad_out, grad_b = grad_out.
// Accumulating variant used by the training loops.
inline Vector affine_backward_acc(const Vector& grad_out, const Vector& x,
                                  const Matrix& W, Matrix& dW, Vector& db) {
  if (grad_out.size() != W.rows || x.size() != W.cols) {
    throw DimensionError("affine_backward: grad_out has " +
                         std::to_string(grad_out.size()) + ", x has " +
                         std::to_string(x.size()) + ", W is " +
                         std::to_string(W.rows) + "x" +
                         std::to_string(W.cols));
  }
  Vector grad_x(W.cols, 0.0);
  for (std::size_t i = 0; i < W.rows; ++i) {
    const double g = grad_out[i];
    db[i] += g;
    const double* wi = W.row(i);
    double* dwi = dW.row(i);
    for (std::size_t j = 0; j < W.cols; ++j) {
      dwi[j] += g * x[j];
      grad_x[j] += wi[j] * g;
    }
  }
  return grad_x;
}

inline AffineGrads affine_backward(const Vector& grad_out, const Vector& x,
                                   const Matrix& W) {
  AffineGrads g;
  g.grad_w = Matrix::zeros(W.rows, W.cols);
  g.grad_b.assign(W.rows, 0.0);
  g.grad_x = affine_backward_acc(grad_out, x, W, g.grad_w, g.grad_b);
  return g;
}

// ---------------------------------------------------------------------------
// activations (total functions; backward passes take the forward output)
// ---------------------------------------------------------------------------

inline Vector tanh_fw(const Vector& x) {
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

inline Vector tanh_bw(const Vector& grad_out, const Vector& y) {
  Vector g(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    g[i] = grad_out[i] * (1.0 - y[i] * y[i]);
  return g;
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Vector sigmoid_fw(const Vector& x) {
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

inline Vector sigmoid_bw(const Vector& grad_out, const Vector& y) {
  Vector g(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    g[i] = grad_out[i] * y[i] * (1.0 - y[i]);
  return g;
}

inline Vector relu_fw(const Vector& x) {
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

inline Vector relu_bw(const Vector& grad_out, const Vector& y) {
  Vector g(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    g[i] = y[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

// Max-subtracted softmax; output sums to 1 within 1e-12.
inline Vector softmax_fw(const Vector& x) {
  Vector y(x.size());
  const double m = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - m);
    sum += y[i];
  }
  for (auto& v : y) v /= sum;
  return y;
}

// log softmax, same stabilization.
inline Vector log_softmax(const Vector& x) {
  Vector y(x.size());
  const double m = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - m);
  const double log_sum = std::log(sum) + m;
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - log_sum;
  return y;
}

// ---------------------------------------------------------------------------
// small dense MLP: affine layers with tanh between them
// ---------------------------------------------------------------------------

struct Affine {
  Matrix W;  // out x in
  Vector b;  // out

  std::size_t in_dim() const { return W.cols; }
  std::size_t out_dim() const { return W.rows; }
};

inline Affine make_affine(std::size_t out, std::size_t in, Rng& rng) {
  Affine a;
  const double scale = in > 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : 1.0;
  a.W = sample_normal_matrix(rng, out, in, scale);
  a.b.assign(out, 0.0);
  return a;
}

// Stack of affine layers; tanh after every layer except the last unless
// tanh_on_output is set. An empty stack is the identity.
struct Mlp {
  std::vector<Affine> layers;
  bool tanh_on_output = false;

  struct Cache {
    Vector input;
    std::vector<Vector> outputs;  // post-activation per layer
  };

  struct Grads {
    std::vector<Matrix> dW;
    std::vector<Vector> db;
  };

  static Mlp make(const std::vector<std::size_t>& dims, bool tanh_on_output,
                  Rng& rng) {
    Mlp mlp;
    mlp.tanh_on_output = tanh_on_output;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      mlp.layers.push_back(make_affine(dims[l + 1], dims[l], rng));
    }
    return mlp;
  }

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  Grads zero_grads() const {
    Grads g;
    g.dW.reserve(layers.size());
    g.db.reserve(layers.size());
    for (const auto& l : layers) {
      g.dW.push_back(Matrix::zeros(l.W.rows, l.W.cols));
      g.db.emplace_back(l.b.size(), 0.0);
    }
    return g;
  }

  Vector forward(const Vector& x, Cache* cache = nullptr) const {
    if (cache) {
      cache->input = x;
      cache->outputs.clear();
      cache->outputs.reserve(layers.size());
    }
    Vector h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = affine_forward(h, layers[l].W, layers[l].b);
      if (l + 1 < layers.size() || tanh_on_output) h = tanh_fw(h);
      if (cache) cache->outputs.push_back(h);
    }
    return h;
  }

  // Returns grad wrt the input; accumulates parameter grads when given.
  Vector backward(const Vector& grad_out, const Cache& cache,
                  Grads* grads) const {
    Vector g = grad_out;
    for (std::size_t l = layers.size(); l-- > 0;) {
      const bool activated = (l + 1 < layers.size()) || tanh_on_output;
      if (activated) g = tanh_bw(g, cache.outputs[l]);
      const Vector& in = l == 0 ? cache.input : cache.outputs[l - 1];
      if (grads) {
        g = affine_backward_acc(g, in, layers[l].W, grads->dW[l],
                                grads->db[l]);
      } else {
        Matrix scratch_w = Matrix::zeros(layers[l].W.rows, layers[l].W.cols);
        Vector scratch_b(layers[l].b.size(), 0.0);
        g = affine_backward_acc(g, in, layers[l].W, scratch_w, scratch_b);
      }
    }
    return g;
  }
};

// Named view over a parameter or gradient tensor, used by the optimizer and
// the checkpoint writer.
struct TensorRef {
  std::string name;
  double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
};

inline void append_tensor_refs(std::vector<TensorRef>& out,
                               const std::string& prefix, Mlp& mlp) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    auto& layer = mlp.layers[l];
    out.push_back({prefix + ".w" + std::to_string(l), layer.W.data.data(),
                   layer.W.rows, layer.W.cols});
    out.push_back({prefix + ".b" + std::to_string(l), layer.b.data(),
                   layer.b.size(), 1});
  }
}

inline void append_grad_refs(std::vector<TensorRef>& out,
                             const std::string& prefix, Mlp::Grads& grads) {
  for (std::size_t l = 0; l < grads.dW.size(); ++l) {
    out.push_back({prefix + ".w" + std::to_string(l), grads.dW[l].data.data(),
                   grads.dW[l].rows, grads.dW[l].cols});
    out.push_back({prefix + ".b" + std::to_string(l), grads.db[l].data(),
                   grads.db[l].size(), 1});
  }
}

}  // namespace deconf::numkit
