// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mmlora/errors.hpp"

namespace mmlora::ops {

using detail::Node;

namespace {

constexpr double kMaskValue = -1e30;

void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined operand");
  if (t.rank() != r) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Builds the output node. Parents are only retained when a gradient can flow.
std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value, const char* op,
                                std::initializer_list<const Tensor*> inputs) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (const Tensor* t : inputs) {
      if (t && t->defined()) n->parents.push_back(t->node());
    }
  }
  return n;
}

Node* raw(const Tensor& t) { return t.defined() ? t.node().get() : nullptr; }

bool wants_grad(const Node* n) { return n && n->requires_grad; }

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class F, class DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  auto node = make_node(x.shape(), std::move(out), name, {&x});
  if (node->requires_grad) {
    Node* xn = raw(x);
    node->backward = [xn, df](Node& self) {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(xn->value[i], self.value[i]);
    };
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto node = make_node({m, n}, std::move(out), "matmul", {&a, &b});
  if (node->requires_grad) {
    Node* an = raw(a);
    Node* bn = raw(b);
    node->backward = [an, bn, m, k, n](Node& self) {
      if (wants_grad(an)) gemm_nt(self.grad.data(), bn->value.data(), an->grad_buffer().data(), m, n, k);
      if (wants_grad(bn)) gemm_tn(an->value.data(), self.grad.data(), bn->grad_buffer().data(), m, k, n);
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner extents differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto node = make_node({m, n}, std::move(out), "matmul_nt", {&a, &b});
  if (node->requires_grad) {
    Node* an = raw(a);
    Node* bn = raw(b);
    node->backward = [an, bn, m, k, n](Node& self) {
      // dA = G B ; dB = G^T A
      if (wants_grad(an)) gemm_nn(self.grad.data(), bn->value.data(), an->grad_buffer().data(), m, n, k);
      if (wants_grad(bn)) gemm_tn(self.grad.data(), an->value.data(), bn->grad_buffer().data(), m, n, k);
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  auto node = make_node({c, r}, std::move(out), "transpose", {&a});
  if (node->requires_grad) {
    Node* an = raw(a);
    node->backward = [an, r, c](Node& self) {
      auto g = an->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  auto y = matmul_nt(x, weight);
  return bias.defined() ? add_row_bias(y, bias) : y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto node = make_node(a.shape(), std::move(out), "add", {&a, &b});
  if (node->requires_grad) {
    Node* an = raw(a);
    Node* bn = raw(b);
    node->backward = [an, bn](Node& self) {
      for (Node* p : {an, bn}) {
        if (!wants_grad(p)) continue;
        auto g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto node = make_node(a.shape(), std::move(out), "mul", {&a, &b});
  if (node->requires_grad) {
    Node* an = raw(a);
    Node* bn = raw(b);
    node->backward = [an, bn](Node& self) {
      if (wants_grad(an)) {
        auto g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
      }
      if (wants_grad(bn)) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.numel() != cols) {
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " vs " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bv = bias.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += bv[j];
  auto node = make_node(x.shape(), std::move(out), "add_row_bias", {&x, &bias});
  if (node->requires_grad) {
    Node* xn = raw(x);
    Node* bn = raw(bias);
    node->backward = [xn, bn, rows, cols](Node& self) {
      if (wants_grad(xn)) {
        auto g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (wants_grad(bn)) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) g[j] += self.grad[i * cols + j];
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto node = make_node(std::move(shape), std::move(out), "reshape", {&x});
  if (node->requires_grad) {
    Node* xn = raw(x);
    node->backward = [xn](Node& self) {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); },
      [](double v, double) {
        const double u = c * (v + k * v * v * v);
        const double t = std::tanh(u);
        const double du = c * (1.0 + 3.0 * k * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

namespace {
double logistic(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", logistic, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v * logistic(v); },
      [](double v, double) {
        const double s = logistic(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor glu(const Tensor& x) {
  require_rank(x, 2, "glu");
  const std::size_t cols = x.dim(1);
  if (cols % 2 != 0) throw DimensionError("glu: last axis must be even, got " + shape_str(x.shape()));
  return mul(slice_cols(x, 0, cols / 2), sigmoid(slice_cols(x, cols / 2, cols)));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * len * inner + q;
      double mx = in[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, in[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= z;
    }
  }
  auto node = make_node(x.shape(), std::move(out), "softmax", {&x});
  if (node->requires_grad) {
    Node* xn = raw(x);
    node->backward = [xn, outer, inner, len](Node& self) {
      auto g = xn->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t q = 0; q < inner; ++q) {
          const std::size_t base = o * len * inner + q;
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) dot += self.grad[base + i * inner] * self.value[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t idx = base + i * inner;
            g[idx] += self.value[idx] * (self.grad[idx] - dot);
          }
        }
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  if (gain.numel() != width || bias.numel() != width) {
    throw DimensionError("layer_norm: affine width mismatch for " + shape_str(x.shape()));
  }
  auto in = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(width);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * width + j] = h;
      out[r * width + j] = h * gv[j] + bv[j];
    }
  }
  auto node = make_node(x.shape(), std::move(out), "layer_norm", {&x, &gain, &bias});
  if (node->requires_grad) {
    Node* xn = raw(x);
    Node* gn = raw(gain);
    Node* bn = raw(bias);
    node->backward = [xn, gn, bn, rows, width, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
      const double w = static_cast<double>(width);
      if (wants_grad(gn)) {
        auto g = gn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < width; ++j) g[j] += self.grad[r * width + j] * xhat[r * width + j];
      }
      if (wants_grad(bn)) {
        auto g = bn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < width; ++j) g[j] += self.grad[r * width + j];
      }
      if (wants_grad(xn)) {
        auto g = xn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_d = 0.0, sum_dh = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            const double d = self.grad[r * width + j] * gn->value[j];
            sum_d += d;
            sum_dh += d * xhat[r * width + j];
          }
          for (std::size_t j = 0; j < width; ++j) {
            const double d = self.grad[r * width + j] * gn->value[j];
            g[r * width + j] += inv_std[r] / w * (w * d - sum_d - xhat[r * width + j] * sum_dh);
          }
        }
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto node = make_node({1}, {s}, "sum", {&x});
  if (node->requires_grad) {
    Node* xn = raw(x);
    node->backward = [xn](Node& self) {
      auto g = xn->grad_buffer();
      for (double& v : g) v += self.grad[0];
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t padding) {
  if (stride == 0) throw DomainError("conv1d: stride must be >= 1");
  const std::size_t padded = length + 2 * padding;
  if (kernel == 0 || padded < kernel) {
    throw InputTooShortError("conv1d: input of length " + std::to_string(length) + " with padding " +
                             std::to_string(padding) + " is shorter than kernel " + std::to_string(kernel));
  }
  return (padded - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 2, "conv1d");
  require_rank(weight, 3, "conv1d");
  const std::size_t len = x.dim(0), cin = x.dim(1);
  const std::size_t cout = weight.dim(0), kernel = weight.dim(1);
  if (weight.dim(2) != cin) {
    throw DimensionError("conv1d: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != cout) throw DimensionError("conv1d: bias width mismatch");
  const std::size_t out_len = conv1d_output_length(len, kernel, stride, padding);

  auto xv = x.data();
  auto wv = weight.data();
  std::vector<double> out(out_len * cout, 0.0);
  for (std::size_t t = 0; t < out_len; ++t) {
    double* orow = out.data() + t * cout;
    if (bias.defined()) std::copy(bias.data().begin(), bias.data().end(), orow);
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(padding);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const double* xrow = xv.data() + static_cast<std::size_t>(src) * cin;
      for (std::size_t o = 0; o < cout; ++o) {
        const double* wrow = wv.data() + (o * kernel + k) * cin;
        double s = 0.0;
        for (std::size_t c = 0; c < cin; ++c) s += wrow[c] * xrow[c];
        orow[o] += s;
      }
    }
  }
  auto node = make_node({out_len, cout}, std::move(out), "conv1d", {&x, &weight, &bias});
  if (node->requires_grad) {
    Node* xn = raw(x);
    Node* wn = raw(weight);
    Node* bn = raw(bias);
    node->backward = [=](Node& self) {
      std::span<double> gx = wants_grad(xn) ? xn->grad_buffer() : std::span<double>{};
      std::span<double> gw = wants_grad(wn) ? wn->grad_buffer() : std::span<double>{};
      if (wants_grad(bn)) {
        auto gb = bn->grad_buffer();
        for (std::size_t t = 0; t < out_len; ++t)
          for (std::size_t o = 0; o < cout; ++o) gb[o] += self.grad[t * cout + o];
      }
      for (std::size_t t = 0; t < out_len; ++t) {
        for (std::size_t k = 0; k < kernel; ++k) {
          const std::ptrdiff_t src =
              static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(padding);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const std::size_t s = static_cast<std::size_t>(src);
          for (std::size_t o = 0; o < cout; ++o) {
            const double go = self.grad[t * cout + o];
            if (go == 0.0) continue;
            const std::size_t wbase = (o * kernel + k) * cin;
            if (!gx.empty())
              for (std::size_t c = 0; c < cin; ++c) gx[s * cin + c] += go * wn->value[wbase + c];
            if (!gw.empty())
              for (std::size_t c = 0; c < cin; ++c) gw[wbase + c] += go * xn->value[s * cin + c];
          }
        }
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "depthwise_conv1d");
  require_rank(weight, 2, "depthwise_conv1d");
  const std::size_t len = x.dim(0), ch = x.dim(1), kernel = weight.dim(0);
  if (weight.dim(1) != ch) throw DimensionError("depthwise_conv1d: channel mismatch");
  if (kernel % 2 == 0) throw ConfigError("depthwise_conv1d: kernel must be odd, got " + std::to_string(kernel));
  if (bias.defined() && bias.numel() != ch) throw DimensionError("depthwise_conv1d: bias width mismatch");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel / 2);
  auto xv = x.data();
  auto wv = weight.data();
  std::vector<double> out(len * ch, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    double* orow = out.data() + t * ch;
    if (bias.defined()) std::copy(bias.data().begin(), bias.data().end(), orow);
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      for (std::size_t c = 0; c < ch; ++c) orow[c] += wv[k * ch + c] * xv[static_cast<std::size_t>(src) * ch + c];
    }
  }
  auto node = make_node({len, ch}, std::move(out), "depthwise_conv1d", {&x, &weight, &bias});
  if (node->requires_grad) {
    Node* xn = raw(x);
    Node* wn = raw(weight);
    Node* bn = raw(bias);
    node->backward = [=](Node& self) {
      std::span<double> gx = wants_grad(xn) ? xn->grad_buffer() : std::span<double>{};
      std::span<double> gw = wants_grad(wn) ? wn->grad_buffer() : std::span<double>{};
      if (wants_grad(bn)) {
        auto gb = bn->grad_buffer();
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t c = 0; c < ch; ++c) gb[c] += self.grad[t * ch + c];
      }
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t k = 0; k < kernel; ++k) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - half;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const std::size_t s = static_cast<std::size_t>(src);
          for (std::size_t c = 0; c < ch; ++c) {
            const double go = self.grad[t * ch + c];
            if (!gx.empty()) gx[s * ch + c] += go * wn->value[k * ch + c];
            if (!gw.empty()) gw[k * ch + c] += go * xn->value[s * ch + c];
          }
        }
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  std::vector<double> out(ids.size() * width);
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw DomainError("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                        std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * width, width, out.data() + i * width);
  }
  auto node = make_node({ids.size(), width}, std::move(out), "embedding", {&table});
  if (node->requires_grad) {
    Node* tn = raw(table);
    std::vector<std::int64_t> idv(ids.begin(), ids.end());
    node->backward = [tn, width, idv = std::move(idv)](Node& self) {
      auto g = tn->grad_buffer();
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < width; ++j)
          g[static_cast<std::size_t>(idv[i]) * width + j] += self.grad[i * width + j];
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  const std::size_t cols = x.dim(1);
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * cols));
  auto node = make_node({end - begin, cols}, std::move(out), "slice_rows", {&x});
  if (node->requires_grad) {
    Node* xn = raw(x);
    node->backward = [xn, begin, cols](Node& self) {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * cols + i] += self.grad[i];
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin >= end || end > cols) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * cols + begin, w, out.data() + r * w);
  auto node = make_node({rows, w}, std::move(out), "slice_cols", {&x});
  if (node->requires_grad) {
    Node* xn = raw(x);
    node->backward = [xn, rows, cols, begin, w](Node& self) {
      auto g = xn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) g[r * cols + begin + j] += self.grad[r * w + j];
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const std::size_t cols = parts.front().dim(1);
  std::size_t rows = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) throw DimensionError("concat_rows: width mismatch");
    rows += p.dim(0);
    any_grad = any_grad || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  auto node = make_node({rows, cols}, std::move(out), "concat_rows", {});
  if (any_grad) {
    node->requires_grad = true;
    std::vector<std::pair<Node*, std::size_t>> spans;
    std::size_t off = 0;
    for (const auto& p : parts) {
      node->parents.push_back(p.node());
      spans.emplace_back(p.node().get(), off);
      off += p.numel();
    }
    node->backward = [spans = std::move(spans)](Node& self) {
      for (auto [p, o] : spans) {
        if (!p->requires_grad) continue;
        auto g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[o + i];
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const std::size_t rows = parts.front().dim(0);
  std::size_t cols = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw DimensionError("concat_cols: row count mismatch");
    cols += p.dim(1);
    any_grad = any_grad || p.requires_grad();
  }
  std::vector<double> out(rows * cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(p.data().data() + r * w, w, out.data() + r * cols + off);
    off += w;
  }
  auto node = make_node({rows, cols}, std::move(out), "concat_cols", {});
  if (any_grad) {
    node->requires_grad = true;
    std::vector<std::tuple<Node*, std::size_t, std::size_t>> spans;
    off = 0;
    for (const auto& p : parts) {
      node->parents.push_back(p.node());
      spans.emplace_back(p.node().get(), off, p.dim(1));
      off += p.dim(1);
    }
    node->backward = [spans = std::move(spans), rows, cols](Node& self) {
      for (auto [p, o, w] : spans) {
        if (!p->requires_grad) continue;
        auto g = p->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) g[r * w + j] += self.grad[r * cols + o + j];
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor splice_rows(const Tensor& base, std::size_t start, const Tensor& src) {
  require_rank(base, 2, "splice_rows");
  require_rank(src, 2, "splice_rows");
  const std::size_t cols = base.dim(1), n = src.dim(0);
  if (src.dim(1) != cols) throw DimensionError("splice_rows: width mismatch");
  if (start + n > base.dim(0)) throw DimensionError("splice_rows: span exceeds base rows");
  std::vector<double> out(base.data().begin(), base.data().end());
  std::copy(src.data().begin(), src.data().end(), out.begin() + static_cast<std::ptrdiff_t>(start * cols));
  auto node = make_node(base.shape(), std::move(out), "splice_rows", {&base, &src});
  if (node->requires_grad) {
    Node* bn = raw(base);
    Node* sn = raw(src);
    const std::size_t lo = start * cols, hi = (start + n) * cols;
    node->backward = [bn, sn, lo, hi](Node& self) {
      if (wants_grad(bn)) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
          if (i < lo || i >= hi) g[i] += self.grad[i];
      }
      if (wants_grad(sn)) {
        auto g = sn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[lo + i];
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor causal_mask(const Tensor& scores, std::size_t offset) {
  require_rank(scores, 2, "causal_mask");
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  std::vector<double> out(scores.data().begin(), scores.data().end());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = i + offset + 1; j < cols; ++j) out[i * cols + j] = kMaskValue;
  auto node = make_node(scores.shape(), std::move(out), "causal_mask", {&scores});
  if (node->requires_grad) {
    Node* sn = raw(scores);
    node->backward = [sn, rows, cols, offset](Node& self) {
      auto g = sn->grad_buffer();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols && j <= i + offset; ++j) g[i * cols + j] += self.grad[i * cols + j];
    };
  }
  return Tensor::from_node(std::move(node));
}

namespace {

// Applies the rotation (or its inverse when sign = -1) in place.
void rotate(std::span<double> v, std::size_t rows, std::size_t n_heads, std::size_t head_dim,
            std::size_t rotary_dims, std::span<const std::size_t> positions, double base, double sign) {
  const std::size_t width = n_heads * head_dim;
  const std::size_t pairs = rotary_dims / 2;
  std::vector<double> inv_freq(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    inv_freq[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(rotary_dims));
  }
  for (std::size_t t = 0; t < rows; ++t) {
    const double pos = static_cast<double>(positions[t]);
    for (std::size_t i = 0; i < pairs; ++i) {
      const double angle = pos * inv_freq[i];
      const double c = std::cos(angle);
      const double s = sign * std::sin(angle);
      for (std::size_t h = 0; h < n_heads; ++h) {
        double* p = v.data() + t * width + h * head_dim + 2 * i;
        const double a = p[0], b = p[1];
        p[0] = a * c - b * s;
        p[1] = a * s + b * c;
      }
    }
  }
}

}  // namespace

Tensor rope(const Tensor& x, std::size_t n_heads, std::size_t head_dim, std::size_t rotary_dims,
            std::span<const std::size_t> positions, double base) {
  require_rank(x, 2, "rope");
  if (x.dim(1) != n_heads * head_dim) throw DimensionError("rope: width is not n_heads * head_dim");
  if (rotary_dims % 2 != 0 || rotary_dims > head_dim) {
    throw ConfigError("rope: rotary dims must be even and <= head_dim, got " + std::to_string(rotary_dims));
  }
  if (positions.size() != x.dim(0)) throw DimensionError("rope: one position per row required");
  const std::size_t rows = x.dim(0);
  std::vector<double> out(x.data().begin(), x.data().end());
  rotate(out, rows, n_heads, head_dim, rotary_dims, positions, base, 1.0);
  auto node = make_node(x.shape(), std::move(out), "rope", {&x});
  if (node->requires_grad) {
    Node* xn = raw(x);
    std::vector<std::size_t> pos(positions.begin(), positions.end());
    node->backward = [=, pos = std::move(pos)](Node& self) {
      std::vector<double> g = self.grad;
      rotate(g, rows, n_heads, head_dim, rotary_dims, pos, base, -1.0);
      auto gx = xn->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    };
  }
  return Tensor::from_node(std::move(node));
}

MaskedLoss cross_entropy_masked(const Tensor& logits, std::span<const std::int64_t> targets,
                                std::span<const std::uint8_t> mask) {
  require_rank(logits, 2, "cross_entropy_masked");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows || mask.size() != rows) {
    throw DimensionError("cross_entropy_masked: targets/mask length must equal " + std::to_string(rows));
  }
  std::size_t counted = 0;
  for (std::size_t t = 0; t < rows; ++t) {
    if (!mask[t]) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
      throw DomainError("cross_entropy_masked: target " + std::to_string(targets[t]) + " outside [0," +
                        std::to_string(vocab) + ")");
    }
    ++counted;
  }
  MaskedLoss result;
  result.counted = counted;
  if (counted == 0) {
    result.all_masked = true;
    result.loss = Tensor::scalar(0.0);
    return result;
  }

  auto lv = logits.data();
  std::vector<double> probs(rows * vocab, 0.0);
  double total = 0.0;
  for (std::size_t t = 0; t < rows; ++t) {
    if (!mask[t]) continue;
    const double* row = lv.data() + t * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[t * vocab + j] = std::exp(row[j] - mx);
      z += probs[t * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[t * vocab + j] /= z;
    total += -(row[static_cast<std::size_t>(targets[t])] - mx - std::log(z));
  }
  const double inv = 1.0 / static_cast<double>(counted);
  auto node = make_node({1}, {total * inv}, "cross_entropy_masked", {&logits});
  if (node->requires_grad) {
    Node* ln = raw(logits);
    std::vector<std::int64_t> tg(targets.begin(), targets.end());
    std::vector<std::uint8_t> mk(mask.begin(), mask.end());
    node->backward = [ln, rows, vocab, inv, probs = std::move(probs), tg = std::move(tg),
                      mk = std::move(mk)](Node& self) {
      auto g = ln->grad_buffer();
      const double up = self.grad[0] * inv;
      for (std::size_t t = 0; t < rows; ++t) {
        if (!mk[t]) continue;
        for (std::size_t j = 0; j < vocab; ++j) g[t * vocab + j] += up * probs[t * vocab + j];
        g[t * vocab + static_cast<std::size_t>(tg[t])] -= up;
      }
    };
  }
  result.loss = Tensor::from_node(std::move(node));
  return result;
}

}  // namespace mmlora::ops
