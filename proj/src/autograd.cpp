// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>
#include <utility>

#include "cmta/errors.hpp"

namespace cmta {

namespace {

thread_local bool t_grad_enabled = true;
thread_local AttentionObserver t_attention_observer;

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

Var make_op(Tensor value, std::initializer_list<const Var*> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (t_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var* v) { return v->defined() && v->requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const Var* v : inputs) node->parents.push_back(v->defined() ? v->node() : nullptr);
      node->backward = std::move(backward);
    }
  }
  return Var::from_node(std::move(node));
}

Var make_op_n(Tensor value, std::span<const Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (t_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const Var& v : inputs) node->parents.push_back(v.node());
      node->backward = std::move(backward);
    }
  }
  return Var::from_node(std::move(node));
}

bool wants(const Node& self, std::size_t i) {
  const auto& p = self.parents[i];
  return p && p->requires_grad;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_chw(const Var& v, const char* op) { cmta::require_chw(v.value(), op); }

struct ConvGeometry {
  std::int64_t channels, height, width;  // image side
  int kernel, stride, pad;
  std::int64_t out_h, out_w;             // column side

  std::int64_t rows() const { return channels * kernel * kernel; }
  std::int64_t cols() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(std::int64_t c, std::int64_t h, std::int64_t w, int k, int stride, int pad) {
  ConvGeometry g{c, h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1};
  if (h + 2 * pad < k || w + 2 * pad < k || g.out_h <= 0 || g.out_w <= 0)
    throw ShapeError("conv: kernel " + std::to_string(k) + " does not fit input " + std::to_string(h) + "x" +
                     std::to_string(w));
  return g;
}

void im2col(const ConvGeometry& g, const double* img, double* cols) {
  const std::int64_t L = g.cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * L;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = img + (c * g.height + iy) * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Accumulates columns back into the image (adjoint of im2col).
void col2im(const ConvGeometry& g, const double* cols, double* img) {
  const std::int64_t L = g.cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * L;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const double* src = row + oy * g.out_w;
          double* dst = img + (c * g.height + iy) * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

void add_bias(Tensor& out, const Tensor& bias) {
  const auto plane = out.height() * out.width();
  for (std::int64_t c = 0; c < out.channels(); ++c) {
    double* p = out.data() + c * plane;
    const double b = bias[c];
    for (std::int64_t i = 0; i < plane; ++i) p[i] += b;
  }
}

Tensor bias_grad(const Tensor& g) {
  const auto plane = g.height() * g.width();
  Tensor gb({g.channels()});
  for (std::int64_t c = 0; c < g.channels(); ++c) {
    double s = 0.0;
    const double* p = g.data() + c * plane;
    for (std::int64_t i = 0; i < plane; ++i) s += p[i];
    gb[c] = s;
  }
  return gb;
}

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::from_node(std::shared_ptr<Node> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

void Var::backward() const {
  if (value().numel() != 1) throw ShapeError("backward() without seed needs a one-element Var");
  backward(Tensor(value().shape(), 1.0));
}

void Var::backward(const Tensor& seed) const {
  if (!node_ || !node_->requires_grad) throw StateError("backward on a Var that does not require grad");
  if (seed.shape() != value().shape()) throw ShapeError("backward seed shape mismatch");

  // Post-order DFS gives a topological order with producers before consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    n->backward(*n);
    // Interior gradients are consumed; only leaves keep theirs.
    n->grad = Tensor();
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

AttentionObserverScope::AttentionObserverScope(AttentionObserver observer)
    : previous_(std::exchange(t_attention_observer, std::move(observer))) {}
AttentionObserverScope::~AttentionObserverScope() { t_attention_observer = std::move(previous_); }

namespace ops {

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_op(a.value() + b.value(), {&a, &b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

Var add(std::span<const Var> terms) {
  if (terms.empty()) throw ArgumentError("add: no terms");
  Tensor sum = terms[0].value();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require_same_shape(terms[0], terms[i], "add");
    sum += terms[i].value();
  }
  return make_op_n(std::move(sum), terms, [](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i)
      if (wants(self, i)) self.parents[i]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_op(a.value() - b.value(), {&a, &b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad * -1.0);
  });
}

Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {&a}, [s](Node& self) { self.parents[0]->accumulate(self.grad * s); });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), {&a}, [](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor g = self.grad;
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (!(x[i] > 0.0)) g[i] = 0.0;
    self.parents[0]->accumulate(g);
  });
}

Var gelu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return make_op(std::move(out), {&a}, [](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor g = self.grad;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] *= cdf + v * pdf;
    }
    self.parents[0]->accumulate(g);
  });
}

Var concat_channels(std::span<const Var> parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  Tensor out = cmta::concat_channels(values);
  return make_op_n(std::move(out), parts, [](Node& self) {
    std::int64_t offset = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const auto c = self.parents[i]->value.channels();
      if (wants(self, i)) self.parents[i]->accumulate(cmta::slice_channels(self.grad, offset, offset + c));
      offset += c;
    }
  });
}

Var slice_channels(const Var& a, std::int64_t begin, std::int64_t end) {
  Tensor out = cmta::slice_channels(a.value(), begin, end);
  return make_op(std::move(out), {&a}, [begin](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor g(x.shape());
    const auto plane = x.height() * x.width();
    std::copy(self.grad.data(), self.grad.data() + self.grad.numel(), g.data() + begin * plane);
    self.parents[0]->accumulate(g);
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_chw(x, "conv2d");
  const Tensor& w = weight.value();
  if (w.ndim() != 4 || w.dim(2) != w.dim(3)) throw ShapeError("conv2d: weight must be Cout x Cin x k x k");
  if (w.dim(1) != x.value().channels())
    throw ShapeError("conv2d: input has " + std::to_string(x.value().channels()) + " channels, weight expects " +
                     std::to_string(w.dim(1)));
  if (bias.defined() && bias.value().numel() != w.dim(0)) throw ShapeError("conv2d: bias size mismatch");
  if (stride < 1 || pad < 0) throw ArgumentError("conv2d: bad stride/pad");

  const auto g = conv_geometry(x.value().channels(), x.value().height(), x.value().width(),
                               static_cast<int>(w.dim(2)), stride, pad);
  const auto cout = w.dim(0);
  Tensor out({cout, g.out_h, g.out_w});
  CMapR wm(w.data(), cout, g.rows());
  MapR om(out.data(), cout, g.cols());
  if (is_pointwise(g)) {
    om.noalias() = wm * CMapR(x.value().data(), g.rows(), g.cols());
  } else {
    std::vector<double> cols(static_cast<std::size_t>(g.rows() * g.cols()));
    im2col(g, x.value().data(), cols.data());
    om.noalias() = wm * CMapR(cols.data(), g.rows(), g.cols());
  }
  if (bias.defined()) add_bias(out, bias.value());

  return make_op(std::move(out), {&x, &weight, &bias}, [g, cout](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    CMapR gm(self.grad.data(), cout, g.cols());
    std::vector<double> cols;
    const double* cols_ptr = xv.data();
    if (!is_pointwise(g) && wants(self, 1)) {
      cols.resize(static_cast<std::size_t>(g.rows() * g.cols()));
      im2col(g, xv.data(), cols.data());
      cols_ptr = cols.data();
    }
    if (wants(self, 1)) {
      Tensor gw(wv.shape());
      MapR(gw.data(), cout, g.rows()).noalias() = gm * CMapR(cols_ptr, g.rows(), g.cols()).transpose();
      self.parents[1]->accumulate(gw);
    }
    if (wants(self, 2)) self.parents[2]->accumulate(bias_grad(self.grad));
    if (wants(self, 0)) {
      Tensor gx(xv.shape());
      CMapR wm(wv.data(), cout, g.rows());
      if (is_pointwise(g)) {
        MapR(gx.data(), g.rows(), g.cols()).noalias() = wm.transpose() * gm;
      } else {
        std::vector<double> gcols(static_cast<std::size_t>(g.rows() * g.cols()));
        MapR(gcols.data(), g.rows(), g.cols()).noalias() = wm.transpose() * gm;
        col2im(g, gcols.data(), gx.data());
      }
      self.parents[0]->accumulate(gx);
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_chw(x, "conv_transpose2d");
  const Tensor& w = weight.value();
  if (w.ndim() != 4 || w.dim(2) != w.dim(3)) throw ShapeError("conv_transpose2d: weight must be Cin x Cout x k x k");
  if (w.dim(0) != x.value().channels()) throw ShapeError("conv_transpose2d: input channel mismatch");
  if (bias.defined() && bias.value().numel() != w.dim(1)) throw ShapeError("conv_transpose2d: bias size mismatch");
  if (stride < 1 || pad < 0) throw ArgumentError("conv_transpose2d: bad stride/pad");

  const auto cin = w.dim(0), cout = w.dim(1);
  const int k = static_cast<int>(w.dim(2));
  const auto h = x.value().height(), wd = x.value().width();
  const auto out_h = (h - 1) * stride - 2 * pad + k, out_w = (wd - 1) * stride - 2 * pad + k;
  if (out_h <= 0 || out_w <= 0) throw ShapeError("conv_transpose2d: empty output");
  // The output image plays the role of a conv input whose columns are the
  // transposed-conv input pixels.
  const ConvGeometry g{cout, out_h, out_w, k, stride, pad, h, wd};

  Tensor out({cout, out_h, out_w});
  std::vector<double> cols(static_cast<std::size_t>(g.rows() * g.cols()));
  MapR(cols.data(), g.rows(), g.cols()).noalias() =
      CMapR(w.data(), cin, g.rows()).transpose() * CMapR(x.value().data(), cin, g.cols());
  col2im(g, cols.data(), out.data());
  if (bias.defined()) add_bias(out, bias.value());

  return make_op(std::move(out), {&x, &weight, &bias}, [g, cin](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    std::vector<double> gcols(static_cast<std::size_t>(g.rows() * g.cols()));
    im2col(g, self.grad.data(), gcols.data());
    CMapR gc(gcols.data(), g.rows(), g.cols());
    if (wants(self, 0)) {
      Tensor gx(xv.shape());
      MapR(gx.data(), cin, g.cols()).noalias() = CMapR(wv.data(), cin, g.rows()) * gc;
      self.parents[0]->accumulate(gx);
    }
    if (wants(self, 1)) {
      Tensor gw(wv.shape());
      MapR(gw.data(), cin, g.rows()).noalias() = CMapR(xv.data(), cin, g.cols()) * gc.transpose();
      self.parents[1]->accumulate(gw);
    }
    if (wants(self, 2)) self.parents[2]->accumulate(bias_grad(self.grad));
  });
}

Var depthwise_conv2d(const Var& x, const Var& weight, const Var& bias, int pad) {
  require_chw(x, "depthwise_conv2d");
  const Tensor& w = weight.value();
  const Tensor& xv = x.value();
  if (w.ndim() != 4 || w.dim(1) != 1 || w.dim(2) != w.dim(3) || w.dim(0) != xv.channels())
    throw ShapeError("depthwise_conv2d: weight must be C x 1 x k x k matching the input");
  if (bias.defined() && bias.value().numel() != xv.channels()) throw ShapeError("depthwise_conv2d: bias size");
  const int k = static_cast<int>(w.dim(2));
  const auto C = xv.channels(), H = xv.height(), W = xv.width();
  const auto out_h = H + 2 * pad - k + 1, out_w = W + 2 * pad - k + 1;
  if (out_h <= 0 || out_w <= 0) throw ShapeError("depthwise_conv2d: kernel does not fit");

  Tensor out({C, out_h, out_w});
  for (std::int64_t c = 0; c < C; ++c) {
    const double* wk = w.data() + c * k * k;
    for (std::int64_t oy = 0; oy < out_h; ++oy)
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        double s = bias.defined() ? bias.value()[c] : 0.0;
        for (int ky = 0; ky < k; ++ky) {
          const auto iy = oy - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k; ++kx) {
            const auto ix = ox - pad + kx;
            if (ix >= 0 && ix < W) s += wk[ky * k + kx] * xv.at(c, iy, ix);
          }
        }
        out.at(c, oy, ox) = s;
      }
  }

  return make_op(std::move(out), {&x, &weight, &bias}, [k, pad](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    const Tensor& g = self.grad;
    const auto C = xv.channels(), H = xv.height(), W = xv.width();
    Tensor gx(xv.shape()), gw(wv.shape());
    for (std::int64_t c = 0; c < C; ++c) {
      const double* wk = wv.data() + c * k * k;
      double* gwk = gw.data() + c * k * k;
      for (std::int64_t oy = 0; oy < g.height(); ++oy)
        for (std::int64_t ox = 0; ox < g.width(); ++ox) {
          const double go = g.at(c, oy, ox);
          for (int ky = 0; ky < k; ++ky) {
            const auto iy = oy - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < k; ++kx) {
              const auto ix = ox - pad + kx;
              if (ix < 0 || ix >= W) continue;
              gx.at(c, iy, ix) += wk[ky * k + kx] * go;
              gwk[ky * k + kx] += xv.at(c, iy, ix) * go;
            }
          }
        }
    }
    if (wants(self, 0)) self.parents[0]->accumulate(gx);
    if (wants(self, 1)) self.parents[1]->accumulate(gw);
    if (wants(self, 2)) self.parents[2]->accumulate(bias_grad(g));
  });
}

Var avg_pool2(const Var& x) {
  require_chw(x, "avg_pool2");
  const Tensor& xv = x.value();
  if (xv.height() % 2 || xv.width() % 2) throw ShapeError("avg_pool2: spatial dims must be even, got " + shape_str(xv.shape()));
  Tensor out({xv.channels(), xv.height() / 2, xv.width() / 2});
  for (std::int64_t c = 0; c < out.channels(); ++c)
    for (std::int64_t y = 0; y < out.height(); ++y)
      for (std::int64_t x0 = 0; x0 < out.width(); ++x0)
        out.at(c, y, x0) = 0.25 * (xv.at(c, 2 * y, 2 * x0) + xv.at(c, 2 * y, 2 * x0 + 1) +
                                   xv.at(c, 2 * y + 1, 2 * x0) + xv.at(c, 2 * y + 1, 2 * x0 + 1));
  return make_op(std::move(out), {&x}, [](Node& self) {
    const Tensor& g = self.grad;
    Tensor gx(self.parents[0]->value.shape());
    for (std::int64_t c = 0; c < g.channels(); ++c)
      for (std::int64_t y = 0; y < g.height(); ++y)
        for (std::int64_t x0 = 0; x0 < g.width(); ++x0) {
          const double v = 0.25 * g.at(c, y, x0);
          gx.at(c, 2 * y, 2 * x0) += v;
          gx.at(c, 2 * y, 2 * x0 + 1) += v;
          gx.at(c, 2 * y + 1, 2 * x0) += v;
          gx.at(c, 2 * y + 1, 2 * x0 + 1) += v;
        }
    self.parents[0]->accumulate(gx);
  });
}

namespace {

constexpr double kNormEps = 1e-12;

// Row-wise L2 normalisation of a C x L matrix; returns the clamped norms.
Eigen::VectorXd normalize_rows(const MatR& m, MatR& out) {
  Eigen::VectorXd norms = m.rowwise().norm().cwiseMax(kNormEps);
  out = norms.cwiseInverse().asDiagonal() * m;
  return norms;
}

// Adjoint of normalize_rows.
MatR normalize_rows_backward(const MatR& normalized, const Eigen::VectorXd& norms, const MatR& g) {
  MatR out(g.rows(), g.cols());
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    if (norms[r] > kNormEps) {
      const double proj = normalized.row(r).dot(g.row(r));
      out.row(r) = (g.row(r) - proj * normalized.row(r)) / norms[r];
    } else {
      out.row(r) = g.row(r) / kNormEps;
    }
  }
  return out;
}

}  // namespace

Var transposed_attention(const Var& q, const Var& k, const Var& v, const Var& alpha, bool normalize) {
  require_chw(q, "transposed_attention");
  require_same_shape(q, k, "transposed_attention(Q, K)");
  require_same_shape(q, v, "transposed_attention(Q, V)");
  if (alpha.value().numel() != 1) throw ShapeError("transposed_attention: alpha must be a scalar");
  const double a = alpha.value()[0];
  if (!(a > 0.0)) throw ArgumentError("transposed_attention: alpha must be positive, got " + std::to_string(a));

  const auto C = q.value().channels();
  const auto L = q.value().height() * q.value().width();
  MatR qn, kn;
  Eigen::VectorXd q_norms, k_norms;
  if (normalize) {
    q_norms = normalize_rows(CMapR(q.value().data(), C, L), qn);
    k_norms = normalize_rows(CMapR(k.value().data(), C, L), kn);
  } else {
    qn = CMapR(q.value().data(), C, L);
    kn = CMapR(k.value().data(), C, L);
  }
  MatR logits = (qn * kn.transpose()) / a;
  MatR attn(C, C);
  for (Eigen::Index r = 0; r < C; ++r) {
    const double mx = logits.row(r).maxCoeff();
    attn.row(r) = (logits.row(r).array() - mx).exp();
    attn.row(r) /= attn.row(r).sum();
  }
  if (t_attention_observer) t_attention_observer(Tensor({C, C}, std::vector<double>(attn.data(), attn.data() + C * C)));

  Tensor out(q.value().shape());
  MapR(out.data(), C, L).noalias() = attn * CMapR(v.value().data(), C, L);

  return make_op(
      std::move(out), {&q, &k, &v, &alpha},
      [C, L, a, normalize, qn = std::move(qn), kn = std::move(kn), q_norms = std::move(q_norms),
       k_norms = std::move(k_norms), attn = std::move(attn), logits = std::move(logits)](Node& self) {
        CMapR g(self.grad.data(), C, L);
        const Tensor& vv = self.parents[2]->value;
        if (wants(self, 2)) {
          Tensor gv(vv.shape());
          MapR(gv.data(), C, L).noalias() = attn.transpose() * g;
          self.parents[2]->accumulate(gv);
        }
        const MatR g_attn = g * CMapR(vv.data(), C, L).transpose();
        // Softmax adjoint, row by row.
        MatR g_logits(C, C);
        for (Eigen::Index r = 0; r < C; ++r) {
          const double dot = g_attn.row(r).dot(attn.row(r));
          g_logits.row(r) = attn.row(r).array() * (g_attn.row(r).array() - dot);
        }
        if (wants(self, 3)) {
          Tensor ga({1});
          ga[0] = -(g_logits.cwiseProduct(logits)).sum() / a;
          self.parents[3]->accumulate(ga);
        }
        if (wants(self, 0)) {
          MatR gq = (g_logits * kn) / a;
          if (normalize) gq = normalize_rows_backward(qn, q_norms, gq);
          Tensor t(self.parents[0]->value.shape());
          MapR(t.data(), C, L) = gq;
          self.parents[0]->accumulate(t);
        }
        if (wants(self, 1)) {
          MatR gk = (g_logits.transpose() * qn) / a;
          if (normalize) gk = normalize_rows_backward(kn, k_norms, gk);
          Tensor t(self.parents[1]->value.shape());
          MapR(t.data(), C, L) = gk;
          self.parents[1]->accumulate(t);
        }
      });
}

Var dynamic_filter(const Var& filter, const Var& x, int kernel_size) {
  require_chw(filter, "dynamic_filter");
  require_chw(x, "dynamic_filter");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ArgumentError("dynamic_filter: kernel size must be odd");
  const Tensor& d = filter.value();
  const Tensor& t = x.value();
  if (d.channels() != kernel_size * kernel_size)
    throw ShapeError("dynamic_filter: filter has " + std::to_string(d.channels()) + " taps, expected " +
                     std::to_string(kernel_size * kernel_size));
  if (d.height() != t.height() || d.width() != t.width())
    throw ShapeError("dynamic_filter: spatial mismatch " + shape_str(d.shape()) + " vs " + shape_str(t.shape()));

  const int r = kernel_size / 2;
  const auto C = t.channels(), H = t.height(), W = t.width();
  Tensor out(t.shape());
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const int tap = dynamic_tap(dy, dx, kernel_size);
      for (std::int64_t y = std::max<std::int64_t>(0, -dy); y < std::min<std::int64_t>(H, H - dy); ++y)
        for (std::int64_t xx = std::max<std::int64_t>(0, -dx); xx < std::min<std::int64_t>(W, W - dx); ++xx) {
          const double wgt = d.at(tap, y, xx);
          for (std::int64_t c = 0; c < C; ++c) out.at(c, y, xx) += wgt * t.at(c, y + dy, xx + dx);
        }
    }

  return make_op(std::move(out), {&filter, &x}, [kernel_size, r](Node& self) {
    const Tensor& d = self.parents[0]->value;
    const Tensor& t = self.parents[1]->value;
    const Tensor& g = self.grad;
    const auto C = t.channels(), H = t.height(), W = t.width();
    Tensor gd(d.shape()), gt(t.shape());
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const int tap = dynamic_tap(dy, dx, kernel_size);
        for (std::int64_t y = std::max<std::int64_t>(0, -dy); y < std::min<std::int64_t>(H, H - dy); ++y)
          for (std::int64_t xx = std::max<std::int64_t>(0, -dx); xx < std::min<std::int64_t>(W, W - dx); ++xx) {
            const double wgt = d.at(tap, y, xx);
            double acc = 0.0;
            for (std::int64_t c = 0; c < C; ++c) {
              acc += g.at(c, y, xx) * t.at(c, y + dy, xx + dx);
              gt.at(c, y + dy, xx + dx) += wgt * g.at(c, y, xx);
            }
            gd.at(tap, y, xx) += acc;
          }
      }
    if (wants(self, 0)) self.parents[0]->accumulate(gd);
    if (wants(self, 1)) self.parents[1]->accumulate(gt);
  });
}

Var l1_loss(const Var& pred, const Var& target) {
  require_same_shape(pred, target, "l1_loss");
  const auto n = pred.value().numel();
  if (n == 0) throw ShapeError("l1_loss: empty input");
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += std::abs(pred.value()[i] - target.value()[i]);
  Tensor out({1}, s / static_cast<double>(n));
  return make_op(std::move(out), {&pred, &target}, [n](Node& self) {
    const Tensor& p = self.parents[0]->value;
    const Tensor& t = self.parents[1]->value;
    const double scale = self.grad[0] / static_cast<double>(n);
    Tensor g(p.shape());
    for (std::int64_t i = 0; i < n; ++i) {
      const double diff = p[i] - t[i];
      g[i] = diff > 0.0 ? scale : (diff < 0.0 ? -scale : 0.0);
    }
    if (wants(self, 0)) self.parents[0]->accumulate(g);
    if (wants(self, 1)) self.parents[1]->accumulate(g * -1.0);
  });
}

Var weighted_sum(const Var& a, const Tensor& weights) {
  if (a.shape() != weights.shape()) throw ShapeError("weighted_sum: weight shape mismatch");
  double s = 0.0;
  for (std::int64_t i = 0; i < weights.numel(); ++i) s += a.value()[i] * weights[i];
  return make_op(Tensor({1}, s), {&a}, [weights](Node& self) {
    self.parents[0]->accumulate(weights * self.grad[0]);
  });
}

}  // namespace ops
}  // namespace cmta
