#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "scfa/tensor.hpp"

namespace scfa {

// Reverse-mode automatic differentiation over Tensor<S>. A Var wraps a graph
// node; ops are free functions that build the DAG forward and register a
// backward closure. Subgraphs that cannot reach a trainable leaf are pruned
// at construction time, so frozen networks cost no backward work and no
// saved activations.

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;  // trainable leaf
  bool needs_grad = false;     // reachable from a trainable leaf
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<S>& ensure_grad() {
    if (grad.empty()) grad = Tensor<S>::zeros(value.h, value.w, value.c);
    return grad;
  }
};

template <typename S>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<S> v, bool requires_grad = false) : n_(std::make_shared<Node<S>>()) {
    n_->value = std::move(v);
    n_->requires_grad = requires_grad;
    n_->needs_grad = requires_grad;
  }

  bool valid() const { return static_cast<bool>(n_); }
  const Tensor<S>& value() const { return n_->value; }
  Tensor<S>& value() { return n_->value; }
  Tensor<S>& grad() { return n_->ensure_grad(); }
  bool has_grad() const { return !n_->grad.empty(); }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) {
    n_->requires_grad = b;
    n_->needs_grad = b;
  }
  bool needs_grad() const { return n_->needs_grad; }
  void zero_grad() {
    if (!n_->grad.empty()) n_->grad.m.setZero();
  }
  std::shared_ptr<Node<S>> node() const { return n_; }

 private:
  std::shared_ptr<Node<S>> n_;
};

namespace detail {

template <typename S, typename Derived>
inline void accumulate(const std::shared_ptr<Node<S>>& n, const Eigen::MatrixBase<Derived>& g) {
  if (n->needs_grad) n->ensure_grad().m += g;
}

template <typename S>
inline Var<S> make_op(Tensor<S> value, std::vector<Var<S>> parents,
                      std::function<void(Node<S>&)> backward_fn) {
  Var<S> out(std::move(value));
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.node()->needs_grad;
  if (needs) {
    out.node()->needs_grad = true;
    out.node()->backward_fn = std::move(backward_fn);
    for (auto& p : parents) out.node()->parents.push_back(p.node());
  }
  return out;
}

}  // namespace detail

/// Runs backpropagation from a scalar root. Gradients accumulate into the
/// `grad` member of every reachable node with needs_grad set.
template <typename S>
inline void backward(const Var<S>& root) {
  if (root.value().size() != 1) throw Error("backward: root must be scalar");
  if (!root.node()->needs_grad) return;

  // Post-order over parent edges; reversed it yields consumers-before-producers.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.push_back({root.node().get(), 0});
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<S>* p = n->parents[idx++].get();
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad().m.setConstant(S(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

/// Value copy severed from the graph; no gradient flows through it.
template <typename S>
inline Var<S> detach(const Var<S>& x) {
  return Var<S>(x.value());
}

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename S>
inline Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<S> v = a.value();
  v.m += b.value().m;
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(std::move(v), {a, b}, [an, bn](Node<S>& self) {
    detail::accumulate(an, self.grad.m);
    detail::accumulate(bn, self.grad.m);
  });
}

template <typename S>
inline Var<S> sub(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<S> v = a.value();
  v.m -= b.value().m;
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(std::move(v), {a, b}, [an, bn](Node<S>& self) {
    detail::accumulate(an, self.grad.m);
    detail::accumulate(bn, (-self.grad.m).eval());
  });
}

template <typename S>
inline Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<S> v = a.value();
  v.m = v.m.cwiseProduct(b.value().m);
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(std::move(v), {a, b}, [an, bn](Node<S>& self) {
    detail::accumulate(an, self.grad.m.cwiseProduct(bn->value.m).eval());
    detail::accumulate(bn, self.grad.m.cwiseProduct(an->value.m).eval());
  });
}

template <typename S>
inline Var<S> scale(const Var<S>& a, double k) {
  Tensor<S> v = a.value();
  v.m *= S(k);
  auto an = a.node();
  return detail::make_op<S>(std::move(v), {a}, [an, k](Node<S>& self) {
    detail::accumulate(an, (self.grad.m * S(k)).eval());
  });
}

template <typename S>
inline Var<S> relu(const Var<S>& x) {
  Tensor<S> v = x.value();
  v.m = v.m.array().max(S(0)).matrix();
  auto xn = x.node();
  return detail::make_op<S>(std::move(v), {x}, [xn](Node<S>& self) {
    detail::accumulate(
        xn, (self.grad.m.array() * (xn->value.m.array() > S(0)).template cast<S>()).matrix().eval());
  });
}

template <typename S>
inline Var<S> leaky_relu(const Var<S>& x, double slope = 0.2) {
  Tensor<S> v = x.value();
  v.m = v.m.array().max(v.m.array() * S(slope)).matrix();
  auto xn = x.node();
  return detail::make_op<S>(std::move(v), {x}, [xn, slope](Node<S>& self) {
    MatrixX<S> factor =
        (xn->value.m.array() > S(0)).select(MatrixX<S>::Constant(xn->value.m.rows(), xn->value.m.cols(), S(1)),
                                            MatrixX<S>::Constant(xn->value.m.rows(), xn->value.m.cols(), S(slope)));
    detail::accumulate(xn, self.grad.m.cwiseProduct(factor).eval());
  });
}

template <typename S>
inline Var<S> tanh_op(const Var<S>& x) {
  Tensor<S> v = x.value();
  v.m = v.m.array().tanh().matrix();
  auto xn = x.node();
  return detail::make_op<S>(std::move(v), {x}, [xn](Node<S>& self) {
    detail::accumulate(
        xn, (self.grad.m.array() * (S(1) - self.value.m.array().square())).matrix().eval());
  });
}

template <typename S>
inline Var<S> sigmoid_op(const Var<S>& x) {
  Tensor<S> v = x.value();
  v.m = (S(1) / (S(1) + (-v.m.array()).exp())).matrix();
  auto xn = x.node();
  return detail::make_op<S>(std::move(v), {x}, [xn](Node<S>& self) {
    detail::accumulate(
        xn,
        (self.grad.m.array() * self.value.m.array() * (S(1) - self.value.m.array())).matrix().eval());
  });
}

// ---------------------------------------------------------------------------
// Convolution. Weights are stored GEMM-ready as a (C_out, C_in*K*K) matrix
// (a Tensor with c = C_out, h = C_in*K*K, w = 1); the row layout of a patch
// is tap-major, channel-minor, matching im2col below.

template <typename S>
inline void im2col(const Tensor<S>& x, int k, int stride, int pad, MatrixX<S>& patches, int& oh,
                   int& ow) {
  oh = (x.h + 2 * pad - k) / stride + 1;
  ow = (x.w + 2 * pad - k) / stride + 1;
  patches.setZero(static_cast<long>(x.c) * k * k, static_cast<long>(oh) * ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const long col = static_cast<long>(oy) * ow + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= x.h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= x.w) continue;
          patches.block(static_cast<long>(ky * k + kx) * x.c, col, x.c, 1) = x.m.col(x.pix(iy, ix));
        }
      }
    }
  }
}

template <typename S>
inline void col2im_add(const MatrixX<S>& grad_patches, int c, int h, int w, int k, int stride,
                       int pad, MatrixX<S>& dx) {
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const long col = static_cast<long>(oy) * ow + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w) continue;
          dx.col(static_cast<long>(iy) * w + ix) +=
              grad_patches.block(static_cast<long>(ky * k + kx) * c, col, c, 1);
        }
      }
    }
  }
}

template <typename S>
inline Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int k, int stride,
                     int pad) {
  const Tensor<S>& xv = x.value();
  const long ckk = static_cast<long>(xv.c) * k * k;
  if (weight.value().m.rows() != bias.value().m.rows() || weight.value().m.cols() != ckk)
    throw Error("conv2d: weight shape mismatch");
  MatrixX<S> patches;
  int oh = 0, ow = 0;
  im2col(xv, k, stride, pad, patches, oh, ow);
  Tensor<S> out(oh, ow, static_cast<int>(weight.value().m.rows()));
  out.m.noalias() = weight.value().m * patches;
  out.m.colwise() += Eigen::Matrix<S, Eigen::Dynamic, 1>(bias.value().m.col(0));

  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  const int xc = xv.c, xh = xv.h, xw = xv.w;
  // The patch matrix is only needed for dW; keep it alive just in that case.
  std::shared_ptr<MatrixX<S>> saved;
  if (wn->needs_grad) saved = std::make_shared<MatrixX<S>>(std::move(patches));
  return detail::make_op<S>(
      std::move(out), {x, weight, bias}, [xn, wn, bn, saved, xc, xh, xw, k, stride, pad](Node<S>& self) {
        if (bn->needs_grad) detail::accumulate(bn, self.grad.m.rowwise().sum().eval());
        if (wn->needs_grad) detail::accumulate(wn, (self.grad.m * saved->transpose()).eval());
        if (xn->needs_grad) {
          MatrixX<S> grad_patches = wn->value.m.transpose() * self.grad.m;
          col2im_add(grad_patches, xc, xh, xw, k, stride, pad, xn->ensure_grad().m);
        }
      });
}

// ---------------------------------------------------------------------------
// Instance normalization: per-channel over spatial positions, affine.

template <typename S>
inline Var<S> instance_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                            double eps = 1e-5) {
  const Tensor<S>& xv = x.value();
  const long n = xv.m.cols();
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  Vec mean = xv.m.rowwise().mean();
  Vec var = (xv.m.colwise() - mean).array().square().matrix().rowwise().mean();
  Vec inv_std = (var.array() + S(eps)).rsqrt();
  Tensor<S> out(xv.h, xv.w, xv.c);
  out.m = ((xv.m.colwise() - mean).array().colwise() * inv_std.array()).matrix();
  out.m = (out.m.array().colwise() * Vec(gamma.value().m.col(0)).array()).matrix();
  out.m.colwise() += Vec(beta.value().m.col(0));

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return detail::make_op<S>(
      std::move(out), {x, gamma, beta}, [xn, gn, bn, mean, inv_std, n](Node<S>& self) {
        MatrixX<S> xhat =
            ((xn->value.m.colwise() - mean).array().colwise() * inv_std.array()).matrix();
        if (bn->needs_grad) detail::accumulate(bn, self.grad.m.rowwise().sum().eval());
        if (gn->needs_grad)
          detail::accumulate(gn, self.grad.m.cwiseProduct(xhat).rowwise().sum().eval());
        if (xn->needs_grad) {
          using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
          Vec gvec = gn->value.m.col(0);
          MatrixX<S> gy = (self.grad.m.array().colwise() * gvec.array()).matrix();
          Vec mean_gy = gy.rowwise().mean();
          Vec mean_gy_xhat = gy.cwiseProduct(xhat).rowwise().mean();
          MatrixX<S> dx =
              ((gy.colwise() - mean_gy) - (xhat.array().colwise() * mean_gy_xhat.array()).matrix());
          dx = (dx.array().colwise() * inv_std.array()).matrix();
          detail::accumulate(xn, dx.eval());
          (void)n;
        }
      });
}

// ---------------------------------------------------------------------------
// Resampling and pooling

template <typename S>
inline Var<S> upsample_nearest2(const Var<S>& x) {
  const Tensor<S>& xv = x.value();
  Tensor<S> out(xv.h * 2, xv.w * 2, xv.c);
  for (int y = 0; y < out.h; ++y)
    for (int xq = 0; xq < out.w; ++xq) out.m.col(out.pix(y, xq)) = xv.m.col(xv.pix(y / 2, xq / 2));
  auto xn = x.node();
  const int h = xv.h, w = xv.w;
  return detail::make_op<S>(std::move(out), {x}, [xn, h, w](Node<S>& self) {
    if (!xn->needs_grad) return;
    MatrixX<S>& dx = xn->ensure_grad().m;
    for (int y = 0; y < 2 * h; ++y)
      for (int xq = 0; xq < 2 * w; ++xq)
        dx.col(static_cast<long>(y / 2) * w + xq / 2) += self.grad.m.col(static_cast<long>(y) * 2 * w + xq);
  });
}

template <typename S>
inline Var<S> avg_pool2(const Var<S>& x) {
  const Tensor<S>& xv = x.value();
  if (xv.h % 2 || xv.w % 2) throw Error("avg_pool2: odd spatial size");
  Tensor<S> out(xv.h / 2, xv.w / 2, xv.c);
  for (int y = 0; y < out.h; ++y)
    for (int xq = 0; xq < out.w; ++xq)
      out.m.col(out.pix(y, xq)) = (xv.m.col(xv.pix(2 * y, 2 * xq)) + xv.m.col(xv.pix(2 * y, 2 * xq + 1)) +
                                   xv.m.col(xv.pix(2 * y + 1, 2 * xq)) +
                                   xv.m.col(xv.pix(2 * y + 1, 2 * xq + 1))) *
                                  S(0.25);
  auto xn = x.node();
  const int oh = out.h, ow = out.w, w = xv.w;
  return detail::make_op<S>(std::move(out), {x}, [xn, oh, ow, w](Node<S>& self) {
    if (!xn->needs_grad) return;
    MatrixX<S>& dx = xn->ensure_grad().m;
    for (int y = 0; y < oh; ++y)
      for (int xq = 0; xq < ow; ++xq) {
        const auto g = (self.grad.m.col(static_cast<long>(y) * ow + xq) * S(0.25)).eval();
        dx.col(static_cast<long>(2 * y) * w + 2 * xq) += g;
        dx.col(static_cast<long>(2 * y) * w + 2 * xq + 1) += g;
        dx.col(static_cast<long>(2 * y + 1) * w + 2 * xq) += g;
        dx.col(static_cast<long>(2 * y + 1) * w + 2 * xq + 1) += g;
      }
  });
}

template <typename S>
inline Var<S> global_avg_pool(const Var<S>& x) {
  const Tensor<S>& xv = x.value();
  Tensor<S> out(1, 1, xv.c);
  out.m = xv.m.rowwise().mean();
  auto xn = x.node();
  const long n = xv.m.cols();
  return detail::make_op<S>(std::move(out), {x}, [xn, n](Node<S>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad().m += (self.grad.m * MatrixX<S>::Constant(1, n, S(1) / S(n)));
  });
}

template <typename S>
inline Var<S> concat_c(const Var<S>& a, const Var<S>& b) {
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  if (av.h != bv.h || av.w != bv.w) throw Error("concat_c: spatial mismatch");
  Tensor<S> out(av.h, av.w, av.c + bv.c);
  out.m.topRows(av.c) = av.m;
  out.m.bottomRows(bv.c) = bv.m;
  auto an = a.node(), bn = b.node();
  const int ca = av.c, cb = bv.c;
  return detail::make_op<S>(std::move(out), {a, b}, [an, bn, ca, cb](Node<S>& self) {
    detail::accumulate(an, self.grad.m.topRows(ca).eval());
    detail::accumulate(bn, self.grad.m.bottomRows(cb).eval());
  });
}

/// Fully connected layer applied per pixel: weight is (C_out, C_in), bias (C_out,1).
template <typename S>
inline Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  const Tensor<S>& xv = x.value();
  if (weight.value().m.cols() != xv.c || weight.value().m.rows() != bias.value().m.rows())
    throw Error("linear: shape mismatch");
  Tensor<S> out(xv.h, xv.w, static_cast<int>(weight.value().m.rows()));
  out.m.noalias() = weight.value().m * xv.m;
  out.m.colwise() += Eigen::Matrix<S, Eigen::Dynamic, 1>(bias.value().m.col(0));
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return detail::make_op<S>(std::move(out), {x, weight, bias}, [xn, wn, bn](Node<S>& self) {
    if (bn->needs_grad) detail::accumulate(bn, self.grad.m.rowwise().sum().eval());
    if (wn->needs_grad) detail::accumulate(wn, (self.grad.m * xn->value.m.transpose()).eval());
    if (xn->needs_grad) detail::accumulate(xn, (wn->value.m.transpose() * self.grad.m).eval());
  });
}

/// Softmax over the channel axis, independently per pixel.
template <typename S>
inline Var<S> softmax_c(const Var<S>& x) {
  const Tensor<S>& xv = x.value();
  Tensor<S> out(xv.h, xv.w, xv.c);
  for (long col = 0; col < xv.m.cols(); ++col) {
    auto v = xv.m.col(col).array();
    auto e = (v - v.maxCoeff()).exp().eval();
    out.m.col(col) = (e / e.sum()).matrix();
  }
  auto xn = x.node();
  return detail::make_op<S>(std::move(out), {x}, [xn](Node<S>& self) {
    if (!xn->needs_grad) return;
    MatrixX<S> dx(self.value.m.rows(), self.value.m.cols());
    for (long col = 0; col < dx.cols(); ++col) {
      auto p = self.value.m.col(col).array();
      auto g = self.grad.m.col(col).array();
      const S dot = (p * g).sum();
      dx.col(col) = (p * (g - dot)).matrix();
    }
    detail::accumulate(xn, dx.eval());
  });
}

/// Spatially weighted mean over pixels with fixed non-negative weights
/// (a 1 x HW row vector), yielding a (1,1,C) channel vector.
template <typename S>
inline Var<S> weighted_mean_c(const Var<S>& f, const Eigen::Matrix<S, 1, Eigen::Dynamic>& wt) {
  const Tensor<S>& fv = f.value();
  if (wt.cols() != fv.m.cols()) throw Error("weighted_mean_c: weight length mismatch");
  const S total = wt.sum();
  if (!(total > S(0))) throw Error("weighted_mean_c: weights sum to zero");
  Tensor<S> out(1, 1, fv.c);
  out.m = fv.m * wt.transpose() / total;
  auto fn = f.node();
  return detail::make_op<S>(std::move(out), {f}, [fn, wt, total](Node<S>& self) {
    if (!fn->needs_grad) return;
    fn->ensure_grad().m += self.grad.m * (wt / total);
  });
}

// ---------------------------------------------------------------------------
// Reductions to scalars

template <typename S>
inline Var<S> mean_all(const Var<S>& x) {
  Tensor<S> out = Tensor<S>::scalar(x.value().m.mean());
  auto xn = x.node();
  const long n = x.value().size();
  return detail::make_op<S>(std::move(out), {x}, [xn, n](Node<S>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad().m.array() += self.grad.m(0, 0) / S(n);
  });
}

template <typename S>
inline Var<S> sum_all(const Var<S>& x) {
  Tensor<S> out = Tensor<S>::scalar(x.value().m.sum());
  auto xn = x.node();
  return detail::make_op<S>(std::move(out), {x}, [xn](Node<S>& self) {
    if (!xn->needs_grad) return;
    xn->ensure_grad().m.array() += self.grad.m(0, 0);
  });
}

// ---------------------------------------------------------------------------
// Fused scalar losses. These avoid building large intermediate graphs for the
// hot training path; each has a hand-derived backward.

/// mean over elements of sqrt((a-b)^2 + eps^2). Terms go through hypot and
/// the mean is computed shifted by the first term, so identical inputs yield
/// exactly eps instead of eps plus summation noise.
template <typename S>
inline Var<S> charbonnier_loss(const Var<S>& a, const Var<S>& b, double eps) {
  require_same_shape(a.value(), b.value(), "charbonnier_loss");
  const long n = a.value().size();
  MatrixX<S> diff = a.value().m - b.value().m;
  MatrixX<S> root = diff.unaryExpr([eps](S d) { return std::hypot(d, S(eps)); });
  const S first = root(0, 0);
  Tensor<S> out = Tensor<S>::scalar(first + (root.array() - first).sum() / S(n));
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(
      std::move(out), {a, b},
      [an, bn, diff = std::move(diff), root = std::move(root), n](Node<S>& self) {
        MatrixX<S> d = (diff.array() / root.array()).matrix() * (self.grad.m(0, 0) / S(n));
        detail::accumulate(an, d);
        detail::accumulate(bn, (-d).eval());
      });
}

/// mean over elements of |a-b|
template <typename S>
inline Var<S> l1_loss(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.value(), b.value(), "l1_loss");
  const long n = a.value().size();
  MatrixX<S> diff = a.value().m - b.value().m;
  Tensor<S> out = Tensor<S>::scalar(diff.array().abs().sum() / S(n));
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(std::move(out), {a, b},
                            [an, bn, diff = std::move(diff), n](Node<S>& self) {
                              MatrixX<S> sgn = diff.array().sign().matrix() * (self.grad.m(0, 0) / S(n));
                              detail::accumulate(an, sgn);
                              detail::accumulate(bn, (-sgn).eval());
                            });
}

/// mean over elements of (x - k)^2
template <typename S>
inline Var<S> mse_to_const(const Var<S>& x, double k) {
  const long n = x.value().size();
  MatrixX<S> diff = (x.value().m.array() - S(k)).matrix();
  Tensor<S> out = Tensor<S>::scalar(diff.array().square().sum() / S(n));
  auto xn = x.node();
  return detail::make_op<S>(std::move(out), {x}, [xn, diff = std::move(diff), n](Node<S>& self) {
    detail::accumulate(xn, (diff * (S(2) * self.grad.m(0, 0) / S(n))).eval());
  });
}

/// mean binary cross-entropy of probabilities against a constant 0/1 label.
/// Inputs are clamped away from {0,1} for finiteness; the clamp is flat, so
/// saturated entries receive zero gradient.
template <typename S>
inline Var<S> bce_to_const(const Var<S>& p, double label, double clamp_eps = 1e-7) {
  if (label != 0.0 && label != 1.0) throw Error("bce_to_const: label must be 0 or 1");
  const long n = p.value().size();
  const S lo = S(clamp_eps), hi = S(1) - S(clamp_eps);
  MatrixX<S> pc = p.value().m.array().min(hi).max(lo).matrix();
  S total = 0;
  if (label == 1.0)
    total = -(pc.array().log()).sum();
  else
    total = -((S(1) - pc.array()).log()).sum();
  Tensor<S> out = Tensor<S>::scalar(total / S(n));
  auto pn = p.node();
  return detail::make_op<S>(
      std::move(out), {p}, [pn, pc = std::move(pc), label, n, lo, hi](Node<S>& self) {
        if (!pn->needs_grad) return;
        Eigen::ArrayXX<S> inside =
            ((pn->value.m.array() >= lo) && (pn->value.m.array() <= hi)).template cast<S>();
        Eigen::ArrayXX<S> d;
        if (label == 1.0)
          d = -inside / pc.array();
        else
          d = inside / (S(1) - pc.array());
        detail::accumulate(pn, (d * (self.grad.m(0, 0) / S(n))).matrix().eval());
      });
}

/// Cross-entropy with integrated softmax over a (1,1,C) logit vector.
template <typename S>
inline Var<S> softmax_xent(const Var<S>& logits, int label) {
  const Tensor<S>& lv = logits.value();
  if (lv.m.cols() != 1) throw Error("softmax_xent: expects a single logit vector");
  if (label < 0 || label >= lv.c) throw Error("softmax_xent: label out of range");
  const S mx = lv.m.col(0).maxCoeff();
  Eigen::Matrix<S, Eigen::Dynamic, 1> e = (lv.m.col(0).array() - mx).exp();
  const S denom = e.sum();
  Tensor<S> out = Tensor<S>::scalar(std::log(denom) + mx - lv.m(label, 0));
  auto ln = logits.node();
  Eigen::Matrix<S, Eigen::Dynamic, 1> p = e / denom;
  return detail::make_op<S>(std::move(out), {logits}, [ln, p = std::move(p), label](Node<S>& self) {
    Eigen::Matrix<S, Eigen::Dynamic, 1> d = p;
    d(label) -= S(1);
    detail::accumulate(ln, (d * self.grad.m(0, 0)).eval());
  });
}

/// Cosine similarity between two tensors viewed as flat vectors.
template <typename S>
inline Var<S> cosine_sim(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.value(), b.value(), "cosine_sim");
  const S na = a.value().m.norm(), nb = b.value().m.norm();
  if (na < S(1e-12) || nb < S(1e-12)) throw Error("cosine_sim: zero-norm input");
  const S dot = (a.value().m.array() * b.value().m.array()).sum();
  const S cs = dot / (na * nb);
  Tensor<S> out = Tensor<S>::scalar(cs);
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(std::move(out), {a, b}, [an, bn, na, nb, cs](Node<S>& self) {
    const S g = self.grad.m(0, 0);
    if (an->needs_grad)
      detail::accumulate(
          an, ((bn->value.m / (na * nb) - an->value.m * (cs / (na * na))) * g).eval());
    if (bn->needs_grad)
      detail::accumulate(
          bn, ((an->value.m / (na * nb) - bn->value.m * (cs / (nb * nb))) * g).eval());
  });
}

}  // namespace scfa
