#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sgg/errors.hpp"

namespace sgg {

// Scalar type for all tensor math. Override at build time with
// -DSGG_REAL=float; gradient checks need the double default.
#ifndef SGG_REAL
#define SGG_REAL double
#endif
using real = SGG_REAL;

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables autograd recording on this thread while alive. Forward passes under
// the guard build plain values with no parent links.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline std::string dims_str(const std::vector<int>& d) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < d.size(); ++i) os << (i ? "x" : "") << d[i];
  os << ']';
  return os.str();
}

inline int dims_size(const std::vector<int>& d) {
  int n = 1;
  for (int e : d) {
    if (e <= 0) throw ShapeError("nonpositive extent in shape " + dims_str(d));
    n *= e;
  }
  return n;
}

struct TensorNode {
  std::vector<int> dims;
  std::vector<real> value;
  std::vector<real> grad;  // sized lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), real(0));
  }
};

// Dense n-dimensional array, row-major, with an optional recorded gradient.
// Value semantics over a shared node: tensors are immutable once produced by
// an operation; only leaf tensors (parameters, inputs) may be mutated.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(std::vector<int> dims, std::vector<real> data,
                     bool requires_grad = false) {
    int n = dims_size(dims);
    if (static_cast<int>(data.size()) != n)
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + dims_str(dims));
    auto node = std::make_shared<TensorNode>();
    node->dims = std::move(dims);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(std::vector<int> dims, real v, bool requires_grad = false) {
    int n = dims_size(dims);
    return from(std::move(dims), std::vector<real>(n, v), requires_grad);
  }

  static Tensor zeros(std::vector<int> dims, bool requires_grad = false) {
    return full(std::move(dims), real(0), requires_grad);
  }

  static Tensor scalar(real v) { return from({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& dims() const { return node_->dims; }
  int ndim() const { return static_cast<int>(node_->dims.size()); }
  int size() const { return static_cast<int>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<real>& vals() const { return node_->value; }
  // Mutable access is for leaves only (parameter updates, grad_check nudges).
  std::vector<real>& leaf_vals() { return node_->value; }

  real item() const {
    if (size() != 1)
      throw ShapeError("item() on non-scalar tensor " + dims_str(dims()));
    return node_->value[0];
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::vector<real>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<real>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() {
    if (node_) node_->grad.assign(node_->value.size(), real(0));
  }

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

  // Reverse-mode accumulation from this scalar through the recorded graph.
  void backward() const {
    if (size() != 1)
      throw ShapeError("backward() needs a scalar loss, got " +
                       dims_str(dims()));
    // Iterative post-order over parents.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        TensorNode* p = n->parents[next++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] = real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode* n = *it;
      if (!n->backward) continue;
      for (auto& p : n->parents) p->ensure_grad();
      n->backward(*n);
    }
  }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;

  friend Tensor make_op(std::vector<int>, std::vector<real>,
                        std::vector<Tensor>,
                        std::function<void(TensorNode&)>);
};

// Builds an op result. Records parents and the backward closure only when
// gradients are enabled and some parent requires them.
inline Tensor make_op(std::vector<int> dims, std::vector<real> value,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward) {
  auto node = std::make_shared<TensorNode>();
  node->dims = std::move(dims);
  node->value = std::move(value);
  bool track = false;
  if (detail::grad_enabled) {
    for (const auto& p : parents)
      if (p.requires_grad()) {
        track = true;
        break;
      }
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline void check_same_dims(const Tensor& a, const Tensor& b,
                            const char* op) {
  if (a.dims() != b.dims())
    throw ShapeError(std::string(op) + ": shape " + dims_str(a.dims()) +
                     " vs " + dims_str(b.dims()));
}

// ---- elementwise ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_dims(a, b, "add");
  std::vector<real> out(a.size());
  const auto &av = a.vals(), &bv = b.vals();
  for (int i = 0; i < a.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_op(a.dims(), std::move(out), {a, b}, [an, bn](TensorNode& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      an->grad[i] += n.grad[i];
      bn->grad[i] += n.grad[i];
    }
  });
}

inline Tensor add_n(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("add_n: empty operand list");
  for (const auto& p : parts) check_same_dims(parts[0], p, "add_n");
  std::vector<real> out(parts[0].size(), real(0));
  for (const auto& p : parts)
    for (int i = 0; i < p.size(); ++i) out[i] += p.vals()[i];
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  return make_op(parts[0].dims(), std::move(out), parts,
                 [nodes](TensorNode& n) {
                   for (auto& p : nodes)
                     for (std::size_t i = 0; i < n.grad.size(); ++i)
                       p->grad[i] += n.grad[i];
                 });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_dims(a, b, "mul");
  std::vector<real> out(a.size());
  const auto &av = a.vals(), &bv = b.vals();
  for (int i = 0; i < a.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_op(a.dims(), std::move(out), {a, b}, [an, bn](TensorNode& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      an->grad[i] += n.grad[i] * bn->value[i];
      bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, real c) {
  std::vector<real> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.vals()[i] * c;
  auto an = a.node_ptr();
  return make_op(a.dims(), std::move(out), {a}, [an, c](TensorNode& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      an->grad[i] += n.grad[i] * c;
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<real> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = std::max(real(0), a.vals()[i]);
  auto an = a.node_ptr();
  return make_op(a.dims(), std::move(out), {a}, [an](TensorNode& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (an->value[i] > 0) an->grad[i] += n.grad[i];
  });
}

inline Tensor reshape(const Tensor& a, std::vector<int> dims) {
  if (dims_size(dims) != a.size())
    throw ShapeError("reshape: " + dims_str(a.dims()) + " to " +
                     dims_str(dims) + " changes element count");
  auto an = a.node_ptr();
  return make_op(std::move(dims), a.vals(), {a}, [an](TensorNode& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  });
}

inline Tensor flatten(const Tensor& a) { return reshape(a, {a.size()}); }

// ---- joins ----

// Concatenation along axis 0; trailing extents must agree. For vectors this is
// plain concatenation, for C x H x W maps it stacks channels.
inline Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat0: empty operand list");
  std::vector<int> rest(parts[0].dims().begin() + 1, parts[0].dims().end());
  int d0 = 0;
  for (const auto& p : parts) {
    std::vector<int> r(p.dims().begin() + 1, p.dims().end());
    if (r != rest || p.ndim() != parts[0].ndim())
      throw ShapeError("concat0: shape " + dims_str(parts[0].dims()) +
                       " vs " + dims_str(p.dims()));
    d0 += p.dims()[0];
  }
  std::vector<int> dims = parts[0].dims();
  dims[0] = d0;
  std::vector<real> out;
  out.reserve(dims_size(dims));
  for (const auto& p : parts)
    out.insert(out.end(), p.vals().begin(), p.vals().end());
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  return make_op(std::move(dims), std::move(out), parts,
                 [nodes](TensorNode& n) {
                   std::size_t off = 0;
                   for (auto& p : nodes) {
                     for (std::size_t i = 0; i < p->value.size(); ++i)
                       p->grad[i] += n.grad[off + i];
                     off += p->value.size();
                   }
                 });
}

// Stacks equal-shape tensors into a new leading axis.
inline Tensor stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack0: empty operand list");
  for (const auto& p : parts) check_same_dims(parts[0], p, "stack0");
  std::vector<int> dims;
  dims.push_back(static_cast<int>(parts.size()));
  for (int e : parts[0].dims()) dims.push_back(e);
  std::vector<real> out;
  out.reserve(dims_size(dims));
  for (const auto& p : parts)
    out.insert(out.end(), p.vals().begin(), p.vals().end());
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  return make_op(std::move(dims), std::move(out), parts,
                 [nodes](TensorNode& n) {
                   std::size_t off = 0;
                   for (auto& p : nodes) {
                     for (std::size_t i = 0; i < p->value.size(); ++i)
                       p->grad[i] += n.grad[off + i];
                     off += p->value.size();
                   }
                 });
}

// ---- pooling ----

// Non-overlapping-capable 2-D average pooling on a C x H x W map.
inline Tensor avg_pool2d(const Tensor& x, int k, int stride) {
  if (x.ndim() != 3)
    throw ShapeError("avg_pool2d: expected C x H x W, got " +
                     dims_str(x.dims()));
  if (k <= 0 || stride <= 0) throw ShapeError("avg_pool2d: k/stride <= 0");
  const int C = x.dims()[0], H = x.dims()[1], W = x.dims()[2];
  if ((H - k) % stride != 0 || (W - k) % stride != 0 || H < k || W < k)
    throw ShapeError("avg_pool2d: window " + std::to_string(k) + "/" +
                     std::to_string(stride) + " does not tile " +
                     dims_str(x.dims()));
  const int Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
  std::vector<real> out(static_cast<std::size_t>(C) * Ho * Wo);
  const real inv = real(1) / (real(k) * real(k));
  const auto& xv = x.vals();
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        real s = 0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            s += xv[(c * H + oy * stride + dy) * W + ox * stride + dx];
        out[(c * Ho + oy) * Wo + ox] = s * inv;
      }
  auto xn = x.node_ptr();
  return make_op({C, Ho, Wo}, std::move(out), {x},
                 [xn, C, H, W, Ho, Wo, k, stride, inv](TensorNode& n) {
                   for (int c = 0; c < C; ++c)
                     for (int oy = 0; oy < Ho; ++oy)
                       for (int ox = 0; ox < Wo; ++ox) {
                         real g = n.grad[(c * Ho + oy) * Wo + ox] * inv;
                         for (int dy = 0; dy < k; ++dy)
                           for (int dx = 0; dx < k; ++dx)
                             xn->grad[(c * H + oy * stride + dy) * W +
                                      ox * stride + dx] += g;
                       }
                 });
}

// Spatial mean per channel: C x H x W -> C.
inline Tensor spatial_mean(const Tensor& x) {
  if (x.ndim() != 3)
    throw ShapeError("spatial_mean: expected C x H x W, got " +
                     dims_str(x.dims()));
  const int C = x.dims()[0], HW = x.dims()[1] * x.dims()[2];
  const real inv = real(1) / real(HW);
  std::vector<real> out(C);
  for (int c = 0; c < C; ++c) {
    real s = 0;
    for (int i = 0; i < HW; ++i) s += x.vals()[c * HW + i];
    out[c] = s * inv;
  }
  auto xn = x.node_ptr();
  return make_op({C}, std::move(out), {x}, [xn, C, HW, inv](TensorNode& n) {
    for (int c = 0; c < C; ++c) {
      real g = n.grad[c] * inv;
      for (int i = 0; i < HW; ++i) xn->grad[c * HW + i] += g;
    }
  });
}

// ---- linear algebra ----

// out[j] = sum_i W[j,i] x[i] + b[j]
inline Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.ndim() != 1 || W.ndim() != 2 || b.ndim() != 1 ||
      W.dims()[1] != x.dims()[0] || W.dims()[0] != b.dims()[0])
    throw ShapeError("linear: x " + dims_str(x.dims()) + ", W " +
                     dims_str(W.dims()) + ", b " + dims_str(b.dims()));
  const int out_n = W.dims()[0], in_n = W.dims()[1];
  std::vector<real> out(out_n);
  const auto &xv = x.vals(), &wv = W.vals(), &bv = b.vals();
  for (int j = 0; j < out_n; ++j) {
    real s = bv[j];
    const real* row = wv.data() + static_cast<std::size_t>(j) * in_n;
    for (int i = 0; i < in_n; ++i) s += row[i] * xv[i];
    out[j] = s;
  }
  auto xn = x.node_ptr(), wn = W.node_ptr(), bn = b.node_ptr();
  return make_op({out_n}, std::move(out), {x, W, b},
                 [xn, wn, bn, out_n, in_n](TensorNode& n) {
                   for (int j = 0; j < out_n; ++j) {
                     real g = n.grad[j];
                     if (g == 0) continue;
                     bn->grad[j] += g;
                     real* wrow = wn->grad.data() +
                                  static_cast<std::size_t>(j) * in_n;
                     const real* wval = wn->value.data() +
                                        static_cast<std::size_t>(j) * in_n;
                     for (int i = 0; i < in_n; ++i) {
                       wrow[i] += g * xn->value[i];
                       xn->grad[i] += g * wval[i];
                     }
                   }
                 });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 1 || b.ndim() != 1 || a.dims() != b.dims())
    throw ShapeError("dot: " + dims_str(a.dims()) + " vs " +
                     dims_str(b.dims()));
  real s = 0;
  for (int i = 0; i < a.size(); ++i) s += a.vals()[i] * b.vals()[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_op({1}, {s}, {a, b}, [an, bn](TensorNode& n) {
    real g = n.grad[0];
    for (std::size_t i = 0; i < an->value.size(); ++i) {
      an->grad[i] += g * bn->value[i];
      bn->grad[i] += g * an->value[i];
    }
  });
}

// ---- convolution ----

// Cross-correlation of C_in x H x W with C_out x C_in x k x k kernels,
// odd k, zero padding; optional bias.
inline Tensor conv2d(const Tensor& x, const Tensor& K, const Tensor& b,
                     int padding) {
  if (x.ndim() != 3 || K.ndim() != 4)
    throw ShapeError("conv2d: x " + dims_str(x.dims()) + ", K " +
                     dims_str(K.dims()));
  const int Cin = x.dims()[0], H = x.dims()[1], W = x.dims()[2];
  const int Cout = K.dims()[0], k = K.dims()[2];
  if (K.dims()[1] != Cin || K.dims()[3] != k)
    throw ShapeError("conv2d: x " + dims_str(x.dims()) + " incompatible with K " +
                     dims_str(K.dims()));
  if (k % 2 == 0) throw ShapeError("conv2d: even kernel size " + std::to_string(k));
  if (padding < 0) throw ShapeError("conv2d: negative padding");
  if (b.defined() && (b.ndim() != 1 || b.dims()[0] != Cout))
    throw ShapeError("conv2d: bias " + dims_str(b.dims()) + " vs C_out " +
                     std::to_string(Cout));
  const int Ho = H + 2 * padding - k + 1, Wo = W + 2 * padding - k + 1;
  if (Ho < 1 || Wo < 1)
    throw ShapeError("conv2d: nonpositive output extent for x " +
                     dims_str(x.dims()) + ", K " + dims_str(K.dims()) +
                     ", padding " + std::to_string(padding));

  std::vector<real> out(static_cast<std::size_t>(Cout) * Ho * Wo, real(0));
  const auto &xv = x.vals(), &kv = K.vals();
  for (int co = 0; co < Cout; ++co) {
    real bias = b.defined() ? b.vals()[co] : real(0);
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        real s = bias;
        for (int ci = 0; ci < Cin; ++ci) {
          const real* xc = xv.data() + static_cast<std::size_t>(ci) * H * W;
          const real* kc = kv.data() +
                           (static_cast<std::size_t>(co) * Cin + ci) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            int iy = oy - padding + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < k; ++kx) {
              int ix = ox - padding + kx;
              if (ix < 0 || ix >= W) continue;
              s += kc[ky * k + kx] * xc[iy * W + ix];
            }
          }
        }
        out[(static_cast<std::size_t>(co) * Ho + oy) * Wo + ox] = s;
      }
  }

  auto xn = x.node_ptr(), kn = K.node_ptr();
  auto bn = b.defined() ? b.node_ptr() : nullptr;
  std::vector<Tensor> parents{x, K};
  if (b.defined()) parents.push_back(b);
  return make_op(
      {Cout, Ho, Wo}, std::move(out), std::move(parents),
      [xn, kn, bn, Cin, H, W, Cout, Ho, Wo, k, padding](TensorNode& n) {
        for (int co = 0; co < Cout; ++co)
          for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
              real g = n.grad[(static_cast<std::size_t>(co) * Ho + oy) * Wo + ox];
              if (g == 0) continue;
              if (bn) bn->grad[co] += g;
              for (int ci = 0; ci < Cin; ++ci) {
                const real* xc =
                    xn->value.data() + static_cast<std::size_t>(ci) * H * W;
                real* xg =
                    xn->grad.data() + static_cast<std::size_t>(ci) * H * W;
                const std::size_t koff =
                    (static_cast<std::size_t>(co) * Cin + ci) * k * k;
                for (int ky = 0; ky < k; ++ky) {
                  int iy = oy - padding + ky;
                  if (iy < 0 || iy >= H) continue;
                  for (int kx = 0; kx < k; ++kx) {
                    int ix = ox - padding + kx;
                    if (ix < 0 || ix >= W) continue;
                    kn->grad[koff + ky * k + kx] += g * xc[iy * W + ix];
                    xg[iy * W + ix] += g * kn->value[koff + ky * k + kx];
                  }
                }
              }
            }
      });
}

inline Tensor conv2d(const Tensor& x, const Tensor& K, int padding) {
  return conv2d(x, K, Tensor(), padding);
}

// ---- normalization / loss ----

// Softmax over axis 0, independently at every trailing index. For a vector
// this is the plain stabilized softmax; for an n x H x W stack it normalizes
// across the n entries at each location.
inline Tensor softmax0(const Tensor& v) {
  if (v.ndim() < 1) throw ShapeError("softmax0: undefined input");
  const int n = v.dims()[0];
  const int m = v.size() / n;
  std::vector<real> out(v.size());
  const auto& vv = v.vals();
  for (int t = 0; t < m; ++t) {
    real mx = vv[t];
    for (int i = 1; i < n; ++i) mx = std::max(mx, vv[i * m + t]);
    real z = 0;
    for (int i = 0; i < n; ++i) {
      real e = std::exp(vv[i * m + t] - mx);
      out[i * m + t] = e;
      z += e;
    }
    for (int i = 0; i < n; ++i) {
      out[i * m + t] /= z;
      if (!std::isfinite(out[i * m + t]))
        throw NumericError("softmax: non-finite output");
    }
  }
  auto vn = v.node_ptr();
  // Save the probabilities for the backward pass.
  auto probs = std::make_shared<std::vector<real>>(out);
  return make_op(v.dims(), std::move(out), {v}, [vn, probs, n, m](TensorNode& node) {
    const auto& p = *probs;
    for (int t = 0; t < m; ++t) {
      real s = 0;
      for (int i = 0; i < n; ++i) s += node.grad[i * m + t] * p[i * m + t];
      for (int i = 0; i < n; ++i)
        vn->grad[i * m + t] += p[i * m + t] * (node.grad[i * m + t] - s);
    }
  });
}

inline Tensor softmax(const Tensor& v) {
  if (v.ndim() != 1) throw ShapeError("softmax: expected a vector, got " + dims_str(v.dims()));
  return softmax0(v);
}

// -log softmax(logits)[label], numerically stable.
inline Tensor cross_entropy(const Tensor& logits, int label) {
  if (logits.ndim() != 1)
    throw ShapeError("cross_entropy: expected a vector, got " +
                     dims_str(logits.dims()));
  const int n = logits.dims()[0];
  if (label < 0 || label >= n)
    throw IndexError("cross_entropy: label " + std::to_string(label) +
                     " outside [0," + std::to_string(n) + ")");
  const auto& lv = logits.vals();
  real mx = lv[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, lv[i]);
  real z = 0;
  for (int i = 0; i < n; ++i) z += std::exp(lv[i] - mx);
  real loss = std::log(z) + mx - lv[label];
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
  auto ln = logits.node_ptr();
  return make_op({1}, {loss}, {logits}, [ln, n, label, mx, z](TensorNode& node) {
    real g = node.grad[0];
    for (int i = 0; i < n; ++i) {
      real p = std::exp(ln->value[i] - mx) / z;
      ln->grad[i] += g * (p - (i == label ? real(1) : real(0)));
    }
  });
}

// ---- attention helpers ----

// out[d] = sum_i w[i] * parts[i][d]
inline Tensor weighted_sum(const Tensor& w, const std::vector<Tensor>& parts) {
  const int n = static_cast<int>(parts.size());
  if (w.ndim() != 1 || w.dims()[0] != n)
    throw ShapeError("weighted_sum: weights " + dims_str(w.dims()) + " vs " +
                     std::to_string(n) + " parts");
  if (n == 0) throw ShapeError("weighted_sum: empty part list");
  for (const auto& p : parts) check_same_dims(parts[0], p, "weighted_sum");
  const int d = parts[0].size();
  std::vector<real> out(d, real(0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[j] += w.vals()[i] * parts[i].vals()[j];
  std::vector<Tensor> all{w};
  all.insert(all.end(), parts.begin(), parts.end());
  auto wn = w.node_ptr();
  std::vector<std::shared_ptr<TensorNode>> pn;
  for (const auto& p : parts) pn.push_back(p.node_ptr());
  return make_op(parts[0].dims(), std::move(out), std::move(all),
                 [wn, pn, n, d](TensorNode& node) {
                   for (int i = 0; i < n; ++i) {
                     real wg = 0;
                     for (int j = 0; j < d; ++j) {
                       wg += node.grad[j] * pn[i]->value[j];
                       pn[i]->grad[j] += node.grad[j] * wn->value[i];
                     }
                     wn->grad[i] += wg;
                   }
                 });
}

// out(c,x,y) = sum_i P(i,x,y) * parts[i][c]; P is n x H x W, parts are D-vectors.
inline Tensor mix_maps(const Tensor& P, const std::vector<Tensor>& parts) {
  const int n = static_cast<int>(parts.size());
  if (P.ndim() != 3 || P.dims()[0] != n)
    throw ShapeError("mix_maps: P " + dims_str(P.dims()) + " vs " +
                     std::to_string(n) + " parts");
  if (n == 0) throw ShapeError("mix_maps: empty part list");
  const int H = P.dims()[1], W = P.dims()[2];
  for (const auto& p : parts)
    if (p.ndim() != 1) throw ShapeError("mix_maps: parts must be vectors");
  for (const auto& p : parts) check_same_dims(parts[0], p, "mix_maps");
  const int D = parts[0].dims()[0], HW = H * W;
  std::vector<real> out(static_cast<std::size_t>(D) * HW, real(0));
  for (int i = 0; i < n; ++i) {
    const auto& ov = parts[i].vals();
    const real* pm = P.vals().data() + static_cast<std::size_t>(i) * HW;
    for (int c = 0; c < D; ++c)
      for (int t = 0; t < HW; ++t) out[c * HW + t] += pm[t] * ov[c];
  }
  std::vector<Tensor> all{P};
  all.insert(all.end(), parts.begin(), parts.end());
  auto Pn = P.node_ptr();
  std::vector<std::shared_ptr<TensorNode>> pn;
  for (const auto& p : parts) pn.push_back(p.node_ptr());
  return make_op({D, H, W}, std::move(out), std::move(all),
                 [Pn, pn, n, D, HW](TensorNode& node) {
                   for (int i = 0; i < n; ++i) {
                     real* pg = Pn->grad.data() + static_cast<std::size_t>(i) * HW;
                     const real* pm =
                         Pn->value.data() + static_cast<std::size_t>(i) * HW;
                     for (int c = 0; c < D; ++c) {
                       real og = 0;
                       for (int t = 0; t < HW; ++t) {
                         pg[t] += node.grad[c * HW + t] * pn[i]->value[c];
                         og += node.grad[c * HW + t] * pm[t];
                       }
                       pn[i]->grad[c] += og;
                     }
                   }
                 });
}

// out(c,x,y) = s[c] * map(c,x,y) — per-channel scaling, the element-wise form
// of a channel-count group convolution.
inline Tensor channel_scale(const Tensor& map, const Tensor& s) {
  if (map.ndim() != 3 || s.ndim() != 1 || s.dims()[0] != map.dims()[0])
    throw ShapeError("channel_scale: map " + dims_str(map.dims()) + ", s " +
                     dims_str(s.dims()));
  const int C = map.dims()[0], HW = map.dims()[1] * map.dims()[2];
  std::vector<real> out(map.size());
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < HW; ++t)
      out[c * HW + t] = s.vals()[c] * map.vals()[c * HW + t];
  auto mn = map.node_ptr(), S = s.node_ptr();
  return make_op(map.dims(), std::move(out), {map, s},
                 [mn, S, C, HW](TensorNode& node) {
                   for (int c = 0; c < C; ++c) {
                     real sg = 0;
                     for (int t = 0; t < HW; ++t) {
                       mn->grad[c * HW + t] += node.grad[c * HW + t] * S->value[c];
                       sg += node.grad[c * HW + t] * mn->value[c * HW + t];
                     }
                     S->grad[c] += sg;
                   }
                 });
}

// out(x,y) = sum_c q[c] * map(c,x,y)
inline Tensor channel_dot(const Tensor& map, const Tensor& q) {
  if (map.ndim() != 3 || q.ndim() != 1 || q.dims()[0] != map.dims()[0])
    throw ShapeError("channel_dot: map " + dims_str(map.dims()) + ", q " +
                     dims_str(q.dims()));
  const int C = map.dims()[0], H = map.dims()[1], W = map.dims()[2];
  const int HW = H * W;
  std::vector<real> out(HW, real(0));
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < HW; ++t) out[t] += q.vals()[c] * map.vals()[c * HW + t];
  auto mn = map.node_ptr(), qn = q.node_ptr();
  return make_op({H, W}, std::move(out), {map, q},
                 [mn, qn, C, HW](TensorNode& node) {
                   for (int c = 0; c < C; ++c) {
                     real qg = 0;
                     for (int t = 0; t < HW; ++t) {
                       mn->grad[c * HW + t] += node.grad[t] * qn->value[c];
                       qg += node.grad[t] * mn->value[c * HW + t];
                     }
                     qn->grad[c] += qg;
                   }
                 });
}

// ---- parameters & optimizer ----

struct Parameter {
  std::string name;
  Tensor tensor;
  real lr_multiplier = real(1);

  Parameter() = default;
  Parameter(std::string n, Tensor t, real mult = real(1))
      : name(std::move(n)), tensor(std::move(t)), lr_multiplier(mult) {}
};

// Uniform init in +-sqrt(1/fan_in).
inline Tensor uniform_init(std::vector<int> dims, int fan_in,
                           std::mt19937_64& rng) {
  real bound = std::sqrt(real(1) / real(fan_in));
  std::uniform_real_distribution<real> dist(-bound, bound);
  int n = dims_size(dims);
  std::vector<real> data(n);
  for (auto& v : data) v = dist(rng);
  return Tensor::from(std::move(dims), std::move(data), true);
}

// SGD with momentum. Parameters with lr_multiplier == 0 are left untouched
// bit-for-bit (no velocity state either).
class Sgd {
 public:
  explicit Sgd(real momentum = real(0.9)) : momentum_(momentum) {}

  void step(const std::vector<Parameter*>& params, real lr) {
    for (Parameter* p : params) {
      if (p->lr_multiplier == real(0)) continue;
      auto& value = p->tensor.leaf_vals();
      if (!p->tensor.has_grad()) continue;
      const auto& g = p->tensor.grad();
      auto& v = velocity_[p->tensor.node()];
      if (v.size() != value.size()) v.assign(value.size(), real(0));
      const real step_lr = lr * p->lr_multiplier;
      for (std::size_t i = 0; i < value.size(); ++i) {
        v[i] = momentum_ * v[i] - step_lr * g[i];
        value[i] += v[i];
      }
    }
  }

  static void zero_grad(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->tensor.zero_grad();
  }

 private:
  real momentum_;
  std::unordered_map<const TensorNode*, std::vector<real>> velocity_;
};

inline bool all_finite(const Tensor& t) {
  for (real v : t.vals())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace sgg
