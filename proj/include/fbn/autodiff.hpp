#pragma once

#include "fbn/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace fbn {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
};

// Ordered record of executed operations. Confined to one thread.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    return push(std::move(value), {}, nullptr, requires_grad);
  }
  Var<T> constant(Tensor<T> value) { return push(std::move(value), {}, nullptr, false); }

  Var<T> push(Tensor<T> value, std::vector<std::size_t> parents, Backward bw, bool requires_grad) {
    if (!requires_grad)
      for (auto p : parents) requires_grad = requires_grad || nodes_[p].requires_grad;
    nodes_.push_back({std::move(value), std::move(parents), std::move(bw), requires_grad});
    return {this, nodes_.size() - 1};
  }

  // Records an op whose gradient flows to `parents` via `bw`.
  Var<T> record(Tensor<T> value, std::vector<std::size_t> parents, Backward bw) {
    return push(std::move(value), std::move(parents), std::move(bw), false);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Adjoint buffer of a node during backward(); zero-initialized on first touch.
  Tensor<T>& adj(std::size_t id) {
    auto& a = adj_[id];
    if (a.empty()) a = Tensor<T>::zeros(nodes_[id].value.shape());
    return a;
  }
  bool has_adj(std::size_t id) const { return !adj_[id].empty(); }

  // Propagates d(loss)/d(node) to every tracked leaf; leaf gradients accumulate across calls.
  void backward(Var<T> loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss recorded on another tape");
    if (loss.value().size() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    adj_.assign(nodes_.size(), Tensor<T>());
    visited_.clear();
    adj(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (!has_adj(i) || !nodes_[i].requires_grad) continue;
      auto& n = nodes_[i];
      if (n.backward) {
        visited_.push_back(i);
        n.backward(*this, i);
      } else {
        auto& g = grads_[i];
        if (g.empty()) g = Tensor<T>::zeros(n.value.shape());
        g.array() += adj_[i].array();
      }
    }
    adj_.clear();
  }

  // Accumulated gradient of a leaf; exactly zero if the leaf never influenced a loss.
  Tensor<T> grad(Var<T> v) const {
    auto it = grads_.find(v.id);
    if (it == grads_.end() || it->second.empty()) return Tensor<T>::zeros(v.shape());
    return it->second;
  }

  void zero_grad() { grads_.clear(); }

  // Op nodes visited by the last backward(), in visit order.
  const std::vector<std::size_t>& last_backward_order() const { return visited_; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> adj_;
  std::unordered_map<std::size_t, Tensor<T>> grads_;
  std::vector<std::size_t> visited_;
};

enum class Padding { same, valid };

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MapRM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapRM = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same(const char* op, Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  if (a.shape() != b.shape()) throw_shape_mismatch(op, a.shape(), b.shape());
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(Var<T> x, Fwd fwd, Deriv deriv) {
  Tensor<T> out(x.shape());
  out.array() = fwd(x.value().array());
  return x.tape->record(std::move(out), {x.id}, [xi = x.id, deriv](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    t.adj(xi).array() += t.adj(self).array() * deriv(t.value(xi).array(), t.value(self).array());
  });
}

// Sum of same-shaped arrays whose result does not depend on operand order:
// per element, terms are added in ascending value order.
template <typename T>
void order_invariant_sum(const std::vector<const T*>& terms, std::size_t n, T* out) {
  const std::size_t k = terms.size();
  if (k == 0) {
    std::fill(out, out + n, T(0));
    return;
  }
  if (k <= 2) {
    for (std::size_t i = 0; i < n; ++i) out[i] = k == 1 ? terms[0][i] : terms[0][i] + terms[1][i];
    return;
  }
  std::vector<T> buf(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const T v = terms[j][i];
      std::size_t m = j;
      for (; m > 0 && v < buf[m - 1]; --m) buf[m] = buf[m - 1];
      buf[m] = v;
    }
    T s = buf[0];
    for (std::size_t j = 1; j < k; ++j) s += buf[j];
    out[i] = s;
  }
}

}  // namespace detail

// ---- elementwise ----------------------------------------------------------

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) {
  detail::require_same("add", a, b);
  Tensor<T> out(a.shape());
  out.array() = a.value().array() + b.value().array();
  return a.tape->record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t s) {
    if (t.requires_grad(ai)) t.adj(ai).array() += t.adj(s).array();
    if (t.requires_grad(bi)) t.adj(bi).array() += t.adj(s).array();
  });
}

template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) {
  detail::require_same("sub", a, b);
  Tensor<T> out(a.shape());
  out.array() = a.value().array() - b.value().array();
  return a.tape->record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t s) {
    if (t.requires_grad(ai)) t.adj(ai).array() += t.adj(s).array();
    if (t.requires_grad(bi)) t.adj(bi).array() -= t.adj(s).array();
  });
}

// Hadamard product.
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) {
  detail::require_same("mul", a, b);
  Tensor<T> out(a.shape());
  out.array() = a.value().array() * b.value().array();
  return a.tape->record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t s) {
    if (t.requires_grad(ai)) t.adj(ai).array() += t.adj(s).array() * t.value(bi).array();
    if (t.requires_grad(bi)) t.adj(bi).array() += t.adj(s).array() * t.value(ai).array();
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary(
      x, [](const auto& v) { return T(1) / (T(1) + (-v).exp()); },
      [](const auto&, const auto& y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  return detail::unary(
      x, [](const auto& v) { return v.tanh(); }, [](const auto&, const auto& y) { return T(1) - y.square(); });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return detail::unary(
      x, [](const auto& v) { return v.exp(); }, [](const auto&, const auto& y) { return y; });
}

template <typename T>
Var<T> square(Var<T> x) {
  return detail::unary(
      x, [](const auto& v) { return v.square(); }, [](const auto& v, const auto&) { return T(2) * v; });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return detail::unary(
      x, [](const auto& v) { return v.max(T(0)); },
      [](const auto& v, const auto&) { return (v > T(0)).template cast<T>(); });
}

// a * x + b
template <typename T>
Var<T> affine(Var<T> x, T a, T b = T(0)) {
  return detail::unary(
      x, [a, b](const auto& v) { return a * v + b; },
      [a](const auto& v, const auto&) { return T(0) * v + a; });
}

template <typename T>
Var<T> one_minus(Var<T> x) {
  return affine(x, T(-1), T(1));
}

// x[..., c] + b[c]; the only broadcasting operation.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  const auto& xs = x.shape();
  if (b.value().rank() != 1 || xs.back() != b.shape()[0])
    throw_shape_mismatch("add_bias", xs, b.shape());
  const auto c = static_cast<Eigen::Index>(xs.back());
  const auto rows = static_cast<Eigen::Index>(x.value().size()) / c;
  Tensor<T> out(xs);
  detail::MapRM<T>(out.data(), rows, c) =
      detail::CMapRM<T>(x.value().data(), rows, c).rowwise() + b.value().array().matrix().transpose();
  return x.tape->record(std::move(out), {x.id, b.id}, [xi = x.id, bi = b.id, rows, c](Tape<T>& t, std::size_t s) {
    if (t.requires_grad(xi)) t.adj(xi).array() += t.adj(s).array();
    if (t.requires_grad(bi))
      t.adj(bi).array() += detail::CMapRM<T>(t.adj(s).data(), rows, c).colwise().sum().transpose().array();
  });
}

// ---- reductions -----------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> x) {
  auto out = Tensor<T>::scalar(x.value().array().sum());
  return x.tape->record(std::move(out), {x.id}, [xi = x.id](Tape<T>& t, std::size_t s) {
    if (t.requires_grad(xi)) t.adj(xi).array() += t.adj(s)[0];
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return affine(sum(x), T(1) / static_cast<T>(x.value().size()));
}

// mean((a - b)^2)
template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  detail::require_same("mse", a, b);
  const T n = static_cast<T>(a.value().size());
  auto out = Tensor<T>::scalar((a.value().array() - b.value().array()).square().sum() / n);
  return a.tape->record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id, n](Tape<T>& t, std::size_t s) {
    const T g = t.adj(s)[0] * T(2) / n;
    if (t.requires_grad(ai)) t.adj(ai).array() += g * (t.value(ai).array() - t.value(bi).array());
    if (t.requires_grad(bi)) t.adj(bi).array() -= g * (t.value(ai).array() - t.value(bi).array());
  });
}

// Elementwise sum of same-shaped values, independent of operand order.
template <typename T>
Var<T> invariant_sum(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("invariant_sum: no operands");
  std::vector<const T*> ptrs;
  std::vector<std::size_t> ids;
  for (auto& v : xs) {
    detail::require_same("invariant_sum", xs.front(), v);
    ptrs.push_back(v.value().data());
    ids.push_back(v.id);
  }
  Tensor<T> out(xs.front().shape());
  detail::order_invariant_sum<T>(ptrs, out.size(), out.data());
  return xs.front().tape->record(std::move(out), ids, [ids](Tape<T>& t, std::size_t s) {
    for (auto i : ids)
      if (t.requires_grad(i)) t.adj(i).array() += t.adj(s).array();
  });
}

// Elementwise mean over a set of maps (average-pooling context aggregation).
// An empty set yields a zero map of `shape`.
template <typename T>
Var<T> mean_of(Tape<T>& tape, const std::vector<Var<T>>& xs, const Shape& shape) {
  if (xs.empty()) return tape.constant(Tensor<T>::zeros(shape));
  for (auto& v : xs)
    if (v.shape() != shape) throw_shape_mismatch("mean_of", shape, v.shape());
  if (xs.size() == 1) return xs.front();
  return affine(invariant_sum(xs), T(1) / static_cast<T>(xs.size()));
}

// ---- shape manipulation ---------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> x, Shape s) {
  if (shape_numel(s) != x.value().size()) throw_shape_mismatch("reshape", x.shape(), s);
  return x.tape->record(x.value().reshaped(std::move(s)), {x.id}, [xi = x.id](Tape<T>& t, std::size_t self) {
    if (t.requires_grad(xi)) t.adj(xi).array() += t.adj(self).array();
  });
}

// Slice [start, start+len) of the last axis.
template <typename T>
Var<T> slice_last(Var<T> x, std::size_t start, std::size_t len) {
  const auto& xs = x.shape();
  const std::size_t c = xs.back();
  if (len == 0 || start + len > c)
    throw ShapeError("slice_last: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of " + shape_str(xs));
  Shape os = xs;
  os.back() = len;
  const auto rows = static_cast<Eigen::Index>(x.value().size() / c);
  Tensor<T> out(os);
  detail::MapRM<T>(out.data(), rows, len) =
      detail::CMapRM<T>(x.value().data(), rows, c).middleCols(start, len);
  return x.tape->record(std::move(out), {x.id}, [xi = x.id, rows, c, start, len](Tape<T>& t, std::size_t s) {
    if (!t.requires_grad(xi)) return;
    detail::MapRM<T>(t.adj(xi).data(), rows, c).middleCols(start, len) +=
        detail::CMapRM<T>(t.adj(s).data(), rows, len);
  });
}

// Concatenate along the last axis; leading extents must agree.
template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_last: no operands");
  Shape lead = xs.front().shape();
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (auto& v : xs) {
    Shape l = v.shape();
    l.pop_back();
    if (l != lead) throw_shape_mismatch("concat_last", xs.front().shape(), v.shape());
    widths.push_back(v.shape().back());
    ids.push_back(v.id);
    total += widths.back();
  }
  Shape os = lead;
  os.push_back(total);
  const auto rows = static_cast<Eigen::Index>(shape_numel(lead));
  Tensor<T> out(os);
  detail::MapRM<T> om(out.data(), rows, total);
  std::size_t off = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    om.middleCols(off, widths[i]) = detail::CMapRM<T>(xs[i].value().data(), rows, widths[i]);
    off += widths[i];
  }
  return xs.front().tape->record(std::move(out), ids, [ids, widths, rows, total](Tape<T>& t, std::size_t s) {
    detail::CMapRM<T> g(t.adj(s).data(), rows, total);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.requires_grad(ids[i]))
        detail::MapRM<T>(t.adj(ids[i]).data(), rows, widths[i]) += g.middleCols(off, widths[i]);
      off += widths[i];
    }
  });
}

// Input-channel slice of a kernel [kh, kw, cin, cout].
template <typename T>
Var<T> slice_kernel_in(Var<T> w, std::size_t start, std::size_t len) {
  const auto& s = w.shape();
  if (s.size() != 4 || len == 0 || start + len > s[2])
    throw ShapeError("slice_kernel_in: bad range on kernel " + shape_str(s));
  const std::size_t taps = s[0] * s[1], cin = s[2], cout = s[3];
  Tensor<T> out({s[0], s[1], len, cout});
  for (std::size_t k = 0; k < taps; ++k)
    std::copy_n(w.value().data() + (k * cin + start) * cout, len * cout, out.data() + k * len * cout);
  return w.tape->record(std::move(out), {w.id}, [wi = w.id, taps, cin, cout, start, len](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(wi)) return;
    auto& g = t.adj(wi);
    const auto& go = t.adj(self);
    for (std::size_t k = 0; k < taps; ++k)
      for (std::size_t i = 0; i < len * cout; ++i) g[(k * cin + start) * cout + i] += go[k * len * cout + i];
  });
}

// ---- dense linear algebra -------------------------------------------------

// A[m,k] * B[k,n]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) throw_shape_mismatch("matmul", as, bs);
  const auto m = static_cast<Eigen::Index>(as[0]), k = static_cast<Eigen::Index>(as[1]),
             n = static_cast<Eigen::Index>(bs[1]);
  Tensor<T> out({as[0], bs[1]});
  detail::MapRM<T>(out.data(), m, n).noalias() =
      detail::CMapRM<T>(a.value().data(), m, k) * detail::CMapRM<T>(b.value().data(), k, n);
  return a.tape->record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id, m, k, n](Tape<T>& t, std::size_t s) {
    detail::CMapRM<T> g(t.adj(s).data(), m, n);
    if (t.requires_grad(ai))
      detail::MapRM<T>(t.adj(ai).data(), m, k).noalias() += g * detail::CMapRM<T>(t.value(bi).data(), k, n).transpose();
    if (t.requires_grad(bi))
      detail::MapRM<T>(t.adj(bi).data(), k, n).noalias() += detail::CMapRM<T>(t.value(ai).data(), m, k).transpose() * g;
  });
}

// ---- convolution ----------------------------------------------------------

// Patch matrix of x[h, w, G*cg] for a kh x kw window, one block per channel group:
// result shape [G, ho, wo, kh*kw*cg], patch entries ordered (ky, kx, channel).
template <typename T>
Var<T> im2col(Var<T> x, std::size_t kh, std::size_t kw, Padding pad, std::size_t groups = 1) {
  const auto& xs = x.shape();
  if (xs.size() != 3) throw ShapeError("im2col: expected h x w x c map, got " + shape_str(xs));
  if (groups == 0 || xs[2] % groups != 0)
    throw ShapeError("im2col: " + std::to_string(xs[2]) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  if (pad == Padding::same && (kh % 2 == 0 || kw % 2 == 0))
    throw ShapeError("im2col: same padding needs odd kernel extents");
  const std::size_t h = xs[0], w = xs[1], c = xs[2], cg = c / groups;
  if (pad == Padding::valid && (kh > h || kw > w)) throw ShapeError("im2col: kernel larger than input " + shape_str(xs));
  const std::size_t ph = pad == Padding::same ? kh / 2 : 0, pw = pad == Padding::same ? kw / 2 : 0;
  const std::size_t ho = pad == Padding::same ? h : h - kh + 1, wo = pad == Padding::same ? w : w - kw + 1;
  const std::size_t K = kh * kw * cg;
  Tensor<T> out({groups, ho, wo, K});
  const T* src = x.value().data();
  T* dst = out.data();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T* row = dst + ((g * ho + oy) * wo + ox) * K;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(ph);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pw);
            T* cell = row + (ky * kw + kx) * cg;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w))
              std::fill_n(cell, cg, T(0));
            else
              std::copy_n(src + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c + g * cg, cg, cell);
          }
        }
      }
  return x.tape->record(std::move(out), {x.id}, [=, xi = x.id](Tape<T>& t, std::size_t s) {
    if (!t.requires_grad(xi)) return;
    T* gx = t.adj(xi).data();
    const T* gc = t.adj(s).data();
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T* row = gc + ((g * ho + oy) * wo + ox) * K;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(ph);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pw);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              T* dst = gx + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c + g * cg;
              const T* cell = row + (ky * kw + kx) * cg;
              for (std::size_t ch = 0; ch < cg; ++ch) dst[ch] += cell[ch];
            }
          }
        }
  });
}

// Cross-correlation from a patch matrix: cols [G, ho, wo, kh*kw*cg] with kernel
// [kh, kw, G*cg, cout] -> [ho, wo, cout]. Group partial results are combined with
// invariant_sum semantics, so permuting groups together with kernel slices is exact.
template <typename T>
Var<T> conv_cols(Var<T> cols, Var<T> w) {
  const auto& cs = cols.shape();
  const auto& ws = w.shape();
  if (cs.size() != 4 || ws.size() != 4) throw_shape_mismatch("conv", cs, ws);
  const std::size_t G = cs[0], ho = cs[1], wo = cs[2], K = cs[3], cout = ws[3];
  const std::size_t taps = ws[0] * ws[1];
  if (ws[2] % G != 0 || taps * (ws[2] / G) != K) throw_shape_mismatch("conv", cs, ws);
  const std::size_t cg = ws[2] / G, cin = ws[2];
  const auto M = static_cast<Eigen::Index>(ho * wo);
  const auto Kx = static_cast<Eigen::Index>(K), N = static_cast<Eigen::Index>(cout);

  // Kernel rows belonging to group g as a contiguous [K, cout] matrix.
  auto group_kernel = [=](const T* wd, std::size_t g) {
    detail::RowMat<T> kg(Kx, N);
    for (std::size_t k = 0; k < taps; ++k)
      for (std::size_t ch = 0; ch < cg; ++ch)
        kg.row(static_cast<Eigen::Index>(k * cg + ch)) =
            detail::CMapRM<T>(wd + (k * cin + g * cg + ch) * cout, 1, N);
    return kg;
  };

  Tensor<T> out({ho, wo, cout});
  if (G == 1) {
    detail::MapRM<T>(out.data(), M, N).noalias() =
        detail::CMapRM<T>(cols.value().data(), M, Kx) * detail::CMapRM<T>(w.value().data(), Kx, N);
  } else {
    std::vector<detail::RowMat<T>> partial(G);
    std::vector<const T*> ptrs(G);
    for (std::size_t g = 0; g < G; ++g) {
      partial[g].noalias() = detail::CMapRM<T>(cols.value().data() + g * ho * wo * K, M, Kx) * group_kernel(w.value().data(), g);
      ptrs[g] = partial[g].data();
    }
    detail::order_invariant_sum<T>(ptrs, out.size(), out.data());
  }
  return cols.tape->record(std::move(out), {cols.id, w.id}, [=, ci = cols.id, wi = w.id](Tape<T>& t, std::size_t s) {
    detail::CMapRM<T> g(t.adj(s).data(), M, N);
    const bool need_c = t.requires_grad(ci), need_w = t.requires_grad(wi);
    if (G == 1) {
      if (need_c)
        detail::MapRM<T>(t.adj(ci).data(), M, Kx).noalias() += g * detail::CMapRM<T>(t.value(wi).data(), Kx, N).transpose();
      if (need_w)
        detail::MapRM<T>(t.adj(wi).data(), Kx, N).noalias() += detail::CMapRM<T>(t.value(ci).data(), M, Kx).transpose() * g;
      return;
    }
    for (std::size_t gi = 0; gi < G; ++gi) {
      detail::CMapRM<T> cg_mat(t.value(ci).data() + gi * ho * wo * K, M, Kx);
      if (need_c)
        detail::MapRM<T>(t.adj(ci).data() + gi * ho * wo * K, M, Kx).noalias() +=
            g * group_kernel(t.value(wi).data(), gi).transpose();
      if (need_w) {
        detail::RowMat<T> gw = cg_mat.transpose() * g;
        T* wd = t.adj(wi).data();
        for (std::size_t k = 0; k < taps; ++k)
          for (std::size_t ch = 0; ch < cg; ++ch)
            detail::MapRM<T>(wd + (k * cin + gi * cg + ch) * cout, 1, N) +=
                gw.row(static_cast<Eigen::Index>(k * cg + ch));
      }
    }
  });
}

// Cross-correlation of x[h, w, cin] with kernel [kh, kw, cin, cout].
// groups > 1 splits input channels into joint groups combined order-invariantly.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Padding pad = Padding::same, std::size_t groups = 1) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 4 || xs[2] != ws[2]) throw_shape_mismatch("conv2d", xs, ws);
  return conv_cols(im2col(x, ws[0], ws[1], pad, groups), w);
}

// As above plus per-channel bias[cout].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, Padding pad = Padding::same, std::size_t groups = 1) {
  return add_bias(conv2d(x, w, pad, groups), b);
}

// ---- spatial resampling ---------------------------------------------------

template <typename T>
Var<T> avg_pool(Var<T> x, std::size_t f) {
  const auto& xs = x.shape();
  if (xs.size() != 3 || f == 0 || xs[0] % f || xs[1] % f)
    throw ShapeError("avg_pool: factor " + std::to_string(f) + " does not tile " + shape_str(xs));
  if (f == 1) return x;
  const std::size_t h = xs[0], w = xs[1], c = xs[2], ho = h / f, wo = w / f;
  const T inv = T(1) / static_cast<T>(f * f);
  Tensor<T> out({ho, wo, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t ch = 0; ch < c; ++ch) out.at(y / f, xx / f, ch) += x.value().at(y, xx, ch) * inv;
  return x.tape->record(std::move(out), {x.id}, [=, xi = x.id](Tape<T>& t, std::size_t s) {
    if (!t.requires_grad(xi)) return;
    auto& gx = t.adj(xi);
    const auto& go = t.adj(s);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        for (std::size_t ch = 0; ch < c; ++ch) gx.at(y, xx, ch) += go.at(y / f, xx / f, ch) * inv;
  });
}

// Non-overlapping f x f max pooling; ties resolve to the first element in row-major order.
template <typename T>
Var<T> max_pool(Var<T> x, std::size_t f) {
  const auto& xs = x.shape();
  if (xs.size() != 3 || f == 0 || xs[0] % f || xs[1] % f)
    throw ShapeError("max_pool: factor " + std::to_string(f) + " does not tile " + shape_str(xs));
  const std::size_t w = xs[1], c = xs[2], ho = xs[0] / f, wo = w / f;
  Tensor<T> out({ho, wo, c});
  std::vector<std::size_t> arg(out.size());
  const auto& xv = x.value();
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = ((oy * f) * w + ox * f) * c + ch;
        for (std::size_t dy = 0; dy < f; ++dy)
          for (std::size_t dx = 0; dx < f; ++dx) {
            const std::size_t i = ((oy * f + dy) * w + ox * f + dx) * c + ch;
            if (xv[i] > xv[best]) best = i;
          }
        const std::size_t o = (oy * wo + ox) * c + ch;
        out[o] = xv[best];
        arg[o] = best;
      }
  return x.tape->record(std::move(out), {x.id}, [arg = std::move(arg), xi = x.id](Tape<T>& t, std::size_t s) {
    if (!t.requires_grad(xi)) return;
    auto& gx = t.adj(xi);
    const auto& go = t.adj(s);
    for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += go[o];
  });
}

template <typename T>
Var<T> upsample_nearest(Var<T> x, std::size_t f) {
  const auto& xs = x.shape();
  if (xs.size() != 3 || f == 0) throw ShapeError("upsample_nearest: bad input " + shape_str(xs));
  if (f == 1) return x;
  const std::size_t h = xs[0] * f, w = xs[1] * f, c = xs[2];
  Tensor<T> out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t ch = 0; ch < c; ++ch) out.at(y, xx, ch) = x.value().at(y / f, xx / f, ch);
  return x.tape->record(std::move(out), {x.id}, [=, xi = x.id](Tape<T>& t, std::size_t s) {
    if (!t.requires_grad(xi)) return;
    auto& gx = t.adj(xi);
    const auto& go = t.adj(s);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        for (std::size_t ch = 0; ch < c; ++ch) gx.at(y / f, xx / f, ch) += go.at(y, xx, ch);
  });
}

}  // namespace fbn
