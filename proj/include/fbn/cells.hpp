#pragma once

#include "fbn/autodiff.hpp"
#include "fbn/params.hpp"
#include "fbn/skeleton.hpp"

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fbn {

enum class CellKind { convlstm, convlstm_ccg, convgru, convrnn };

std::string_view to_string(CellKind k);
CellKind parse_cell_kind(std::string_view s);

// Gate letters in kernel-concatenation order.
std::vector<std::string> gate_names(CellKind k);

// Recurrent weights of one direction, shared by every unit in that direction.
// W_F / W_H hold the per-gate kernels [k, k, c, c] concatenated along cout in
// gate_names() order; b likewise. For GRU, W_H covers z and r only and W_Hh is
// applied to r∘H̄.
template <typename T>
struct CellWeights {
  CellKind kind = CellKind::convlstm;
  Var<T> W_F, W_H, b;
  Var<T> W_Hh;
};

// Per-unit context prediction parameters: W_Hp [k, k, c, c], W_Fp [k, k, J*c, c], b_p [c].
template <typename T>
struct CcgParams {
  Var<T> W_Hp, W_Fp, b_p;
};

template <typename T>
struct DirectionParams {
  CellWeights<T> cell;
  std::vector<CcgParams<T>> ccg;  // one per joint, convlstm_ccg only
};

std::string_view to_string(Direction d);

// Checkpoint names: cell.<dir>.W_F<g> / W_H<g> / b_<g> and ccg.<dir>.unit<j>.{W_Hp,W_Fp,b_p}.
// `prefix` is prepended verbatim (e.g. "s1.").
std::vector<ParamSpec> cell_param_specs(CellKind kind, Direction dir, std::size_t c, std::size_t k = 3,
                                        const std::string& prefix = "");
std::vector<ParamSpec> ccg_param_specs(Direction dir, std::size_t joints, std::size_t c, std::size_t k = 3,
                                       const std::string& prefix = "");

template <typename T>
DirectionParams<T> bind_direction(const BoundParams<T>& p, CellKind kind, Direction dir, std::size_t joints,
                                  const std::string& prefix = "") {
  const std::string pre = prefix + "cell." + std::string(to_string(dir)) + ".";
  const auto gates = gate_names(kind);
  DirectionParams<T> d;
  d.cell.kind = kind;
  std::vector<Var<T>> wf, wh, b;
  for (const auto& g : gates) {
    wf.push_back(p[pre + "W_F" + g]);
    b.push_back(p[pre + (g.empty() ? std::string("b") : "b_" + g)]);
    if (kind != CellKind::convgru || g != "h") wh.push_back(p[pre + "W_H" + g]);
  }
  d.cell.W_F = concat_last(wf);
  d.cell.W_H = concat_last(wh);
  d.cell.b = concat_last(b);
  if (kind == CellKind::convgru) d.cell.W_Hh = p[pre + "W_Hh"];
  if (kind == CellKind::convlstm_ccg) {
    const std::string cp = prefix + "ccg." + std::string(to_string(dir)) + ".unit";
    for (std::size_t j = 0; j < joints; ++j) {
      const std::string u = cp + std::to_string(j) + ".";
      d.ccg.push_back({p[u + "W_Hp"], p[u + "W_Fp"], p[u + "b_p"]});
    }
  }
  return d;
}

template <typename T>
struct UnitState {
  Var<T> C, H;
};

// Average of predecessor maps; no predecessors gives a zero map.
template <typename T>
Var<T> aggregate(Tape<T>& tape, const std::vector<Var<T>>& states, const Shape& shape) {
  return mean_of(tape, states, shape);
}

namespace detail {

template <typename T>
std::vector<Var<T>> gate_preacts(Var<T> F, Var<T> Hbar, const CellWeights<T>& w, std::size_t n) {
  if (F.shape() != Hbar.shape()) throw_shape_mismatch("cell step", F.shape(), Hbar.shape());
  const std::size_t c = F.shape()[2];
  auto fx = conv2d(F, w.W_F, w.b);
  std::vector<Var<T>> out;
  const std::size_t nh = w.W_H.shape()[3] / c;
  auto hx = conv2d(Hbar, w.W_H);
  for (std::size_t g = 0; g < n; ++g) {
    auto a = slice_last(fx, g * c, c);
    if (g < nh) a = a + slice_last(hx, g * c, c);
    out.push_back(a);
  }
  return out;
}

}  // namespace detail

// C = f∘C̄ + i∘c̃, H = o∘tanh(C).
template <typename T>
UnitState<T> convlstm_step(Var<T> F, Var<T> Hbar, Var<T> Cbar, const CellWeights<T>& w) {
  if (Cbar.shape() != F.shape()) throw_shape_mismatch("convlstm_step", F.shape(), Cbar.shape());
  auto a = detail::gate_preacts(F, Hbar, w, 4);
  auto i = sigmoid(a[0]), f = sigmoid(a[1]), ct = tanh(a[2]), o = sigmoid(a[3]);
  auto C = f * Cbar + i * ct;
  return {C, o * tanh(C)};
}

// C = (f∘C̄)∘(1−G) + (i∘c̃)∘G, H = o∘tanh(C).
template <typename T>
UnitState<T> convlstm_step_gated(Var<T> F, Var<T> Hbar, Var<T> Cbar, const CellWeights<T>& w, Var<T> G) {
  if (Cbar.shape() != F.shape()) throw_shape_mismatch("convlstm_step_gated", F.shape(), Cbar.shape());
  if (G.shape() != F.shape()) throw_shape_mismatch("convlstm_step_gated", F.shape(), G.shape());
  auto a = detail::gate_preacts(F, Hbar, w, 4);
  auto i = sigmoid(a[0]), f = sigmoid(a[1]), ct = tanh(a[2]), o = sigmoid(a[3]);
  auto C = (f * Cbar) * one_minus(G) + (i * ct) * G;
  return {C, o * tanh(C)};
}

// z, r gates; h̃ = tanh(F*W_Fh + (r∘H̄)*W_Hh + b_h); H = (1−z)∘H̄ + z∘h̃.
template <typename T>
Var<T> convgru_step(Var<T> F, Var<T> Hbar, const CellWeights<T>& w) {
  auto a = detail::gate_preacts(F, Hbar, w, 3);
  auto z = sigmoid(a[0]), r = sigmoid(a[1]);
  auto ht = tanh(a[2] + conv2d(r * Hbar, w.W_Hh));
  return one_minus(z) * Hbar + z * ht;
}

// H = tanh(F*W_F + H̄*W_H + b).
template <typename T>
Var<T> convrnn_step(Var<T> F, Var<T> Hbar, const CellWeights<T>& w) {
  return tanh(detail::gate_preacts(F, Hbar, w, 1)[0]);
}

// Patch matrix of the whole stack, split into per-joint channel groups, shared
// by every unit's prediction in a pass.
template <typename T>
Var<T> ccg_stack_cols(Var<T> stack, std::size_t joints, std::size_t k) {
  return im2col(stack, k, k, Padding::same, joints);
}

// P_j = tanh(mean_k(H_k) * W_Hp + F * W_Fp + b_p); the hidden term vanishes without links.
template <typename T>
Var<T> ccg_predict(Tape<T>& tape, const std::vector<Var<T>>& linked_H, Var<T> stack_cols, const CcgParams<T>& p,
                   const Shape& unit_shape) {
  auto acc = add_bias(conv_cols(stack_cols, p.W_Fp), p.b_p);
  if (acc.shape() != unit_shape) throw_shape_mismatch("ccg_predict", unit_shape, acc.shape());
  if (!linked_H.empty()) acc = acc + conv2d(aggregate(tape, linked_H, unit_shape), p.W_Hp);
  return tanh(acc);
}

template <typename T>
Var<T> ccg_predict(Tape<T>& tape, const std::vector<Var<T>>& linked_H, Var<T> stack, std::size_t joints,
                   const CcgParams<T>& p, const Shape& unit_shape) {
  return ccg_predict(tape, linked_H, ccg_stack_cols(stack, joints, p.W_Fp.shape()[0]), p, unit_shape);
}

// G = exp(−(P − tanh F)² / ω²).
template <typename T>
Var<T> ccg_gate(Var<T> P, Var<T> F, T omega_sq) {
  if (!(omega_sq > T(0))) throw std::invalid_argument("ccg_gate: omega^2 must be positive");
  return exp(affine(square(P - tanh(F)), T(-1) / omega_sq));
}

template <typename T>
struct DirectionResult {
  std::vector<Var<T>> H, C;
  std::vector<Var<T>> P, G;  // convlstm_ccg only
};

// Evaluates units in pass order; each consumes the mean of its predecessors' states.
// `stack` is the full feature stack (needed by convlstm_ccg only).
template <typename T>
DirectionResult<T> run_direction(Tape<T>& tape, const PassOrder& order, const std::vector<Var<T>>& inputs,
                                 const DirectionParams<T>& params, Var<T> stack = {}, T omega_sq = T(2)) {
  const std::size_t J = order.preds.size();
  if (inputs.size() != J)
    throw std::invalid_argument("run_direction: " + std::to_string(inputs.size()) + " inputs for " +
                                std::to_string(J) + " joints");
  const CellKind kind = params.cell.kind;
  const Shape shape = inputs.front().shape();
  for (auto& f : inputs)
    if (f.shape() != shape) throw_shape_mismatch("run_direction", shape, f.shape());

  DirectionResult<T> r;
  r.H.resize(J);
  r.C.resize(J);
  Var<T> cols;
  if (kind == CellKind::convlstm_ccg) {
    if (params.ccg.size() != J) throw std::invalid_argument("run_direction: need one CCG parameter set per joint");
    if (stack.tape == nullptr) throw std::invalid_argument("run_direction: CCG needs the feature stack");
    cols = ccg_stack_cols(stack, J, params.ccg.front().W_Fp.shape()[0]);
    r.P.resize(J);
    r.G.resize(J);
  }
  for (auto j : order.sequence) {
    std::vector<Var<T>> hs, cs;
    for (auto k : order.preds[j]) {
      hs.push_back(r.H[k]);
      if (r.C[k].tape) cs.push_back(r.C[k]);
    }
    auto Hbar = aggregate(tape, hs, shape);
    switch (kind) {
      case CellKind::convlstm: {
        auto s = convlstm_step(inputs[j], Hbar, aggregate(tape, cs, shape), params.cell);
        r.H[j] = s.H;
        r.C[j] = s.C;
        break;
      }
      case CellKind::convlstm_ccg: {
        r.P[j] = ccg_predict(tape, hs, cols, params.ccg[j], shape);
        r.G[j] = ccg_gate(r.P[j], inputs[j], omega_sq);
        auto s = convlstm_step_gated(inputs[j], Hbar, aggregate(tape, cs, shape), params.cell, r.G[j]);
        r.H[j] = s.H;
        r.C[j] = s.C;
        break;
      }
      case CellKind::convgru: r.H[j] = convgru_step(inputs[j], Hbar, params.cell); break;
      case CellKind::convrnn: r.H[j] = convrnn_step(inputs[j], Hbar, params.cell); break;
    }
  }
  return r;
}

template <typename T>
struct BidirectionalResult {
  std::vector<Var<T>> out;
  DirectionResult<T> fwd, bwd;
};

// out_j = H_j(forward) + H_j(backward).
template <typename T>
BidirectionalResult<T> run_bidirectional(Tape<T>& tape, const SkeletonGraph& g, const std::vector<Var<T>>& inputs,
                                         const DirectionParams<T>& fwd, const DirectionParams<T>& bwd,
                                         Var<T> stack = {}, T omega_sq = T(2)) {
  BidirectionalResult<T> r;
  r.fwd = run_direction(tape, pass_order(g, Direction::forward), inputs, fwd, stack, omega_sq);
  r.bwd = run_direction(tape, pass_order(g, Direction::backward), inputs, bwd, stack, omega_sq);
  for (std::size_t j = 0; j < inputs.size(); ++j) r.out.push_back(r.fwd.H[j] + r.bwd.H[j]);
  return r;
}

}  // namespace fbn
