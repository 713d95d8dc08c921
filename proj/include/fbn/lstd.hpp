#pragma once

#include "fbn/cells.hpp"

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fbn {

// none: no boosting (baseline); passthrough: split + reassemble only;
// fb: graphical recurrence with the plain cell update; fb_plus: with context gating.
enum class BoostMode { none, passthrough, fb, fb_plus };

std::string_view to_string(BoostMode m);
BoostMode parse_boost_mode(std::string_view s);

// Convolution whose output channels form `groups` blocks, each computed by its own
// product so that permuting blocks together with kernel columns is exact.
template <typename T>
Var<T> conv2d_grouped_out(Var<T> x, Var<T> w, Var<T> b, std::size_t groups, Padding pad = Padding::same) {
  const auto& ws = w.shape();
  if (ws.size() != 4 || groups == 0 || ws[3] % groups != 0) throw_shape_mismatch("conv2d_grouped_out", x.shape(), ws);
  if (x.shape().size() != 3 || x.shape()[2] != ws[2]) throw_shape_mismatch("conv2d_grouped_out", x.shape(), ws);
  const std::size_t n = ws[3] / groups;
  auto cols = im2col(x, ws[0], ws[1], pad);
  std::vector<Var<T>> parts;
  for (std::size_t g = 0; g < groups; ++g)
    parts.push_back(add_bias(conv_cols(cols, slice_last(w, g * n, n)), slice_last(b, g * n, n)));
  return groups == 1 ? parts.front() : concat_last(parts);
}

// Per-joint channel groups F_j. Without a projection the stack must have exactly
// J*c channels; otherwise the 1x1 projection [1, 1, Ctotal, J*c] maps it first.
template <typename T>
std::vector<Var<T>> split_channels(Var<T> F, std::size_t joints, std::size_t c, Var<T> proj_w = {},
                                   Var<T> proj_b = {}) {
  if (joints * c == 0) throw std::invalid_argument("split_channels: J*c must be positive");
  if (F.shape().size() != 3) throw ShapeError("split_channels: expected h x w x C stack, got " + shape_str(F.shape()));
  std::vector<Var<T>> out;
  if (proj_w.tape) {
    if (proj_w.shape() != Shape{1, 1, F.shape()[2], joints * c})
      throw_shape_mismatch("split_channels projection", F.shape(), proj_w.shape());
    auto cols = im2col(F, 1, 1, Padding::valid);
    for (std::size_t j = 0; j < joints; ++j)
      out.push_back(add_bias(conv_cols(cols, slice_last(proj_w, j * c, c)), slice_last(proj_b, j * c, c)));
    return out;
  }
  if (F.shape()[2] != joints * c)
    throw ShapeError("split_channels: " + std::to_string(F.shape()[2]) + " channels but J*c = " +
                     std::to_string(joints * c) + " and no projection");
  if (joints == 1) return {F};
  for (std::size_t j = 0; j < joints; ++j) out.push_back(slice_last(F, j * c, c));
  return out;
}

template <typename T>
Var<T> reassemble(const std::vector<Var<T>>& groups) {
  return groups.size() == 1 ? groups.front() : concat_last(groups);
}

struct LstdConfig {
  std::size_t joints = 0;
  std::size_t channels_per_joint = 0;
  std::size_t stack_channels = 0;  // Ctotal of the incoming stack
  BoostMode mode = BoostMode::fb_plus;
  CellKind cell = CellKind::convlstm;  // recurrence for fb; fb_plus always gates a ConvLSTM
  double omega_sq = 2.0;

  bool needs_projection() const { return stack_channels != joints * channels_per_joint; }
  CellKind effective_cell() const { return mode == BoostMode::fb_plus ? CellKind::convlstm_ccg : cell; }
  bool recurrent() const { return mode == BoostMode::fb || mode == BoostMode::fb_plus; }
};

std::vector<ParamSpec> lstd_param_specs(const LstdConfig& cfg, bool bidirectional, const std::string& prefix = "");

template <typename T>
struct BoostResult {
  std::vector<Var<T>> inputs;   // F_j
  std::vector<Var<T>> outputs;  // boosted maps
  Var<T> stack;                 // J*c input stack
  Var<T> boosted;               // reassembled outputs
  DirectionResult<T> fwd, bwd;
  bool bidirectional = false;
};

template <typename T>
BoostResult<T> boost(Tape<T>& tape, Var<T> F, const GraphVariant& g, const BoundParams<T>& p, const LstdConfig& cfg,
                     const std::string& prefix = "") {
  if (g.graph.joint_count() != cfg.joints)
    throw std::invalid_argument("boost: graph has " + std::to_string(g.graph.joint_count()) +
                                " joints, config expects " + std::to_string(cfg.joints));
  if (cfg.mode == BoostMode::fb && cfg.cell == CellKind::convlstm_ccg)
    throw std::invalid_argument("boost: use mode fb_plus for the gated cell");
  if (cfg.mode == BoostMode::fb_plus && cfg.cell != CellKind::convlstm)
    throw std::invalid_argument("boost: fb_plus gates a ConvLSTM only");
  BoostResult<T> r;
  const std::string pp = prefix + "lstd.proj.";
  if (cfg.needs_projection())
    r.inputs = split_channels(F, cfg.joints, cfg.channels_per_joint, p[pp + "W"], p[pp + "b"]);
  else
    r.inputs = split_channels(F, cfg.joints, cfg.channels_per_joint);
  r.stack = cfg.needs_projection() ? reassemble(r.inputs) : F;
  if (!cfg.recurrent()) {
    r.outputs = r.inputs;
    r.boosted = r.stack;
    return r;
  }
  const auto kind = cfg.effective_cell();
  const T om = static_cast<T>(cfg.omega_sq);
  r.bidirectional = g.bidirectional;
  r.fwd = run_direction(tape, pass_order(g.graph, Direction::forward), r.inputs,
                        bind_direction(p, kind, Direction::forward, cfg.joints, prefix), r.stack, om);
  if (g.bidirectional) {
    r.bwd = run_direction(tape, pass_order(g.graph, Direction::backward), r.inputs,
                          bind_direction(p, kind, Direction::backward, cfg.joints, prefix), r.stack, om);
    for (std::size_t j = 0; j < cfg.joints; ++j) r.outputs.push_back(r.fwd.H[j] + r.bwd.H[j]);
  } else {
    r.outputs = r.fwd.H;
  }
  r.boosted = reassemble(r.outputs);
  return r;
}

}  // namespace fbn
