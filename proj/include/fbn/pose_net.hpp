#pragma once

#include "fbn/lstd.hpp"

#include <array>
#include <string>
#include <vector>

namespace fbn {

struct NetworkConfig {
  std::size_t input_size = 64;    // square RGB input
  std::size_t feature_size = 16;  // square feature / heatmap resolution
  std::size_t joints = 16;
  std::size_t channels_per_joint = 4;
  std::size_t stack_channels = 0;  // backbone output width; 0 means joints * channels_per_joint
  std::size_t width = 16;          // hourglass width
  std::size_t agg_channels = 16;   // aggregation width, also the first-layer skip width
  std::size_t depth_channels = 16;
  std::size_t stacks = 2;
  BoostMode boosting = BoostMode::fb_plus;
  CellKind cell = CellKind::convlstm;
  VariantKind variant = VariantKind::bidirectional;
  std::string graph = "body16";  // shipped name or path
  double gamma = 0.1;
  double omega_sq = 2.0;
  double heatmap_sigma = 1.0;

  std::size_t total_channels() const { return stack_channels ? stack_channels : joints * channels_per_joint; }
  std::size_t stride() const { return input_size / feature_size; }
  LstdConfig lstd() const { return {joints, channels_per_joint, total_channels(), boosting, cell, omega_sq}; }
  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

// Loads the configured graph, checks its joint count and applies the variant.
GraphVariant resolve_graph(const NetworkConfig& cfg);

std::vector<ParamSpec> network_param_specs(const NetworkConfig& cfg, const GraphVariant& g);

template <typename T>
ParamSet<T> init_network(const NetworkConfig& cfg, const GraphVariant& g, std::uint64_t seed) {
  ParamSet<T> ps;
  init_params(ps, network_param_specs(cfg, g), seed);
  return ps;
}

template <typename T>
struct StackOutput {
  Var<T> skip;        // first-layer features
  Var<T> features;    // backbone output stack
  BoostResult<T> lstd;
  Var<T> heatmaps;    // [h, w, J]
  Var<T> depth;       // [J]
  Var<T> aggregated;  // [h, w, A]
};

namespace detail {

template <typename T>
Var<T> conv_relu(const BoundParams<T>& p, const std::string& name, Var<T> x) {
  return relu(conv2d(x, p[name + ".W"], p[name + ".b"]));
}

// Two-level encoder-decoder with residual adds of the encoder maps.
template <typename T>
Var<T> hourglass(const BoundParams<T>& p, const std::string& pre, Var<T> x) {
  auto e1 = conv_relu(p, pre + "hg.e1", x);
  auto e2 = conv_relu(p, pre + "hg.e2", max_pool(e1, 2));
  auto m = conv_relu(p, pre + "hg.mid", max_pool(e2, 2));
  auto d2 = conv_relu(p, pre + "hg.d2", upsample_nearest(m, 2) + e2);
  return conv_relu(p, pre + "hg.d1", upsample_nearest(d2, 2) + e1);
}

}  // namespace detail

// Shared per-joint head: 3x3 conv, then 1x1 conv to one channel, both linear.
template <typename T>
Var<T> heatmap_head(const BoundParams<T>& p, const std::string& pre, Var<T> boosted_j) {
  auto h = conv2d(boosted_j, p[pre + "hm.W1"], p[pre + "hm.b1"]);
  return conv2d(h, p[pre + "hm.W2"], p[pre + "hm.b2"]);
}

// 1x1 projections of heatmaps and boosted stack to the aggregation width, summed with the skip.
template <typename T>
Var<T> aggregate_for_depth(const BoundParams<T>& p, const std::string& pre, Var<T> heatmaps, Var<T> boosted,
                           Var<T> skip, std::size_t joints) {
  const auto& hs = heatmaps.shape();
  if (hs.size() != 3 || boosted.shape().size() != 3 || skip.shape().size() != 3 || hs[0] != boosted.shape()[0] ||
      hs[1] != boosted.shape()[1] || hs[0] != skip.shape()[0] || hs[1] != skip.shape()[1])
    throw_shape_mismatch("aggregate_for_depth", hs, boosted.shape());
  auto a = conv2d(heatmaps, p[pre + "agg.hm.W"], Padding::same, joints);
  auto b = conv2d(boosted, p[pre + "agg.fb.W"], Padding::same, joints);
  return a + b + skip;
}

// Four conv + ReLU + 2x2 max-pool stages, then a fully connected layer to J outputs.
template <typename T>
Var<T> depth_head(const BoundParams<T>& p, const std::string& pre, Var<T> rep, std::size_t joints) {
  auto x = rep;
  for (int i = 1; i <= 4; ++i) x = max_pool(detail::conv_relu(p, pre + "depth.conv" + std::to_string(i), x), 2);
  auto flat = reshape(x, {1, x.value().size()});
  auto W = p[pre + "depth.fc.W"];
  std::vector<Var<T>> outs;
  for (std::size_t j = 0; j < joints; ++j) outs.push_back(matmul(flat, slice_last(W, j, 1)));
  auto d = reshape(joints == 1 ? outs.front() : concat_last(outs), {joints});
  return add_bias(d, p[pre + "depth.fc.b"]);
}

inline std::string stack_prefix(std::size_t s) { return "s" + std::to_string(s) + "."; }

template <typename T>
std::vector<StackOutput<T>> network_forward(const NetworkConfig& cfg, const GraphVariant& g, const BoundParams<T>& p,
                                            Var<T> image) {
  if (image.shape() != Shape{cfg.input_size, cfg.input_size, 3})
    throw ShapeError("network_forward: expected image " +
                     shape_str({cfg.input_size, cfg.input_size, 3}) + ", got " + shape_str(image.shape()));
  const std::size_t J = cfg.joints;
  std::vector<StackOutput<T>> outs;
  for (std::size_t s = 0; s < cfg.stacks; ++s) {
    const auto pre = stack_prefix(s);
    StackOutput<T> o;
    if (s == 0) {
      o.skip = avg_pool(detail::conv_relu(p, pre + "stem", image), cfg.stride());
    } else {
      const auto& prev = outs.back();
      auto a = conv2d(prev.aggregated, p[pre + "stem.WR"]);
      auto b = conv2d(prev.lstd.stack, p[pre + "stem.WF"], Padding::same, J);
      o.skip = relu(add_bias(a + b, p[pre + "stem.b"]));
    }
    auto hg = detail::hourglass(p, pre, o.skip);
    o.features = conv2d_grouped_out(hg, p[pre + "out.W"], p[pre + "out.b"], cfg.lstd().needs_projection() ? 1 : J);
    o.lstd = boost(p.tape(), o.features, g, p, cfg.lstd(), pre);
    std::vector<Var<T>> hms;
    for (auto& b : o.lstd.outputs) hms.push_back(heatmap_head(p, pre, b));
    o.heatmaps = reassemble(hms);
    o.aggregated = aggregate_for_depth(p, pre, o.heatmaps, o.lstd.boosted, o.skip, J);
    o.depth = depth_head(p, pre, o.aggregated, J);
    outs.push_back(std::move(o));
  }
  return outs;
}

template <typename T>
struct LossTerms {
  Var<T> heat, depth, total;
};

// Means over joints, pixels and stacks; total = heat + gamma * depth.
template <typename T>
LossTerms<T> network_loss(Tape<T>& tape, const std::vector<StackOutput<T>>& outs, const Tensor<T>& gt_heatmaps,
                          const Tensor<T>& gt_depth, double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("network_loss: gamma must be non-negative");
  if (outs.empty()) throw std::invalid_argument("network_loss: no stack outputs");
  auto hg = tape.constant(gt_heatmaps), dg = tape.constant(gt_depth);
  std::vector<Var<T>> hl, dl;
  for (auto& o : outs) {
    hl.push_back(mse(o.heatmaps, hg));
    dl.push_back(mse(o.depth, dg));
  }
  const T inv = T(1) / static_cast<T>(outs.size());
  LossTerms<T> r;
  r.heat = outs.size() == 1 ? hl.front() : affine(sum(concat_last(hl)), inv);
  r.depth = outs.size() == 1 ? dl.front() : affine(sum(concat_last(dl)), inv);
  r.total = r.heat + affine(r.depth, static_cast<T>(gamma));
  return r;
}

// Joint j -> {x (column), y (row), z (depth)} at heatmap resolution.
using Pose3 = std::vector<std::array<double, 3>>;

// Argmax per heatmap channel, ties to the smallest row-major index.
template <typename T>
Pose3 decode_pose(const Tensor<T>& heatmaps, const Tensor<T>& depth) {
  if (heatmaps.rank() != 3 || depth.rank() != 1 || depth.dim(0) != heatmaps.dim(2))
    throw_shape_mismatch("decode_pose", heatmaps.shape(), depth.shape());
  const std::size_t h = heatmaps.dim(0), w = heatmaps.dim(1), J = heatmaps.dim(2);
  Pose3 out(J);
  for (std::size_t j = 0; j < J; ++j) {
    std::size_t best = 0;
    T bv = heatmaps[j];
    for (std::size_t i = 1; i < h * w; ++i)
      if (heatmaps[i * J + j] > bv) {
        bv = heatmaps[i * J + j];
        best = i;
      }
    out[j] = {static_cast<double>(best % w), static_cast<double>(best / w), static_cast<double>(depth[j])};
  }
  return out;
}

// Parameters of the same network after relabeling joint j as perm[j]: per-unit
// tensors are renamed and joint-indexed axes permuted.
template <typename T>
ParamSet<T> relabel_params(const ParamSet<T>& ps, const NetworkConfig& cfg, const std::vector<std::size_t>& perm);

}  // namespace fbn
