#include "fbn/pose_net.hpp"

#include <algorithm>

namespace fbn {

void NetworkConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("network config: " + m); };
  if (joints == 0 || channels_per_joint == 0) fail("joints and channels_per_joint must be positive");
  if (width == 0 || agg_channels == 0 || depth_channels == 0) fail("layer widths must be positive");
  if (stacks < 1) fail("stacks must be at least 1");
  if (feature_size == 0 || feature_size % 16 != 0) fail("feature_size must be a positive multiple of 16");
  if (input_size % feature_size != 0) fail("input_size must be a multiple of feature_size");
  if (!(gamma >= 0.0)) fail("gamma must be non-negative");
  if (!(omega_sq > 0.0)) fail("omega_sq must be positive");
  if (!(heatmap_sigma > 0.0)) fail("heatmap_sigma must be positive");
  if (cell == CellKind::convlstm_ccg) fail("select the gated cell with boosting = fb_plus");
  if (boosting == BoostMode::fb_plus && cell != CellKind::convlstm) fail("fb_plus requires cell = convlstm");
}

GraphVariant resolve_graph(const NetworkConfig& cfg) {
  const auto names = shipped_graph_names();
  const bool shipped = std::find(names.begin(), names.end(), cfg.graph) != names.end();
  auto g = shipped ? shipped_graph(cfg.graph) : load_graph(cfg.graph);
  if (g.joint_count() != cfg.joints)
    throw std::invalid_argument("graph '" + cfg.graph + "' has " + std::to_string(g.joint_count()) +
                                " joints, config expects " + std::to_string(cfg.joints));
  return make_variant(g, cfg.variant);
}

std::vector<ParamSpec> network_param_specs(const NetworkConfig& cfg, const GraphVariant& g) {
  cfg.validate();
  const std::size_t J = cfg.joints, c = cfg.channels_per_joint, A = cfg.agg_channels, B = cfg.width,
                    D = cfg.depth_channels, jc = J * c, C = cfg.total_channels();
  std::vector<ParamSpec> out;
  // kernels feeding a ReLU get He scaling
  auto conv = [&](const std::string& name, std::size_t k, std::size_t cin, std::size_t cout, bool bias = true,
                  Init init = Init::he) {
    out.push_back({name + (bias ? ".W" : ""), {k, k, cin, cout}, init});
    if (bias) out.push_back({name + ".b", {cout}, Init::zeros});
  };
  for (std::size_t s = 0; s < cfg.stacks; ++s) {
    const auto pre = stack_prefix(s);
    if (s == 0) {
      conv(pre + "stem", 3, 3, A);
    } else {
      conv(pre + "stem.WR", 3, A, A, false);
      conv(pre + "stem.WF", 3, jc, A, false);
      out.push_back({pre + "stem.b", {A}, Init::zeros});
    }
    conv(pre + "hg.e1", 3, A, B);
    for (const char* n : {"hg.e2", "hg.mid", "hg.d2", "hg.d1"}) conv(pre + n, 3, B, B);
    conv(pre + "out", 1, B, C, true, Init::glorot);
    auto ls = lstd_param_specs(cfg.lstd(), g.bidirectional, pre);
    out.insert(out.end(), ls.begin(), ls.end());
    out.push_back({pre + "hm.W1", {3, 3, c, c}, Init::glorot});
    out.push_back({pre + "hm.b1", {c}, Init::zeros});
    out.push_back({pre + "hm.W2", {1, 1, c, 1}, Init::glorot});
    out.push_back({pre + "hm.b2", {1}, Init::zeros});
    conv(pre + "agg.hm.W", 1, J, A, false, Init::glorot);
    conv(pre + "agg.fb.W", 1, jc, A, false, Init::glorot);
    conv(pre + "depth.conv1", 3, A, D);
    for (int i = 2; i <= 4; ++i) conv(pre + "depth.conv" + std::to_string(i), 3, D, D);
    const std::size_t r = cfg.feature_size / 16;
    out.push_back({pre + "depth.fc.W", {D * r * r, J}, Init::glorot});
    out.push_back({pre + "depth.fc.b", {J}, Init::zeros});
  }
  return out;
}

namespace {

// new[..., perm[k]*block + r, ...] = old[..., k*block + r, ...] along `axis`.
template <typename T>
Tensor<T> permute_blocks(const Tensor<T>& t, std::size_t axis, std::size_t block, const std::vector<std::size_t>& perm) {
  const auto& s = t.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  if (n != perm.size() * block) throw ShapeError("relabel_params: axis extent mismatch in " + shape_str(s));
  Tensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < perm.size(); ++k)
      for (std::size_t r = 0; r < block; ++r) {
        const T* src = t.data() + (o * n + k * block + r) * inner;
        std::copy_n(src, inner, out.data() + (o * n + perm[k] * block + r) * inner);
      }
  return out;
}

}  // namespace

template <typename T>
ParamSet<T> relabel_params(const ParamSet<T>& ps, const NetworkConfig& cfg, const std::vector<std::size_t>& perm) {
  const std::size_t c = cfg.channels_per_joint;
  if (perm.size() != cfg.joints) throw std::invalid_argument("relabel_params: permutation size mismatch");
  const bool proj = cfg.lstd().needs_projection();
  ParamSet<T> out;
  for (const auto& [name, v] : ps.all()) {
    std::string nn = name;
    Tensor<T> nv = v;
    const auto dot = name.find('.');
    const std::string local = name.substr(dot + 1);
    if (local.rfind("ccg.", 0) == 0) {
      const auto u = name.find(".unit") + 5, end = name.find('.', u);
      const std::size_t j = std::stoul(name.substr(u, end - u));
      nn = name.substr(0, u) + std::to_string(perm[j]) + name.substr(end);
      if (name.ends_with(".W_Fp")) nv = permute_blocks(v, 2, c, perm);
    } else if ((local == "out.W" && !proj) || local == "lstd.proj.W") {
      nv = permute_blocks(v, 3, c, perm);
    } else if ((local == "out.b" && !proj) || local == "lstd.proj.b") {
      nv = permute_blocks(v, 0, c, perm);
    } else if (local == "stem.WF" || local == "agg.fb.W") {
      nv = permute_blocks(v, 2, c, perm);
    } else if (local == "agg.hm.W") {
      nv = permute_blocks(v, 2, 1, perm);
    } else if (local == "depth.fc.W") {
      nv = permute_blocks(v, 1, 1, perm);
    } else if (local == "depth.fc.b") {
      nv = permute_blocks(v, 0, 1, perm);
    }
    out.set(nn, std::move(nv));
  }
  return out;
}

template ParamSet<float> relabel_params(const ParamSet<float>&, const NetworkConfig&, const std::vector<std::size_t>&);
template ParamSet<double> relabel_params(const ParamSet<double>&, const NetworkConfig&, const std::vector<std::size_t>&);

}  // namespace fbn
