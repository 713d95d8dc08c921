#include "fbn/lstd.hpp"

namespace fbn {

std::string_view to_string(BoostMode m) {
  switch (m) {
    case BoostMode::none: return "none";
    case BoostMode::passthrough: return "passthrough";
    case BoostMode::fb: return "fb";
    case BoostMode::fb_plus: return "fb_plus";
  }
  return "?";
}

BoostMode parse_boost_mode(std::string_view s) {
  for (auto m : {BoostMode::none, BoostMode::passthrough, BoostMode::fb, BoostMode::fb_plus})
    if (s == to_string(m)) return m;
  if (s == "baseline") return BoostMode::none;
  throw std::invalid_argument("unknown boosting mode '" + std::string(s) + "'");
}

std::vector<ParamSpec> lstd_param_specs(const LstdConfig& cfg, bool bidirectional, const std::string& prefix) {
  const std::size_t jc = cfg.joints * cfg.channels_per_joint;
  std::vector<ParamSpec> out;
  if (cfg.needs_projection()) {
    out.push_back({prefix + "lstd.proj.W", {1, 1, cfg.stack_channels, jc}, Init::glorot});
    out.push_back({prefix + "lstd.proj.b", {jc}, Init::zeros});
  }
  if (!cfg.recurrent()) return out;
  for (auto d : {Direction::forward, Direction::backward}) {
    if (d == Direction::backward && !bidirectional) break;
    auto cs = cell_param_specs(cfg.effective_cell(), d, cfg.channels_per_joint, 3, prefix);
    out.insert(out.end(), cs.begin(), cs.end());
    if (cfg.mode == BoostMode::fb_plus) {
      auto gs = ccg_param_specs(d, cfg.joints, cfg.channels_per_joint, 3, prefix);
      out.insert(out.end(), gs.begin(), gs.end());
    }
  }
  return out;
}

}  // namespace fbn
