#include "fbn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace fbn {

Tensor<float> channel_mean(const Tensor<float>& t) {
  if (t.rank() != 3) throw ShapeError("channel_mean: expected h x w x c, got " + shape_str(t.shape()));
  const std::size_t hw = t.dim(0) * t.dim(1), c = t.dim(2);
  Tensor<float> out({t.dim(0), t.dim(1), 1});
  for (std::size_t i = 0; i < hw; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += t[i * c + k];
    out[i] = static_cast<float>(s / static_cast<double>(c));
  }
  return out;
}

Tensor<float> normalize_minmax(const Tensor<float>& m) {
  Tensor<float> out(m.shape());
  if (m.size() == 0) return out;
  const float lo = m.array().minCoeff(), hi = m.array().maxCoeff();
  if (!(hi > lo)) {
    out.array().setConstant(0.5f);
    return out;
  }
  out.array() = (m.array() - lo) / (hi - lo);
  return out;
}

std::vector<JointMaps> feature_maps(const NetworkConfig& cfg, const ParamSet<float>& params, const Tensor<float>& image,
                                    const std::vector<std::size_t>& joints, std::size_t stack) {
  for (auto j : joints)
    if (j >= cfg.joints)
      throw std::invalid_argument("joint " + std::to_string(j) + " out of range (model has " +
                                  std::to_string(cfg.joints) + " joints)");
  if (stack >= cfg.stacks)
    throw std::invalid_argument("stack " + std::to_string(stack) + " out of range (model has " +
                                std::to_string(cfg.stacks) + ")");
  const auto g = resolve_graph(cfg);
  Tape<float> tape;
  BoundParams<float> bp(tape, params, false);
  const auto outs = network_forward(cfg, g, bp, tape.constant(image));
  const auto& b = outs[stack].lstd;
  std::vector<JointMaps> res;
  for (auto j : joints) {
    JointMaps m;
    m.joint = j;
    m.features = channel_mean(b.inputs[j].value());
    m.boosted = channel_mean(b.outputs[j].value());
    if (!b.fwd.G.empty()) {
      auto gate = channel_mean(b.fwd.G[j].value());
      if (b.bidirectional && !b.bwd.G.empty()) {
        gate.array() += channel_mean(b.bwd.G[j].value()).array();
        gate.array() *= 0.5f;
      }
      m.gate = std::move(gate);
    }
    res.push_back(std::move(m));
  }
  return res;
}

std::vector<std::filesystem::path> dump_feature_maps(const std::vector<JointMaps>& maps,
                                                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  for (const auto& m : maps) {
    const auto stem = "joint_" + std::to_string(m.joint) + "_";
    files.push_back(dir / (stem + "features.pgm"));
    write_pgm(normalize_minmax(m.features), files.back());
    files.push_back(dir / (stem + "boosted.pgm"));
    write_pgm(normalize_minmax(m.boosted), files.back());
    if (m.gate) {
      files.push_back(dir / (stem + "gate.pgm"));
      write_pgm(*m.gate, files.back());
    }
  }
  return files;
}

std::string_view to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::connections: return "connections";
    case AblationAxis::cells: return "cells";
    case AblationAxis::stacks: return "stacks";
    case AblationAxis::boosting: return "boosting";
  }
  return "?";
}

AblationAxis parse_ablation_axis(std::string_view s) {
  for (auto a : {AblationAxis::connections, AblationAxis::cells, AblationAxis::stacks, AblationAxis::boosting})
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown ablation axis '" + std::string(s) +
                              "' (expected connections, cells, stacks or boosting)");
}

std::vector<AblationVariant> ablation_variants(const RunConfig& base, AblationAxis axis) {
  std::vector<AblationVariant> out;
  switch (axis) {
    case AblationAxis::connections: {
      const std::pair<const char*, VariantKind> rows[] = {
          {"simple_sequence", VariantKind::simple_sequence},
          {"physical", VariantKind::physical_only},
          {"symmetrical", VariantKind::symmetrical_only},
          {"graphical_forward_only", VariantKind::graphical_forward_only},
          {"bidirectional", VariantKind::bidirectional}};
      for (const auto& [name, kind] : rows) {
        auto c = base;
        c.network.variant = kind;
        out.push_back({name, c});
      }
      break;
    }
    case AblationAxis::cells:
      for (auto k : {CellKind::convrnn, CellKind::convgru, CellKind::convlstm}) {
        auto c = base;
        c.network.boosting = BoostMode::fb;
        c.network.cell = k;
        out.push_back({std::string(to_string(k)), c});
      }
      break;
    case AblationAxis::stacks:
      for (std::size_t s : {1, 2}) {
        auto c = base;
        c.network.stacks = s;
        out.push_back({std::to_string(s), c});
      }
      break;
    case AblationAxis::boosting:
      for (auto m : {BoostMode::none, BoostMode::fb, BoostMode::fb_plus}) {
        auto c = base;
        c.network.boosting = m;
        if (m == BoostMode::fb_plus) c.network.cell = CellKind::convlstm;
        out.push_back({std::string(to_string(m)), c});
      }
      break;
  }
  for (const auto& v : out) v.config.validate();
  return out;
}

RunConfig with_seed(const RunConfig& c, std::uint64_t seed) {
  auto r = c;
  r.training.init_seed = c.training.init_seed + seed;
  r.training.shuffle_seed = c.training.shuffle_seed + seed;
  return r;
}

double AblationRow::mean_score() const {
  if (score.empty()) return 0.0;
  double s = 0;
  for (double v : score) s += v;
  return s / static_cast<double>(score.size());
}

std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& rows, const Dataset& train_set,
                                      const Dataset& test_set, const AblationOptions& opt) {
  if (opt.thresholds.empty()) throw std::invalid_argument("ablation: no PCK thresholds");
  if (opt.seeds.empty()) throw std::invalid_argument("ablation: no seeds");
  std::vector<AblationRow> out;
  for (const auto& v : rows) {
    AblationRow row;
    row.name = v.name;
    for (auto seed : opt.seeds) {
      const auto cfg = with_seed(v.config, seed);
      const auto t = train(cfg, train_set);
      auto ev = evaluate(cfg.network, t.final.params, test_set, opt.thresholds);
      double s = 0;
      for (const auto& [thr, f] : ev.report.pck) s += f;
      row.score.push_back(s / static_cast<double>(ev.report.pck.size()));
      if (opt.progress)
        *opt.progress << v.name << " seed " << seed << ": loss " << t.first.total << " -> " << t.last.total
                      << ", score " << fixed(row.score.back(), 4) << std::endl;
      row.reports.push_back(std::move(ev.report));
    }
    out.push_back(std::move(row));
  }
  return out;
}

namespace {

bool numeric(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace

std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  std::vector<bool> right(header.size(), !rows.empty());
  for (std::size_t k = 0; k < header.size(); ++k) width[k] = header[k].size();
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw std::invalid_argument("format_table: ragged row");
    for (std::size_t k = 0; k < r.size(); ++k) {
      width[k] = std::max(width[k], r[k].size());
      right[k] = right[k] && numeric(r[k]);
    }
  }
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& r) {
    std::string s;
    for (std::size_t k = 0; k < r.size(); ++k) {
      const std::string pad(width[k] - r[k].size(), ' ');
      s += right[k] ? pad + r[k] : r[k] + pad;
      if (k + 1 < r.size()) s += "  ";
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    os << s << '\n';
  };
  line(header);
  std::vector<std::string> rule;
  for (auto w : width) rule.push_back(std::string(w, '-'));
  line(rule);
  for (const auto& r : rows) line(r);
  return os.str();
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace fbn
