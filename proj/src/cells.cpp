#include "fbn/cells.hpp"

namespace fbn {

std::string_view to_string(CellKind k) {
  switch (k) {
    case CellKind::convlstm: return "convlstm";
    case CellKind::convlstm_ccg: return "convlstm_ccg";
    case CellKind::convgru: return "convgru";
    case CellKind::convrnn: return "convrnn";
  }
  return "?";
}

CellKind parse_cell_kind(std::string_view s) {
  for (auto k : {CellKind::convlstm, CellKind::convlstm_ccg, CellKind::convgru, CellKind::convrnn})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown cell kind '" + std::string(s) + "'");
}

std::string_view to_string(Direction d) { return d == Direction::forward ? "fwd" : "bwd"; }

std::vector<std::string> gate_names(CellKind k) {
  switch (k) {
    case CellKind::convlstm:
    case CellKind::convlstm_ccg: return {"i", "f", "c", "o"};
    case CellKind::convgru: return {"z", "r", "h"};
    case CellKind::convrnn: return {""};
  }
  return {};
}

std::vector<ParamSpec> cell_param_specs(CellKind kind, Direction dir, std::size_t c, std::size_t k,
                                        const std::string& prefix) {
  const std::string pre = prefix + "cell." + std::string(to_string(dir)) + ".";
  std::vector<ParamSpec> out;
  for (const auto& g : gate_names(kind)) {
    out.push_back({pre + "W_F" + g, {k, k, c, c}, Init::glorot});
    out.push_back({pre + "W_H" + g, {k, k, c, c}, Init::glorot});
    out.push_back({pre + "b_" + g, {c}, g == "f" ? Init::ones : Init::zeros});
  }
  if (kind == CellKind::convrnn) {
    out[0].name = pre + "W_F";
    out[1].name = pre + "W_H";
    out[2].name = pre + "b";
  }
  return out;
}

std::vector<ParamSpec> ccg_param_specs(Direction dir, std::size_t joints, std::size_t c, std::size_t k,
                                       const std::string& prefix) {
  std::vector<ParamSpec> out;
  for (std::size_t j = 0; j < joints; ++j) {
    const std::string u = prefix + "ccg." + std::string(to_string(dir)) + ".unit" + std::to_string(j) + ".";
    out.push_back({u + "W_Hp", {k, k, c, c}, Init::glorot});
    out.push_back({u + "W_Fp", {k, k, joints * c, c}, Init::glorot});
    out.push_back({u + "b_p", {c}, Init::zeros});
  }
  return out;
}

}  // namespace fbn
