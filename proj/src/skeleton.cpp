#include "fbn/skeleton.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>

namespace fbn {

namespace detail {
std::string_view shipped_text(std::string_view name);  // generated
extern const char* const shipped_names[];
}  // namespace detail

std::string_view to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::physical: return "physical";
    case EdgeKind::symmetrical: return "symmetrical";
    case EdgeKind::extra: return "extra";
  }
  return "?";
}

EdgeKind parse_edge_kind(std::string_view s) {
  if (s == "physical") return EdgeKind::physical;
  if (s == "symmetrical") return EdgeKind::symmetrical;
  if (s == "extra") return EdgeKind::extra;
  throw GraphError("unknown edge kind '" + std::string(s) + "'");
}

std::vector<std::size_t> SkeletonGraph::link_counts() const {
  std::vector<std::set<std::size_t>> nb(joint_count());
  for (const auto& e : edges) {
    nb[e.from].insert(e.to);
    nb[e.to].insert(e.from);
  }
  std::vector<std::size_t> out;
  for (const auto& n : nb) out.push_back(n.size());
  return out;
}

std::size_t SkeletonGraph::count(EdgeKind k) const {
  return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [k](const Edge& e) { return e.kind == k; }));
}

namespace {

std::vector<std::vector<std::size_t>> successors(const SkeletonGraph& g, Direction dir) {
  std::vector<std::vector<std::size_t>> out(g.joint_count());
  for (const auto& e : g.edges) {
    if (dir == Direction::forward)
      out[e.from].push_back(e.to);
    else
      out[e.to].push_back(e.from);
  }
  return out;
}

// Kahn's algorithm with a min-heap; returns joints in topological order (possibly partial).
std::vector<std::size_t> topo_order(const SkeletonGraph& g, Direction dir) {
  const auto succ = successors(g, dir);
  std::vector<std::size_t> indeg(g.joint_count(), 0);
  for (const auto& s : succ)
    for (auto v : s) ++indeg[v];
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t j = 0; j < indeg.size(); ++j)
    if (indeg[j] == 0) ready.push(j);
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    auto j = ready.top();
    ready.pop();
    order.push_back(j);
    for (auto v : succ[j])
      if (--indeg[v] == 0) ready.push(v);
  }
  return order;
}

// A directed cycle in forward orientation, as a joint path ending where it started.
std::optional<std::vector<std::size_t>> find_cycle(const SkeletonGraph& g) {
  const auto succ = successors(g, Direction::forward);
  std::vector<int> state(g.joint_count(), 0);
  std::vector<std::size_t> stack;
  std::optional<std::vector<std::size_t>> found;
  std::function<bool(std::size_t)> dfs = [&](std::size_t u) {
    state[u] = 1;
    stack.push_back(u);
    for (auto v : succ[u]) {
      if (state[v] == 1) {
        auto it = std::find(stack.begin(), stack.end(), v);
        std::vector<std::size_t> cyc(it, stack.end());
        cyc.push_back(v);
        found = cyc;
        return true;
      }
      if (state[v] == 0 && dfs(v)) return true;
    }
    stack.pop_back();
    state[u] = 2;
    return false;
  };
  for (std::size_t j = 0; j < g.joint_count(); ++j)
    if (state[j] == 0 && dfs(j)) break;
  return found;
}

std::string path_str(const std::vector<std::size_t>& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) s += (i ? " -> " : "") + std::to_string(p[i]);
  return s;
}

std::vector<std::size_t> unreachable_from_root(const SkeletonGraph& g) {
  const auto succ = successors(g, Direction::forward);
  std::vector<bool> seen(g.joint_count(), false);
  std::vector<std::size_t> todo{g.root};
  seen[g.root] = true;
  while (!todo.empty()) {
    auto u = todo.back();
    todo.pop_back();
    for (auto v : succ[u])
      if (!seen[v]) {
        seen[v] = true;
        todo.push_back(v);
      }
  }
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < seen.size(); ++j)
    if (!seen[j]) out.push_back(j);
  return out;
}

}  // namespace

SkeletonGraph parse_graph(std::string_view text, const std::string& source) {
  auto fail = [&](std::size_t line, const std::string& msg) -> GraphError {
    return GraphError(source + ":" + std::to_string(line) + ": " + msg);
  };

  std::map<std::size_t, std::pair<std::string, std::size_t>> joints;  // idx -> (name, line)
  std::optional<std::pair<std::size_t, std::size_t>> root;           // (idx, line)
  std::vector<std::pair<Edge, std::size_t>> edges;

  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::string kw;
    if (!(ls >> kw)) continue;
    auto read_index = [&](const char* what) {
      long long v;
      if (!(ls >> v) || v < 0) throw fail(lineno, std::string("expected non-negative ") + what);
      return static_cast<std::size_t>(v);
    };
    std::string extra;
    if (kw == "joint") {
      auto idx = read_index("joint index");
      std::string name;
      if (!(ls >> name)) throw fail(lineno, "joint needs a name");
      if (joints.count(idx)) throw fail(lineno, "joint " + std::to_string(idx) + " declared twice");
      joints[idx] = {name, lineno};
    } else if (kw == "root") {
      if (root) throw fail(lineno, "root declared twice");
      root = {read_index("root index"), lineno};
    } else if (kw == "edge") {
      Edge e;
      e.from = read_index("edge source");
      e.to = read_index("edge target");
      std::string kind;
      if (!(ls >> kind)) throw fail(lineno, "edge needs a kind");
      try {
        e.kind = parse_edge_kind(kind);
      } catch (const GraphError& err) {
        throw fail(lineno, err.what());
      }
      edges.push_back({e, lineno});
    } else {
      throw fail(lineno, "unknown directive '" + kw + "'");
    }
    if (ls >> extra) throw fail(lineno, "trailing token '" + extra + "'");
  }

  SkeletonGraph g;
  if (joints.empty()) throw fail(lineno, "no joints declared");
  for (auto& [idx, entry] : joints) {
    if (idx != g.names.size())
      throw fail(entry.second, "joint indices must be contiguous from 0; missing " + std::to_string(g.names.size()));
    g.names.push_back(entry.first);
  }
  const std::size_t J = g.names.size();
  if (!root) throw fail(lineno, "no root declared");
  if (root->first >= J) throw fail(root->second, "root index " + std::to_string(root->first) + " out of range");
  g.root = root->first;

  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (auto& [e, line] : edges) {
    if (e.from >= J || e.to >= J)
      throw fail(line, "edge " + std::to_string(e.from) + " " + std::to_string(e.to) + " index out of range (J=" +
                           std::to_string(J) + ")");
    if (e.from == e.to) throw fail(line, "self-loop on joint " + std::to_string(e.from));
    if (!seen.insert({std::min(e.from, e.to), std::max(e.from, e.to)}).second)
      throw fail(line, "duplicate link between " + std::to_string(e.from) + " and " + std::to_string(e.to));
    g.edges.push_back(e);
  }

  if (auto cyc = find_cycle(g)) throw GraphError(source + ": forward cycle " + path_str(*cyc));
  if (auto lost = unreachable_from_root(g); !lost.empty())
    throw GraphError(source + ": joint " + std::to_string(lost.front()) + " (" + g.names[lost.front()] +
                     ") unreachable from root " + std::to_string(g.root));
  return g;
}

SkeletonGraph load_graph(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw GraphError("cannot open graph config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_graph(ss.str(), path.string());
}

std::string format_graph(const SkeletonGraph& g) {
  std::ostringstream os;
  for (std::size_t j = 0; j < g.names.size(); ++j) os << "joint " << j << ' ' << g.names[j] << '\n';
  os << "root " << g.root << '\n';
  for (const auto& e : g.edges) os << "edge " << e.from << ' ' << e.to << ' ' << to_string(e.kind) << '\n';
  return os.str();
}

void save_graph(const SkeletonGraph& g, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw GraphError("cannot write graph config " + path.string());
  f << format_graph(g);
}

std::string_view shipped_graph_text(std::string_view name) {
  auto t = detail::shipped_text(name);
  if (t.empty()) throw GraphError("no shipped graph named '" + std::string(name) + "'");
  return t;
}

SkeletonGraph shipped_graph(std::string_view name) {
  return parse_graph(shipped_graph_text(name), std::string(name) + ".graph");
}

std::vector<std::string> shipped_graph_names() {
  std::vector<std::string> out;
  for (auto p = detail::shipped_names; *p; ++p) out.emplace_back(*p);
  return out;
}

PassOrder pass_order(const SkeletonGraph& g, Direction dir) {
  PassOrder po;
  po.direction = dir;
  po.sequence = topo_order(g, dir);
  if (po.sequence.size() != g.joint_count()) throw GraphError("pass_order: graph has a cycle");
  po.preds.assign(g.joint_count(), {});
  for (const auto& e : g.edges) {
    if (dir == Direction::forward)
      po.preds[e.to].push_back(e.from);
    else
      po.preds[e.from].push_back(e.to);
  }
  for (auto& p : po.preds) std::sort(p.begin(), p.end());
  return po;
}

ValidationReport validate(const SkeletonGraph& g, ValidationProfile profile) {
  ValidationReport r;
  const std::size_t J = g.joint_count();
  if (J == 0) {
    r.issues.push_back("graph has no joints");
    return r;
  }
  if (g.root >= J) r.issues.push_back("root index " + std::to_string(g.root) + " out of range");
  bool indices_ok = true;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : g.edges) {
    if (e.from >= J || e.to >= J) {
      r.issues.push_back("edge " + std::to_string(e.from) + " -> " + std::to_string(e.to) + " index out of range");
      indices_ok = false;
      continue;
    }
    if (e.from == e.to) r.issues.push_back("self-loop on joint " + std::to_string(e.from));
    if (!seen.insert({std::min(e.from, e.to), std::max(e.from, e.to)}).second)
      r.issues.push_back("duplicate link between " + std::to_string(e.from) + " and " + std::to_string(e.to));
  }
  if (!indices_ok || g.root >= J) return r;

  if (auto cyc = find_cycle(g)) r.issues.push_back("forward cycle " + path_str(*cyc));
  for (auto j : unreachable_from_root(g))
    r.issues.push_back("joint " + std::to_string(j) + " (" + g.names[j] + ") unreachable from root");

  const auto links = g.link_counts();
  for (std::size_t j = 0; j < J; ++j) {
    const bool exempt = profile == ValidationProfile::default_links && j == g.root;
    const std::size_t cap = profile == ValidationProfile::default_links ? 4 : 8;
    if (!exempt && links[j] > cap)
      r.issues.push_back("joint " + std::to_string(j) + " (" + g.names[j] + ") has " + std::to_string(links[j]) +
                         " links, cap " + std::to_string(cap));
  }
  return r;
}

std::string_view to_string(VariantKind k) {
  switch (k) {
    case VariantKind::simple_sequence: return "simple_sequence";
    case VariantKind::physical_only: return "physical";
    case VariantKind::symmetrical_only: return "symmetrical";
    case VariantKind::graphical_forward_only: return "graphical_forward_only";
    case VariantKind::bidirectional: return "bidirectional";
    case VariantKind::extended: return "extended";
  }
  return "?";
}

VariantKind parse_variant_kind(std::string_view s) {
  for (auto k : {VariantKind::simple_sequence, VariantKind::physical_only, VariantKind::symmetrical_only,
                 VariantKind::graphical_forward_only, VariantKind::bidirectional, VariantKind::extended})
    if (s == to_string(k)) return k;
  if (s == "physical_only") return VariantKind::physical_only;
  if (s == "symmetrical_only") return VariantKind::symmetrical_only;
  throw GraphError("unknown graph variant '" + std::string(s) + "'");
}

GraphVariant make_variant(const SkeletonGraph& g, VariantKind kind) {
  GraphVariant v{g, false};
  auto keep = [&](EdgeKind k) {
    std::vector<Edge> out;
    for (const auto& e : g.edges)
      if (e.kind == k) out.push_back(e);
    return out;
  };
  switch (kind) {
    case VariantKind::simple_sequence:
      v.graph.edges.clear();
      for (std::size_t j = 1; j < g.joint_count(); ++j) v.graph.edges.push_back({j - 1, j, EdgeKind::physical});
      break;
    case VariantKind::physical_only: v.graph.edges = keep(EdgeKind::physical); break;
    case VariantKind::symmetrical_only: v.graph.edges = keep(EdgeKind::symmetrical); break;
    case VariantKind::graphical_forward_only:
      v.graph.edges.clear();
      for (const auto& e : g.edges)
        if (e.kind != EdgeKind::extra) v.graph.edges.push_back(e);
      break;
    case VariantKind::bidirectional:
      v.bidirectional = true;
      break;
    case VariantKind::extended: {
      v.bidirectional = true;
      for (const auto& name : shipped_graph_names()) {
        if (name.ends_with("_extended") || shipped_graph(name) != g) continue;
        const auto ext = shipped_graph(name + "_extended");
        for (const auto& e : ext.edges)
          if (e.kind == EdgeKind::extra) v.graph.edges.push_back(e);
        return v;
      }
      throw GraphError("extended variant needs a shipped default graph with a shipped extension");
    }
  }
  return v;
}

SkeletonGraph relabel(const SkeletonGraph& g, const std::vector<std::size_t>& perm) {
  const std::size_t J = g.joint_count();
  if (perm.size() != J) throw GraphError("relabel: permutation size mismatch");
  std::vector<bool> hit(J, false);
  for (auto p : perm) {
    if (p >= J || hit[p]) throw GraphError("relabel: not a permutation");
    hit[p] = true;
  }
  SkeletonGraph out;
  out.names.resize(J);
  for (std::size_t j = 0; j < J; ++j) out.names[perm[j]] = g.names[j];
  out.root = perm[g.root];
  for (const auto& e : g.edges) out.edges.push_back({perm[e.from], perm[e.to], e.kind});
  return out;
}

}  // namespace fbn
