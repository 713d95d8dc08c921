#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fbn {

enum class EdgeKind { physical, symmetrical, extra };

std::string_view to_string(EdgeKind k);
EdgeKind parse_edge_kind(std::string_view s);

struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  EdgeKind kind = EdgeKind::physical;

  friend bool operator==(const Edge&, const Edge&) = default;
};

// Joint dependency graph. Edges are stored in forward orientation (root outward);
// the backward pass uses every edge reversed.
struct SkeletonGraph {
  std::vector<std::string> names;
  std::size_t root = 0;
  std::vector<Edge> edges;

  std::size_t joint_count() const { return names.size(); }
  // Number of distinct neighbours of each joint, ignoring direction.
  std::vector<std::size_t> link_counts() const;
  std::size_t count(EdgeKind k) const;

  friend bool operator==(const SkeletonGraph&, const SkeletonGraph&) = default;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Line-oriented text format: `joint <idx> <name>`, `root <idx>`,
// `edge <from> <to> physical|symmetrical|extra`, `#` comments.
// Rejects malformed lines, out-of-range indices, self-loops, duplicate edges,
// forward cycles and joints unreachable from the root; errors carry `source:line`.
SkeletonGraph parse_graph(std::string_view text, const std::string& source = "<string>");
SkeletonGraph load_graph(const std::filesystem::path& path);

// Canonical text form; parse_graph(format_graph(g)) == g.
std::string format_graph(const SkeletonGraph& g);
void save_graph(const SkeletonGraph& g, const std::filesystem::path& path);

// Built-in configs: body16, hand21, body16_extended, hand21_extended, toy5.
SkeletonGraph shipped_graph(std::string_view name);
std::string_view shipped_graph_text(std::string_view name);
std::vector<std::string> shipped_graph_names();

enum class Direction { forward, backward };

struct PassOrder {
  Direction direction = Direction::forward;
  std::vector<std::size_t> sequence;
  // preds[j] = N_j, ascending.
  std::vector<std::vector<std::size_t>> preds;
};

// Topological unit order for one direction, ties broken by ascending joint index.
PassOrder pass_order(const SkeletonGraph& g, Direction dir);

enum class ValidationProfile { default_links, extended_links };

struct ValidationReport {
  std::vector<std::string> issues;
  bool ok() const { return issues.empty(); }
};

// Never throws. Default profile caps every non-root joint at 4 links;
// extended profile caps every joint at 8.
ValidationReport validate(const SkeletonGraph& g, ValidationProfile profile = ValidationProfile::default_links);

enum class VariantKind { simple_sequence, physical_only, symmetrical_only, graphical_forward_only, bidirectional, extended };

std::string_view to_string(VariantKind k);
VariantKind parse_variant_kind(std::string_view s);

struct GraphVariant {
  SkeletonGraph graph;
  bool bidirectional = true;
};

// Connection variants used for ablations. Only `bidirectional` and `extended`
// run both passes. `extended` requires a shipped default with a shipped extension.
GraphVariant make_variant(const SkeletonGraph& g, VariantKind kind);

// Relabels joints: new index of joint j is perm[j].
SkeletonGraph relabel(const SkeletonGraph& g, const std::vector<std::size_t>& perm);

}  // namespace fbn
