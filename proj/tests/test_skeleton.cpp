#include "fbn/random.hpp"
#include "fbn/skeleton.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

using namespace fbn;

namespace {

std::size_t max_links(const SkeletonGraph& g) {
  auto l = g.link_counts();
  return *std::max_element(l.begin(), l.end());
}

// Independent check that a sequence respects every edge in the given orientation.
bool respects_edges(const SkeletonGraph& g, const std::vector<std::size_t>& seq, Direction dir) {
  std::vector<std::size_t> pos(g.joint_count());
  for (std::size_t i = 0; i < seq.size(); ++i) pos[seq[i]] = i;
  for (const auto& e : g.edges) {
    const auto a = dir == Direction::forward ? e.from : e.to;
    const auto b = dir == Direction::forward ? e.to : e.from;
    if (pos[a] >= pos[b]) return false;
  }
  return true;
}

SkeletonGraph random_dag(Rng& rng, std::size_t J) {
  SkeletonGraph g;
  for (std::size_t j = 0; j < J; ++j) g.names.push_back("j" + std::to_string(j));
  g.root = 0;
  std::set<std::pair<std::size_t, std::size_t>> used;
  for (std::size_t j = 1; j < J; ++j) {
    auto p = rng.index(j);
    g.edges.push_back({p, j, EdgeKind::physical});
    used.insert({p, j});
  }
  for (int k = 0; k < static_cast<int>(J); ++k) {
    auto a = rng.index(J), b = rng.index(J);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (used.insert({a, b}).second) g.edges.push_back({a, b, EdgeKind::symmetrical});
  }
  return g;
}

}  // namespace

TEST_CASE("shipped graphs parse and have expected sizes") {
  auto names = shipped_graph_names();
  CHECK(names.size() == 5);
  CHECK(shipped_graph("body16").joint_count() == 16);
  CHECK(shipped_graph("hand21").joint_count() == 21);
  CHECK(shipped_graph("toy5").joint_count() == 5);
  CHECK_THROWS_AS(shipped_graph("nope"), GraphError);
}

TEST_CASE("hand wrist has five links and every other hand joint at most four") {
  auto g = shipped_graph("hand21");
  auto l = g.link_counts();
  CHECK(l[0] == 5);
  for (std::size_t j = 1; j < l.size(); ++j) CHECK(l[j] <= 4);
  CHECK(validate(g).ok());
}

TEST_CASE("body16 is acyclic in both directions and has a merge joint") {
  auto g = shipped_graph("body16");
  CHECK(validate(g).ok());
  CHECK(max_links(g) <= 4);
  for (auto dir : {Direction::forward, Direction::backward}) {
    auto po = pass_order(g, dir);
    CHECK(po.sequence.size() == 16);
    CHECK(respects_edges(g, po.sequence, dir));
  }
  auto fwd = pass_order(g, Direction::forward);
  CHECK(fwd.sequence.front() == 0);
  bool merge = false;
  for (const auto& p : fwd.preds) merge = merge || p.size() >= 2;
  CHECK(merge);
}

TEST_CASE("pass order on a chain") {
  auto g = parse_graph("joint 0 a\njoint 1 b\njoint 2 c\nroot 0\nedge 0 1 physical\nedge 1 2 physical\n");
  auto f = pass_order(g, Direction::forward);
  auto b = pass_order(g, Direction::backward);
  CHECK(f.sequence == std::vector<std::size_t>{0, 1, 2});
  CHECK(b.sequence == std::vector<std::size_t>{2, 1, 0});
  CHECK(f.preds[0].empty());
  CHECK(f.preds[2] == std::vector<std::size_t>{1});
  CHECK(b.preds[2].empty());
  CHECK(b.preds[0] == std::vector<std::size_t>{1});
}

TEST_CASE("toy5 pass orders") {
  auto g = shipped_graph("toy5");
  auto f = pass_order(g, Direction::forward);
  CHECK(f.sequence == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(f.preds[3] == std::vector<std::size_t>{0, 1});
  CHECK(f.preds[4] == std::vector<std::size_t>{2, 3});
  auto b = pass_order(g, Direction::backward);
  CHECK(respects_edges(g, b.sequence, Direction::backward));
  CHECK(b.preds[1] == std::vector<std::size_t>{2, 3});
}

TEST_CASE("parser rejects malformed configs with a location") {
  auto expect_error = [](const std::string& text, const std::string& fragment) {
    try {
      parse_graph(text, "t.graph");
      FAIL("expected GraphError for: " << text);
    } catch (const GraphError& e) {
      std::string msg = e.what();
      CHECK_MESSAGE(msg.find(fragment) != std::string::npos, msg);
      CHECK(msg.rfind("t.graph", 0) == 0);
    }
  };
  const std::string head = "joint 0 a\njoint 1 b\njoint 2 c\nroot 0\n";
  expect_error(head + "edge 0 0 physical\n", "self-loop");
  expect_error(head + "edge 0 1 physical\nedge 1 0 symmetrical\n", "duplicate");
  expect_error(head + "edge 0 5 physical\n", "out of range");
  expect_error(head + "edge 0 1 physical\nedge 1 2 physical\nedge 2 1 extra\n", "duplicate");
  expect_error(head + "edge 0 1 physical\nedge 1 2 physical\nedge 2 0 extra\n", "cycle");
  expect_error(head + "edge 0 1 physical\n", "unreachable");
  expect_error(head + "edge 0 1 wobbly\n", "t.graph:5");
  expect_error(head + "vertex 3\n", "t.graph:5");
  expect_error("joint 0 a\njoint 2 c\nroot 0\n", "contiguous");
  expect_error("joint 0 a\n", "root");
  expect_error(head + "edge 0 1 physical extra\n", "trailing");
}

TEST_CASE("validate reports cycles, caps and never throws") {
  SkeletonGraph g = shipped_graph("toy5");
  g.edges.push_back({4, 0, EdgeKind::extra});
  auto r = validate(g);
  REQUIRE_FALSE(r.ok());
  bool named = false;
  for (const auto& s : r.issues) named = named || s.find("cycle 0 -> ") != std::string::npos;
  CHECK(named);

  auto ext = shipped_graph("hand21_extended");
  CHECK_FALSE(validate(ext, ValidationProfile::default_links).ok());
  CHECK(validate(ext, ValidationProfile::extended_links).ok());
  CHECK(max_links(ext) == 8);
  CHECK(max_links(shipped_graph("body16_extended")) == 7);

  SkeletonGraph bad;
  bad.names = {"a"};
  bad.root = 3;
  CHECK_NOTHROW(validate(bad));
  CHECK_FALSE(validate(bad).ok());
  CHECK_FALSE(validate(SkeletonGraph{}).ok());
}

TEST_CASE("variants") {
  auto hand = shipped_graph("hand21");
  auto seq = make_variant(hand, VariantKind::simple_sequence);
  CHECK(seq.graph.edges.size() == 20);
  CHECK_FALSE(seq.bidirectional);
  auto phys = make_variant(hand, VariantKind::physical_only);
  CHECK(phys.graph.edges.size() == hand.count(EdgeKind::physical));
  CHECK(phys.graph.count(EdgeKind::symmetrical) == 0);
  auto sym = make_variant(hand, VariantKind::symmetrical_only);
  CHECK(sym.graph.count(EdgeKind::physical) == 0);
  CHECK(make_variant(hand, VariantKind::bidirectional).bidirectional);
  CHECK_FALSE(make_variant(hand, VariantKind::graphical_forward_only).bidirectional);
  auto ext = make_variant(hand, VariantKind::extended);
  CHECK(ext.graph == shipped_graph("hand21_extended"));
  CHECK(make_variant(shipped_graph("body16"), VariantKind::extended).graph == shipped_graph("body16_extended"));
  CHECK_THROWS_AS(make_variant(shipped_graph("toy5"), VariantKind::extended), GraphError);
  for (auto k : {VariantKind::simple_sequence, VariantKind::physical_only, VariantKind::symmetrical_only,
                 VariantKind::graphical_forward_only, VariantKind::bidirectional, VariantKind::extended})
    CHECK(parse_variant_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_variant_kind("zigzag"), GraphError);
}

TEST_CASE("format and parse round-trip, save and load") {
  for (const auto& n : shipped_graph_names()) {
    auto g = shipped_graph(n);
    CHECK(parse_graph(format_graph(g)) == g);
  }
  auto path = std::filesystem::temp_directory_path() / "fbn_graph_roundtrip.graph";
  save_graph(shipped_graph("body16"), path);
  CHECK(load_graph(path) == shipped_graph("body16"));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_graph("/nonexistent/x.graph"), GraphError);
}

TEST_CASE("property: random DAGs schedule every unit after its predecessors, deterministically") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto g = random_dag(rng, 2 + rng.index(20));
    auto text = format_graph(g);
    REQUIRE_NOTHROW(parse_graph(text));
    for (auto dir : {Direction::forward, Direction::backward}) {
      auto a = pass_order(g, dir);
      auto b = pass_order(parse_graph(text), dir);
      CHECK(a.sequence == b.sequence);
      CHECK(a.preds == b.preds);
      std::vector<bool> done(g.joint_count(), false);
      for (auto j : a.sequence) {
        for (auto p : a.preds[j]) CHECK(done[p]);
        done[j] = true;
      }
    }
  }
}

TEST_CASE("property: relabeling preserves graph structure") {
  Rng rng(5);
  for (const auto& n : shipped_graph_names()) {
    auto g = shipped_graph(n);
    std::vector<std::size_t> perm(g.joint_count());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    auto h = relabel(g, perm);
    CHECK(validate(h, ValidationProfile::extended_links).ok() ==
          validate(g, ValidationProfile::extended_links).ok());
    auto lg = g.link_counts(), lh = h.link_counts();
    for (std::size_t j = 0; j < perm.size(); ++j) CHECK(lg[j] == lh[perm[j]]);
    auto pg = pass_order(g, Direction::forward), ph = pass_order(h, Direction::forward);
    for (std::size_t j = 0; j < perm.size(); ++j) {
      std::vector<std::size_t> mapped;
      for (auto p : pg.preds[j]) mapped.push_back(perm[p]);
      std::sort(mapped.begin(), mapped.end());
      CHECK(mapped == ph.preds[perm[j]]);
    }
  }
  CHECK_THROWS_AS(relabel(shipped_graph("toy5"), {0, 1, 1, 2, 3}), GraphError);
}
