#include "fbn/cells.hpp"
#include "fbn/grad_check.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace fbn;

namespace {

using TD = Tensor<double>;

ParamSet<double> make_params(CellKind kind, std::size_t J, std::size_t c, std::size_t k, std::uint64_t seed,
                             bool both = true) {
  std::vector<ParamSpec> specs;
  for (auto d : {Direction::forward, Direction::backward}) {
    if (d == Direction::backward && !both) break;
    auto s = cell_param_specs(kind, d, c, k);
    specs.insert(specs.end(), s.begin(), s.end());
    if (kind == CellKind::convlstm_ccg) {
      auto cs = ccg_param_specs(d, J, c, k);
      specs.insert(specs.end(), cs.begin(), cs.end());
    }
  }
  ParamSet<double> ps;
  init_params(ps, specs, seed);
  Rng rng(seed + 99);
  for (auto& [name, t] : ps.all())
    if (t.rank() == 1)
      for (auto& v : t.values()) v = rng.uniform(-0.5, 0.5);
  return ps;
}

std::vector<TD> random_maps(Rng& rng, std::size_t n, Shape s) {
  std::vector<TD> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rng.uniform_tensor<double>(s, -1, 1));
  return out;
}

std::vector<Var<double>> leaves(Tape<double>& t, const std::vector<TD>& xs) {
  std::vector<Var<double>> out;
  for (auto& x : xs) out.push_back(t.leaf(x));
  return out;
}

oracle::ScalarLstm scalar_weights(const ParamSet<double>& ps, const std::string& pre) {
  oracle::ScalarLstm w;
  const char* g[] = {"i", "f", "c", "o"};
  for (int q = 0; q < 4; ++q) {
    auto vec = [](const TD& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
    w.Wf[q] = vec(ps.at(pre + "W_F" + g[q]));
    w.Wh[q] = vec(ps.at(pre + "W_H" + g[q]));
    w.b[q] = vec(ps.at(pre + "b_" + g[q]));
  }
  return w;
}

}  // namespace

TEST_CASE("aggregate averages predecessor maps") {
  Tape<double> t;
  Shape s{2, 2, 1};
  auto a = t.leaf(TD::constant(s, 1.0)), b = t.leaf(TD::constant(s, 3.0));
  CHECK(aggregate(t, {a, b}, s).value() == TD::constant(s, 2.0));
  CHECK(aggregate<double>(t, {}, s).value() == TD::zeros(s));
  Rng rng(3);
  auto xs = random_maps(rng, 3, s);
  auto m = aggregate(t, leaves(t, xs), s).value();
  for (std::size_t i = 0; i < 4; ++i) CHECK(m[i] == doctest::Approx((xs[0][i] + xs[1][i] + xs[2][i]) / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(aggregate(t, {a, t.leaf(TD::zeros({2, 2, 2}))}, s), ShapeError);
}

TEST_CASE("convlstm step examples") {
  Shape s{3, 3, 2};
  ParamSet<double> ps;
  init_params(ps, cell_param_specs(CellKind::convlstm, Direction::forward, 2), 1);
  for (auto& [_, v] : ps.all()) v.array().setZero();
  {
    Tape<double> t;
    BoundParams<double> bp(t, ps);
    auto w = bind_direction(bp, CellKind::convlstm, Direction::forward, 1);
    auto st = convlstm_step(t.leaf(TD::constant(s, 0.7)), t.leaf(TD::zeros(s)), t.leaf(TD::zeros(s)), w.cell);
    CHECK(st.C.value() == TD::zeros(s));
    CHECK(st.H.value() == TD::zeros(s));
  }
  ps.at("cell.fwd.b_f").array().setConstant(40.0);
  {
    Tape<double> t;
    BoundParams<double> bp(t, ps);
    auto w = bind_direction(bp, CellKind::convlstm, Direction::forward, 1);
    auto st = convlstm_step(t.leaf(TD::constant(s, 0.7)), t.leaf(TD::zeros(s)), t.leaf(TD::constant(s, 1.0)), w.cell);
    for (auto v : st.C.value().values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    for (auto v : st.H.value().values()) CHECK(v == doctest::Approx(0.5 * std::tanh(1.0)).epsilon(1e-12));
    CHECK(st.H.value()[0] == doctest::Approx(0.3808).epsilon(1e-4));
  }
}

TEST_CASE("convlstm with 1x1 kernels matches a per-pixel scalar LSTM") {
  const std::size_t c = 2;
  Shape s{4, 4, c};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto ps = make_params(CellKind::convlstm, 1, c, 1, seed, false);
    Rng rng(seed);
    auto F = rng.uniform_tensor<double>(s, -1, 1), Hb = rng.uniform_tensor<double>(s, -1, 1),
         Cb = rng.uniform_tensor<double>(s, -1, 1);
    Tape<double> t;
    BoundParams<double> bp(t, ps);
    auto w = bind_direction(bp, CellKind::convlstm, Direction::forward, 1);
    auto st = convlstm_step(t.leaf(F), t.leaf(Hb), t.leaf(Cb), w.cell);
    auto sw = scalar_weights(ps, "cell.fwd.");
    TD C(s), H(s);
    for (std::size_t p = 0; p < 16; ++p)
      oracle::lstm_pixel(sw, c, F.data() + p * c, Hb.data() + p * c, Cb.data() + p * c, C.data() + p * c,
                         H.data() + p * c);
    CHECK(oracle::max_rel_diff(st.C.value(), C) < 1e-12);
    CHECK(oracle::max_rel_diff(st.H.value(), H) < 1e-12);
  }
}

TEST_CASE("convgru and convrnn") {
  Shape s{4, 4, 1};
  Rng rng(8);
  auto F = rng.uniform_tensor<double>(s, -1, 1), Hb = rng.uniform_tensor<double>(s, -1, 1);
  {
    ParamSet<double> ps;
    init_params(ps, cell_param_specs(CellKind::convrnn, Direction::forward, 1), 2);
    for (auto& [_, v] : ps.all()) v.array().setZero();
    Tape<double> t;
    BoundParams<double> bp(t, ps);
    auto w = bind_direction(bp, CellKind::convrnn, Direction::forward, 1);
    CHECK(convrnn_step(t.leaf(F), t.leaf(Hb), w.cell).value() == TD::zeros(s));
  }
  {
    auto ps = make_params(CellKind::convgru, 1, 1, 3, 4, false);
    ps.at("cell.fwd.b_z").array().setConstant(-40.0);
    Tape<double> t;
    BoundParams<double> bp(t, ps);
    auto w = bind_direction(bp, CellKind::convgru, Direction::forward, 1);
    CHECK(oracle::max_rel_diff(convgru_step(t.leaf(F), t.leaf(Hb), w.cell).value(), Hb) < 1e-12);
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ps = make_params(CellKind::convgru, 1, 1, 1, seed, false);
    Tape<double> t;
    BoundParams<double> bp(t, ps);
    auto w = bind_direction(bp, CellKind::convgru, Direction::forward, 1);
    auto out = convgru_step(t.leaf(F), t.leaf(Hb), w.cell).value();
    auto v = [&](const char* n) { return ps.at(std::string("cell.fwd.") + n)[0]; };
    const double wf[3] = {v("W_Fz"), v("W_Fr"), v("W_Fh")}, wh[3] = {v("W_Hz"), v("W_Hr"), v("W_Hh")},
                 b[3] = {v("b_z"), v("b_r"), v("b_h")};
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(oracle::gru_scalar(F[i], Hb[i], wf, wh, b)).epsilon(1e-12));

    auto pr = make_params(CellKind::convrnn, 1, 1, 1, seed, false);
    Tape<double> t2;
    BoundParams<double> bp2(t2, pr);
    auto w2 = bind_direction(bp2, CellKind::convrnn, Direction::forward, 1);
    auto r = convrnn_step(t2.leaf(F), t2.leaf(Hb), w2.cell).value();
    for (std::size_t i = 0; i < r.size(); ++i)
      CHECK(r[i] == doctest::Approx(std::tanh(pr.at("cell.fwd.W_F")[0] * F[i] + pr.at("cell.fwd.W_H")[0] * Hb[i] +
                                              pr.at("cell.fwd.b")[0]))
                         .epsilon(1e-12));
  }
}

TEST_CASE("ccg prediction") {
  const std::size_t J = 3, c = 2;
  Shape s{4, 4, c};
  Rng rng(21);
  auto stack_t = rng.uniform_tensor<double>({4, 4, J * c}, -1, 1);
  auto hs = random_maps(rng, 2, s);
  CcgParams<double> p;
  {
    Tape<double> t;
    p = {t.leaf(TD::zeros({3, 3, c, c})), t.leaf(TD::zeros({3, 3, J * c, c})), t.leaf(TD::zeros({c}))};
    CHECK(ccg_predict(t, leaves(t, hs), t.leaf(stack_t), J, p, s).value() == TD::zeros(s));
    p.b_p = t.leaf(TD::constant({c}, 30.0));
    for (auto v : ccg_predict(t, leaves(t, hs), t.leaf(stack_t), J, p, s).value().values())
      CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (int n_linked : {0, 1, 2}) {
    Tape<double> t;
    auto Whp = rng.uniform_tensor<double>({3, 3, c, c}, -0.5, 0.5);
    auto Wfp = rng.uniform_tensor<double>({3, 3, J * c, c}, -0.5, 0.5);
    auto bp = rng.uniform_tensor<double>({c}, -0.5, 0.5);
    p = {t.leaf(Whp), t.leaf(Wfp), t.leaf(bp)};
    std::vector<TD> linked(hs.begin(), hs.begin() + n_linked);
    auto got = ccg_predict(t, leaves(t, linked), t.leaf(stack_t), J, p, s).value();
    // Direct form: mean of per-link convolutions.
    auto expect = oracle::conv2d(stack_t, Wfp, &bp, true);
    for (auto& h : linked) {
      auto hc = oracle::conv2d(h, Whp, nullptr, true);
      for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += hc[i] / static_cast<double>(linked.size());
    }
    for (auto& v : expect.values()) v = std::tanh(v);
    CHECK(oracle::max_rel_diff(got, expect) < 1e-12);
  }
}

TEST_CASE("ccg gate values") {
  Tape<double> t;
  Shape s{2, 2, 1};
  auto F = t.leaf(TD({2, 2, 1}, {0.3, -1.2, 2.0, 0.0}));
  CHECK(ccg_gate(tanh(F), F, 2.0).value() == TD::constant(s, 1.0));
  auto shifted = affine(tanh(F), 1.0, 1.0);
  for (auto v : ccg_gate(shifted, F, 2.0).value().values()) CHECK(v == doctest::Approx(0.60653).epsilon(1e-5));
  auto shifted2 = affine(tanh(F), 1.0, std::sqrt(2.0));
  for (auto v : ccg_gate(shifted2, F, 2.0).value().values()) CHECK(v == doctest::Approx(0.36788).epsilon(1e-5));
  CHECK_THROWS_AS(ccg_gate(F, F, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ccg_gate(F, F, -2.0), std::invalid_argument);
}

TEST_CASE("property: gate bounds and monotonicity") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    Tape<double> t;
    auto P = rng.uniform_tensor<double>({3, 3, 2}, -1, 1);
    auto Fv = rng.uniform_tensor<double>({3, 3, 2}, -3, 3);
    P[0] = std::tanh(Fv[0]);
    auto G = ccg_gate(t.leaf(P), t.leaf(Fv), 2.0).value();
    CHECK(G[0] == 1.0);
    for (std::size_t i = 0; i < G.size(); ++i) {
      CHECK(G[i] > 0.0);
      CHECK(G[i] <= 1.0);
      if (P[i] != std::tanh(Fv[i])) CHECK(G[i] < 1.0);
    }
    const std::size_t i = 1 + rng.index(G.size() - 1);
    const double d = P[i] - std::tanh(Fv[i]);
    auto P2 = P;
    P2[i] += (d >= 0 ? 1.0 : -1.0) * rng.uniform(0.01, 0.5);
    auto G2 = ccg_gate(t.leaf(P2), t.leaf(Fv), 2.0).value();
    CHECK(G2[i] < G[i]);
  }
}

TEST_CASE("gated update endpoints") {
  Shape s{3, 3, 2};
  auto ps = make_params(CellKind::convlstm, 1, 2, 3, 12, false);
  Rng rng(12);
  auto F = rng.uniform_tensor<double>(s, -1, 1), Hb = rng.uniform_tensor<double>(s, -1, 1),
       Cb = rng.uniform_tensor<double>(s, -1, 1);
  Tape<double> t;
  BoundParams<double> bp(t, ps);
  auto w = bind_direction(bp, CellKind::convlstm, Direction::forward, 1).cell;
  auto f = t.leaf(F), h = t.leaf(Hb), cb = t.leaf(Cb);
  auto a = detail::gate_preacts(f, h, w, 4);
  auto ic = (sigmoid(a[0]) * tanh(a[2])).value();
  auto fc = (sigmoid(a[1]) * cb).value();
  auto one = convlstm_step_gated(f, h, cb, w, t.leaf(TD::constant(s, 1.0)));
  auto zero = convlstm_step_gated(f, h, cb, w, t.leaf(TD::zeros(s)));
  auto half = convlstm_step_gated(f, h, cb, w, t.leaf(TD::constant(s, 0.5)));
  CHECK(one.C.value() == ic);
  CHECK(zero.C.value() == fc);
  for (std::size_t i = 0; i < ic.size(); ++i) CHECK(half.C.value()[i] == doctest::Approx(0.5 * fc[i] + 0.5 * ic[i]));
  CHECK_THROWS_AS(convlstm_step_gated(f, h, cb, w, t.leaf(TD::zeros({3, 3, 1}))), ShapeError);
}

TEST_CASE("run_direction on a chain equals a sequential ConvLSTM") {
  const std::size_t J = 6, c = 2;
  Shape s{4, 4, c};
  SkeletonGraph g;
  for (std::size_t j = 0; j < J; ++j) g.names.push_back("n" + std::to_string(j));
  for (std::size_t j = 1; j < J; ++j) g.edges.push_back({j - 1, j, EdgeKind::physical});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ps = make_params(CellKind::convlstm, J, c, 3, seed, false);
    Rng rng(seed);
    auto xs = random_maps(rng, J, s);
    Tape<double> t;
    BoundParams<double> bp(t, ps);
    auto dp = bind_direction(bp, CellKind::convlstm, Direction::forward, J);
    auto r = run_direction(t, pass_order(g, Direction::forward), leaves(t, xs), dp);

    // Sequential reference with direct convolutions.
    auto conv = [&](const TD& x, const std::string& n) { return oracle::conv2d(x, ps.at("cell.fwd." + n), nullptr, true); };
    TD H = TD::zeros(s), C = TD::zeros(s);
    for (std::size_t j = 0; j < J; ++j) {
      TD pre[4];
      const char* gs[] = {"i", "f", "c", "o"};
      for (int q = 0; q < 4; ++q) {
        auto a = conv(xs[j], std::string("W_F") + gs[q]), b = conv(H, std::string("W_H") + gs[q]);
        const auto& bias = ps.at(std::string("cell.fwd.b_") + gs[q]);
        pre[q] = TD(s);
        for (std::size_t i = 0; i < a.size(); ++i) pre[q][i] = a[i] + b[i] + bias[i % c];
      }
      for (std::size_t i = 0; i < C.size(); ++i) {
        C[i] = oracle::sigmoid(pre[1][i]) * C[i] + oracle::sigmoid(pre[0][i]) * std::tanh(pre[2][i]);
        H[i] = oracle::sigmoid(pre[3][i]) * std::tanh(C[i]);
      }
      CHECK(oracle::max_rel_diff(r.H[j].value(), H) < 1e-6);
      CHECK(oracle::max_rel_diff(r.C[j].value(), C) < 1e-6);
    }
  }
}

TEST_CASE("run_direction context rules") {
  const std::size_t c = 2;
  Shape s{4, 4, c};
  auto ps = make_params(CellKind::convlstm, 16, c, 3, 5, false);
  Rng rng(5);
  {
    SkeletonGraph one{{"solo"}, 0, {}};
    auto x = rng.uniform_tensor<double>(s, -1, 1);
    Tape<double> t;
    BoundParams<double> bp(t, ps);
    auto dp = bind_direction(bp, CellKind::convlstm, Direction::forward, 1);
    auto r = run_direction(t, pass_order(one, Direction::forward), {t.leaf(x)}, dp);
    auto ref = convlstm_step(t.leaf(x), t.leaf(TD::zeros(s)), t.leaf(TD::zeros(s)), dp.cell);
    CHECK(r.H[0].value() == ref.H.value());
  }
  auto g = shipped_graph("body16");
  auto po = pass_order(g, Direction::forward);
  std::size_t merge = 0;
  while (po.preds[merge].size() < 2) ++merge;
  auto xs = random_maps(rng, 16, s);
  Tape<double> t;
  BoundParams<double> bp(t, ps);
  auto dp = bind_direction(bp, CellKind::convlstm, Direction::forward, 16);
  auto in = leaves(t, xs);
  auto r = run_direction(t, po, in, dp);
  const auto a = po.preds[merge][0], b = po.preds[merge][1];
  TD hbar(s), cbar(s);
  for (std::size_t i = 0; i < hbar.size(); ++i) {
    hbar[i] = 0.5 * (r.H[a].value()[i] + r.H[b].value()[i]);
    cbar[i] = 0.5 * (r.C[a].value()[i] + r.C[b].value()[i]);
  }
  auto ref = convlstm_step(in[merge], t.leaf(hbar), t.leaf(cbar), dp.cell);
  CHECK(r.H[merge].value() == ref.H.value());
  CHECK_THROWS_AS(run_direction(t, po, std::vector<Var<double>>(in.begin(), in.end() - 1), dp), std::invalid_argument);
}

TEST_CASE("run_bidirectional composition") {
  const std::size_t J = 5, c = 2;
  Shape s{4, 4, c};
  auto g = shipped_graph("toy5");
  Rng rng(9);
  auto xs = random_maps(rng, J, s);
  for (auto kind : {CellKind::convlstm, CellKind::convlstm_ccg, CellKind::convgru, CellKind::convrnn}) {
    auto ps = make_params(kind, J, c, 3, 31, true);
    Tape<double> t;
    BoundParams<double> bp(t, ps);
    auto in = leaves(t, xs);
    auto stack = concat_last(in);
    auto fwd = bind_direction(bp, kind, Direction::forward, J), bwd = bind_direction(bp, kind, Direction::backward, J);
    auto r = run_bidirectional(t, g, in, fwd, bwd, stack, 2.0);
    auto f = run_direction(t, pass_order(g, Direction::forward), in, fwd, stack, 2.0);
    auto b = run_direction(t, pass_order(g, Direction::backward), in, bwd, stack, 2.0);
    for (std::size_t j = 0; j < J; ++j) {
      TD sum(s);
      sum.array() = f.H[j].value().array() + b.H[j].value().array();
      CHECK(r.out[j].value() == sum);
    }
  }
  // Zero backward weights leave only the forward hidden states.
  auto ps = make_params(CellKind::convlstm, J, c, 3, 32, true);
  for (auto& [name, v] : ps.all())
    if (name.rfind("cell.bwd.", 0) == 0) v.array().setZero();
  Tape<double> t;
  BoundParams<double> bp(t, ps);
  auto in = leaves(t, xs);
  auto r = run_bidirectional(t, g, in, bind_direction(bp, CellKind::convlstm, Direction::forward, J),
                             bind_direction(bp, CellKind::convlstm, Direction::backward, J));
  for (std::size_t j = 0; j < J; ++j) CHECK(r.out[j].value() == r.fwd.H[j].value());
}

TEST_CASE("property: relabeling joints permutes outputs exactly") {
  const std::size_t J = 5, c = 2;
  Shape s{4, 4, c};
  auto g = shipped_graph("toy5");
  Rng rng(40);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> perm(J);
    for (std::size_t i = 0; i < J; ++i) perm[i] = i;
    for (std::size_t i = J; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    auto ps = make_params(CellKind::convlstm_ccg, J, c, 3, 50 + trial, true);
    auto xs = random_maps(rng, J, s);

    // Permuted parameters: unit j -> perm[j], and W_Fp input groups permuted alike.
    ParamSet<double> pp;
    for (auto& [name, v] : ps.all()) {
      if (name.rfind("ccg.", 0) != 0) {
        pp.set(name, v);
        continue;
      }
      const auto u = name.find(".unit") + 5, dot = name.find('.', u);
      const std::size_t j = std::stoul(name.substr(u, dot - u));
      const std::string nn = name.substr(0, u) + std::to_string(perm[j]) + name.substr(dot);
      TD nv = v;
      if (name.ends_with("W_Fp")) {
        for (std::size_t tap = 0; tap < 9; ++tap)
          for (std::size_t k = 0; k < J; ++k)
            for (std::size_t ch = 0; ch < c; ++ch)
              for (std::size_t o = 0; o < c; ++o)
                nv[((tap * J * c) + perm[k] * c + ch) * c + o] = v[((tap * J * c) + k * c + ch) * c + o];
      }
      pp.set(nn, nv);
    }
    std::vector<TD> pxs(J);
    for (std::size_t j = 0; j < J; ++j) pxs[perm[j]] = xs[j];
    auto pg = relabel(g, perm);

    auto run = [&](const ParamSet<double>& params, const SkeletonGraph& graph, const std::vector<TD>& inputs) {
      Tape<double> t;
      BoundParams<double> bp(t, params);
      auto in = leaves(t, inputs);
      auto r = run_bidirectional(t, graph, in, bind_direction(bp, CellKind::convlstm_ccg, Direction::forward, J),
                                 bind_direction(bp, CellKind::convlstm_ccg, Direction::backward, J),
                                 concat_last(in), 2.0);
      std::vector<TD> out;
      for (auto& v : r.out) out.push_back(v.value());
      return out;
    };
    auto a = run(ps, g, xs), b = run(pp, pg, pxs);
    for (std::size_t j = 0; j < J; ++j) CHECK(a[j] == b[perm[j]]);
  }
}

TEST_CASE("gradients through the bidirectional CCG recurrence match finite differences") {
  const std::size_t J = 5, c = 2;
  Shape s{4, 4, c};
  auto g = shipped_graph("toy5");
  auto ps = make_params(CellKind::convlstm_ccg, J, c, 3, 60, true);
  Rng rng(60);
  auto xs = random_maps(rng, J, s);
  std::vector<std::string> names;
  std::vector<TD> params;
  for (auto& [n, v] : ps.all()) {
    names.push_back(n);
    params.push_back(v);
  }
  for (auto& x : xs) params.push_back(x);
  auto target = rng.uniform_tensor<double>(s, -1, 1);
  ScalarFn<double> fn = [&](Tape<double>& t, const std::vector<Var<double>>& v) {
    std::map<std::string, Var<double>> m;
    for (std::size_t i = 0; i < names.size(); ++i) m[names[i]] = v[i];
    std::vector<Var<double>> in(v.begin() + static_cast<std::ptrdiff_t>(names.size()), v.end());
    auto get = [&](Direction d) {
      DirectionParams<double> dp;
      const std::string pre = std::string("cell.") + (d == Direction::forward ? "fwd." : "bwd.");
      std::vector<Var<double>> wf, wh, b;
      for (const char* q : {"i", "f", "c", "o"}) {
        wf.push_back(m.at(pre + "W_F" + q));
        wh.push_back(m.at(pre + "W_H" + q));
        b.push_back(m.at(pre + "b_" + q));
      }
      dp.cell = {CellKind::convlstm_ccg, concat_last(wf), concat_last(wh), concat_last(b), {}};
      const std::string cp = std::string("ccg.") + (d == Direction::forward ? "fwd" : "bwd") + ".unit";
      for (std::size_t j = 0; j < J; ++j) {
        const auto u = cp + std::to_string(j) + ".";
        dp.ccg.push_back({m.at(u + "W_Hp"), m.at(u + "W_Fp"), m.at(u + "b_p")});
      }
      return dp;
    };
    auto r = run_bidirectional(t, g, in, get(Direction::forward), get(Direction::backward), concat_last(in), 2.0);
    auto tgt = t.constant(target);
    Var<double> loss = mse(r.out[0], tgt);
    for (std::size_t j = 1; j < J; ++j) loss = loss + mse(r.out[j], tgt);
    return loss;
  };
  auto res = grad_check<double>(fn, params, 1e-5);
  MESSAGE("max relative error " << res.max_relative_error << " over " << res.checked << " elements");
  CHECK(res.max_relative_error <= 1e-4);
}
