#include <doctest.h>

#include "fbn/autodiff.hpp"
#include "fbn/grad_check.hpp"
#include "fbn/random.hpp"
#include "oracles.hpp"

#include <string>

using namespace fbn;
using T2 = Tensor<double>;

namespace {

T2 map2(std::initializer_list<double> v, std::size_t h, std::size_t w) { return T2({h, w, 1}, v); }

// Random values with magnitude in [0.2, 1.2] so no gradient sits at a kink or near zero.
T2 away_from_zero(Rng& rng, Shape s) {
  T2 t(std::move(s));
  for (auto& v : t.values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.2);
  return t;
}

// Reduces an op output to a scalar with fixed random weights so every output element matters.
Var<double> weighted_sum(Tape<double>& tape, Var<double> y, std::uint64_t seed) {
  Rng rng(seed);
  auto w = tape.constant(rng.uniform_tensor<double>(y.shape(), 0.5, 1.5));
  return sum(y * w);
}

}  // namespace

TEST_CASE("conv2d examples") {
  Tape<double> tape;
  auto x = tape.constant(map2({1, 2, 3, 4}, 2, 2));

  SUBCASE("1x1 kernel scales") {
    auto y = conv2d(x, tape.constant(T2({1, 1, 1, 1}, {2.0})));
    CHECK(y.value() == map2({2, 4, 6, 8}, 2, 2));
  }
  SUBCASE("3x3 ones, same padding, matches windowed-sum oracle") {
    T2 k = T2::constant({3, 3, 1, 1}, 1.0);
    auto y = conv2d(x, tape.constant(k));
    auto expected = oracle::conv2d(x.value(), k, nullptr, true);
    CHECK(expected == map2({10, 10, 10, 10}, 2, 2));
    CHECK(y.value() == expected);
  }
  SUBCASE("zero kernel gives constant bias map") {
    auto b = tape.constant(T2({2}, {0.25, -3.0}));
    auto y = conv2d(x, tape.constant(T2({3, 3, 1, 2})), b);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(y.value()[2 * i] == 0.25);
      CHECK(y.value()[2 * i + 1] == -3.0);
    }
  }
}

TEST_CASE("conv2d rejects mismatched channels naming both shapes") {
  Tape<double> tape;
  auto x = tape.constant(T2({4, 4, 3}));
  auto k = tape.constant(T2({3, 3, 2, 5}));
  try {
    conv2d(x, k);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[4,4,3]") != std::string::npos);
    CHECK(msg.find("[3,3,2,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(x, tape.constant(T2({2, 2, 3, 1}))), ShapeError);  // even kernel, same padding
}

TEST_CASE("conv2d agrees with the direct-summation oracle on random inputs") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t h = 3 + rng.index(4), w = 3 + rng.index(4), ci = 1 + rng.index(3), co = 1 + rng.index(3);
    auto xin = rng.uniform_tensor<double>({h, w, ci}, -1, 1);
    auto k = rng.uniform_tensor<double>({3, 3, ci, co}, -1, 1);
    auto b = rng.uniform_tensor<double>({co}, -1, 1);
    Tape<double> tape;
    for (bool same : {true, false}) {
      auto y = conv2d(tape.constant(xin), tape.constant(k), tape.constant(b), same ? Padding::same : Padding::valid);
      CHECK(oracle::max_rel_diff(y.value(), oracle::conv2d(xin, k, &b, same)) < 1e-12);
    }
  }
}

TEST_CASE("grouped conv equals plain conv up to summation order") {
  Rng rng(9);
  auto xin = rng.uniform_tensor<double>({5, 4, 6}, -1, 1);
  auto k = rng.uniform_tensor<double>({3, 3, 6, 2}, -1, 1);
  Tape<double> tape;
  auto plain = conv2d(tape.constant(xin), tape.constant(k));
  auto grouped = conv2d(tape.constant(xin), tape.constant(k), Padding::same, 3);
  CHECK(oracle::max_rel_diff(plain.value(), grouped.value()) < 1e-12);
}

TEST_CASE("valid conv commutes with a 180-degree flip for point-symmetric kernels") {
  Rng rng(21);
  auto flip = [](const T2& m) {
    T2 out(m.shape());
    const auto h = m.dim(0), w = m.dim(1), c = m.dim(2);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) out.at(h - 1 - y, w - 1 - x, ch) = m.at(y, x, ch);
    return out;
  };
  for (int trial = 0; trial < 20; ++trial) {
    auto xin = rng.uniform_tensor<double>({6, 5, 1}, -1, 1);
    T2 k({3, 3, 1, 1});
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        if (k[(2 - ky) * 3 + (2 - kx)] != 0.0) continue;
        const double v = rng.uniform(-1, 1);
        k[ky * 3 + kx] = v;
        k[(2 - ky) * 3 + (2 - kx)] = v;
      }
    Tape<double> tape;
    auto kv = tape.constant(k);
    auto a = conv2d(tape.constant(flip(xin)), kv, Padding::valid);
    auto b = conv2d(tape.constant(xin), kv, Padding::valid);
    CHECK(oracle::max_rel_diff(a.value(), flip(b.value())) < 1e-12);
  }
}

TEST_CASE("elementwise examples") {
  Tape<double> tape;
  auto z = tape.constant(T2({1}, {0.0}));
  CHECK(sigmoid(z).value()[0] == 0.5);
  CHECK(fbn::tanh(z).value()[0] == 0.0);
  auto p = tape.constant(T2({1, 2}, {1, 2})) * tape.constant(T2({1, 2}, {3, 4}));
  CHECK(p.value() == T2({1, 2}, {3, 8}));
  CHECK_THROWS_AS(tape.constant(T2({1, 2})) * tape.constant(T2({2, 1})), ShapeError);
  CHECK_THROWS_AS(tape.constant(T2({2, 2})) + tape.constant(T2({4})), ShapeError);
}

TEST_CASE("backward examples") {
  Tape<double> tape;
  auto x = tape.leaf(T2({2, 3, 1}, {1, 2, 3, 4, 5, 6}));
  tape.backward(sum(x));
  CHECK(tape.grad(x) == T2::constant({2, 3, 1}, 1.0));

  Tape<double> t2;
  auto v = t2.leaf(T2({1, 2}, {1, 2}));
  auto loss = sum(v * v);
  t2.backward(loss);
  CHECK(t2.grad(v) == T2({1, 2}, {2, 4}));

  SUBCASE("repeated calls accumulate") {
    t2.backward(loss);
    CHECK(t2.grad(v) == T2({1, 2}, {4, 8}));
    t2.zero_grad();
    CHECK(t2.grad(v) == T2({1, 2}));
  }
  SUBCASE("non-scalar loss is rejected") { CHECK_THROWS_AS(t2.backward(v * v), ShapeError); }
}

TEST_CASE("unused tensors get exactly zero gradient") {
  Tape<double> tape;
  auto a = tape.leaf(T2({2}, {1, 2}));
  auto unused = tape.leaf(T2({3}, {7, 8, 9}));
  auto dead_branch = fbn::exp(unused);
  (void)dead_branch;
  tape.backward(sum(square(a)));
  CHECK(tape.grad(unused) == T2({3}));
}

TEST_CASE("backward visits ops in reverse execution order") {
  Tape<double> tape;
  auto a = tape.leaf(T2({2}, {0.3, -0.4}));
  auto b = fbn::tanh(a);
  auto c = b * a;
  auto d = sigmoid(c) + b;
  auto loss = sum(d);
  tape.backward(loss);
  const auto& order = tape.last_backward_order();
  REQUIRE(!order.empty());
  CHECK(order.front() == loss.id);
  for (std::size_t i = 1; i < order.size(); ++i) CHECK(order[i] < order[i - 1]);
  CHECK(order.back() == b.id);
}

TEST_CASE("grad_check examples") {
  SUBCASE("linear function") {
    ScalarFn<double> fn = [](Tape<double>& t, const std::vector<Var<double>>& p) {
      return sum(p[0] * t.constant(T2({3}, {1.5, -2.0, 0.25})));
    };
    auto r = grad_check(fn, {T2({3}, {0.1, 0.2, 0.3})}, 1e-5);
    CHECK(r.max_relative_error <= 1e-10);
    CHECK(r.checked == 3);
  }
  SUBCASE("sum of squares") {
    Rng rng(3);
    ScalarFn<double> fn = [](Tape<double>&, const std::vector<Var<double>>& p) { return sum(square(p[0])); };
    auto r = grad_check(fn, {away_from_zero(rng, {4, 4})}, 1e-5);
    CHECK(r.max_relative_error <= 1e-7);
  }
  SUBCASE("gaussian consistency gate") {
    Rng rng(4);
    ScalarFn<double> fn = [](Tape<double>& t, const std::vector<Var<double>>& p) {
      auto g = fbn::exp(affine(square(p[0] - fbn::tanh(p[1])), -1.0 / 2.0));
      return weighted_sum(t, g, 77);
    };
    auto r = grad_check(fn, {rng.uniform_tensor<double>({3, 3, 2}, -1, 1), rng.uniform_tensor<double>({3, 3, 2}, -2, 2)},
                        1e-5);
    CHECK(r.max_relative_error <= 1e-4);
  }
  SUBCASE("non-finite values name the offending parameter") {
    ScalarFn<double> fn = [](Tape<double>&, const std::vector<Var<double>>& p) { return sum(fbn::exp(p[1])); };
    try {
      grad_check(fn, {T2({1}, {0.0}), T2({2}, {0.0, 709.78271})}, 1e-5);
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(e.param() == 1);
    }
    CHECK_THROWS_AS(grad_check(fn, {T2({1}), T2({1})}, 0.0), std::invalid_argument);
  }
}

TEST_CASE("every primitive matches central differences (100 seeds)") {
  using Op = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    Op op;
  };
  const std::vector<Case> cases = {
      {"add", {{3, 3}, {3, 3}}, [](auto&, auto& p) { return p[0] + p[1]; }},
      {"sub", {{3, 3}, {3, 3}}, [](auto&, auto& p) { return p[0] - p[1]; }},
      {"mul", {{3, 3}, {3, 3}}, [](auto&, auto& p) { return p[0] * p[1]; }},
      {"sigmoid", {{3, 3}}, [](auto&, auto& p) { return sigmoid(p[0]); }},
      {"tanh", {{3, 3}}, [](auto&, auto& p) { return fbn::tanh(p[0]); }},
      {"exp", {{3, 3}}, [](auto&, auto& p) { return fbn::exp(p[0]); }},
      {"square", {{3, 3}}, [](auto&, auto& p) { return square(p[0]); }},
      {"relu", {{3, 3}}, [](auto&, auto& p) { return relu(p[0]); }},
      {"affine", {{3, 3}}, [](auto&, auto& p) { return affine(p[0], -0.7, 0.3); }},
      {"add_bias", {{3, 3, 2}, {2}}, [](auto&, auto& p) { return add_bias(p[0], p[1]); }},
      {"mse", {{3, 3}, {3, 3}}, [](auto&, auto& p) { return mse(p[0], p[1]); }},
      {"mean", {{3, 3}}, [](auto&, auto& p) { return mean(p[0]); }},
      {"invariant_sum", {{3, 3}, {3, 3}, {3, 3}, {3, 3}},
       [](auto&, auto& p) { return invariant_sum(std::vector<Var<double>>(p.begin(), p.end())); }},
      {"mean_of", {{3, 3}, {3, 3}, {3, 3}},
       [](auto& t, auto& p) { return mean_of(t, std::vector<Var<double>>(p.begin(), p.end()), Shape{3, 3}); }},
      {"slice_last", {{3, 3, 3}}, [](auto&, auto& p) { return slice_last(p[0], 1, 2); }},
      {"concat_last", {{3, 3, 1}, {3, 3, 2}}, [](auto&, auto& p) { return concat_last<double>({p[0], p[1]}); }},
      {"reshape", {{3, 3}}, [](auto&, auto& p) { return reshape(p[0], {9, 1}); }},
      {"matmul", {{3, 3}, {3, 3}}, [](auto&, auto& p) { return matmul(p[0], p[1]); }},
      {"conv2d_same", {{3, 3, 2}, {3, 3, 2, 2}, {2}}, [](auto&, auto& p) { return conv2d(p[0], p[1], p[2]); }},
      {"conv2d_valid", {{3, 3, 2}, {3, 3, 2, 2}}, [](auto&, auto& p) {
         return conv2d(p[0], p[1], Padding::valid);
       }},
      {"conv2d_grouped", {{3, 3, 4}, {3, 3, 4, 2}}, [](auto&, auto& p) {
         return conv2d(p[0], p[1], Padding::same, 2);
       }},
      {"slice_kernel_in", {{3, 3, 3, 2}}, [](auto&, auto& p) { return slice_kernel_in(p[0], 1, 2); }},
      {"avg_pool", {{4, 4, 2}}, [](auto&, auto& p) { return avg_pool(p[0], 2); }},
      {"max_pool", {{4, 4, 2}}, [](auto&, auto& p) { return max_pool(p[0], 2); }},
      {"upsample", {{3, 3, 1}}, [](auto&, auto& p) { return upsample_nearest(p[0], 2); }},
  };
  for (const auto& c : cases) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed * 7919 + 1);
      std::vector<T2> params;
      for (const auto& s : c.shapes) params.push_back(away_from_zero(rng, s));
      ScalarFn<double> fn = [&](Tape<double>& t, const std::vector<Var<double>>& p) {
        return weighted_sum(t, c.op(t, p), seed);
      };
      worst = std::max(worst, grad_check(fn, params, 1e-5).max_relative_error);
    }
    INFO(c.name);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("forward results are bit-identical across runs") {
  auto run = [] {
    Rng rng(42);
    Tape<float> tape;
    auto x = tape.constant(rng.uniform_tensor<float>({8, 8, 4}, -1, 1));
    auto k = tape.constant(rng.uniform_tensor<float>({3, 3, 4, 4}, -1, 1));
    auto y = fbn::tanh(conv2d(max_pool(relu(conv2d(x, k)), 2), k, Padding::same, 2));
    return y.value();
  };
  CHECK(run() == run());
}
