#pragma once

#include "fbn/autodiff.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  // Location and values of the worst element.
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t param, std::size_t index)
      : std::runtime_error("grad_check: non-finite value at parameter " + std::to_string(param) + " element " +
                           std::to_string(index)),
        param_(param),
        index_(index) {}
  std::size_t param() const { return param_; }
  std::size_t index() const { return index_; }

 private:
  std::size_t param_, index_;
};

template <typename T>
using ScalarFn = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

// Compares reverse-mode gradients of `fn` with central differences of `reference`
// (the same function evaluated in scalar type U, which may be wider than T).
// Relative error is |a - n| / max(1e-8, |a| + |n|).
template <typename T, typename U>
GradCheckResult grad_check(const ScalarFn<T>& fn, const ScalarFn<U>& reference, const std::vector<Tensor<T>>& params,
                           double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].size(); ++i)
      if (!std::isfinite(params[p][i])) throw NonFiniteError(p, i);

  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (auto& p : params) vars.push_back(tape.leaf(p));
    auto loss = fn(tape, vars);
    if (loss.value().size() != 1) throw ShapeError("grad_check: fn must return a scalar");
    if (!std::isfinite(loss.value()[0])) throw std::runtime_error("grad_check: loss is non-finite at the base point");
    tape.backward(loss);
    for (auto& v : vars) analytic.push_back(tape.grad(v));
  }

  std::vector<Tensor<U>> wide;
  for (auto& p : params) wide.push_back(p.template cast<U>());
  auto evaluate = [&] {
    Tape<U> tape;
    std::vector<Var<U>> vars;
    for (auto& p : wide) vars.push_back(tape.leaf(p, false));
    auto loss = reference(tape, vars);
    if (loss.value().size() != 1) throw ShapeError("grad_check: reference must return a scalar");
    return loss.value()[0];
  };

  GradCheckResult r;
  const U e = static_cast<U>(eps);
  for (std::size_t p = 0; p < wide.size(); ++p) {
    for (std::size_t i = 0; i < wide[p].size(); ++i) {
      const U orig = wide[p][i];
      wide[p][i] = orig + e;
      const U up = evaluate();
      wide[p][i] = orig - e;
      const U down = evaluate();
      wide[p][i] = orig;
      const double a = static_cast<double>(analytic[p][i]);
      const double n = static_cast<double>((up - down) / (U(2) * e));
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(a)) throw NonFiniteError(p, i);
      const double rel = std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n));
      ++r.checked;
      if (r.checked == 1 || rel > r.max_relative_error) r = {rel, p, i, a, n, r.checked};
    }
  }
  return r;
}

template <typename T>
GradCheckResult grad_check(const ScalarFn<T>& fn, const std::vector<Tensor<T>>& params, T eps) {
  return grad_check<T, T>(fn, fn, params, static_cast<double>(eps));
}

}  // namespace fbn
