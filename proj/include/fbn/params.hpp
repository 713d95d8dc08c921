#pragma once

#include "fbn/autodiff.hpp"
#include "fbn/random.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fbn {

enum class Init { glorot, he, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::glorot;
};

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ull;
  return h;
}

// Named trainable tensors, iterated in name order.
template <typename T>
class ParamSet {
 public:
  void set(const std::string& name, Tensor<T> value) { values_[name] = std::move(value); }
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const Tensor<T>& at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }
  Tensor<T>& at(const std::string& name) {
    return const_cast<Tensor<T>&>(static_cast<const ParamSet&>(*this).at(name));
  }
  const std::map<std::string, Tensor<T>>& all() const { return values_; }
  std::map<std::string, Tensor<T>>& all() { return values_; }
  std::size_t size() const { return values_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (auto& [_, v] : values_) n += v.size();
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (auto& [k, v] : values_) out.set(k, v.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::map<std::string, Tensor<T>> values_;
};

// Glorot- or He-uniform kernels, constant biases. Each tensor draws from its own stream
// keyed by (seed, name), so adding or removing parameters leaves the rest unchanged.
template <typename T>
void init_params(ParamSet<T>& ps, const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  for (const auto& s : specs) {
    Tensor<T> t(s.shape);
    if (s.init == Init::ones) {
      t.array().setConstant(T(1));
    } else if (s.init == Init::glorot || s.init == Init::he) {
      std::size_t fan_in = 1, fan_out = 1;
      if (s.shape.size() == 4) {
        fan_in = s.shape[0] * s.shape[1] * s.shape[2];
        fan_out = s.shape[0] * s.shape[1] * s.shape[3];
      } else if (s.shape.size() == 2) {
        fan_in = s.shape[0];
        fan_out = s.shape[1];
      } else {
        fan_in = fan_out = s.shape.back();
      }
      const double lim = s.init == Init::he ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                            : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      Rng rng(derive_seed(seed, fnv1a(s.name)));
      for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-lim, lim));
    }
    ps.set(s.name, std::move(t));
  }
}

// Parameters recorded as leaves on one tape.
template <typename T>
class BoundParams {
 public:
  BoundParams(Tape<T>& tape, const ParamSet<T>& ps, bool requires_grad = true) : tape_(&tape) {
    for (auto& [k, v] : ps.all()) vars_.emplace(k, tape.leaf(v, requires_grad));
  }
  BoundParams(Tape<T>& tape, std::map<std::string, Var<T>> vars) : tape_(&tape), vars_(std::move(vars)) {}

  Var<T> operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  Tape<T>& tape() const { return *tape_; }
  const std::map<std::string, Var<T>>& all() const { return vars_; }

  ParamSet<T> grads() const {
    ParamSet<T> g;
    for (auto& [k, v] : vars_) g.set(k, tape_->grad(v));
    return g;
  }

 private:
  Tape<T>* tape_;
  std::map<std::string, Var<T>> vars_;
};

}  // namespace fbn
