#pragma once

#include "fbn/config.hpp"
#include "fbn/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace fbn {

template <typename T>
struct Targets {
  Tensor<T> image;     // [input, input, 3]
  Tensor<T> heatmaps;  // [feature, feature, J]
  Tensor<T> depth;     // [J]
};

template <typename T>
Targets<T> make_targets(const PoseSample& s, const NetworkConfig& cfg) {
  if (s.joints_hm.size() != cfg.joints)
    throw std::invalid_argument("sample has " + std::to_string(s.joints_hm.size()) + " joints, network expects " +
                                std::to_string(cfg.joints));
  Targets<T> t;
  t.image = s.image.template cast<T>();
  t.heatmaps = make_heatmap_gt<T>(s.joints_hm, s.visible, cfg.heatmap_sigma, cfg.feature_size, cfg.feature_size);
  t.depth = Tensor<T>({cfg.joints});
  for (std::size_t j = 0; j < cfg.joints; ++j) t.depth[j] = static_cast<T>(s.depth[j]);
  return t;
}

struct LossStats {
  double total = 0, heat = 0, depth = 0;
};

template <typename T>
struct SampleGradient {
  ParamSet<T> grads;
  LossStats loss;
};

template <typename T>
SampleGradient<T> sample_gradient(const NetworkConfig& cfg, const GraphVariant& g, const ParamSet<T>& params,
                                  const Targets<T>& tg) {
  Tape<T> tape;
  BoundParams<T> bp(tape, params);
  auto outs = network_forward(cfg, g, bp, tape.constant(tg.image));
  auto l = network_loss(tape, outs, tg.heatmaps, tg.depth, cfg.gamma);
  tape.backward(l.total);
  return {bp.grads(), {static_cast<double>(l.total.value()[0]), static_cast<double>(l.heat.value()[0]),
                       static_cast<double>(l.depth.value()[0])}};
}

// Last-stack prediction at heatmap resolution: {x, y, normalized depth}.
template <typename T>
Pose3 predict(const NetworkConfig& cfg, const GraphVariant& g, const ParamSet<T>& params, const Tensor<T>& image) {
  Tape<T> tape;
  BoundParams<T> bp(tape, params, false);
  auto outs = network_forward(cfg, g, bp, tape.constant(image));
  return decode_pose(outs.back().heatmaps.value(), outs.back().depth.value());
}

// Element-wise mean of same-named tensors, independent of the order of `parts`.
template <typename T>
ParamSet<T> mean_gradient(const std::vector<ParamSet<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("mean_gradient: no gradients");
  ParamSet<T> out;
  const T inv = T(1) / static_cast<T>(parts.size());
  for (const auto& [name, first] : parts.front().all()) {
    std::vector<const T*> ptrs;
    for (const auto& p : parts) {
      const auto& t = p.at(name);
      if (t.shape() != first.shape()) throw_shape_mismatch("mean_gradient", first.shape(), t.shape());
      ptrs.push_back(t.data());
    }
    Tensor<T> sum(first.shape());
    detail::order_invariant_sum<T>(ptrs, sum.size(), sum.data());
    sum.array() *= inv;
    out.set(name, std::move(sum));
  }
  return out;
}

// Scales `grads` in place so their joint L2 norm is at most `max_norm`; returns the norm before scaling.
template <typename T>
double clip_global_norm(ParamSet<T>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [name, g] : grads.all())
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& [name, g] : grads.all()) g.array() *= f;
  }
  return norm;
}

// v = momentum * v + g; p -= lr * v.
template <typename T>
void sgd_momentum_update(ParamSet<T>& params, ParamSet<T>& velocity, const ParamSet<T>& grads, double lr,
                         double momentum) {
  for (auto& [name, p] : params.all()) {
    if (!velocity.contains(name)) velocity.set(name, Tensor<T>(p.shape()));
    auto& v = velocity.at(name);
    v.array() = static_cast<T>(momentum) * v.array() + grads.at(name).array();
    p.array() -= static_cast<T>(lr) * v.array();
  }
}

struct Checkpoint {
  std::string config_text;  // canonical run config
  std::uint64_t digest = 0;
  std::uint64_t step = 0;
  ParamSet<float> params, velocity;

  RunConfig config() const;
};

// Layout: "FBN1", digest (u64), config length (u64) + text, step (u64), then two
// tables (parameters, momentum): count (u64), then per entry name length (u64),
// name, tensor. Little-endian throughout.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sample indices of one step: consecutive slices of per-epoch shuffles, so any
// step's batch is a pure function of (seed, step).
std::vector<std::size_t> batch_indices(std::uint64_t shuffle_seed, std::size_t step, std::size_t batch,
                                       std::size_t dataset_size);

class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);
  Trainer(const RunConfig& cfg, const Checkpoint& from);

  // One SGD step on the next batch; returns the batch-mean loss before the update.
  LossStats step(const Dataset& data);
  LossStats loss(const Dataset& data, const std::vector<std::size_t>& indices) const;

  std::size_t steps_done() const { return step_; }
  const ParamSet<float>& params() const { return params_; }
  const RunConfig& config() const { return cfg_; }
  const GraphVariant& graph() const { return graph_; }
  Checkpoint checkpoint() const;

 private:
  Targets<float> targets_for(const Dataset& data, std::size_t index, std::size_t slot) const;

  RunConfig cfg_;
  GraphVariant graph_;
  ParamSet<float> params_, velocity_;
  std::size_t step_ = 0;
};

// Throws unless the dataset's skeleton and sizes match the network.
void check_compatible(const NetworkConfig& cfg, const Dataset& data);

struct TrainOptions {
  std::filesystem::path out_dir;  // checkpoint.fbn, log.jsonl; empty writes nothing
  std::ostream* progress = nullptr;
  const Checkpoint* resume = nullptr;
};

struct TrainSummary {
  LossStats first, last;
  std::vector<LossStats> epochs;
  Checkpoint final;
};

TrainSummary train(const RunConfig& cfg, const Dataset& data, const TrainOptions& opt = {});

// Training data per the config: loaded from data_path or generated.
Dataset training_data(const RunConfig& cfg);

struct Evaluation {
  MetricsReport report;
  PoseSet poses;  // in input pixels, depth converted with the dataset depth unit
};

// Poses are compared in input-image pixels: heatmap coordinates are mapped back,
// normalized depth is multiplied by the dataset's depth unit.
Evaluation evaluate(const NetworkConfig& cfg, const ParamSet<float>& params, const Dataset& data,
                    const std::vector<double>& thresholds,
                    std::optional<std::pair<std::size_t, std::size_t>> pckf_ref = std::nullopt,
                    const std::vector<double>& pckf_thresholds = {});

Pose3 to_image_units(const Pose3& hm_pose, const DataConfig& d);
Pose3 ground_truth_pose(const PoseSample& s, const DataConfig& d);

}  // namespace fbn
