#pragma once

#include "fbn/train.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace fbn {

// Per-joint maps of one stack, each [h, w, 1] and averaged over channels (and,
// for the gate, over both passes).
struct JointMaps {
  std::size_t joint = 0;
  Tensor<float> features, boosted;
  std::optional<Tensor<float>> gate;  // fb_plus only
};

std::vector<JointMaps> feature_maps(const NetworkConfig& cfg, const ParamSet<float>& params, const Tensor<float>& image,
                                    const std::vector<std::size_t>& joints, std::size_t stack);

Tensor<float> channel_mean(const Tensor<float>& t);

// Min-max scaled to [0, 1]; a constant map becomes 0.5 everywhere.
Tensor<float> normalize_minmax(const Tensor<float>& m);

// Writes joint_<j>_features.pgm, joint_<j>_boosted.pgm (min-max) and
// joint_<j>_gate.pgm (absolute scale, gate 1 = white). Returns the files written.
std::vector<std::filesystem::path> dump_feature_maps(const std::vector<JointMaps>& maps,
                                                     const std::filesystem::path& dir);

enum class AblationAxis { connections, cells, stacks, boosting };

std::string_view to_string(AblationAxis a);
AblationAxis parse_ablation_axis(std::string_view s);

struct AblationVariant {
  std::string name;
  RunConfig config;
};

// Rows of one axis, all derived from `base`. The cells axis runs plain feature
// boosting, since the gated variant is defined for ConvLSTM only.
std::vector<AblationVariant> ablation_variants(const RunConfig& base, AblationAxis axis);

// Seed k sets the init and shuffle seeds to base + k; data stays fixed.
RunConfig with_seed(const RunConfig& c, std::uint64_t seed);

struct AblationRow {
  std::string name;
  std::vector<double> score;  // per seed
  std::vector<MetricsReport> reports;
  double mean_score() const;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds{1};
  std::vector<double> thresholds;  // pixels; the row score is the mean PCK over these
  std::ostream* progress = nullptr;
};

std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& rows, const Dataset& train_set,
                                      const Dataset& test_set, const AblationOptions& opt);

// Columns padded to their widest cell; numeric columns right-aligned.
std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

std::string fixed(double v, int digits);

}  // namespace fbn
