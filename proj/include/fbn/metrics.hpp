#pragma once

#include "fbn/pose_net.hpp"

#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace fbn {

// Root-aligned Euclidean error of every joint: the predicted root is subtracted
// from the prediction and the true root from the ground truth.
std::vector<double> aligned_errors(const Pose3& pred, const Pose3& gt, std::size_t root);

// Fraction of errors <= threshold; `mask` selects joints (empty = all).
double pck_from_errors(const std::vector<double>& errors, double threshold, const std::vector<bool>& mask = {});

double pck(const Pose3& pred, const Pose3& gt, std::size_t root, double threshold, const std::vector<bool>& visible = {});

// Errors divided by the ground-truth distance between joints `ref.first` and `ref.second`.
double pckf(const Pose3& pred, const Pose3& gt, std::size_t root, std::pair<std::size_t, std::size_t> ref,
            double threshold, const std::vector<bool>& visible = {});

struct MetricsReport {
  std::map<double, double> pck;          // threshold -> fraction, pooled over visible joints
  double mean_error = 0.0;
  std::optional<std::map<double, double>> pckf;
  std::vector<double> joint_mean_error;  // per joint, over samples where it is visible
  std::vector<std::size_t> joint_count;
  std::size_t samples = 0, joints_scored = 0;
};

struct PoseSet {
  std::vector<Pose3> pred, gt;
  std::vector<std::vector<bool>> visible;
};

MetricsReport compute_metrics(const PoseSet& poses, std::size_t root, const std::vector<double>& thresholds,
                              std::optional<std::pair<std::size_t, std::size_t>> pckf_ref = std::nullopt,
                              const std::vector<double>& pckf_thresholds = {});

}  // namespace fbn
