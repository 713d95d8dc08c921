#include "fbn/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace fbn {

namespace {

void check_pair(const Pose3& pred, const Pose3& gt, std::size_t root) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("metrics: " + std::to_string(pred.size()) + " predicted joints vs " +
                                std::to_string(gt.size()) + " ground-truth joints");
  if (root >= gt.size()) throw std::invalid_argument("metrics: root index out of range");
}

void check_threshold(double t) {
  if (!(t > 0)) throw std::invalid_argument("metrics: threshold must be positive");
}

double ref_length(const Pose3& gt, std::pair<std::size_t, std::size_t> ref) {
  if (ref.first >= gt.size() || ref.second >= gt.size()) throw std::invalid_argument("pckf: reference joint out of range");
  const auto& a = gt[ref.first];
  const auto& b = gt[ref.second];
  const double len = std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
  if (!(len > 0)) throw std::invalid_argument("pckf: zero reference length");
  return len;
}

}  // namespace

std::vector<double> aligned_errors(const Pose3& pred, const Pose3& gt, std::size_t root) {
  check_pair(pred, gt, root);
  std::vector<double> out(gt.size());
  for (std::size_t j = 0; j < gt.size(); ++j) {
    double s = 0;
    for (int k = 0; k < 3; ++k) {
      const double d = (pred[j][k] - pred[root][k]) - (gt[j][k] - gt[root][k]);
      s += d * d;
    }
    out[j] = std::sqrt(s);
  }
  return out;
}

double pck_from_errors(const std::vector<double>& errors, double threshold, const std::vector<bool>& mask) {
  check_threshold(threshold);
  if (!mask.empty() && mask.size() != errors.size()) throw std::invalid_argument("pck: mask size mismatch");
  std::size_t n = 0, hit = 0;
  for (std::size_t j = 0; j < errors.size(); ++j) {
    if (!mask.empty() && !mask[j]) continue;
    ++n;
    hit += errors[j] <= threshold;
  }
  if (n == 0) throw std::invalid_argument("pck: no joints to score");
  return static_cast<double>(hit) / static_cast<double>(n);
}

double pck(const Pose3& pred, const Pose3& gt, std::size_t root, double threshold, const std::vector<bool>& visible) {
  return pck_from_errors(aligned_errors(pred, gt, root), threshold, visible);
}

double pckf(const Pose3& pred, const Pose3& gt, std::size_t root, std::pair<std::size_t, std::size_t> ref,
            double threshold, const std::vector<bool>& visible) {
  auto e = aligned_errors(pred, gt, root);
  const double len = ref_length(gt, ref);
  for (auto& x : e) x /= len;
  return pck_from_errors(e, threshold, visible);
}

MetricsReport compute_metrics(const PoseSet& poses, std::size_t root, const std::vector<double>& thresholds,
                              std::optional<std::pair<std::size_t, std::size_t>> pckf_ref,
                              const std::vector<double>& pckf_thresholds) {
  const std::size_t n = poses.gt.size();
  if (poses.pred.size() != n || (!poses.visible.empty() && poses.visible.size() != n))
    throw std::invalid_argument("metrics: prediction, ground-truth and visibility counts differ");
  if (n == 0) throw std::invalid_argument("metrics: no samples");
  for (double t : thresholds) check_threshold(t);
  for (double t : pckf_thresholds) check_threshold(t);
  const std::size_t J = poses.gt.front().size();
  MetricsReport r;
  r.samples = n;
  r.joint_mean_error.assign(J, 0.0);
  r.joint_count.assign(J, 0);
  std::map<double, std::size_t> hits, fhits;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (poses.gt[i].size() != J) throw std::invalid_argument("metrics: samples have different joint counts");
    const auto e = aligned_errors(poses.pred[i], poses.gt[i], root);
    const double len = pckf_ref ? ref_length(poses.gt[i], *pckf_ref) : 1.0;
    for (std::size_t j = 0; j < J; ++j) {
      if (!poses.visible.empty() && !poses.visible[i].at(j)) continue;
      ++r.joints_scored;
      total += e[j];
      r.joint_mean_error[j] += e[j];
      ++r.joint_count[j];
      for (double t : thresholds) hits[t] += e[j] <= t;
      for (double t : pckf_thresholds) fhits[t] += e[j] / len <= t;
    }
  }
  if (r.joints_scored == 0) throw std::invalid_argument("metrics: no visible joints");
  const auto m = static_cast<double>(r.joints_scored);
  r.mean_error = total / m;
  for (double t : thresholds) r.pck[t] = static_cast<double>(hits[t]) / m;
  if (pckf_ref) {
    r.pckf.emplace();
    for (double t : pckf_thresholds) (*r.pckf)[t] = static_cast<double>(fhits[t]) / m;
  }
  for (std::size_t j = 0; j < J; ++j)
    if (r.joint_count[j]) r.joint_mean_error[j] /= static_cast<double>(r.joint_count[j]);
  return r;
}

}  // namespace fbn
