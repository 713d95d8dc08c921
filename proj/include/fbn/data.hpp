#pragma once

#include "fbn/random.hpp"
#include "fbn/skeleton.hpp"
#include "fbn/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fbn {

using Vec3 = Eigen::Vector3d;
using Pose3D = std::vector<Vec3>;
using Point2 = std::array<double, 2>;  // {x (column), y (row)}

// World frame: x right, y up, z away from the camera.
struct Bone {
  std::size_t parent = 0, child = 0;
  Vec3 rest_dir = Vec3::UnitY();
  double length = 1.0;
  double swing_in = 0.0;   // max |angle| about the camera axis, radians
  double swing_out = 0.0;  // max |angle| about the x axis
  std::array<float, 3> shade{1, 1, 1};
};

// Bones listed parent-before-child; every non-root joint is the child of exactly one bone.
struct Rig {
  std::size_t joints = 0;
  std::size_t root = 0;
  std::vector<Bone> bones;
  double yaw = 0.0;   // max |global rotation| about y
  double roll = 0.0;  // max |global rotation| about z

  // Longest root-to-joint path length.
  double reach() const;
  // Throws std::invalid_argument for non-positive lengths, negative ranges or a broken tree.
  void validate() const;
};

// Rest pose and angle ranges for the shipped skeletons (matched by joint names);
// any other graph gets a fanned-out generic rig over its physical edges.
Rig default_rig(const SkeletonGraph& g);

// Joint positions with the root at the origin. Zero ranges give the rest pose.
Pose3D sample_pose(std::uint64_t seed, const Rig& rig, double angle_scale = 1.0);

struct View {
  std::vector<Point2> px;      // image pixel coordinates, integer = pixel centre
  std::vector<double> depth;   // root-relative, divided by the rig reach
};

// Orthographic projection scaled so the rig reach spans `fill` of half the frame,
// centred on the pose's bounding box. Depth unit in pixels: fill * size / 2.
View project(const Pose3D& pose, const Rig& rig, std::size_t size, double fill);

enum class Background { flat, noise };

struct RenderOptions {
  double thickness = 2.0;  // limb width in pixels
  Background background = Background::noise;
  float level = 0.35f;      // background grey
  float noise = 0.15f;      // noise amplitude around `level`
};

// Values are multiples of 1/255 so the image survives an 8-bit round trip.
Tensor<float> render(const View& view, const Rig& rig, std::size_t size, const RenderOptions& opt,
                     std::uint64_t noise_seed);

float quantize8(float v);

struct PoseSample {
  std::size_t id = 0;
  Tensor<float> image;             // [size, size, 3]
  std::vector<Point2> joints2d;    // image pixels
  std::vector<Point2> joints_hm;   // heatmap pixels
  std::vector<double> depth;       // root-relative, normalized; root is 0
  std::vector<bool> visible;

  friend bool operator==(const PoseSample&, const PoseSample&) = default;
};

// Pixel -> heatmap coordinate for a heatmap `scale` = heatmap size / image size.
inline double to_heatmap(double p, double scale) { return (p + 0.5) * scale - 0.5; }
inline double from_heatmap(double h, double scale) { return (h + 0.5) / scale - 0.5; }

// Nearest integer pixel, halves rounding up.
inline long nearest_pixel(double v) { return static_cast<long>(std::floor(v + 0.5)); }

// J Gaussian maps [h, w, J] peaked (value 1) at each joint's nearest pixel;
// invisible or off-grid joints give zero maps.
template <typename T>
Tensor<T> make_heatmap_gt(const std::vector<Point2>& joints_hm, const std::vector<bool>& visible, double sigma,
                          std::size_t h, std::size_t w);

struct AugmentParams {
  double shift = 8.0;  // max |translation| per axis, pixels
  double scale_lo = 0.85, scale_hi = 1.15;
  double rotation = 30.0;  // max |angle|, degrees

  void validate() const;
};

// p' = centre + scale * R(angle) (p - centre) + shift
struct Transform2D {
  double dx = 0, dy = 0, scale = 1, angle = 0;  // angle in radians
};

Transform2D draw_transform(Rng& rng, const AugmentParams& params);

// Warps the image (bilinear; outside the source, the mean border colour), maps joints, scales depth and clears
// visibility of joints that leave the frame.
PoseSample apply_transform(const PoseSample& s, const Transform2D& t, double heatmap_scale);
PoseSample augment(const PoseSample& s, Rng& rng, const AugmentParams& params, double heatmap_scale);

struct DataConfig {
  std::string graph = "body16";  // shipped name or path
  std::size_t count = 8;
  std::size_t image_size = 64;
  std::size_t heatmap_size = 16;
  std::uint64_t seed = 1;
  double fill = 0.95;
  double angle_scale = 1.0;
  RenderOptions render;
  bool augment = false;
  AugmentParams aug;

  double heatmap_scale() const { return static_cast<double>(heatmap_size) / static_cast<double>(image_size); }
  double depth_unit_px() const { return fill * static_cast<double>(image_size) / 2.0; }
  void validate() const;
};

SkeletonGraph resolve_data_graph(const std::string& graph);

// Sample i is a pure function of (config, i), whatever the worker count.
PoseSample make_sample(const DataConfig& cfg, const Rig& rig, std::size_t i);

struct Dataset {
  DataConfig config;
  SkeletonGraph graph;
  std::vector<PoseSample> samples;

  std::size_t joints() const { return graph.joint_count(); }
};

Dataset generate_dataset(const DataConfig& cfg, unsigned workers = 1);

// Directory layout: meta, skeleton.graph, samples/NNNNNN.ppm, annotations.jsonl.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void write_ppm(const Tensor<float>& image, const std::filesystem::path& path);
Tensor<float> read_ppm(const std::filesystem::path& path);
// Single-channel map, values clamped to [0, 1].
void write_pgm(const Tensor<float>& map, const std::filesystem::path& path);
Tensor<float> read_pgm(const std::filesystem::path& path);

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fbn
