#include "fbn/data.hpp"

#include "fbn/config.hpp"

#include <json.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

namespace fbn {

namespace {

constexpr double kPi = std::numbers::pi;

std::array<float, 3> hue_shade(double h) {
  // HSV with s = 0.75, v = 0.95.
  h = h - std::floor(h);
  const double v = 0.95, s = 0.75, c = v * s;
  const double hp = h * 6.0, x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

// Physical parent of every joint; throws unless the physical edges form a tree at the root.
std::vector<std::size_t> physical_parents(const SkeletonGraph& g) {
  const std::size_t J = g.joint_count();
  std::vector<std::size_t> parent(J, J);
  for (const auto& e : g.edges) {
    if (e.kind != EdgeKind::physical) continue;
    if (parent[e.to] != J)
      throw std::invalid_argument("rig: joint " + std::to_string(e.to) + " has two physical parents");
    parent[e.to] = e.from;
  }
  for (std::size_t j = 0; j < J; ++j)
    if (j != g.root && parent[j] == J)
      throw std::invalid_argument("rig: joint " + std::to_string(j) + " (" + g.names[j] + ") has no physical parent");
  return parent;
}

// Parent-before-child order of non-root joints.
std::vector<std::size_t> tree_order(const SkeletonGraph& g, const std::vector<std::size_t>& parent) {
  std::vector<std::size_t> order, frontier{g.root};
  while (!frontier.empty()) {
    std::vector<std::size_t> next;
    for (auto p : frontier)
      for (std::size_t j = 0; j < parent.size(); ++j)
        if (j != g.root && parent[j] == p) next.push_back(j);
    order.insert(order.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  if (order.size() + 1 != g.joint_count()) throw std::invalid_argument("rig: physical edges do not form a tree");
  return order;
}

struct BoneSpec {
  std::string child;
  Vec3 dir;
  double length, swing_in, swing_out;
};

Rig rig_from_table(const SkeletonGraph& g, const std::vector<BoneSpec>& table, double yaw, double roll) {
  const auto parent = physical_parents(g);
  Rig rig;
  rig.joints = g.joint_count();
  rig.root = g.root;
  rig.yaw = yaw;
  rig.roll = roll;
  for (auto j : tree_order(g, parent)) {
    auto it = std::find_if(table.begin(), table.end(), [&](const BoneSpec& b) { return g.names[j] == b.child; });
    Bone b;
    b.parent = parent[j];
    b.child = j;
    b.rest_dir = it->dir.normalized();
    b.length = it->length;
    b.swing_in = it->swing_in;
    b.swing_out = it->swing_out;
    b.shade = hue_shade(0.618033988749895 * static_cast<double>(j));
    rig.bones.push_back(b);
  }
  return rig;
}

bool names_cover(const SkeletonGraph& g, const std::vector<BoneSpec>& table) {
  if (table.size() + 1 != g.joint_count()) return false;
  for (const auto& b : table)
    if (std::find(g.names.begin(), g.names.end(), b.child) == g.names.end()) return false;
  return true;
}

std::vector<BoneSpec> body_table() {
  const double arm = 1.3, arm_out = 0.8, leg = 0.5, leg_out = 0.6;
  return {
      {"spine", {0, 1, 0}, 0.22, 0.25, 0.2},      {"neck", {0, 1, 0}, 0.22, 0.2, 0.2},
      {"head", {0, 1, 0}, 0.14, 0.35, 0.3},       {"l_shoulder", {1, 0, 0}, 0.17, 0.1, 0.1},
      {"l_elbow", {0, -1, 0}, 0.27, arm, arm_out}, {"l_wrist", {0, -1, 0}, 0.25, arm, arm_out},
      {"r_shoulder", {-1, 0, 0}, 0.17, 0.1, 0.1},  {"r_elbow", {0, -1, 0}, 0.27, arm, arm_out},
      {"r_wrist", {0, -1, 0}, 0.25, arm, arm_out}, {"l_hip", {1, -0.3, 0}, 0.11, 0.1, 0.1},
      {"l_knee", {0, -1, 0}, 0.40, leg, leg_out},  {"l_ankle", {0, -1, 0}, 0.38, leg, leg_out},
      {"r_hip", {-1, -0.3, 0}, 0.11, 0.1, 0.1},    {"r_knee", {0, -1, 0}, 0.40, leg, leg_out},
      {"r_ankle", {0, -1, 0}, 0.38, leg, leg_out},
  };
}

std::vector<BoneSpec> hand_table() {
  struct Finger {
    const char* name;
    Vec3 dir;
    double base, l1, l2, l3;
  };
  const Finger fingers[] = {{"thumb", {-0.8, 0.45, 0}, 0.28, 0.20, 0.16, 0.13},
                            {"index", {-0.25, 1, 0}, 0.45, 0.24, 0.15, 0.12},
                            {"middle", {0, 1, 0}, 0.45, 0.26, 0.17, 0.13},
                            {"ring", {0.22, 1, 0}, 0.43, 0.24, 0.16, 0.12},
                            {"pinky", {0.42, 0.9, 0}, 0.40, 0.19, 0.13, 0.11}};
  std::vector<BoneSpec> out;
  for (const auto& f : fingers) {
    const std::string n = f.name;
    out.push_back({n + "_mcp", f.dir, f.base, 0.12, 0.15});
    out.push_back({n + "_pip", f.dir, f.l1, 0.25, 0.9});
    out.push_back({n + "_dip", f.dir, f.l2, 0.25, 0.9});
    out.push_back({n + "_tip", f.dir, f.l3, 0.25, 0.9});
  }
  return out;
}

Rig generic_rig(const SkeletonGraph& g) {
  const auto parent = physical_parents(g);
  const auto order = tree_order(g, parent);
  const std::size_t J = g.joint_count();
  std::vector<double> angle(J, kPi / 2), level(J, 0);
  Rig rig;
  rig.joints = J;
  rig.root = g.root;
  rig.yaw = 0.5;
  rig.roll = 0.3;
  for (auto j : order) {
    const auto p = parent[j];
    std::vector<std::size_t> sib;
    for (std::size_t k = 0; k < J; ++k)
      if (k != g.root && parent[k] == p) sib.push_back(k);
    const double n = static_cast<double>(sib.size());
    const double i = static_cast<double>(std::find(sib.begin(), sib.end(), j) - sib.begin());
    angle[j] = p == g.root ? kPi / 2 + 2 * kPi * i / n : angle[p] + 0.5 * (i - (n - 1) / 2);
    level[j] = level[p] + 1;
    Bone b;
    b.parent = p;
    b.child = j;
    b.rest_dir = Vec3(std::cos(angle[j]), std::sin(angle[j]), 0);
    b.length = 1.0 / (1.0 + 0.3 * level[j]);
    b.swing_in = b.swing_out = 0.3;
    b.shade = hue_shade(0.618033988749895 * static_cast<double>(j));
    rig.bones.push_back(b);
  }
  return rig;
}

Eigen::Matrix3d rotation(double angle, const Vec3& axis) { return Eigen::AngleAxisd(angle, axis).toRotationMatrix(); }

double segment_distance(double px, double py, const Point2& a, const Point2& b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double wx = px - a[0], wy = py - a[1];
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? (wx * vx + wy * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.ppm", i);
  return buf;
}

void write_pnm(const Tensor<float>& t, std::size_t channels, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << (channels == 3 ? "P6" : "P5") << '\n' << t.dim(1) << ' ' << t.dim(0) << "\n255\n";
  std::string bytes(t.size(), '\0');
  for (std::size_t i = 0; i < t.size(); ++i)
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(t[i], 0.0f, 1.0f) * 255.0f)));
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed: " + path.string());
}

Tensor<float> read_pnm(const std::filesystem::path& path, std::size_t channels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  const std::string magic_want = channels == 3 ? "P6" : "P5";
  auto token = [&]() {
    std::string tok;
    int ch;
    while ((ch = is.get()) != EOF) {
      if (ch == '#') {
        while ((ch = is.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };
  if (token() != magic_want) throw DataError(path.string() + ": expected " + magic_want + " image");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed header");
  }
  if (w == 0 || h == 0 || maxval != 255) throw DataError(path.string() + ": unsupported size or maxval");
  std::string bytes(w * h * channels, '\0');
  if (!is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) throw DataError(path.string() + ": truncated");
  Shape shape = channels == 3 ? Shape{h, w, 3} : Shape{h, w, 1};
  Tensor<float> t(shape);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    t[i] = static_cast<float>(static_cast<unsigned char>(bytes[i])) / 255.0f;
  return t;
}

nlohmann::json points_json(const std::vector<Point2>& pts) {
  auto a = nlohmann::json::array();
  for (const auto& p : pts) a.push_back({p[0], p[1]});
  return a;
}

std::vector<Point2> points_from(const nlohmann::json& j) {
  std::vector<Point2> out;
  for (const auto& p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return out;
}

}  // namespace

double Rig::reach() const {
  std::vector<double> dist(joints, 0.0);
  double best = 0;
  for (const auto& b : bones) {
    dist[b.child] = dist[b.parent] + b.length;
    best = std::max(best, dist[b.child]);
  }
  return best;
}

void Rig::validate() const {
  if (joints == 0) {
    if (!bones.empty()) throw std::invalid_argument("rig: bones without joints");
    return;
  }
  if (root >= joints) throw std::invalid_argument("rig: root out of range");
  if (!(yaw >= 0) || !(roll >= 0)) throw std::invalid_argument("rig: angle ranges must be non-negative");
  if (bones.size() + 1 != joints)
    throw std::invalid_argument("rig: " + std::to_string(bones.size()) + " bones for " + std::to_string(joints) +
                                " joints");
  std::vector<bool> placed(joints, false);
  placed[root] = true;
  for (const auto& b : bones) {
    if (b.parent >= joints || b.child >= joints) throw std::invalid_argument("rig: bone index out of range");
    if (!placed[b.parent])
      throw std::invalid_argument("rig: bone to joint " + std::to_string(b.child) + " precedes its parent");
    if (placed[b.child]) throw std::invalid_argument("rig: joint " + std::to_string(b.child) + " placed twice");
    if (!(b.length > 0) || !std::isfinite(b.length))
      throw std::invalid_argument("rig: bone to joint " + std::to_string(b.child) + " needs a positive length");
    if (!(b.swing_in >= 0) || !(b.swing_out >= 0)) throw std::invalid_argument("rig: angle ranges must be non-negative");
    if (!(b.rest_dir.norm() > 0) || !b.rest_dir.allFinite())
      throw std::invalid_argument("rig: bone to joint " + std::to_string(b.child) + " has no direction");
    placed[b.child] = true;
  }
}

Rig default_rig(const SkeletonGraph& g) {
  Rig rig;
  if (auto t = body_table(); names_cover(g, t))
    rig = rig_from_table(g, t, 0.6, 0.2);
  else if (auto h = hand_table(); names_cover(g, h))
    rig = rig_from_table(g, h, 0.8, 0.5);
  else
    rig = generic_rig(g);
  rig.validate();
  return rig;
}

Pose3D sample_pose(std::uint64_t seed, const Rig& rig, double angle_scale) {
  rig.validate();
  if (!(angle_scale >= 0)) throw std::invalid_argument("sample_pose: angle scale must be non-negative");
  Rng rng(seed);
  auto draw = [&](double range) { return rng.uniform(-1.0, 1.0) * range * angle_scale; };
  const double yaw = draw(rig.yaw), roll = draw(rig.roll);
  const Eigen::Matrix3d global = rotation(yaw, Vec3::UnitY()) * rotation(roll, Vec3::UnitZ());
  Pose3D pose(rig.joints, Vec3::Zero());
  for (const auto& b : rig.bones) {
    const double a = draw(b.swing_in), o = draw(b.swing_out);
    Vec3 dir = global * rotation(o, Vec3::UnitX()) * rotation(a, Vec3::UnitZ()) * b.rest_dir.normalized();
    dir.normalize();
    pose[b.child] = pose[b.parent] + b.length * dir;
  }
  return pose;
}

View project(const Pose3D& pose, const Rig& rig, std::size_t size, double fill) {
  if (pose.size() != rig.joints) throw std::invalid_argument("project: pose and rig joint counts differ");
  View v;
  if (pose.empty()) return v;
  if (!(fill > 0 && fill <= 1)) throw std::invalid_argument("project: fill must be in (0, 1]");
  const double reach = rig.reach() > 0 ? rig.reach() : 1.0;
  const double ppu = fill * static_cast<double>(size) / (2.0 * reach);
  Eigen::Vector2d lo(pose[0].x(), pose[0].y()), hi = lo;
  for (const auto& p : pose) {
    lo = lo.cwiseMin(p.head<2>());
    hi = hi.cwiseMax(p.head<2>());
  }
  const Eigen::Vector2d mid = 0.5 * (lo + hi);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  for (const auto& p : pose) {
    v.px.push_back({c + ppu * (p.x() - mid.x()), c - ppu * (p.y() - mid.y())});
    v.depth.push_back((p.z() - pose[rig.root].z()) / reach);
  }
  return v;
}

float quantize8(float v) { return static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f; }

Tensor<float> render(const View& view, const Rig& rig, std::size_t size, const RenderOptions& opt,
                     std::uint64_t noise_seed) {
  if (size == 0) throw std::invalid_argument("render: size must be positive");
  Tensor<float> img({size, size, 3});
  Rng rng(noise_seed);
  for (auto& x : img.values())
    x = opt.background == Background::noise ? opt.level + opt.noise * static_cast<float>(rng.uniform(-1.0, 1.0))
                                            : opt.level;
  if (view.px.empty()) {
    for (auto& x : img.values()) x = quantize8(x);
    return img;
  }
  if (view.px.size() != rig.joints) throw std::invalid_argument("render: view and rig joint counts differ");
  // Painter's order: farthest bone first.
  std::vector<std::size_t> order(rig.bones.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto mean_z = [&](std::size_t i) { return view.depth[rig.bones[i].parent] + view.depth[rig.bones[i].child]; };
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return mean_z(a) > mean_z(b); });
  const double r = opt.thickness / 2.0;
  const long n = static_cast<long>(size);
  for (auto bi : order) {
    const auto& b = rig.bones[bi];
    const Point2 a = view.px[b.parent], e = view.px[b.child];
    const long x0 = std::max(0L, static_cast<long>(std::floor(std::min(a[0], e[0]) - r - 1)));
    const long x1 = std::min(n - 1, static_cast<long>(std::ceil(std::max(a[0], e[0]) + r + 1)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(std::min(a[1], e[1]) - r - 1)));
    const long y1 = std::min(n - 1, static_cast<long>(std::ceil(std::max(a[1], e[1]) + r + 1)));
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        const double cov = std::clamp(r + 0.5 - segment_distance(static_cast<double>(x), static_cast<double>(y), a, e),
                                      0.0, 1.0);
        if (cov <= 0) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          float& px = img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch);
          px = static_cast<float>(px * (1 - cov) + b.shade[ch] * cov);
        }
      }
  }
  for (auto& x : img.values()) x = quantize8(x);
  return img;
}

template <typename T>
Tensor<T> make_heatmap_gt(const std::vector<Point2>& joints_hm, const std::vector<bool>& visible, double sigma,
                          std::size_t h, std::size_t w) {
  if (!(sigma > 0)) throw std::invalid_argument("make_heatmap_gt: sigma must be positive");
  if (visible.size() != joints_hm.size()) throw std::invalid_argument("make_heatmap_gt: visibility size mismatch");
  const std::size_t J = joints_hm.size();
  if (J == 0) throw std::invalid_argument("make_heatmap_gt: no joints");
  Tensor<T> out({h, w, J});
  const double k = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t j = 0; j < J; ++j) {
    if (!visible[j]) continue;
    const long cx = nearest_pixel(joints_hm[j][0]), cy = nearest_pixel(joints_hm[j][1]);
    if (cx < 0 || cy < 0 || cx >= static_cast<long>(w) || cy >= static_cast<long>(h)) continue;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) - static_cast<double>(cx);
        const double dy = static_cast<double>(y) - static_cast<double>(cy);
        out.at(y, x, j) = static_cast<T>(std::exp(-(dx * dx + dy * dy) * k));
      }
  }
  return out;
}

template Tensor<float> make_heatmap_gt(const std::vector<Point2>&, const std::vector<bool>&, double, std::size_t,
                                       std::size_t);
template Tensor<double> make_heatmap_gt(const std::vector<Point2>&, const std::vector<bool>&, double, std::size_t,
                                        std::size_t);

void AugmentParams::validate() const {
  if (!(shift >= 0) || !(rotation >= 0)) throw std::invalid_argument("augment: shift and rotation must be non-negative");
  if (!(scale_lo > 0) || !(scale_hi >= scale_lo)) throw std::invalid_argument("augment: need 0 < scale_lo <= scale_hi");
  if (rotation > 180) throw std::invalid_argument("augment: rotation above 180 degrees");
}

Transform2D draw_transform(Rng& rng, const AugmentParams& p) {
  p.validate();
  Transform2D t;
  t.dx = rng.uniform(-p.shift, p.shift);
  t.dy = rng.uniform(-p.shift, p.shift);
  t.scale = rng.uniform(p.scale_lo, p.scale_hi);
  t.angle = rng.uniform(-p.rotation, p.rotation) * kPi / 180.0;
  return t;
}

PoseSample apply_transform(const PoseSample& s, const Transform2D& t, double heatmap_scale) {
  if (!(t.scale > 0)) throw std::invalid_argument("apply_transform: scale must be positive");
  const std::size_t h = s.image.dim(0), w = s.image.dim(1), C = s.image.dim(2);
  const double cx = (static_cast<double>(w) - 1) / 2, cy = (static_cast<double>(h) - 1) / 2;
  const double co = std::cos(t.angle), si = std::sin(t.angle);
  PoseSample out = s;
  // Pixels mapped from outside the source take the mean border colour.
  std::vector<double> border(C, 0.0);
  std::size_t nb = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (y == 0 || x == 0 || y + 1 == h || x + 1 == w) {
        for (std::size_t ch = 0; ch < C; ++ch) border[ch] += s.image.at(y, x, ch);
        ++nb;
      }
  for (auto& b : border) b /= static_cast<double>(nb);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse map of the output pixel centre.
      const double qx = static_cast<double>(x) - cx - t.dx, qy = static_cast<double>(y) - cy - t.dy;
      double sx = (co * qx + si * qy) / t.scale + cx, sy = (-si * qx + co * qy) / t.scale + cy;
      if (sx < -0.5 || sy < -0.5 || sx > static_cast<double>(w) - 0.5 || sy > static_cast<double>(h) - 0.5) {
        for (std::size_t ch = 0; ch < C; ++ch) out.image.at(y, x, ch) = quantize8(static_cast<float>(border[ch]));
        continue;
      }
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double top = s.image.at(y0, x0, ch) * (1 - fx) + s.image.at(y0, x1, ch) * fx;
        const double bot = s.image.at(y1, x0, ch) * (1 - fx) + s.image.at(y1, x1, ch) * fx;
        out.image.at(y, x, ch) = quantize8(static_cast<float>(top * (1 - fy) + bot * fy));
      }
    }
  for (std::size_t j = 0; j < s.joints2d.size(); ++j) {
    const double px = s.joints2d[j][0] - cx, py = s.joints2d[j][1] - cy;
    const double nx = cx + t.scale * (co * px - si * py) + t.dx, ny = cy + t.scale * (si * px + co * py) + t.dy;
    out.joints2d[j] = {nx, ny};
    out.joints_hm[j] = {to_heatmap(nx, heatmap_scale), to_heatmap(ny, heatmap_scale)};
    out.depth[j] = s.depth[j] * t.scale;
    const bool inside = nx >= -0.5 && ny >= -0.5 && nx < static_cast<double>(w) - 0.5 && ny < static_cast<double>(h) - 0.5;
    out.visible[j] = s.visible[j] && inside;
  }
  return out;
}

PoseSample augment(const PoseSample& s, Rng& rng, const AugmentParams& params, double heatmap_scale) {
  return apply_transform(s, draw_transform(rng, params), heatmap_scale);
}

void DataConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("data config: " + m); };
  if (image_size == 0 || heatmap_size == 0) fail("sizes must be positive");
  if (image_size % heatmap_size != 0) fail("image_size must be a multiple of heatmap_size");
  if (!(fill > 0 && fill <= 1)) fail("fill must be in (0, 1]");
  if (!(angle_scale >= 0)) fail("angle_scale must be non-negative");
  if (!(render.thickness > 0)) fail("thickness must be positive");
  if (!(render.level >= 0 && render.level <= 1) || !(render.noise >= 0)) fail("background level must be in [0, 1]");
  aug.validate();
}

SkeletonGraph resolve_data_graph(const std::string& graph) {
  const auto names = shipped_graph_names();
  if (std::find(names.begin(), names.end(), graph) != names.end()) return shipped_graph(graph);
  return load_graph(graph);
}

PoseSample make_sample(const DataConfig& cfg, const Rig& rig, std::size_t i) {
  const auto pose = sample_pose(derive_seed(cfg.seed, i, 0), rig, cfg.angle_scale);
  const auto view = project(pose, rig, cfg.image_size, cfg.fill);
  PoseSample s;
  s.id = i;
  s.image = render(view, rig, cfg.image_size, cfg.render, derive_seed(cfg.seed, i, 1));
  s.joints2d = view.px;
  s.depth = view.depth;
  const double hs = cfg.heatmap_scale(), lim = static_cast<double>(cfg.image_size) - 0.5;
  for (const auto& p : view.px) {
    s.joints_hm.push_back({to_heatmap(p[0], hs), to_heatmap(p[1], hs)});
    s.visible.push_back(p[0] >= -0.5 && p[1] >= -0.5 && p[0] < lim && p[1] < lim);
  }
  if (cfg.augment) {
    Rng rng(derive_seed(cfg.seed, i, 2));
    s = augment(s, rng, cfg.aug, hs);
  }
  return s;
}

Dataset generate_dataset(const DataConfig& cfg, unsigned workers) {
  cfg.validate();
  Dataset d;
  d.config = cfg;
  d.graph = resolve_data_graph(cfg.graph);
  const Rig rig = default_rig(d.graph);
  d.samples.resize(cfg.count);
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(cfg.count, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < cfg.count; ++i) d.samples[i] = make_sample(cfg, rig, i);
    return d;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < cfg.count; i += workers) d.samples[i] = make_sample(cfg, rig, i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return d;
}

void write_ppm(const Tensor<float>& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(2) != 3) throw DataError("write_ppm: expected h x w x 3 image");
  write_pnm(image, 3, path);
}

Tensor<float> read_ppm(const std::filesystem::path& path) { return read_pnm(path, 3); }

void write_pgm(const Tensor<float>& map, const std::filesystem::path& path) {
  if (map.rank() != 3 || map.dim(2) != 1) throw DataError("write_pgm: expected h x w x 1 map");
  write_pnm(map, 1, path);
}

Tensor<float> read_pgm(const std::filesystem::path& path) { return read_pnm(path, 1); }

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "samples");
  {
    std::ofstream meta(dir / "meta");
    meta << data_ini(d.config) << "\n[dataset]\njoints = " << d.joints() << "\ncount = " << d.samples.size()
         << "\ndepth_unit_px = " << format_double(d.config.depth_unit_px())
         << "\nheatmap_scale = " << format_double(d.config.heatmap_scale()) << "\n";
    if (!meta) throw DataError("cannot write " + (dir / "meta").string());
  }
  save_graph(d.graph, dir / "skeleton.graph");
  std::ofstream ann(dir / "annotations.jsonl");
  for (const auto& s : d.samples) {
    write_ppm(s.image, dir / "samples" / sample_name(s.id));
    nlohmann::json rec;
    rec["id"] = s.id;
    rec["image"] = "samples/" + sample_name(s.id);
    rec["joints2d"] = points_json(s.joints2d);
    rec["joints_hm"] = points_json(s.joints_hm);
    rec["depth"] = s.depth;
    rec["visible"] = s.visible;
    ann << rec.dump() << '\n';
  }
  if (!ann) throw DataError("cannot write " + (dir / "annotations.jsonl").string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("no dataset directory " + dir.string());
  Dataset d;
  d.config = data_config_from(Ini::load(dir / "meta"));
  d.graph = load_graph(dir / "skeleton.graph");
  const std::size_t J = d.graph.joint_count();
  std::ifstream ann(dir / "annotations.jsonl");
  if (!ann) throw DataError("cannot open " + (dir / "annotations.jsonl").string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ann, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = (dir / "annotations.jsonl").string() + ":" + std::to_string(lineno) + ": ";
    PoseSample s;
    try {
      const auto rec = nlohmann::json::parse(line);
      s.id = rec.at("id").get<std::size_t>();
      s.joints2d = points_from(rec.at("joints2d"));
      s.joints_hm = points_from(rec.at("joints_hm"));
      s.depth = rec.at("depth").get<std::vector<double>>();
      s.visible = rec.at("visible").get<std::vector<bool>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + e.what());
    }
    if (s.joints2d.size() != J || s.joints_hm.size() != J || s.depth.size() != J || s.visible.size() != J)
      throw DataError(where + "record does not have " + std::to_string(J) + " joints");
    if (s.id != d.samples.size()) throw DataError(where + "expected sample id " + std::to_string(d.samples.size()));
    s.image = read_ppm(dir / "samples" / sample_name(s.id));
    if (s.image.dim(0) != d.config.image_size || s.image.dim(1) != d.config.image_size)
      throw DataError(where + "image size differs from meta");
    d.samples.push_back(std::move(s));
  }
  d.config.count = d.samples.size();
  return d;
}

}  // namespace fbn
