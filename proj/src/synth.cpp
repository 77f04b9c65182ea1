#include "posecl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "posecl/errors.hpp"
#include "posecl/random.hpp"

namespace posecl {

void SyntheticDatasetConfig::validate() const {
  if (n_train == 0 || n_val == 0) throw ConfigError("dataset " + name + ": n_train and n_val must be positive");
  if (!(occlusion_rate >= 0.0 && occlusion_rate <= 1.0))
    throw ConfigError("dataset " + name + ": occlusion_rate must lie in [0, 1]");
  if (person_count_range.first < 1 || person_count_range.second < person_count_range.first)
    throw ConfigError("dataset " + name + ": person_count_range must satisfy 1 <= lo <= hi");
  if (pose_distribution < 0 || pose_distribution > 3)
    throw ConfigError("dataset " + name + ": pose_distribution must be 0..3");
  if (!(figure_height.first > 0.0 && figure_height.first <= figure_height.second && figure_height.second <= 1.0))
    throw ConfigError("dataset " + name + ": figure_height must satisfy 0 < lo <= hi <= 1");
  if (!(noise_level >= 0.0)) throw ConfigError("dataset " + name + ": noise_level must be >= 0");
  if (image.pixels() == 0) throw ConfigError("dataset " + name + ": image grid must be positive");
  if (metric != "ap" && metric != "pck") throw ConfigError("dataset " + name + ": metric must be ap or pck");
  if (schema.size() == 0) throw ConfigError("dataset " + name + ": schema is empty");
  const auto& joints = skeleton_joint_names();
  for (const auto& n : schema.names())
    if (std::find(joints.begin(), joints.end(), n) == joints.end())
      throw SchemaError("dataset " + name + ": keypoint " + n + " is not a joint the generator can place");
}

namespace {

using Point = std::pair<double, double>;

struct Limbs {
  double lean, tilt, yaw;
  double l_upper, l_fore, r_upper, r_fore;
  double l_thigh, l_shin, r_thigh, r_shin;
};

Limbs sample_angles(PoseFamily family, Rng& rng) {
  Limbs a{};
  switch (family) {
    case PoseFamily::standing:
      a.lean = 0.05 * rng.normal();
      a.l_upper = rng.uniform(0.05, 0.45);
      a.r_upper = rng.uniform(0.05, 0.45);
      a.l_fore = a.l_upper + rng.uniform(0.0, 0.5);
      a.r_fore = a.r_upper + rng.uniform(0.0, 0.5);
      a.l_thigh = rng.uniform(-0.05, 0.2);
      a.r_thigh = rng.uniform(-0.05, 0.2);
      a.l_shin = a.l_thigh + rng.uniform(-0.1, 0.1);
      a.r_shin = a.r_thigh + rng.uniform(-0.1, 0.1);
      break;
    case PoseFamily::reaching:
      a.lean = 0.12 * rng.normal();
      a.l_upper = rng.uniform(1.9, 2.9);
      a.r_upper = rng.uniform(1.9, 2.9);
      a.l_fore = a.l_upper + rng.uniform(-0.3, 0.3);
      a.r_fore = a.r_upper + rng.uniform(-0.3, 0.3);
      a.l_thigh = rng.uniform(0.15, 0.45);
      a.r_thigh = rng.uniform(0.15, 0.45);
      a.l_shin = a.l_thigh + rng.uniform(-0.15, 0.1);
      a.r_shin = a.r_thigh + rng.uniform(-0.15, 0.1);
      break;
    case PoseFamily::crouching:
      a.lean = 0.15 * rng.normal();
      a.l_upper = rng.uniform(1.6, 2.6);
      a.r_upper = rng.uniform(1.6, 2.6);
      a.l_fore = a.l_upper + rng.uniform(-0.4, 0.4);
      a.r_fore = a.r_upper + rng.uniform(-0.4, 0.4);
      a.l_thigh = rng.uniform(0.9, 1.4);
      a.r_thigh = rng.uniform(0.9, 1.4);
      a.l_shin = a.l_thigh - rng.uniform(0.9, 1.4);
      a.r_shin = a.r_thigh - rng.uniform(0.9, 1.4);
      break;
    case PoseFamily::mixed:
      return sample_angles(static_cast<PoseFamily>(rng.index(3)), rng);
  }
  a.tilt = rng.uniform(-0.15, 0.15);
  a.yaw = rng.uniform(-0.6, 0.6);
  return a;
}

// Joint layout with unit height, pelvis at the origin, y pointing down.
JointMap unit_figure(const Limbs& a) {
  JointMap j;
  auto at = [](Point p, double dx, double dy) { return Point{p.first + dx, p.second + dy}; };
  // angle measured from straight down, positive = away from the midline
  auto left = [&](Point p, double ang, double len) { return at(p, len * std::sin(ang), len * std::cos(ang)); };
  auto right = [&](Point p, double ang, double len) { return at(p, -len * std::sin(ang), len * std::cos(ang)); };

  const Point pelvis{0.0, 0.0};
  const Point up{std::sin(a.lean), -std::cos(a.lean)};
  const Point side{std::cos(a.lean), std::sin(a.lean)};
  const Point thorax = at(pelvis, 0.30 * up.first, 0.30 * up.second);
  const Point upper_neck = at(thorax, 0.07 * up.first, 0.07 * up.second);
  const Point hd{std::sin(a.lean + a.tilt), -std::cos(a.lean + a.tilt)};
  const Point hs{std::cos(a.lean + a.tilt), std::sin(a.lean + a.tilt)};
  const Point head_top = at(upper_neck, 0.16 * hd.first, 0.16 * hd.second);
  const Point head_c = at(upper_neck, 0.085 * hd.first, 0.085 * hd.second);
  auto face = [&](double lateral, double along) {
    return at(head_c, lateral * hs.first + along * hd.first, lateral * hs.second + along * hd.second);
  };
  const double yaw = 0.03 * a.yaw;

  j["pelvis"] = pelvis;
  j["thorax"] = thorax;
  j["neck"] = at(thorax, 0.035 * up.first, 0.035 * up.second);
  j["upper_neck"] = upper_neck;
  j["head_top"] = head_top;
  j["nose"] = face(yaw, -0.01);
  j["left_eye"] = face(0.022 + yaw, 0.015);
  j["right_eye"] = face(-0.022 + yaw, 0.015);
  j["left_ear"] = face(0.045 + 0.5 * yaw, 0.0);
  j["right_ear"] = face(-0.045 + 0.5 * yaw, 0.0);

  const Point ls = at(thorax, 0.11 * side.first, 0.11 * side.second);
  const Point rs = at(thorax, -0.11 * side.first, -0.11 * side.second);
  j["left_shoulder"] = ls;
  j["right_shoulder"] = rs;
  j["left_elbow"] = left(ls, a.l_upper, 0.16);
  j["right_elbow"] = right(rs, a.r_upper, 0.16);
  j["left_wrist"] = left(j["left_elbow"], a.l_fore, 0.14);
  j["right_wrist"] = right(j["right_elbow"], a.r_fore, 0.14);

  const Point lh = at(pelvis, 0.08 * side.first, 0.08 * side.second);
  const Point rh = at(pelvis, -0.08 * side.first, -0.08 * side.second);
  j["left_hip"] = lh;
  j["right_hip"] = rh;
  j["left_knee"] = left(lh, a.l_thigh, 0.23);
  j["right_knee"] = right(rh, a.r_thigh, 0.23);
  j["left_ankle"] = left(j["left_knee"], a.l_shin, 0.22);
  j["right_ankle"] = right(j["right_knee"], a.r_shin, 0.22);
  const double toe = a.yaw >= 0.0 ? 1.0 : -1.0;
  j["left_heel"] = at(j["left_ankle"], -0.012 * toe, 0.03);
  j["right_heel"] = at(j["right_ankle"], -0.012 * toe, 0.03);
  j["left_big_toe"] = at(j["left_ankle"], 0.05 * toe, 0.035);
  j["right_big_toe"] = at(j["right_ankle"], 0.05 * toe, 0.035);
  return j;
}

const std::vector<std::pair<const char*, const char*>>& bones() {
  static const std::vector<std::pair<const char*, const char*>> b = {
      {"pelvis", "thorax"},         {"thorax", "upper_neck"},    {"upper_neck", "head_top"},
      {"left_shoulder", "right_shoulder"}, {"left_shoulder", "left_elbow"}, {"left_elbow", "left_wrist"},
      {"right_shoulder", "right_elbow"}, {"right_elbow", "right_wrist"}, {"left_hip", "right_hip"},
      {"left_hip", "left_knee"},    {"left_knee", "left_ankle"}, {"right_hip", "right_knee"},
      {"right_knee", "right_ankle"}, {"left_ankle", "left_big_toe"}, {"right_ankle", "right_big_toe"}};
  return b;
}

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.first - a.first, vy = b.second - a.second;
  const double wx = p.first - a.first, wy = p.second - a.second;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? (wx * vx + wy * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

double min_bone_distance(const JointMap& joints, Point p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [a, b] : bones()) best = std::min(best, segment_distance(p, joints.at(a), joints.at(b)));
  return best;
}

struct Placed {
  JointMap joints;
  double height;
};

Placed place_figure(const Limbs& angles, Rng& rng, std::pair<double, double> height_range, double center_x,
                    double center_jitter, bool keep_inside) {
  JointMap unit = unit_figure(angles);
  double minx = 1e9, maxx = -1e9, miny = 1e9, maxy = -1e9;
  for (const auto& [_, p] : unit) {
    minx = std::min(minx, p.first);
    maxx = std::max(maxx, p.first);
    miny = std::min(miny, p.second);
    maxy = std::max(maxy, p.second);
  }
  constexpr double kMargin = 0.03;
  const double room = 1.0 - 2.0 * kMargin;
  double height = rng.uniform(height_range.first, height_range.second);
  height = std::min(height, room / std::max(maxx - minx, maxy - miny));
  const double w = (maxx - minx) * height, h = (maxy - miny) * height;
  double ox, oy;
  if (keep_inside) {
    const double lo_x = kMargin, hi_x = 1.0 - kMargin - w;
    const double target_x = center_x - w / 2.0 + center_jitter * rng.uniform(-1.0, 1.0);
    ox = std::clamp(target_x, lo_x, hi_x);
    oy = rng.uniform(kMargin, 1.0 - kMargin - h);
  } else {
    ox = center_x - w / 2.0;
    oy = rng.uniform(kMargin, 1.0 - kMargin - h);
  }
  Placed out{{}, height};
  for (const auto& [name, p] : unit)
    out.joints[name] = {ox + (p.first - minx) * height, oy + (p.second - miny) * height};
  return out;
}

}  // namespace

void rasterize_figure(const JointMap& joints, double height, ImageGrid grid, std::span<double> image) {
  const double px = 1.0 / static_cast<double>(std::max(grid.rows, grid.cols));
  const double half_width = 0.8 * px;
  const Point head_c{(joints.at("upper_neck").first + joints.at("head_top").first) / 2.0,
                     (joints.at("upper_neck").second + joints.at("head_top").second) / 2.0};
  const double head_r = 0.07 * height;
  for (std::size_t r = 0; r < grid.rows; ++r)
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const Point p{(static_cast<double>(c) + 0.5) / static_cast<double>(grid.cols),
                    (static_cast<double>(r) + 0.5) / static_cast<double>(grid.rows)};
      const double d = min_bone_distance(joints, p);
      double v = std::clamp(1.0 - d / half_width, 0.0, 1.0);
      const double dh = std::hypot(p.first - head_c.first, p.second - head_c.second);
      v = std::max(v, std::clamp(1.0 - (dh - head_r) / half_width, 0.0, 1.0));
      double& cell = image[r * grid.cols + c];
      cell = std::max(cell, v);
    }
}

Scene generate_scene(const SyntheticDatasetConfig& config, std::size_t index) {
  if (index >= config.n_train + config.n_val)
    throw IndexError("scene index " + std::to_string(index) + " beyond dataset size " +
                     std::to_string(config.n_train + config.n_val));
  Rng rng(Rng::mix(config.seed, index, 0x5CE4E));
  const auto family = static_cast<PoseFamily>(config.pose_distribution);

  Scene scene;
  const int lo = config.person_count_range.first, hi = config.person_count_range.second;
  scene.person_count = lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1)));

  const Placed main = place_figure(sample_angles(family, rng), rng, config.figure_height, 0.5, 0.3, true);
  {
    const auto& pelvis = main.joints.at("pelvis");
    const auto& thorax = main.joints.at("thorax");
    scene.figure_scale = std::hypot(thorax.first - pelvis.first, thorax.second - pelvis.second);
    double minx = 1e9, maxx = -1e9, miny = 1e9, maxy = -1e9;
    for (const auto& [_, p] : main.joints) {
      minx = std::min(minx, p.first);
      maxx = std::max(maxx, p.first);
      miny = std::min(miny, p.second);
      maxy = std::max(maxy, p.second);
    }
    scene.area = (maxx - minx) * (maxy - miny);
  }

  std::vector<double> pixels(config.image.pixels(), 0.0);
  rasterize_figure(main.joints, main.height, config.image, pixels);

  std::vector<Placed> front;
  for (int p = 1; p < scene.person_count; ++p) {
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double cx = 0.5 + side * rng.uniform(0.25, 0.55);
    Placed other = place_figure(sample_angles(family, rng), rng, config.figure_height, cx, 0.0, false);
    rasterize_figure(other.joints, other.height, config.image, pixels);
    if (rng.uniform() < 0.5) front.push_back(std::move(other));
  }

  for (const auto& name : config.schema.names()) {
    auto it = main.joints.find(name);
    if (it == main.joints.end()) throw SchemaError("generator cannot place keypoint " + name);
    Keypoint kp{it->second.first, it->second.second, true};
    for (const auto& f : front)
      if (min_bone_distance(f.joints, it->second) < 0.04) kp.visible = false;
    if (rng.uniform() < config.occlusion_rate) kp.visible = false;
    if (kp.x < 0.0 || kp.x > 1.0 || kp.y < 0.0 || kp.y > 1.0) kp.visible = false;
    scene.keypoints.push_back(kp);
  }

  for (auto& v : pixels) v += config.noise_level * rng.normal();
  const std::size_t n = pixels.size();
  scene.image = Tensor(Shape{n}, std::move(pixels));
  return scene;
}

Dataset generate_dataset(const SyntheticDatasetConfig& config) {
  config.validate();
  Dataset d{config, {}, {}};
  d.train.reserve(config.n_train);
  d.val.reserve(config.n_val);
  for (std::size_t i = 0; i < config.n_train; ++i) d.train.push_back(generate_scene(config, i));
  for (std::size_t i = 0; i < config.n_val; ++i) d.val.push_back(generate_scene(config, config.n_train + i));
  return d;
}

}  // namespace posecl
