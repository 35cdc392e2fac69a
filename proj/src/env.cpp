#include "c2f/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Geometry>

namespace c2f {

namespace {

struct Cluster {
  std::vector<Vec3> points;
  std::vector<Eigen::Vector3f> colors;

  void add(const Vec3& p, const Eigen::Vector3f& c) {
    points.push_back(p);
    colors.push_back(c);
  }
  void append(const Cluster& other) {
    points.insert(points.end(), other.points.begin(), other.points.end());
    colors.insert(colors.end(), other.colors.begin(), other.colors.end());
  }
};

// Surface samples of an axis-aligned box.
Cluster box_surface(const Vec3& centre, const Vec3& size, double spacing, const Eigen::Vector3f& color) {
  Cluster out;
  Eigen::Vector3i n;
  for (int a = 0; a < 3; ++a) n[a] = std::max(2, static_cast<int>(std::lround(size[a] / spacing)) + 1);
  const Vec3 lo = centre - 0.5 * size;
  for (int i = 0; i < n[0]; ++i) {
    for (int j = 0; j < n[1]; ++j) {
      for (int k = 0; k < n[2]; ++k) {
        const bool surface = i == 0 || j == 0 || k == 0 || i == n[0] - 1 || j == n[1] - 1 || k == n[2] - 1;
        if (!surface) continue;
        const Vec3 p = lo + Vec3(size[0] * i / (n[0] - 1), size[1] * j / (n[1] - 1), size[2] * k / (n[2] - 1));
        out.add(p, color);
      }
    }
  }
  return out;
}

// Flat patch of points at height z.
Cluster patch(const Vec3& centre, double size_x, double size_y, double spacing, const Eigen::Vector3f& color) {
  Cluster out;
  const int nx = std::max(1, static_cast<int>(std::floor(size_x / spacing)));
  const int ny = std::max(1, static_cast<int>(std::floor(size_y / spacing)));
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      out.add(Vec3(centre.x() - 0.5 * size_x + (i + 0.5) * size_x / nx,
                   centre.y() - 0.5 * size_y + (j + 0.5) * size_y / ny, centre.z()),
              color);
    }
  }
  return out;
}

SceneObject to_object(std::string name, const Cluster& cluster, bool graspable) {
  SceneObject obj;
  obj.name = std::move(name);
  const auto n = static_cast<Eigen::Index>(cluster.points.size());
  obj.points.resize(n, 3);
  obj.colors.resize(n, 3);
  for (Eigen::Index r = 0; r < n; ++r) {
    obj.points.row(r) = cluster.points[static_cast<std::size_t>(r)].transpose();
    obj.colors.row(r) = cluster.colors[static_cast<std::size_t>(r)].transpose();
  }
  obj.graspable = graspable;
  obj.initial_centroid = obj.centroid();
  return obj;
}

// Rejection-samples centres separated by at least `separation` in the xy plane.
std::vector<Vec3> sample_centres(int count, const Vec3& lo, const Vec3& hi, double separation,
                                 std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> centres;
  for (int c = 0; c < count; ++c) {
    Vec3 p;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      for (int a = 0; a < 3; ++a) p[a] = lo[a] + (hi[a] - lo[a]) * u(rng);
      const bool clear = std::all_of(centres.begin(), centres.end(), [&](const Vec3& q) {
        return (p.head<2>() - q.head<2>()).norm() >= separation;
      });
      if (clear) break;
    }
    centres.push_back(p);
  }
  return centres;
}

const Eigen::Vector3f kRed(0.9f, 0.1f, 0.1f);
const Eigen::Vector3f kGreen(0.15f, 0.75f, 0.2f);
const Eigen::Vector3f kBlue(0.1f, 0.25f, 0.9f);
const Eigen::Vector3f kPurple(0.6f, 0.2f, 0.7f);
const Eigen::Vector3f kCyan(0.1f, 0.8f, 0.8f);
const Eigen::Vector3f kBrown(0.55f, 0.35f, 0.2f);
const Eigen::Vector3f kYellow(0.9f, 0.8f, 0.2f);
const Eigen::Vector3f kOrange(1.0f, 0.5f, 0.05f);
const Eigen::Vector3f kGrey(0.5f, 0.5f, 0.5f);
const Eigen::Vector3f kDark(0.15f, 0.15f, 0.15f);

constexpr double kPointSpacing = 0.005;
constexpr double kCubeSize = 0.04;
constexpr double kBoxHeight = 0.08;
constexpr double kLidThickness = 0.01;
constexpr double kHandleSize = 0.02;
constexpr double kZoneSize = 0.1;

double angular_distance(double a, double b) {
  const double d = std::fabs(normalize_degrees(a) - normalize_degrees(b));
  return std::min(d, 360.0 - d);
}

bool task_success(const TaskSpec& task, const Scene& scene) {
  switch (task.kind()) {
    case TaskKind::kReachTarget: {
      const int t = scene.find("target");
      return t >= 0 && (scene.gripper.translation - scene.objects[static_cast<std::size_t>(t)].centroid())
                               .norm() <= task.success_radius;
    }
    case TaskKind::kLiftLid: {
      const int lid = scene.find("lid");
      if (lid < 0 || scene.attached != lid) return false;
      const SceneObject& obj = scene.objects[static_cast<std::size_t>(lid)];
      return obj.centroid().z() - obj.initial_centroid.z() >= task.lift_height;
    }
    case TaskKind::kPlaceInZone: {
      const int block = scene.find("block");
      const int zone = scene.find("zone");
      if (block < 0 || zone < 0 || scene.attached.has_value()) return false;
      const SceneObject& b = scene.objects[static_cast<std::size_t>(block)];
      const SceneObject& z = scene.objects[static_cast<std::size_t>(zone)];
      const Vec3 bc = b.centroid();
      const Vec3 zc = z.centroid();
      return (bc.head<2>() - zc.head<2>()).norm() <= task.success_radius &&
             bc.z() <= zc.z() + kCubeSize &&
             angular_distance(b.yaw_degrees(), task.target_yaw) <= task.yaw_tolerance;
    }
  }
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scene

Vec3 SceneObject::centroid() const {
  if (points.rows() == 0) return Vec3::Zero();
  return points.colwise().mean().transpose();
}

double SceneObject::nearest_distance(const Vec3& point) const {
  if (points.rows() == 0) return std::numeric_limits<double>::infinity();
  return std::sqrt((points.rowwise() - point.transpose()).rowwise().squaredNorm().minCoeff());
}

double SceneObject::yaw_degrees() const {
  return normalize_degrees(std::atan2(orientation(1, 0), orientation(0, 0)) * 180.0 / std::numbers::pi);
}

bool Scene::in_workspace(const Vec3& point) const {
  if (!point.allFinite()) return false;
  const Vec3 lo = workspace_centre - Vec3::Constant(0.5 * workspace_side);
  const Vec3 hi = workspace_centre + Vec3::Constant(0.5 * workspace_side);
  return (point.array() >= lo.array()).all() && (point.array() <= hi.array()).all();
}

int Scene::find(const std::string& name) const {
  for (std::size_t o = 0; o < objects.size(); ++o) {
    if (objects[o].name == name) return static_cast<int>(o);
  }
  return -1;
}

PointsXd gripper_points(const Pose& pose) {
  const double half_gap = pose.gripper == kGripperOpen ? 0.04 : 0.012;
  constexpr double finger_length = 0.05;
  std::vector<Vec3> local;
  for (int side = -1; side <= 1; side += 2) {
    for (int s = 0; s <= 10; ++s) {
      for (int w = -1; w <= 1; ++w) {
        local.emplace_back(0.005 * w, side * half_gap, finger_length * s / 10.0);
      }
    }
  }
  const int palm = static_cast<int>(std::ceil(2.0 * half_gap / 0.005));
  for (int s = 0; s <= palm; ++s) {
    local.emplace_back(0.0, -half_gap + 2.0 * half_gap * s / palm, finger_length);
  }
  const Eigen::Matrix3d R = euler_xyz_to_matrix(pose.rotation);
  PointsXd out(static_cast<Eigen::Index>(local.size()), 3);
  for (std::size_t p = 0; p < local.size(); ++p) {
    out.row(static_cast<Eigen::Index>(p)) = (R * local[p] + pose.translation).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tasks

TaskKind TaskSpec::kind() const {
  if (name == "reach_target") return TaskKind::kReachTarget;
  if (name == "lift_lid") return TaskKind::kLiftLid;
  if (name == "place_in_zone") return TaskKind::kPlaceInZone;
  throw ConfigError("unknown task '" + name + "'");
}

void TaskSpec::validate() const {
  (void)kind();
  if (step_limit < 1) throw ConfigError("task step_limit must be >= 1");
  if (!(grasp_radius > 0.0) || !(success_radius > 0.0)) throw ConfigError("task radii must be positive");
  if (!(workspace_side > 0.0) || !workspace_centre.allFinite()) {
    throw ConfigError("task workspace must be finite with positive side");
  }
  if (distractors < 0 || distractors > 4) throw ConfigError("distractors must be in [0, 4]");
  if (demo_interpolation < 0) throw ConfigError("demo_interpolation must be >= 0");
  if (table_spacing < 0.0) throw ConfigError("table_spacing must be >= 0");
  const Vec3 lo = workspace_centre - Vec3::Constant(0.5 * workspace_side);
  const Vec3 hi = workspace_centre + Vec3::Constant(0.5 * workspace_side);
  for (int a = 0; a < 3; ++a) {
    if (!(placement_min[a] <= placement_max[a])) throw ConfigError("placement_min exceeds placement_max");
    const double margin = a < 2 ? 0.1 : 0.0;
    if (placement_min[a] - margin < lo[a] || placement_max[a] + 0.1 > hi[a]) {
      throw ConfigError("placement range must keep objects 0.1 m inside the workspace");
    }
  }
  if (!home.valid()) throw ConfigError("home pose is invalid");
  for (int a = 0; a < 3; ++a) {
    if (home.translation[a] < lo[a] || home.translation[a] > hi[a]) {
      throw ConfigError("home pose lies outside the workspace");
    }
  }
}

std::vector<std::string> task_names() { return {"reach_target", "lift_lid", "place_in_zone"}; }

TaskSpec make_task(const std::string& name) {
  TaskSpec task;
  task.name = name;
  switch (task.kind()) {
    case TaskKind::kReachTarget:
      task.step_limit = 5;
      break;
    case TaskKind::kLiftLid:
      task.step_limit = 6;
      task.placement_min = Vec3(0.3, 0.3, 0.0);
      task.placement_max = Vec3(0.7, 0.7, 0.0);
      break;
    case TaskKind::kPlaceInZone:
      task.step_limit = 8;
      task.placement_min = Vec3(0.25, 0.25, 0.0);
      task.placement_max = Vec3(0.75, 0.75, 0.0);
      task.min_separation = 0.2;
      break;
  }
  return task;
}

Scene make_scene(const TaskSpec& task, std::uint64_t seed) {
  task.validate();
  std::mt19937_64 rng(seed);
  Scene scene;
  scene.workspace_centre = task.workspace_centre;
  scene.workspace_side = task.workspace_side;
  scene.gripper = task.home;
  const double floor_z = task.workspace_centre.z() - 0.5 * task.workspace_side;
  const Vec3 lo = task.placement_min;
  const Vec3 hi = task.placement_max;

  switch (task.kind()) {
    case TaskKind::kReachTarget: {
      const auto centres = sample_centres(1 + task.distractors, lo, hi, task.min_separation, rng);
      const Eigen::Vector3f palette[] = {kGreen, kBlue, kPurple, kCyan};
      scene.objects.push_back(
          to_object("target", box_surface(centres[0], Vec3::Constant(kCubeSize), kPointSpacing, kRed), false));
      for (int d = 0; d < task.distractors; ++d) {
        scene.objects.push_back(to_object("distractor" + std::to_string(d),
                                          box_surface(centres[static_cast<std::size_t>(d) + 1],
                                                      Vec3::Constant(kCubeSize), kPointSpacing,
                                                      palette[d]),
                                          false));
      }
      break;
    }
    case TaskKind::kLiftLid: {
      Vec3 c = sample_centres(1, lo, hi, task.min_separation, rng)[0];
      const double side = 0.12;
      Cluster box = box_surface(Vec3(c.x(), c.y(), floor_z + 0.5 * kBoxHeight),
                                Vec3(side, side, kBoxHeight), 0.01, kBrown);
      scene.objects.push_back(to_object("box", box, false));
      Cluster lid = box_surface(Vec3(c.x(), c.y(), floor_z + kBoxHeight + 0.5 * kLidThickness),
                                Vec3(side, side, kLidThickness), kPointSpacing * 2, kYellow);
      lid.append(box_surface(
          Vec3(c.x(), c.y(), floor_z + kBoxHeight + kLidThickness + 0.5 * kHandleSize),
          Vec3::Constant(kHandleSize), kPointSpacing, kRed));
      scene.objects.push_back(to_object("lid", lid, true));
      break;
    }
    case TaskKind::kPlaceInZone: {
      const auto centres = sample_centres(2, lo, hi, task.min_separation, rng);
      scene.objects.push_back(to_object(
          "zone", patch(Vec3(centres[1].x(), centres[1].y(), floor_z + 0.002), kZoneSize, kZoneSize,
                        kPointSpacing * 2, kGreen),
          false));
      scene.objects.push_back(to_object(
          "block",
          box_surface(Vec3(centres[0].x(), centres[0].y(), floor_z + 0.5 * kCubeSize),
                      Vec3::Constant(kCubeSize), kPointSpacing, kOrange),
          true));
      break;
    }
  }
  if (task.table_spacing > 0.0) {
    const Vec3 wc = task.workspace_centre;
    scene.objects.insert(scene.objects.begin(),
                         to_object("table",
                                   patch(Vec3(wc.x(), wc.y(), floor_z), task.workspace_side,
                                         task.workspace_side, task.table_spacing, kGrey),
                                   false));
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Cameras

void CameraRig::validate() const {
  if (cameras.empty()) throw ConfigError("camera rig '" + name + "' needs at least one camera");
  for (const auto& cam : cameras) {
    if (cam.height < 1 || cam.width < 1) throw ConfigError("camera '" + cam.name + "' has an empty image");
    if (!(cam.fov_degrees > 0.0 && cam.fov_degrees < 180.0)) {
      throw ConfigError("camera '" + cam.name + "' field of view must be in (0, 180)");
    }
    if ((cam.look_at - cam.position).norm() <= 0.0) {
      throw ConfigError("camera '" + cam.name + "' looks at its own position");
    }
    if (!(cam.near_plane > 0.0)) throw ConfigError("camera near plane must be positive");
  }
  if (!(point_noise >= 0.0)) throw ConfigError("point_noise must be >= 0");
}

std::vector<std::string> rig_names() { return {"front", "three"}; }

CameraRig make_rig(const std::string& name) {
  CameraRig rig;
  rig.name = name;
  if (name == "front") return rig;
  if (name == "three") {
    Camera left;
    left.name = "left_shoulder";
    left.position = Vec3(-0.35, 0.05, 0.9);
    Camera right;
    right.name = "right_shoulder";
    right.position = Vec3(1.35, 0.05, 0.9);
    rig.cameras.push_back(left);
    rig.cameras.push_back(right);
    return rig;
  }
  throw ConfigError("unknown camera rig '" + name + "'");
}

namespace {

void render(const Camera& cam, const std::vector<const PointsXd*>& point_sets,
            const std::vector<const ColorsXf*>& color_sets, CameraCloud& cloud, std::vector<double>& depth) {
  const Vec3 forward = (cam.look_at - cam.position).normalized();
  Vec3 up = cam.up;
  if (forward.cross(up).norm() < 1e-9) up = Vec3(0.0, 1.0, 0.0);
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);  // image rows grow downwards
  const double f = 0.5 * cam.height / std::tan(0.5 * cam.fov_degrees * std::numbers::pi / 180.0);
  depth.assign(static_cast<std::size_t>(cloud.cells()), std::numeric_limits<double>::infinity());
  for (std::size_t s = 0; s < point_sets.size(); ++s) {
    const PointsXd& pts = *point_sets[s];
    const ColorsXf& cols = *color_sets[s];
    for (Eigen::Index p = 0; p < pts.rows(); ++p) {
      const Vec3 d = pts.row(p).transpose() - cam.position;
      const double z = d.dot(forward);
      if (z < cam.near_plane) continue;
      const double u = f * d.dot(right) / z + 0.5 * cam.width;
      const double v = f * d.dot(down) / z + 0.5 * cam.height;
      if (!(u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height)) continue;
      const auto cell = static_cast<Eigen::Index>(std::floor(v)) * cam.width +
                        static_cast<Eigen::Index>(std::floor(u));
      auto& best = depth[static_cast<std::size_t>(cell)];
      if (z < best) {
        best = z;
        cloud.points.row(cell) = pts.row(p).cast<float>();
        cloud.colors.row(cell) = cols.row(p);
        cloud.valid[static_cast<std::size_t>(cell)] = 1;
      }
    }
  }
}

}  // namespace

Observation observe(const Scene& scene, const CameraRig& rig, std::mt19937_64* noise_rng) {
  rig.validate();
  const PointsXd gripper = gripper_points(scene.gripper);
  const ColorsXf gripper_colors = kDark.transpose().replicate(gripper.rows(), 1);
  std::vector<const PointsXd*> point_sets;
  std::vector<const ColorsXf*> color_sets;
  for (const auto& obj : scene.objects) {
    point_sets.push_back(&obj.points);
    color_sets.push_back(&obj.colors);
  }
  point_sets.push_back(&gripper);
  color_sets.push_back(&gripper_colors);

  Observation obs;
  std::vector<double> depth;
  for (const auto& cam : rig.cameras) {
    CameraCloud cloud = CameraCloud::empty(cam.height, cam.width);
    render(cam, point_sets, color_sets, cloud, depth);
    if (rig.point_noise > 0.0 && noise_rng != nullptr) {
      std::normal_distribution<float> noise(0.0f, static_cast<float>(rig.point_noise));
      for (Eigen::Index c = 0; c < cloud.cells(); ++c) {
        if (!cloud.is_valid(c)) continue;
        for (int a = 0; a < 3; ++a) cloud.points(c, a) += noise(*noise_rng);
      }
    }
    obs.clouds.push_back(std::move(cloud));
  }
  obs.proprio.resize(kProprioSize);
  obs.proprio << static_cast<float>(scene.gripper.gripper), scene.gripper.translation.cast<float>();
  return obs;
}

// ---------------------------------------------------------------------------
// Environment

Environment::Environment(TaskSpec task, CameraRig rig) : task_(std::move(task)), rig_(std::move(rig)) {
  task_.validate();
  rig_.validate();
}

ObservationPtr Environment::reset(std::uint64_t seed) {
  scene_ = make_scene(task_, seed);
  noise_rng_.seed(seed ^ 0x9E3779B97F4A7C15ULL);
  steps_ = 0;
  active_ = true;
  has_reset_ = true;
  return observe();
}

ObservationPtr Environment::observe() const {
  std::mt19937_64 rng = noise_rng_;
  return std::make_shared<const Observation>(
      c2f::observe(scene_, rig_, rig_.point_noise > 0.0 ? &rng : nullptr));
}

bool Environment::success() const { return task_success(task_, scene_); }

void Environment::move_gripper(const Pose& pose) {
  const Pose previous = scene_.gripper;
  if (scene_.attached) {
    SceneObject& obj = scene_.objects[static_cast<std::size_t>(*scene_.attached)];
    if (pose.rotation == previous.rotation) {
      const Vec3 delta = pose.translation - previous.translation;
      obj.points.rowwise() += delta.transpose();
    } else {
      const Eigen::Matrix3d relative =
          euler_xyz_to_matrix(pose.rotation) * euler_xyz_to_matrix(previous.rotation).transpose();
      for (Eigen::Index p = 0; p < obj.points.rows(); ++p) {
        const Vec3 local = obj.points.row(p).transpose() - previous.translation;
        obj.points.row(p) = (relative * local + pose.translation).transpose();
      }
      obj.orientation = relative * obj.orientation;
    }
  }
  scene_.gripper = pose;
  if (pose.gripper == kGripperOpen) {
    scene_.attached.reset();
  } else if (previous.gripper == kGripperOpen && !scene_.attached) {
    double best = task_.grasp_radius;
    for (std::size_t o = 0; o < scene_.objects.size(); ++o) {
      if (!scene_.objects[o].graspable) continue;
      const double d = scene_.objects[o].nearest_distance(pose.translation);
      if (d <= best) {
        best = d;
        scene_.attached = static_cast<int>(o);
      }
    }
  }
}

StepResult Environment::step(const Pose& pose) {
  if (!has_reset_) throw ProtocolError("step called before reset");
  if (!active_) throw ProtocolError("step called after the episode terminated");
  if (!pose.valid()) throw ArgumentError("step: invalid pose");
  ++steps_;
  StepResult result;
  if (!scene_.in_workspace(pose.translation)) {
    active_ = false;
    result.obs = observe();
    result.reward = kRewardUnreachable;
    result.terminal = true;
    result.unreachable = true;
    return result;
  }
  move_gripper(pose);
  result.success = success();
  result.reward = result.success ? kRewardSuccess : kRewardNone;
  result.terminal = result.success || steps_ >= task_.step_limit;
  active_ = !result.terminal;
  result.obs = observe();
  return result;
}

// ---------------------------------------------------------------------------
// Scripted demonstrations

namespace {

struct Waypoint {
  Pose pose;
  bool interpolate = true;
};

std::vector<Waypoint> plan(const TaskSpec& task, const Scene& scene) {
  std::vector<Waypoint> w;
  auto pose = [](const Vec3& t, double yaw, int g) { return Pose::make(t, Vec3(0.0, 0.0, yaw), g); };
  switch (task.kind()) {
    case TaskKind::kReachTarget: {
      const Vec3 target = scene.objects[static_cast<std::size_t>(scene.find("target"))].centroid();
      w.push_back({pose(target + Vec3(0.0, 0.0, 0.1), 0.0, kGripperOpen), true});
      w.push_back({pose(target, 0.0, kGripperOpen), false});
      break;
    }
    case TaskKind::kLiftLid: {
      const SceneObject& lid = scene.objects[static_cast<std::size_t>(scene.find("lid"))];
      const Vec3 top = lid.points.colwise().maxCoeff().transpose();
      const Vec3 handle(lid.centroid().x(), lid.centroid().y(), top.z() - 0.5 * kHandleSize);
      w.push_back({pose(handle + Vec3(0.0, 0.0, 0.1), 0.0, kGripperOpen), true});
      w.push_back({pose(handle, 0.0, kGripperOpen), true});
      w.push_back({pose(handle, 0.0, kGripperOpen), false});
      w.push_back({pose(handle, 0.0, kGripperClosed), false});
      w.push_back({pose(handle + Vec3(0.0, 0.0, 0.25), 0.0, kGripperClosed), false});
      break;
    }
    case TaskKind::kPlaceInZone: {
      const Vec3 block = scene.objects[static_cast<std::size_t>(scene.find("block"))].centroid();
      const Vec3 zone = scene.objects[static_cast<std::size_t>(scene.find("zone"))].centroid();
      const Vec3 drop(zone.x(), zone.y(), block.z());
      const double yaw = task.target_yaw;
      w.push_back({pose(block + Vec3(0.0, 0.0, 0.1), 0.0, kGripperOpen), true});
      w.push_back({pose(block, 0.0, kGripperOpen), true});
      w.push_back({pose(block, 0.0, kGripperOpen), false});
      w.push_back({pose(block, 0.0, kGripperClosed), false});
      w.push_back({pose(block + Vec3(0.0, 0.0, 0.15), 0.0, kGripperClosed), true});
      w.push_back({pose(drop + Vec3(0.0, 0.0, 0.15), yaw, kGripperClosed), true});
      w.push_back({pose(drop, yaw, kGripperClosed), true});
      w.push_back({pose(drop, yaw, kGripperClosed), false});
      w.push_back({pose(drop, yaw, kGripperOpen), false});
      break;
    }
  }
  return w;
}

}  // namespace

Demonstration scripted_demo(const TaskSpec& task, const CameraRig& rig, std::uint64_t seed) {
  Environment env(task, rig);
  env.set_step_limit(1000);
  Demonstration demo;
  demo.seed = seed;
  ObservationPtr obs = env.reset(seed);
  demo.trajectory.push_back({obs, env.scene().gripper});
  const std::vector<Waypoint> waypoints = plan(task, env.scene());
  for (const Waypoint& wp : waypoints) {
    const Pose from = env.scene().gripper;
    std::vector<Pose> poses;
    if (wp.interpolate) {
      const int n = task.demo_interpolation;
      for (int s = 1; s <= n; ++s) {
        const double a = double(s) / (n + 1);
        // Yaw interpolates along the short arc; the other angles stay at the target.
        double dyaw = wp.pose.rotation.z() - from.rotation.z();
        if (dyaw > 180.0) dyaw -= 360.0;
        if (dyaw < -180.0) dyaw += 360.0;
        Vec3 rot = wp.pose.rotation;
        rot.z() = from.rotation.z() + a * dyaw;
        poses.push_back(Pose::make(from.translation + a * (wp.pose.translation - from.translation), rot,
                                   from.gripper));
      }
    }
    poses.push_back(wp.pose);
    for (const Pose& p : poses) {
      const StepResult r = env.step(p);
      demo.trajectory.push_back({r.obs, env.scene().gripper});
      if (r.terminal) {
        demo.success = r.success;
        return demo;
      }
    }
  }
  demo.success = env.success();
  return demo;
}

}  // namespace c2f
