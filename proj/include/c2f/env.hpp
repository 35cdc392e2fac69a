#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "c2f/core_types.hpp"
#include "c2f/learner.hpp"

namespace c2f {

using PointsXd = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using ColorsXf = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct SceneObject {
  std::string name;
  PointsXd points;
  ColorsXf colors;
  bool graspable = false;
  // Accumulated rigid rotation since the episode started.
  Eigen::Matrix3d orientation = Eigen::Matrix3d::Identity();
  Vec3 initial_centroid = Vec3::Zero();

  Vec3 centroid() const;
  // Distance from `point` to the closest cluster point.
  double nearest_distance(const Vec3& point) const;
  // Heading about +z in degrees, in [0, 360).
  double yaw_degrees() const;
};

struct Scene {
  Vec3 workspace_centre = Vec3::Constant(0.5);
  double workspace_side = 1.0;
  std::vector<SceneObject> objects;
  Pose gripper;
  std::optional<int> attached;

  bool in_workspace(const Vec3& point) const;
  int find(const std::string& name) const;  // -1 when absent
};

// Rendered gripper geometry; open fingers sit wider apart than closed ones.
PointsXd gripper_points(const Pose& pose);

enum class TaskKind { kReachTarget, kLiftLid, kPlaceInZone };

struct TaskSpec {
  std::string name = "reach_target";
  int step_limit = 5;
  // Object centres are drawn uniformly from this box; tabletop tasks ignore z.
  Vec3 placement_min{0.2, 0.2, 0.05};
  Vec3 placement_max{0.8, 0.8, 0.45};
  double min_separation = 0.15;
  int distractors = 2;
  double grasp_radius = 0.03;
  double success_radius = 0.05;
  double lift_height = 0.1;
  double target_yaw = 90.0;
  double yaw_tolerance = 15.0;
  Pose home = Pose::make(Vec3(0.5, 0.5, 0.75), Vec3::Zero(), kGripperOpen);
  Vec3 workspace_centre = Vec3::Constant(0.5);
  double workspace_side = 1.0;
  // Point spacing of an optional grey tabletop patch; 0 (the default) leaves it
  // out so the coarsest grid is not swamped by floor voxels.
  double table_spacing = 0.0;
  int demo_interpolation = 4;  // intermediate frames per scripted segment

  TaskKind kind() const;  // ConfigError for an unknown name
  void validate() const;
};

// Registered task names, in registration order.
std::vector<std::string> task_names();
// Default definition of a registered task; ConfigError for unknown names.
TaskSpec make_task(const std::string& name);

struct Camera {
  std::string name = "front";
  Vec3 position{0.5, -0.55, 0.95};
  Vec3 look_at{0.5, 0.5, 0.15};
  Vec3 up{0.0, 0.0, 1.0};
  int height = 128;
  int width = 128;
  double fov_degrees = 60.0;  // vertical
  double near_plane = 0.01;
};

struct CameraRig {
  std::string name = "front";
  std::vector<Camera> cameras{Camera{}};
  double point_noise = 0.0;  // Gaussian std-dev in metres, 0 for exact points

  void validate() const;
};

std::vector<std::string> rig_names();
// "front" (one camera) or "three" (front plus two shoulder cameras).
CameraRig make_rig(const std::string& name);

// Projects every object and gripper point into each camera, keeping the
// nearest point per cell. Noise is only drawn when the rig asks for it and an
// rng is supplied.
Observation observe(const Scene& scene, const CameraRig& rig, std::mt19937_64* noise_rng = nullptr);

struct StepResult {
  ObservationPtr obs;
  double reward = kRewardNone;
  bool terminal = false;
  bool success = false;
  bool unreachable = false;
};

class Environment {
 public:
  Environment(TaskSpec task, CameraRig rig);

  ObservationPtr reset(std::uint64_t seed);
  // ProtocolError when called before reset or after a terminal step.
  StepResult step(const Pose& pose);

  ObservationPtr observe() const;
  bool success() const;

  const Scene& scene() const { return scene_; }
  Scene& mutable_scene() { return scene_; }
  const TaskSpec& task() const { return task_; }
  const CameraRig& rig() const { return rig_; }
  int steps_taken() const { return steps_; }
  bool active() const { return active_; }
  void set_step_limit(int limit) { task_.step_limit = limit; }

 private:
  void move_gripper(const Pose& pose);

  TaskSpec task_;
  CameraRig rig_;
  Scene scene_;
  std::mt19937_64 noise_rng_;
  int steps_ = 0;
  bool active_ = false;
  bool has_reset_ = false;
};

// Builds the initial scene for `task` deterministically from `seed`.
Scene make_scene(const TaskSpec& task, std::uint64_t seed);

struct Demonstration {
  Trajectory trajectory;
  bool success = false;
  std::uint64_t seed = 0;
};

// Hand-coded waypoint policy. The trajectory records the observation after
// each commanded pose, with the reset observation at the home pose first.
Demonstration scripted_demo(const TaskSpec& task, const CameraRig& rig, std::uint64_t seed);

}  // namespace c2f
