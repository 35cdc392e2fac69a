#include <array>
#include <cmath>
#include <random>
#include <set>

#include <Eigen/Geometry>

#include "doctest.h"

#include "c2f/env.hpp"
#include "c2f/learner.hpp"
#include "c2f/voxelizer.hpp"

using namespace c2f;

namespace {

using Key = std::array<float, 3>;

Key key_of(const Vec3& p) {
  return {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z())};
}

SceneObject single_point(const std::string& name, const Vec3& p, const Eigen::Vector3f& color) {
  SceneObject o;
  o.name = name;
  o.points = PointsXd(1, 3);
  o.points.row(0) = p.transpose();
  o.colors = ColorsXf(1, 3);
  o.colors.row(0) = color.transpose();
  o.initial_centroid = p;
  return o;
}

SceneObject cluster(const std::string& name, const Vec3& centre, double half, double spacing) {
  SceneObject o;
  o.name = name;
  std::vector<Vec3> pts;
  for (double x = -half; x <= half + 1e-12; x += spacing) {
    for (double y = -half; y <= half + 1e-12; y += spacing) {
      for (double z = -half; z <= half + 1e-12; z += spacing) pts.push_back(centre + Vec3(x, y, z));
    }
  }
  o.points = PointsXd(static_cast<Eigen::Index>(pts.size()), 3);
  o.colors = ColorsXf::Constant(static_cast<Eigen::Index>(pts.size()), 3, 0.5f);
  for (std::size_t i = 0; i < pts.size(); ++i) o.points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  o.initial_centroid = centre;
  return o;
}

// A scene whose gripper sits behind the default front camera.
Scene empty_scene() {
  Scene s;
  s.gripper = Pose::make(Vec3(0.5, -2.0, 0.95), Vec3::Zero(), kGripperOpen);
  return s;
}

bool equal_observations(const Observation& a, const Observation& b) {
  if (a.clouds.size() != b.clouds.size()) return false;
  for (std::size_t c = 0; c < a.clouds.size(); ++c) {
    if (a.clouds[c].valid != b.clouds[c].valid) return false;
    if (a.clouds[c].points != b.clouds[c].points) return false;
    if (a.clouds[c].colors != b.clouds[c].colors) return false;
  }
  return a.proprio == b.proprio;
}

Pose at(const Vec3& t, int gripper = kGripperOpen) { return Pose::make(t, Vec3::Zero(), gripper); }

}  // namespace

TEST_CASE("task registry and specs") {
  CHECK(task_names() == std::vector<std::string>{"reach_target", "lift_lid", "place_in_zone"});
  CHECK_THROWS_AS(make_task("stack_blocks"), ConfigError);
  for (const auto& name : task_names()) CHECK_NOTHROW(make_task(name).validate());
  CHECK(make_task("reach_target").grasp_radius == 0.03);
  CHECK(make_task("reach_target").success_radius == 0.05);
  CHECK(make_rig("three").cameras.size() == 3);
  CHECK(make_rig("front").cameras.size() == 1);
  CHECK_THROWS_AS(make_rig("nope"), ConfigError);
  CameraRig empty;
  empty.cameras.clear();
  CHECK_THROWS_AS(empty.validate(), ConfigError);
}

TEST_CASE("reset is deterministic and inside the workspace") {
  for (const auto& name : task_names()) {
    const TaskSpec task = make_task(name);
    const int resets = name == "reach_target" ? 1000 : 300;
    for (int s = 0; s < resets; ++s) {
      const Scene scene = make_scene(task, static_cast<std::uint64_t>(s));
      for (const auto& o : scene.objects) {
        for (Eigen::Index p = 0; p < o.points.rows(); ++p) {
          REQUIRE(scene.in_workspace(o.points.row(p).transpose()));
        }
      }
      if (name == "reach_target") {
        int targets = 0;
        for (const auto& o : scene.objects) targets += o.name == "target";
        REQUIRE(targets == 1);
        REQUIRE(scene.objects.size() == 1u + static_cast<std::size_t>(task.distractors));
      }
    }
    Environment a(task, make_rig("front"));
    Environment b(task, make_rig("front"));
    CHECK(equal_observations(*a.reset(42), *b.reset(42)));
    CHECK_FALSE(equal_observations(*a.reset(42), *b.reset(43)));
  }
}

TEST_CASE("optional table sits on the workspace floor") {
  TaskSpec task = make_task("lift_lid");
  CHECK(make_scene(task, 3).find("table") < 0);
  task.table_spacing = 0.05;
  const Scene scene = make_scene(task, 3);
  const int table = scene.find("table");
  REQUIRE(table >= 0);
  const PointsXd& pts = scene.objects[static_cast<std::size_t>(table)].points;
  CHECK(pts.rows() == 20 * 20);
  CHECK((pts.col(2).array() == 0.0).all());
  CHECK(scene.objects.size() == 3u);
}

TEST_CASE("step rewards") {
  Environment env(make_task("reach_target"), make_rig("front"));
  CHECK_THROWS_AS(env.step(at(Vec3::Constant(0.5))), ProtocolError);

  env.reset(3);
  const auto far = env.step(at(Vec3(0.5, 0.5, 0.9)));
  CHECK(far.reward == 0.0);
  CHECK_FALSE(far.terminal);

  const auto outside = env.step(at(Vec3(1.2, 0.5, 0.5)));
  CHECK(outside.reward == -1.0);
  CHECK(outside.terminal);
  CHECK(outside.unreachable);
  CHECK_THROWS_AS(env.step(at(Vec3::Constant(0.5))), ProtocolError);

  env.reset(3);
  const Vec3 target = env.scene().objects[static_cast<std::size_t>(env.scene().find("target"))].centroid();
  const auto hit = env.step(at(target + Vec3(0.03, 0.0, 0.0)));
  CHECK(hit.reward == 100.0);
  CHECK(hit.terminal);
  CHECK(hit.success);
  CHECK_THROWS_AS(env.step(at(target)), ProtocolError);
}

TEST_CASE("step limit terminates with zero reward") {
  Environment env(make_task("reach_target"), make_rig("front"));
  env.reset(5);
  env.set_step_limit(3);
  StepResult r;
  for (int s = 0; s < 3; ++s) r = env.step(at(Vec3(0.5, 0.5, 0.9)));
  CHECK(r.terminal);
  CHECK(r.reward == 0.0);
}

TEST_CASE("reward support and episode determinism") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.1, 1.1);
  std::set<double> rewards;
  for (const auto& name : task_names()) {
    for (int episode = 0; episode < 20; ++episode) {
      std::vector<Pose> actions;
      for (int s = 0; s < 10; ++s) actions.push_back(at(Vec3(u(rng), u(rng), u(rng)), s % 2));
      Environment a(make_task(name), make_rig("front"));
      Environment b(make_task(name), make_rig("front"));
      a.reset(episode);
      b.reset(episode);
      for (const Pose& p : actions) {
        if (!a.active()) break;
        const auto ra = a.step(p);
        const auto rb = b.step(p);
        rewards.insert(ra.reward);
        REQUIRE(ra.reward == rb.reward);
        REQUIRE(equal_observations(*ra.obs, *rb.obs));
      }
    }
  }
  for (double r : rewards) CHECK((r == -1.0 || r == 0.0 || r == 100.0));
}

TEST_CASE("one point in view") {
  Scene scene = empty_scene();
  const Vec3 p(0.5, 0.5, 0.2);
  scene.objects.push_back(single_point("dot", p, Eigen::Vector3f(0.1f, 0.2f, 0.3f)));
  const Observation obs = observe(scene, make_rig("front"));
  REQUIRE(obs.clouds.size() == 1);
  const CameraCloud& cloud = obs.clouds.front();
  CHECK(cloud.valid_count() == 1);
  for (Eigen::Index c = 0; c < cloud.cells(); ++c) {
    if (!cloud.is_valid(c)) continue;
    CHECK(cloud.points(c, 0) == static_cast<float>(p.x()));
    CHECK(cloud.points(c, 1) == static_cast<float>(p.y()));
    CHECK(cloud.points(c, 2) == static_cast<float>(p.z()));
    CHECK(cloud.colors(c, 2) == 0.3f);
  }
  CHECK(obs.proprio.size() == kProprioSize);
  CHECK(obs.proprio[0] == 1.0f);
}

TEST_CASE("point behind the camera is not observed") {
  Scene scene = empty_scene();
  scene.objects.push_back(single_point("dot", Vec3(0.5, -1.0, 0.95), Eigen::Vector3f::Ones()));
  CHECK(observe(scene, make_rig("front")).clouds.front().valid_count() == 0);
}

TEST_CASE("nearest point wins a shared cell") {
  Scene scene = empty_scene();
  const Camera cam;
  // Tilt off the optical axis, which falls on a pixel boundary.
  const Vec3 axis = (cam.look_at - cam.position).normalized();
  const Vec3 side = axis.cross(Vec3::UnitZ()).normalized();
  const Vec3 dir = (axis + 0.002 * side + 0.002 * side.cross(axis)).normalized();
  scene.objects.push_back(single_point("far", cam.position + 1.0 * dir, Eigen::Vector3f(1, 0, 0)));
  scene.objects.push_back(single_point("near", cam.position + 0.5 * dir, Eigen::Vector3f(0, 1, 0)));
  const CameraCloud cloud = observe(scene, make_rig("front")).clouds.front();
  REQUIRE(cloud.valid_count() == 1);
  for (Eigen::Index c = 0; c < cloud.cells(); ++c) {
    if (cloud.is_valid(c)) CHECK(cloud.colors(c, 1) == 1.0f);
  }
}

TEST_CASE("two cameras on opposite sides fuse both clusters") {
  Scene scene = empty_scene();
  scene.gripper = Pose::make(Vec3(0.5, 0.5, 5.0), Vec3::Zero(), kGripperOpen);  // out of every view
  scene.objects.push_back(cluster("left", Vec3(0.2, 0.5, 0.3), 0.03, 0.01));
  scene.objects.push_back(cluster("right", Vec3(0.8, 0.5, 0.3), 0.03, 0.01));

  CameraRig rig;
  Camera left;
  left.name = "left";
  left.position = Vec3(0.2, -0.4, 0.3);
  left.look_at = Vec3(0.2, 0.5, 0.3);
  left.fov_degrees = 10.0;
  Camera right = left;
  right.name = "right";
  right.position = Vec3(0.8, 1.4, 0.3);
  right.look_at = Vec3(0.8, 0.5, 0.3);
  rig.cameras = {left, right};

  const Observation fused = observe(scene, rig);
  auto occupied_in = [](const VoxelGrid& g, double x_lo, double x_hi) {
    int n = 0;
    for (Eigen::Index v = 0; v < g.geometry.voxel_count(); ++v) {
      const VoxelIndex idx = g.geometry.unlinear(v);
      const double x = g.geometry.voxel_centre(idx).x();
      n += g.occupied(idx) && x > x_lo && x < x_hi;
    }
    return n;
  };
  const VoxelGrid both = voxelize(fused, 16, Vec3::Constant(0.5), 1.0, 0);
  CHECK(occupied_in(both, 0.1, 0.3) > 0);
  CHECK(occupied_in(both, 0.7, 0.9) > 0);

  Observation only_left = fused;
  only_left.clouds.pop_back();
  const VoxelGrid lg = voxelize(only_left, 16, Vec3::Constant(0.5), 1.0, 0);
  CHECK(occupied_in(lg, 0.1, 0.3) > 0);
  CHECK(occupied_in(lg, 0.7, 0.9) == 0);
}

TEST_CASE("observed points are scene points, bit for bit") {
  for (const auto& name : task_names()) {
    Environment env(make_task(name), make_rig("three"));
    const ObservationPtr obs = env.reset(11);
    std::set<Key> scene_points;
    for (const auto& o : env.scene().objects) {
      for (Eigen::Index p = 0; p < o.points.rows(); ++p) scene_points.insert(key_of(o.points.row(p).transpose()));
    }
    const PointsXd g = gripper_points(env.scene().gripper);
    for (Eigen::Index p = 0; p < g.rows(); ++p) scene_points.insert(key_of(g.row(p).transpose()));
    for (const auto& cloud : obs->clouds) {
      CHECK(cloud.valid_count() > 0);
      for (Eigen::Index c = 0; c < cloud.cells(); ++c) {
        if (!cloud.is_valid(c)) continue;
        const Key k{cloud.points(c, 0), cloud.points(c, 1), cloud.points(c, 2)};
        REQUIRE(scene_points.count(k) == 1);
      }
    }
  }
}

TEST_CASE("point noise is opt-in and seeded") {
  CameraRig rig = make_rig("front");
  rig.point_noise = 0.002;
  Environment a(make_task("reach_target"), rig);
  Environment b(make_task("reach_target"), rig);
  Environment exact(make_task("reach_target"), make_rig("front"));
  CHECK(equal_observations(*a.reset(4), *b.reset(4)));
  CHECK_FALSE(equal_observations(*a.reset(4), *exact.reset(4)));
}

TEST_CASE("attached objects move rigidly with the gripper") {
  Environment env(make_task("lift_lid"), make_rig("front"));
  env.reset(6);
  const auto& lid = env.scene().objects[static_cast<std::size_t>(env.scene().find("lid"))];
  const Vec3 top = lid.points.colwise().maxCoeff().transpose();
  const Vec3 handle(lid.centroid().x(), lid.centroid().y(), top.z() - 0.01);
  env.step(at(handle));
  env.step(at(handle, kGripperClosed));
  REQUIRE(env.scene().attached.has_value());
  const PointsXd before = env.scene().objects[static_cast<std::size_t>(*env.scene().attached)].points;
  const Vec3 delta(0.05, -0.02, 0.06);
  env.step(at(handle + delta, kGripperClosed));
  const PointsXd after = env.scene().objects[static_cast<std::size_t>(*env.scene().attached)].points;
  CHECK(((after - before).rowwise() - delta.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  // the static box stays put
  const auto& box = env.scene().objects[static_cast<std::size_t>(env.scene().find("box"))];
  CHECK(box.centroid().isApprox(box.initial_centroid));
  env.step(at(handle + delta, kGripperOpen));
  CHECK_FALSE(env.scene().attached.has_value());
}

TEST_CASE("grasping needs the grasp radius") {
  Environment env(make_task("lift_lid"), make_rig("front"));
  env.reset(6);
  const Vec3 c = env.scene().objects[static_cast<std::size_t>(env.scene().find("lid"))].centroid();
  env.step(at(c + Vec3(0.0, 0.0, 0.2)));
  env.step(at(c + Vec3(0.0, 0.0, 0.2), kGripperClosed));
  CHECK_FALSE(env.scene().attached.has_value());
}

TEST_CASE("scripted demos") {
  SUBCASE("reach succeeds on 100 seeds") {
    const TaskSpec task = make_task("reach_target");
    const CameraRig rig = make_rig("front");
    for (std::uint64_t s = 0; s < 100; ++s) {
      const Demonstration d = scripted_demo(task, rig, s);
      REQUIRE(d.success);
      for (const auto& f : d.trajectory) REQUIRE(make_scene(task, s).in_workspace(f.pose.translation));
    }
  }
  SUBCASE("lift closes once and keyframes find it") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Demonstration d = scripted_demo(make_task("lift_lid"), make_rig("front"), s);
      REQUIRE(d.success);
      int closes = 0;
      int close_frame = -1;
      for (std::size_t t = 1; t < d.trajectory.size(); ++t) {
        if (d.trajectory[t].pose.gripper == kGripperClosed && d.trajectory[t - 1].pose.gripper == kGripperOpen) {
          ++closes;
          close_frame = static_cast<int>(t);
        }
      }
      CHECK(closes == 1);
      const auto keys = keyframe_discovery(d.trajectory);
      CHECK(std::find(keys.begin(), keys.end(), close_frame) != keys.end());
      CHECK(keys.back() == static_cast<int>(d.trajectory.size()) - 1);
    }
  }
  SUBCASE("place succeeds and stays in the workspace") {
    const TaskSpec task = make_task("place_in_zone");
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Demonstration d = scripted_demo(task, make_rig("front"), s);
      REQUIRE(d.success);
      for (const auto& f : d.trajectory) REQUIRE(make_scene(task, s).in_workspace(f.pose.translation));
    }
  }
}

TEST_CASE("place needs the yaw") {
  const TaskSpec task = make_task("place_in_zone");
  Environment env(task, make_rig("front"));
  env.reset(2);
  const auto& scene = env.scene();
  const Vec3 block = scene.objects[static_cast<std::size_t>(scene.find("block"))].centroid();
  const Vec3 zone = scene.objects[static_cast<std::size_t>(scene.find("zone"))].centroid();
  env.step(at(block));
  env.step(at(block, kGripperClosed));
  const Vec3 drop(zone.x(), zone.y(), block.z());
  env.step(at(drop, kGripperClosed));
  const auto r = env.step(at(drop, kGripperOpen));
  CHECK(r.reward == 0.0);  // yaw 0 is outside the 90 +- 15 tolerance
  CHECK_FALSE(env.success());
}
