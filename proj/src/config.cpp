#include "c2f/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace c2f {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }
  ~Fields() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path(key) + "'");
    }
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + path(key) + "' has the wrong type: " + j_.at(key).dump());
    }
  }

  void read_vec3(const std::string& key, Vec3& out) {
    std::vector<double> v;
    read(key, v);
    if (!j_.contains(key)) return;
    if (v.size() != 3) throw ConfigError("config key '" + path(key) + "' needs 3 numbers");
    out = Vec3(v[0], v[1], v[2]);
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json vec3(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json pose_json(const Pose& p) {
  return {{"translation", vec3(p.translation)}, {"rotation", vec3(p.rotation)}, {"gripper", p.gripper}};
}

Pose pose_from(const json& j, const std::string& where, Pose fallback) {
  Fields f(j, where);
  Vec3 t = fallback.translation;
  Vec3 r = fallback.rotation;
  int g = fallback.gripper;
  f.read_vec3("translation", t);
  f.read_vec3("rotation", r);
  f.read("gripper", g);
  if (g != kGripperOpen && g != kGripperClosed) throw ConfigError(where + ".gripper must be 0 or 1");
  return Pose::make(t, r, g);
}

json camera_json(const Camera& c) {
  return {{"name", c.name},     {"position", vec3(c.position)}, {"look_at", vec3(c.look_at)},
          {"up", vec3(c.up)},   {"height", c.height},           {"width", c.width},
          {"fov_degrees", c.fov_degrees}, {"near_plane", c.near_plane}};
}

Camera camera_from(const json& j, const std::string& where) {
  Fields f(j, where);
  Camera c;
  f.read("name", c.name);
  f.read_vec3("position", c.position);
  f.read_vec3("look_at", c.look_at);
  f.read_vec3("up", c.up);
  f.read("height", c.height);
  f.read("width", c.width);
  f.read("fov_degrees", c.fov_degrees);
  f.read("near_plane", c.near_plane);
  return c;
}

json task_json(const TaskSpec& t) {
  return {{"step_limit", t.step_limit},
          {"placement_min", vec3(t.placement_min)},
          {"placement_max", vec3(t.placement_max)},
          {"min_separation", t.min_separation},
          {"distractors", t.distractors},
          {"grasp_radius", t.grasp_radius},
          {"success_radius", t.success_radius},
          {"lift_height", t.lift_height},
          {"target_yaw", t.target_yaw},
          {"yaw_tolerance", t.yaw_tolerance},
          {"home", pose_json(t.home)},
          {"workspace_centre", vec3(t.workspace_centre)},
          {"workspace_side", t.workspace_side},
          {"table_spacing", t.table_spacing},
          {"demo_interpolation", t.demo_interpolation}};
}

void task_from(const json& j, TaskSpec& t) {
  Fields f(j, "env.task");
  f.read("step_limit", t.step_limit);
  f.read_vec3("placement_min", t.placement_min);
  f.read_vec3("placement_max", t.placement_max);
  f.read("min_separation", t.min_separation);
  f.read("distractors", t.distractors);
  f.read("grasp_radius", t.grasp_radius);
  f.read("success_radius", t.success_radius);
  f.read("lift_height", t.lift_height);
  f.read("target_yaw", t.target_yaw);
  f.read("yaw_tolerance", t.yaw_tolerance);
  if (const json* home = f.child("home")) t.home = pose_from(*home, "env.task.home", t.home);
  f.read_vec3("workspace_centre", t.workspace_centre);
  f.read("workspace_side", t.workspace_side);
  f.read("table_spacing", t.table_spacing);
  f.read("demo_interpolation", t.demo_interpolation);
}

const char* optimizer_name(OptimizerConfig::Kind k) { return k == OptimizerConfig::Kind::kAdam ? "adam" : "sgd"; }

}  // namespace

int protocol_demo_count(const std::string& protocol) {
  if (protocol == "simulation") return 10;
  if (protocol == "minimal") return 3;
  throw ConfigError("unknown demo protocol '" + protocol + "' (expected simulation or minimal)");
}

int DemoConfig::effective_count() const { return count ? *count : protocol_demo_count(protocol); }

void RunConfig::validate() const {
  agent.validate();
  learner.validate();
  if (task_spec.name != task) throw ConfigError("task spec name does not match task '" + task + "'");
  task_spec.validate();
  rig.validate();
  if (schedule.total_env_steps < 0) throw ConfigError("schedule.total_env_steps must be >= 0");
  if (schedule.eval_cadence < 1) throw ConfigError("schedule.eval_cadence must be >= 1");
  if (schedule.eval_episodes < 0) throw ConfigError("schedule.eval_episodes must be >= 0");
  if (demos.effective_count() < 0) throw ConfigError("demos.count must be >= 0");
  if (demos.retry_budget < 0) throw ConfigError("demos.retry_budget must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  // The agent's workspace must coincide with the environment's reachable cube.
  if ((agent.initial_centre - task_spec.workspace_centre).norm() > 1e-12 ||
      std::abs(agent.initial_side_length - task_spec.workspace_side) > 1e-12) {
    throw ConfigError("agent initial cube must match the task workspace");
  }
}

json to_json(const RunConfig& c) {
  json demos = {{"protocol", c.demos.protocol}, {"count", c.demos.effective_count()},
                {"retry_budget", c.demos.retry_budget}};
  json cameras = json::array();
  for (const auto& cam : c.rig.cameras) cameras.push_back(camera_json(cam));
  return {
      {"task", c.task},
      {"seed", c.seed},
      {"threads", c.threads},
      {"output_dir", c.output_dir},
      {"agent",
       {{"grid_sizes", c.agent.grid_sizes},
        {"initial_centre", vec3(c.agent.initial_centre)},
        {"initial_side_length", c.agent.initial_side_length},
        {"rotation_increment", c.agent.rotation_increment},
        {"epsilon", c.agent.epsilon},
        {"zoom_overlap", c.agent.zoom_overlap},
        {"width", c.agent.width},
        {"head_hidden", c.agent.head_hidden}}},
      {"learner",
       {{"gamma", c.learner.gamma},
        {"tau", c.learner.tau},
        {"learning_rate", c.learner.learning_rate},
        {"optimizer", optimizer_name(c.learner.optimizer)},
        {"batch_size", c.learner.batch_size},
        {"reg_weight", c.learner.reg_weight},
        {"demo_fraction", c.learner.demo_fraction},
        {"buffer_capacity", c.learner.buffer_capacity},
        {"train_steps_per_env_step", c.learner.train_steps_per_env_step},
        {"next_state_descent",
         c.learner.next_state_descent == LearnerConfig::NextStateDescent::kOnline ? "online" : "target"},
        {"stillness_threshold", c.learner.stillness_threshold},
        {"demo_stride", c.learner.demo_stride}}},
      {"env",
       {{"rig", c.rig.name}, {"cameras", cameras}, {"point_noise", c.rig.point_noise},
        {"task", task_json(c.task_spec)}}},
      {"schedule",
       {{"total_env_steps", c.schedule.total_env_steps},
        {"eval_cadence", c.schedule.eval_cadence},
        {"eval_episodes", c.schedule.eval_episodes},
        {"replay_log", c.schedule.replay_log}}},
      {"demos", demos},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Fields top(j, "");
  top.read("task", c.task);
  c.task_spec = make_task(c.task);
  top.read("seed", c.seed);
  top.read("threads", c.threads);
  top.read("output_dir", c.output_dir);

  if (const json* a = top.child("agent")) {
    Fields f(*a, "agent");
    f.read("grid_sizes", c.agent.grid_sizes);
    f.read_vec3("initial_centre", c.agent.initial_centre);
    f.read("initial_side_length", c.agent.initial_side_length);
    f.read("rotation_increment", c.agent.rotation_increment);
    f.read("epsilon", c.agent.epsilon);
    f.read("zoom_overlap", c.agent.zoom_overlap);
    f.read("width", c.agent.width);
    f.read("head_hidden", c.agent.head_hidden);
  }
  if (const json* l = top.child("learner")) {
    Fields f(*l, "learner");
    f.read("gamma", c.learner.gamma);
    f.read("tau", c.learner.tau);
    f.read("learning_rate", c.learner.learning_rate);
    std::string opt = optimizer_name(c.learner.optimizer);
    f.read("optimizer", opt);
    if (opt == "adam") {
      c.learner.optimizer = OptimizerConfig::Kind::kAdam;
    } else if (opt == "sgd") {
      c.learner.optimizer = OptimizerConfig::Kind::kSgd;
    } else {
      throw ConfigError("learner.optimizer must be adam or sgd, got '" + opt + "'");
    }
    f.read("batch_size", c.learner.batch_size);
    f.read("reg_weight", c.learner.reg_weight);
    f.read("demo_fraction", c.learner.demo_fraction);
    f.read("buffer_capacity", c.learner.buffer_capacity);
    f.read("train_steps_per_env_step", c.learner.train_steps_per_env_step);
    std::string descent = "online";
    f.read("next_state_descent", descent);
    if (descent == "online") {
      c.learner.next_state_descent = LearnerConfig::NextStateDescent::kOnline;
    } else if (descent == "target") {
      c.learner.next_state_descent = LearnerConfig::NextStateDescent::kTarget;
    } else {
      throw ConfigError("learner.next_state_descent must be online or target, got '" + descent + "'");
    }
    f.read("stillness_threshold", c.learner.stillness_threshold);
    f.read("demo_stride", c.learner.demo_stride);
  }
  if (const json* e = top.child("env")) {
    Fields f(*e, "env");
    std::string rig = c.rig.name;
    f.read("rig", rig);
    c.rig = make_rig(rig);
    if (const json* cams = f.child("cameras")) {
      if (!cams->is_array()) throw ConfigError("env.cameras must be a list");
      c.rig.cameras.clear();
      for (std::size_t i = 0; i < cams->size(); ++i) {
        c.rig.cameras.push_back(camera_from((*cams)[i], "env.cameras[" + std::to_string(i) + "]"));
      }
    }
    f.read("point_noise", c.rig.point_noise);
    if (const json* t = f.child("task")) task_from(*t, c.task_spec);
  }
  if (const json* s = top.child("schedule")) {
    Fields f(*s, "schedule");
    f.read("total_env_steps", c.schedule.total_env_steps);
    f.read("eval_cadence", c.schedule.eval_cadence);
    f.read("eval_episodes", c.schedule.eval_episodes);
    f.read("replay_log", c.schedule.replay_log);
  }
  if (const json* d = top.child("demos")) {
    Fields f(*d, "demos");
    f.read("protocol", c.demos.protocol);
    (void)protocol_demo_count(c.demos.protocol);
    int count = -1;
    f.read("count", count);
    if (d->contains("count") && !d->at("count").is_null()) c.demos.count = count;
    f.read("retry_budget", c.demos.retry_budget);
  }
  c.validate();
  return c;
}

void apply_override(json& document, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like KEY=VALUE");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &document;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    parts.push_back(part);
  }
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (node->is_null()) *node = json::object();
    if (!node->is_object()) {
      throw ConfigError("override key '" + key + "': '" + parts[p - 1] + "' is not an object");
    }
    node = &(*node)[parts[p]];
  }
  *node = value;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json document = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    try {
      document = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
      throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
  }
  if (!document.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& o : overrides) apply_override(document, o);
  return run_config_from_json(document);
}

std::uint64_t derive_seed(SeedStream stream, std::uint64_t run_seed, std::uint64_t index) {
  // splitmix64 finaliser over a mix of the three inputs.
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(static_cast<std::uint64_t>(stream)) ^ run_seed) ^ index);
}

std::string grid_label(const std::vector<int>& grid_sizes) {
  std::string s = "(";
  for (std::size_t i = 0; i < grid_sizes.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(grid_sizes[i]);
  }
  return s + ")";
}

}  // namespace c2f
