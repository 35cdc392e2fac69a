#include "c2f/serialize.hpp"

#include <filesystem>

#include "c2f/config.hpp"

namespace c2f {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Observations

int ObservationTable::add(const ObservationPtr& obs) {
  if (!obs) return -1;
  auto it = index_.find(obs.get());
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(obs_.size());
  obs_.push_back(obs);
  index_.emplace(obs.get(), id);
  return id;
}

void ObservationTable::write(io::Writer& w, const std::string& prefix) const {
  json cams = json::array();
  const auto n = static_cast<std::int64_t>(obs_.size());
  if (!obs_.empty()) {
    for (const auto& cloud : obs_.front()->clouds) cams.push_back({cloud.height, cloud.width});
  }
  int proprio_dim = obs_.empty() ? kProprioSize : static_cast<int>(obs_.front()->proprio.size());
  w.write(io::make_json_entry(prefix + "/meta", {{"count", n}, {"cameras", cams}, {"proprio", proprio_dim}}));
  std::vector<float> proprio;
  for (const auto& o : obs_) {
    o->validate();
    if (o->clouds.size() != cams.size() || o->proprio.size() != proprio_dim) {
      throw StructuralError("observations in one table must share camera and proprio shapes");
    }
    proprio.insert(proprio.end(), o->proprio.data(), o->proprio.data() + o->proprio.size());
  }
  w.write(io::make_entry(prefix + "/proprio", std::span<const float>(proprio), {n, proprio_dim}));
  for (std::size_t c = 0; c < cams.size(); ++c) {
    std::vector<std::uint8_t> valid;
    std::vector<float> points;
    std::vector<float> colors;
    std::int64_t cells = 0;
    for (const auto& o : obs_) {
      const CameraCloud& cloud = o->clouds[c];
      if (cloud.height != cams[c][0].get<int>() || cloud.width != cams[c][1].get<int>()) {
        throw StructuralError("camera resolution changed within one observation table");
      }
      cells = cloud.cells();
      valid.insert(valid.end(), cloud.valid.begin(), cloud.valid.end());
      for (Eigen::Index k = 0; k < cloud.cells(); ++k) {
        if (!cloud.is_valid(k)) continue;
        for (int a = 0; a < 3; ++a) {
          points.push_back(cloud.points(k, a));
          colors.push_back(cloud.colors(k, a));
        }
      }
    }
    const std::string cam = prefix + "/cam" + std::to_string(c);
    const auto nv = static_cast<std::int64_t>(points.size() / 3);
    w.write(io::make_entry(cam + "/valid", std::span<const std::uint8_t>(valid), {n, cells}));
    w.write(io::make_entry(cam + "/points", std::span<const float>(points), {nv, 3}));
    w.write(io::make_entry(cam + "/colors", std::span<const float>(colors), {nv, 3}));
  }
}

std::vector<ObservationPtr> ObservationTable::read(const io::Container& c, const std::string& prefix) {
  const json meta = c.get(prefix + "/meta").as_json();
  const auto n = meta.at("count").get<std::int64_t>();
  const int proprio_dim = meta.at("proprio").get<int>();
  const auto& cams = meta.at("cameras");
  std::vector<Observation> obs(static_cast<std::size_t>(n));
  const auto proprio = c.get(prefix + "/proprio").as<float>();
  if (static_cast<std::int64_t>(proprio.size()) != n * proprio_dim) {
    throw DataError("'" + prefix + "/proprio' has the wrong size");
  }
  for (std::int64_t i = 0; i < n; ++i) {
    obs[static_cast<std::size_t>(i)].proprio =
        Eigen::Map<const Eigen::VectorXf>(proprio.data() + i * proprio_dim, proprio_dim);
  }
  for (std::size_t cam = 0; cam < cams.size(); ++cam) {
    const int h = cams[cam][0].get<int>();
    const int wd = cams[cam][1].get<int>();
    const std::string base = prefix + "/cam" + std::to_string(cam);
    const auto valid = c.get(base + "/valid").as<std::uint8_t>();
    const auto points = c.get(base + "/points").as<float>();
    const auto colors = c.get(base + "/colors").as<float>();
    const std::int64_t cells = static_cast<std::int64_t>(h) * wd;
    if (static_cast<std::int64_t>(valid.size()) != n * cells || points.size() != colors.size()) {
      throw DataError("'" + base + "' tensors have inconsistent sizes");
    }
    std::size_t cursor = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      CameraCloud cloud = CameraCloud::empty(h, wd);
      for (std::int64_t k = 0; k < cells; ++k) {
        if (!valid[static_cast<std::size_t>(i * cells + k)]) continue;
        if (cursor + 3 > points.size()) throw DataError("'" + base + "/points' is too short");
        cloud.valid[static_cast<std::size_t>(k)] = 1;
        for (int a = 0; a < 3; ++a) {
          cloud.points(k, a) = points[cursor + static_cast<std::size_t>(a)];
          cloud.colors(k, a) = colors[cursor + static_cast<std::size_t>(a)];
        }
        cursor += 3;
      }
      obs[static_cast<std::size_t>(i)].clouds.push_back(std::move(cloud));
    }
    if (cursor != points.size()) throw DataError("'" + base + "/points' has trailing values");
  }
  std::vector<ObservationPtr> out;
  out.reserve(obs.size());
  for (auto& o : obs) out.push_back(std::make_shared<const Observation>(std::move(o)));
  return out;
}

// ---------------------------------------------------------------------------
// Transitions

namespace {

void write_transition_arrays(io::Writer& w, const std::string& prefix, std::span<const Transition> ts,
                             ObservationTable& table) {
  const auto n = static_cast<std::int64_t>(ts.size());
  const std::int64_t depth = ts.empty() ? 0 : static_cast<std::int64_t>(ts.front().action.voxel_indices.size());
  std::vector<std::int32_t> obs_id, next_id, voxels, rotation, gripper;
  std::vector<double> reward;
  std::vector<std::uint8_t> terminal, demo;
  for (const auto& t : ts) {
    if (static_cast<std::int64_t>(t.action.voxel_indices.size()) != depth) {
      throw StructuralError("transitions in one file must share the coarse-to-fine depth");
    }
    obs_id.push_back(table.add(t.obs));
    next_id.push_back(table.add(t.next_obs));
    for (const auto& v : t.action.voxel_indices) {
      voxels.insert(voxels.end(), {v.i, v.j, v.k});
    }
    rotation.insert(rotation.end(), t.action.rotation_bins.begin(), t.action.rotation_bins.end());
    gripper.push_back(t.action.gripper_bin);
    reward.push_back(t.reward);
    terminal.push_back(t.terminal ? 1 : 0);
    demo.push_back(t.is_demo ? 1 : 0);
  }
  w.write(io::make_json_entry(prefix + "/meta", {{"count", n}, {"depth", depth}}));
  w.write(io::make_entry(prefix + "/obs_index", std::span<const std::int32_t>(obs_id), {n}));
  w.write(io::make_entry(prefix + "/next_obs_index", std::span<const std::int32_t>(next_id), {n}));
  w.write(io::make_entry(prefix + "/voxel_indices", std::span<const std::int32_t>(voxels), {n, depth, 3}));
  w.write(io::make_entry(prefix + "/rotation_bins", std::span<const std::int32_t>(rotation), {n, 3}));
  w.write(io::make_entry(prefix + "/gripper_bin", std::span<const std::int32_t>(gripper), {n}));
  w.write(io::make_entry(prefix + "/reward", std::span<const double>(reward), {n}));
  w.write(io::make_entry(prefix + "/terminal", std::span<const std::uint8_t>(terminal), {n}));
  w.write(io::make_entry(prefix + "/is_demo", std::span<const std::uint8_t>(demo), {n}));
}

std::vector<Transition> read_transition_arrays(const io::Container& c, const std::string& prefix,
                                               const std::vector<ObservationPtr>& obs) {
  const json meta = c.get(prefix + "/meta").as_json();
  const auto n = meta.at("count").get<std::size_t>();
  const auto depth = meta.at("depth").get<std::size_t>();
  const auto obs_id = c.get(prefix + "/obs_index").as<std::int32_t>();
  const auto next_id = c.get(prefix + "/next_obs_index").as<std::int32_t>();
  const auto voxels = c.get(prefix + "/voxel_indices").as<std::int32_t>();
  const auto rotation = c.get(prefix + "/rotation_bins").as<std::int32_t>();
  const auto gripper = c.get(prefix + "/gripper_bin").as<std::int32_t>();
  const auto reward = c.get(prefix + "/reward").as<double>();
  const auto terminal = c.get(prefix + "/terminal").as<std::uint8_t>();
  const auto demo = c.get(prefix + "/is_demo").as<std::uint8_t>();
  if (obs_id.size() != n || next_id.size() != n || voxels.size() != n * depth * 3 ||
      rotation.size() != n * 3 || gripper.size() != n || reward.size() != n || terminal.size() != n ||
      demo.size() != n) {
    throw DataError("transition tensors under '" + prefix + "' disagree on their length");
  }
  auto lookup = [&](std::int32_t id) -> ObservationPtr {
    if (id < 0) return nullptr;
    if (static_cast<std::size_t>(id) >= obs.size()) throw DataError("observation index out of range");
    return obs[static_cast<std::size_t>(id)];
  };
  std::vector<Transition> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    Transition& tr = out[t];
    tr.obs = lookup(obs_id[t]);
    tr.next_obs = lookup(next_id[t]);
    for (std::size_t d = 0; d < depth; ++d) {
      const std::size_t base = (t * depth + d) * 3;
      tr.action.voxel_indices.push_back(VoxelIndex{voxels[base], voxels[base + 1], voxels[base + 2]});
    }
    for (int a = 0; a < 3; ++a) tr.action.rotation_bins[static_cast<std::size_t>(a)] = rotation[t * 3 + static_cast<std::size_t>(a)];
    tr.action.gripper_bin = gripper[t];
    tr.reward = reward[t];
    tr.terminal = terminal[t] != 0;
    tr.is_demo = demo[t] != 0;
  }
  return out;
}

void write_header(io::Writer& w, const json& config) {
  w.write(io::make_json_entry("version", {{"code", kVersion}, {"container", io::kContainerVersion}}));
  w.write(io::make_json_entry("config", config));
}

}  // namespace

void write_transitions(io::Writer& w, const std::string& prefix, std::span<const Transition> ts) {
  ObservationTable table;
  for (const auto& t : ts) {
    table.add(t.obs);
    table.add(t.next_obs);
  }
  table.write(w, prefix + "/obs");
  write_transition_arrays(w, prefix, ts, table);
}

std::vector<Transition> read_transitions(const io::Container& c, const std::string& prefix) {
  return read_transition_arrays(c, prefix, ObservationTable::read(c, prefix + "/obs"));
}

// ---------------------------------------------------------------------------
// Demo files

void save_demo_file(const std::string& path, const DemoFile& file) {
  io::Writer w(path);
  write_header(w, file.config);
  ObservationTable table;
  json demos = json::array();
  for (std::size_t d = 0; d < file.demos.size(); ++d) {
    const Demonstration& demo = file.demos[d];
    json frames = json::array();
    for (const auto& f : demo.trajectory) {
      frames.push_back({{"obs", table.add(f.obs)},
                        {"translation", {f.pose.translation.x(), f.pose.translation.y(), f.pose.translation.z()}},
                        {"rotation", {f.pose.rotation.x(), f.pose.rotation.y(), f.pose.rotation.z()}},
                        {"gripper", f.pose.gripper}});
    }
    demos.push_back({{"seed", demo.seed},
                     {"success", demo.success},
                     {"keyframes", d < file.keyframes.size() ? json(file.keyframes[d]) : json::array()},
                     {"frames", frames}});
  }
  for (const auto& t : file.transitions) {
    table.add(t.obs);
    table.add(t.next_obs);
  }
  w.write(io::make_json_entry("demos", demos));
  table.write(w, "transitions/obs");
  write_transition_arrays(w, "transitions", file.transitions, table);
  w.flush();
}

DemoFile load_demo_file(const std::string& path) {
  const io::Container c = io::Container::read(path);
  DemoFile file;
  file.config = c.get("config").as_json();
  const std::vector<ObservationPtr> obs = ObservationTable::read(c, "transitions/obs");
  for (const auto& d : c.get("demos").as_json()) {
    Demonstration demo;
    demo.seed = d.at("seed").get<std::uint64_t>();
    demo.success = d.at("success").get<bool>();
    for (const auto& f : d.at("frames")) {
      const int id = f.at("obs").get<int>();
      if (id < 0 || static_cast<std::size_t>(id) >= obs.size()) throw DataError("demo frame observation missing");
      const auto t = f.at("translation").get<std::vector<double>>();
      const auto r = f.at("rotation").get<std::vector<double>>();
      demo.trajectory.push_back({obs[static_cast<std::size_t>(id)],
                                 Pose::make(Vec3(t.at(0), t.at(1), t.at(2)), Vec3(r.at(0), r.at(1), r.at(2)),
                                            f.at("gripper").get<int>())});
    }
    file.keyframes.push_back(d.at("keyframes").get<std::vector<int>>());
    file.demos.push_back(std::move(demo));
  }
  file.transitions = read_transition_arrays(c, "transitions", obs);
  return file;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::vector<std::int64_t> dims_of(const nn::Shape& s) { return std::vector<std::int64_t>(s.begin(), s.end()); }

void write_params(io::Writer& w, const std::string& prefix, const nn::ParamSet<float>& params) {
  for (const auto& p : params) {
    w.write(io::make_entry(prefix + p.name, std::span<const float>(p.value.values.data(), static_cast<std::size_t>(p.value.size())),
                           dims_of(p.value.shape)));
  }
}

void read_array(const io::Container& c, const std::string& name, const nn::Shape& shape, nn::Array<float>& out) {
  const io::Entry* e = c.find(name);
  if (e == nullptr) throw ConfigError("checkpoint lacks tensor '" + name + "' required by the config");
  if (e->dims != dims_of(shape)) {
    throw ConfigError("checkpoint tensor '" + name + "' has shape incompatible with the config");
  }
  const auto values = e->as<float>();
  out = Eigen::Map<const nn::Array<float>>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

void save_checkpoint(const std::string& path, const json& config, Learner& learner, const json& state) {
  const std::string tmp = path + ".tmp";
  {
    io::Writer w(tmp);
    write_header(w, config);
    json s = state;
    s["learner_steps"] = learner.steps();
    json opt_steps = json::array();
    for (const auto& o : learner.optimizers()) opt_steps.push_back(o.steps());
    s["optimizer_steps"] = opt_steps;
    w.write(io::make_json_entry("state", s));
    auto& model = learner.model();
    for (int n = 0; n < model.depth(); ++n) {
      const std::string d = std::to_string(n);
      write_params(w, "online/" + d + "/", model.online[static_cast<std::size_t>(n)].params());
      write_params(w, "target/" + d + "/", model.target[static_cast<std::size_t>(n)].params());
      auto& opt = learner.optimizers()[static_cast<std::size_t>(n)];
      const auto& params = model.online[static_cast<std::size_t>(n)].params();
      for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& param = params[static_cast<nn::Index>(p)];
        if (p < opt.first_moments().size()) {
          const auto& m = opt.first_moments()[p];
          const auto& v = opt.second_moments()[p];
          w.write(io::make_entry("optim/" + d + "/m/" + param.name,
                                 std::span<const float>(m.data(), static_cast<std::size_t>(m.size())),
                                 dims_of(param.value.shape)));
          w.write(io::make_entry("optim/" + d + "/v/" + param.name,
                                 std::span<const float>(v.data(), static_cast<std::size_t>(v.size())),
                                 dims_of(param.value.shape)));
        }
      }
    }
    w.flush();
  }
  std::filesystem::rename(tmp, path);
}

json read_checkpoint_config(const std::string& path) { return io::Container::read(path).get("config").as_json(); }

json load_checkpoint(const std::string& path, Learner& learner) {
  const io::Container c = io::Container::read(path);
  json state = c.get("state").as_json();
  auto& model = learner.model();
  for (int n = 0; n < model.depth(); ++n) {
    const std::string d = std::to_string(n);
    auto& online = model.online[static_cast<std::size_t>(n)].params();
    auto& target = model.target[static_cast<std::size_t>(n)].params();
    auto& opt = learner.optimizers()[static_cast<std::size_t>(n)];
    for (std::size_t p = 0; p < online.size(); ++p) {
      auto& param = online[static_cast<nn::Index>(p)];
      read_array(c, "online/" + d + "/" + param.name, param.value.shape, param.value.values);
      read_array(c, "target/" + d + "/" + param.name, param.value.shape, target[static_cast<nn::Index>(p)].value.values);
      if (p < opt.first_moments().size() && c.has("optim/" + d + "/m/" + param.name)) {
        read_array(c, "optim/" + d + "/m/" + param.name, param.value.shape, opt.first_moments()[p]);
        read_array(c, "optim/" + d + "/v/" + param.name, param.value.shape, opt.second_moments()[p]);
      }
    }
    if (state.contains("optimizer_steps") && state["optimizer_steps"].size() > static_cast<std::size_t>(n)) {
      opt.set_steps(state["optimizer_steps"][static_cast<std::size_t>(n)].get<std::int64_t>());
    }
  }
  if (state.contains("learner_steps")) learner.set_steps(state["learner_steps"].get<std::int64_t>());
  return state;
}

// ---------------------------------------------------------------------------
// Replay log

ReplayLog::ReplayLog(const std::string& path, const json& config) : path_(path) {
  io::Writer w(path);
  write_header(w, config);
  w.flush();
}

void ReplayLog::append(std::span<const Transition> transitions) {
  if (transitions.empty()) return;
  io::Writer w(path_, true);
  write_transitions(w, "chunk/" + std::to_string(chunks_), transitions);
  w.flush();
  ++chunks_;
}

std::vector<Transition> ReplayLog::read(const std::string& path) {
  const io::Container c = io::Container::read(path);
  std::vector<Transition> all;
  for (int k = 0; c.has("chunk/" + std::to_string(k) + "/meta"); ++k) {
    auto chunk = read_transitions(c, "chunk/" + std::to_string(k));
    all.insert(all.end(), chunk.begin(), chunk.end());
  }
  return all;
}

}  // namespace c2f
