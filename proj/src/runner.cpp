#include "c2f/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace c2f {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return buf;
}

namespace {

void say(std::ostream* log, const std::string& line) {
  if (log != nullptr) (*log) << line << '\n' << std::flush;
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void set_threads(int threads) {
  Eigen::setNbThreads(threads);
#ifdef _OPENMP
  omp_set_num_threads(threads);
#endif
}

// Demo transitions must match the action space the config describes.
void check_demo_compatibility(const DemoFile& file, const RunConfig& config) {
  const json& c = file.config;
  auto mismatch = [](const std::string& what) {
    return ConfigError("demo file does not match the config: " + what);
  };
  if (c.contains("task") && c["task"] != config.task) throw mismatch("task");
  if (c.contains("agent")) {
    const json& a = c["agent"];
    if (a.contains("grid_sizes") && a["grid_sizes"].get<std::vector<int>>() != config.agent.grid_sizes) {
      throw mismatch("grid sizes " + a["grid_sizes"].dump());
    }
    if (a.contains("rotation_increment") && a["rotation_increment"].get<double>() != config.agent.rotation_increment) {
      throw mismatch("rotation increment");
    }
  }
  const int bins = config.agent.codec().bin_count();
  for (const auto& t : file.transitions) {
    if (static_cast<int>(t.action.voxel_indices.size()) != config.agent.depth()) throw mismatch("depth");
    for (std::size_t n = 0; n < t.action.voxel_indices.size(); ++n) {
      const auto& v = t.action.voxel_indices[n];
      const int g = config.agent.grid_sizes[n];
      if (v.i < 0 || v.j < 0 || v.k < 0 || v.i >= g || v.j >= g || v.k >= g) throw mismatch("voxel index range");
    }
    for (int b : t.action.rotation_bins) {
      if (b < 0 || b >= bins) throw mismatch("rotation bins");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Demos

DemoFile generate_demos(const RunConfig& config, std::ostream* log) {
  config.validate();
  DemoFile file;
  file.config = to_json(config);
  const int wanted = config.demos.effective_count();
  if (wanted == 0) say(log, "warning: demo count is 0, writing an empty demo file");
  int failures = 0;
  std::uint64_t attempt = 0;
  while (static_cast<int>(file.demos.size()) < wanted) {
    const std::uint64_t seed = derive_seed(SeedStream::kDemo, config.seed, attempt++);
    Demonstration demo = scripted_demo(config.task_spec, config.rig, seed);
    if (!demo.success) {
      ++failures;
      say(log, "scripted demo failed on seed " + std::to_string(seed) + ", discarded");
      if (failures > config.demos.retry_budget) {
        throw DemoFailure(std::to_string(failures) + " scripted demos failed, exceeding the retry budget of " +
                          std::to_string(config.demos.retry_budget));
      }
      continue;
    }
    std::vector<int> keys = keyframe_discovery(demo.trajectory, config.learner.stillness_threshold);
    std::vector<Transition> ts =
        demo_augmentation(demo.trajectory, keys, config.learner.demo_stride, config.agent, demo.success);
    file.transitions.insert(file.transitions.end(), ts.begin(), ts.end());
    file.keyframes.push_back(std::move(keys));
    file.demos.push_back(std::move(demo));
  }
  std::size_t key_total = 0;
  for (const auto& k : file.keyframes) key_total += k.size();
  say(log, "demos: " + std::to_string(file.demos.size()) + " keyframes: " + std::to_string(key_total) +
               " transitions: " + std::to_string(file.transitions.size()) + " failures: " + std::to_string(failures));
  return file;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalSummary evaluate(QAttentionModel<float>& model, const RunConfig& config, int episodes, std::uint64_t eval_seed) {
  EvalSummary summary;
  if (episodes <= 0) {
    summary.mean_steps_to_success = std::numeric_limits<double>::quiet_NaN();
    return summary;
  }
  summary.episodes.resize(static_cast<std::size_t>(episodes));
#pragma omp parallel for schedule(dynamic, 1) num_threads(config.threads) if (config.threads > 1)
  for (int e = 0; e < episodes; ++e) {
    EpisodeReport& rep = summary.episodes[static_cast<std::size_t>(e)];
    rep.seed = derive_seed(SeedStream::kEval, eval_seed, static_cast<std::uint64_t>(e));
    Environment env(config.task_spec, config.rig);
    ObservationPtr obs = env.reset(rep.seed);
    std::mt19937_64 unused(0);
    while (env.active()) {
      const ActionSelection sel = select_action<float>(*obs, model, config.agent, false, unused);
      const StepResult r = env.step(sel.pose);
      rep.episode_return += r.reward;
      ++rep.steps;
      rep.success = rep.success || r.success;
      rep.unreachable = rep.unreachable || r.unreachable;
      obs = r.obs;
    }
  }
  int successes = 0;
  double steps_to_success = 0.0;
  for (const auto& rep : summary.episodes) {
    summary.mean_return += rep.episode_return;
    summary.unreachable += rep.unreachable ? 1 : 0;
    if (rep.success) {
      ++successes;
      steps_to_success += rep.steps;
    }
  }
  summary.success_rate = double(successes) / episodes;
  summary.mean_return /= episodes;
  summary.mean_steps_to_success =
      successes > 0 ? steps_to_success / successes : std::numeric_limits<double>::quiet_NaN();
  return summary;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<std::string> train_csv_columns() {
  return {"env_step",     "episodes",  "success_rate",   "mean_return", "mean_steps_to_success",
          "unreachable",  "loss_total", "loss_per_depth", "train_steps"};
}

std::string csv_preamble(const RunConfig& config) {
  return std::string("# c2f-arm ") + kVersion + " schema " + std::to_string(kCsvSchemaVersion) + "\n# config " +
         to_json(config).dump() + "\n";
}

std::string csv_row(const EvalRow& row) {
  std::string per_depth;
  for (std::size_t i = 0; i < row.loss_per_depth.size(); ++i) {
    if (i) per_depth += ";";
    per_depth += format_number(row.loss_per_depth[i]);
  }
  std::ostringstream os;
  os << row.env_step << ',' << row.episodes << ',' << format_number(row.success_rate) << ','
     << format_number(row.mean_return) << ',' << format_number(row.mean_steps_to_success) << ','
     << row.unreachable << ',' << format_number(row.loss_total) << ',' << csv_quote(per_depth) << ','
     << row.train_steps;
  return os.str();
}

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training

TrainResult run_train(const RunConfig& config, const TrainOptions& options) {
  config.validate();
  set_threads(config.threads);
  std::ostream* log = options.log;

  DemoFile demos;
  if (!options.demo_path.empty()) {
    demos = load_demo_file(options.demo_path);
    check_demo_compatibility(demos, config);
  } else {
    demos = generate_demos(config, log);
  }

  TrainResult result;
  const fs::path out_dir(config.output_dir);
  std::ofstream csv;
  std::unique_ptr<ReplayLog> replay_log;
  if (options.write_outputs) {
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "config.json") << to_json(config).dump(2) << '\n';
    result.csv_path = (out_dir / "metrics.csv").string();
    csv.open(result.csv_path);
    if (!csv) throw DataError("cannot write '" + result.csv_path + "'");
    csv << csv_preamble(config) << join(train_csv_columns(), ",") << '\n' << std::flush;
    result.checkpoint_path = (out_dir / "checkpoint.c2f").string();
    if (config.schedule.replay_log) {
      replay_log = std::make_unique<ReplayLog>((out_dir / "replay.c2f").string(), to_json(config));
      replay_log->append(demos.transitions);
    }
  }

  Learner learner(config.agent, config.learner, derive_seed(SeedStream::kModel, config.seed, 0));
  ReplayBuffer buffer(config.learner.buffer_capacity, config.learner.demo_fraction,
                      derive_seed(SeedStream::kReplay, config.seed, 0));
  buffer.add(demos.transitions);
  say(log, "replay seeded with " + std::to_string(buffer.size()) + " demo transitions");

  std::mt19937_64 explore_rng(derive_seed(SeedStream::kExplore, config.seed, 0));
  Environment env(config.task_spec, config.rig);
  int episodes = 0;
  ObservationPtr obs = env.reset(derive_seed(SeedStream::kTrainEpisode, config.seed, 0));

  double loss_sum = 0.0;
  std::vector<double> depth_sum(static_cast<std::size_t>(config.agent.depth()), 0.0);
  int loss_count = 0;
  std::vector<Transition> pending_log;
  const json config_json = to_json(config);

  auto checkpoint = [&](const std::string& path, int env_step) {
    save_checkpoint(path, config_json, learner, {{"env_step", env_step}, {"episodes", episodes}});
  };

  auto record = [&](int env_step) {
    EvalRow row;
    row.env_step = env_step;
    row.episodes = episodes;
    const EvalSummary eval = evaluate(learner.model(), config, config.schedule.eval_episodes);
    row.success_rate = eval.success_rate;
    row.mean_return = eval.mean_return;
    row.mean_steps_to_success = eval.mean_steps_to_success;
    row.unreachable = eval.unreachable;
    row.train_steps = learner.steps();
    if (loss_count > 0) {
      row.loss_total = loss_sum / loss_count;
      for (double d : depth_sum) row.loss_per_depth.push_back(d / loss_count);
    } else {
      row.loss_total = std::numeric_limits<double>::quiet_NaN();
    }
    loss_sum = 0.0;
    std::fill(depth_sum.begin(), depth_sum.end(), 0.0);
    loss_count = 0;
    result.rows.push_back(row);
    say(log, "step " + std::to_string(env_step) + " success " + format_number(row.success_rate) + " return " +
                 format_number(row.mean_return) + " loss " + format_number(row.loss_total));
    if (options.write_outputs) {
      csv << csv_row(row) << '\n' << std::flush;
      checkpoint(result.checkpoint_path, env_step);
      if (replay_log) {
        replay_log->append(pending_log);
        pending_log.clear();
      }
    }
  };

  for (int step = 1; step <= config.schedule.total_env_steps; ++step) {
    const ActionSelection sel = select_action<float>(*obs, learner.model(), config.agent, true, explore_rng);
    const StepResult r = env.step(sel.pose);
    Transition t{obs, sel.action, r.reward, r.obs, r.terminal, false};
    if (replay_log) pending_log.push_back(t);
    buffer.add(std::move(t));
    obs = r.obs;
    if (r.terminal) {
      ++episodes;
      obs = env.reset(derive_seed(SeedStream::kTrainEpisode, config.seed, static_cast<std::uint64_t>(episodes)));
    }
    for (int k = 0; k < config.learner.train_steps_per_env_step; ++k) {
      TrainMetrics m;
      try {
        m = learner.train_step(buffer);
      } catch (const TrainingDivergedError&) {
        if (options.write_outputs) checkpoint((out_dir / "checkpoint_diverged.c2f").string(), step);
        throw;
      }
      if (!m.ready) break;
      loss_sum += m.loss_total;
      for (std::size_t n = 0; n < depth_sum.size() && n < m.loss_per_depth.size(); ++n) {
        depth_sum[n] += m.loss_per_depth[n];
      }
      ++loss_count;
    }
    if (step % config.schedule.eval_cadence == 0 || step == config.schedule.total_env_steps) record(step);
  }
  if (config.schedule.total_env_steps == 0) record(0);
  return result;
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<std::vector<int>> parse_grid_list(const std::string& text) {
  std::vector<std::vector<int>> grids;
  std::stringstream configs(text);
  std::string item;
  while (std::getline(configs, item, ';')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](char c) { return c == '(' || c == ')' || c == ' '; }),
               item.end());
    if (item.empty()) continue;
    std::vector<int> sizes;
    std::stringstream ss(item);
    std::string num;
    while (std::getline(ss, num, ',')) {
      try {
        std::size_t used = 0;
        sizes.push_back(std::stoi(num, &used));
        if (used != num.size()) throw std::invalid_argument(num);
      } catch (const std::exception&) {
        throw ConfigError("bad grid size '" + num + "' in sweep list '" + text + "'");
      }
    }
    grids.push_back(sizes);
  }
  if (grids.empty()) throw ConfigError("sweep list '" + text + "' names no configuration");
  return grids;
}

SweepResult run_sweep(const RunConfig& base, const std::vector<std::vector<int>>& grids, const TrainOptions& options) {
  SweepResult sweep;
  // Invalid configurations become failure rows rather than aborting the sweep.
  std::vector<RunConfig> configs;
  std::vector<std::string> invalid;
  for (const auto& g : grids) {
    RunConfig c = base;
    c.agent.grid_sizes = g;
    std::string dir = "grid";
    for (int s : g) dir += "_" + std::to_string(s);
    c.output_dir = (fs::path(base.output_dir) / dir).string();
    std::string error;
    try {
      c.validate();
    } catch (const ConfigError& e) {
      error = e.what();
    }
    configs.push_back(c);
    invalid.push_back(error);
  }
  std::ofstream csv;
  if (options.write_outputs) {
    fs::create_directories(base.output_dir);
    std::ofstream(fs::path(base.output_dir) / "config.json") << to_json(base).dump(2) << '\n';
    sweep.csv_path = (fs::path(base.output_dir) / "sweep.csv").string();
    csv.open(sweep.csv_path);
    std::vector<std::string> cols{"label", "depth", "grid_sizes", "quantisation_error_m", "status"};
    for (const auto& c : train_csv_columns()) cols.push_back(c);
    csv << csv_preamble(base) << join(cols, ",") << '\n' << std::flush;
  }
  for (std::size_t n = 0; n < configs.size(); ++n) {
    const RunConfig& c = configs[n];
    SweepResult::Entry entry;
    entry.grid_sizes = c.agent.grid_sizes;
    entry.label = grid_label(entry.grid_sizes);
    say(options.log, "sweep configuration " + entry.label);
    try {
      if (!invalid[n].empty()) throw ConfigError(invalid[n]);
      entry.quantisation_error = quantisation_bound(c.agent);
      entry.result = run_train(c, options);
    } catch (const std::exception& e) {
      entry.error = e.what();
      say(options.log, "configuration " + entry.label + " failed: " + entry.error);
    }
    if (options.write_outputs) {
      std::string sizes;
      for (std::size_t i = 0; i < entry.grid_sizes.size(); ++i) sizes += (i ? ";" : "") + std::to_string(entry.grid_sizes[i]);
      const std::string prefix = csv_quote(entry.label) + "," + std::to_string(entry.grid_sizes.size()) + "," +
                                 csv_quote(sizes) + "," + format_number(entry.quantisation_error) + ",";
      if (!entry.error.empty()) {
        csv << prefix << csv_quote("failed: " + entry.error) << ",,,,,,,,," << '\n';
      }
      for (const auto& row : entry.result.rows) csv << prefix << "ok," << csv_row(row) << '\n';
      csv << std::flush;
    }
    sweep.entries.push_back(std::move(entry));
  }
  return sweep;
}

// ---------------------------------------------------------------------------
// Plot

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

void write_plot_svg(const std::string& csv_path, const std::string& svg_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot read '" + csv_path + "'");
  std::string line;
  std::vector<std::string> header;
  std::map<std::string, std::vector<std::pair<double, double>>> curves;
  std::vector<std::string> order;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv_line(line);
    if (header.empty()) {
      header = fields;
      continue;
    }
    auto col = [&](const std::string& name) -> int {
      const auto it = std::find(header.begin(), header.end(), name);
      return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };
    const int xs = col("env_step");
    const int ys = col("success_rate");
    const int label_col = col("label");
    if (xs < 0 || ys < 0) throw DataError("'" + csv_path + "' lacks env_step/success_rate columns");
    if (static_cast<int>(fields.size()) <= std::max(xs, ys) || fields[std::size_t(xs)].empty()) continue;
    const std::string label = label_col >= 0 ? fields[std::size_t(label_col)] : "run";
    if (!curves.count(label)) order.push_back(label);
    curves[label].emplace_back(std::stod(fields[std::size_t(xs)]), std::stod(fields[std::size_t(ys)]));
  }
  if (header.empty()) throw DataError("'" + csv_path + "' has no header row");
  double xmax = 1.0;
  for (const auto& [label, pts] : curves) {
    for (const auto& p : pts) xmax = std::max(xmax, p.first);
  }
  const double W = 640, H = 400, L = 60, R = 150, T = 30, B = 50;
  auto px = [&](double x) { return L + (W - L - R) * x / xmax; };
  auto py = [&](double y) { return T + (H - T - B) * (1.0 - y); };
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  std::ofstream out(svg_path);
  if (!out) throw DataError("cannot write '" + svg_path + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << px(xmax) << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << L << "\" y2=\"" << py(1) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = t / 4.0;
    out << "<text x=\"" << L - 8 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << format_number(y) << "</text>\n";
    const double x = xmax * t / 4.0;
    out << "<text x=\"" << px(x) << "\" y=\"" << py(0) + 18 << "\" text-anchor=\"middle\">" << format_number(x) << "</text>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">environment steps</text>\n";
  out << "<text x=\"15\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 " << (T + H - B) / 2
      << ")\">success rate</text>\n";
  for (std::size_t c = 0; c < order.size(); ++c) {
    const auto& pts = curves[order[c]];
    const char* color = palette[c % 7];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : pts) out << px(p.first) << ',' << py(p.second) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (c + 1) << "\" fill=\"" << color << "\">" << order[c]
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace c2f
