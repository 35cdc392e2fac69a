// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "c2f/agent.hpp"
#include "c2f/config.hpp"
#include "c2f/env.hpp"
#include "c2f/learner.hpp"
#include "c2f/runner.hpp"
#include "c2f/voxelizer.hpp"
#include "test_util.hpp"

using namespace c2f;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr int kTargets = 10000;
constexpr double kBoundSlack = 1e-12;  // metres, floating-point headroom on the exact bound
constexpr double kCriterion1Seconds = 10.0;
constexpr double kPrimitiveRelError = 1e-4;
constexpr double kNetworkRelError = 1e-3;
constexpr double kCriterion3Seconds = 60.0;
constexpr double kFeatureTolerance = 1e-6;
constexpr double kOverfitRatio = 0.01;
constexpr int kOverfitSteps = 500;
constexpr double kReachBar = 0.8;
constexpr double kLiftBar = 0.6;
constexpr int kRunsToPass = 2;
constexpr double kRunMinutes = 30.0;
constexpr double kSweepMargin16 = 0.1;
constexpr double kSweepMargin888 = 0.15;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome criterion1() {
  const auto start = Clock::now();
  std::ostringstream detail;
  bool pass = true;
  for (const auto& grids : {std::vector<int>{16, 16}, std::vector<int>{16}}) {
    AgentConfig config;
    config.grid_sizes = grids;
    const double bound = 1.0 / (2.0 * std::pow(16.0, double(grids.size())));
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_axis = 0.0;
    double worst_euclid = 0.0;
    int within = 0;
    for (int n = 0; n < kTargets; ++n) {
      const Vec3 target(u(rng), u(rng), u(rng));
      const DiscreteAction a = encode_demo_action(Pose::make(target, Vec3::Zero(), kGripperOpen), config);
      const Vec3 p = action_to_pose(a, geometry_chain(a.voxel_indices, config), config.codec()).translation;
      const double axis = (p - target).cwiseAbs().maxCoeff();
      worst_axis = std::max(worst_axis, axis);
      worst_euclid = std::max(worst_euclid, (p - target).norm());
      within += axis <= bound + kBoundSlack;
    }
    pass = pass && within == kTargets;
    detail << "N=" << grids.size() << " per-axis max " << worst_axis * 1e3 << " mm (bound " << bound * 1e3
           << " mm, " << within << "/" << kTargets << " within; euclidean max " << worst_euclid * 1e3 << " mm); ";
  }
  const double secs = seconds_since(start);
  pass = pass && secs < kCriterion1Seconds;
  detail << secs << " s";
  return {pass, detail.str()};
}

Outcome criterion2() {
  std::ostringstream detail;
  std::mt19937_64 rng(7);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  int argmax_ok = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<float> q(16 * 16 * 16);
    for (auto& v : q) v = noise(rng);
    int bi = 0, bj = 0, bk = 0;
    float best = q[0];
    for (int i = 0; i < 16; ++i) {
      for (int j = 0; j < 16; ++j) {
        for (int k = 0; k < 16; ++k) {
          const float v = q[static_cast<std::size_t>((i * 16 + j) * 16 + k)];
          if (v > best) {
            best = v;
            bi = i, bj = j, bk = k;
          }
        }
      }
    }
    argmax_ok += argmax3d<float>(q, 16) == VoxelIndex{bi, bj, bk};
  }

  int voxel_ok = 0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<float> col(0.0f, 1.0f);
  double worst_feature = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Vec3 centre(0.3 + 0.4 * u(rng), 0.3 + 0.4 * u(rng), 0.3 + 0.4 * u(rng));
    const double side = 0.2 + 0.8 * u(rng);
    const int g = t % 2 == 0 ? 8 : 16;
    const Vec3 p = centre + (Vec3(u(rng), u(rng), u(rng)) - Vec3::Constant(0.5)) * side;
    const Eigen::Vector3f c(col(rng), col(rng), col(rng));
    const Observation obs = c2f::testing::points_observation({p}, {c});
    const VoxelGrid grid = voxelize(obs, g, centre, side, 0);

    // Scalar oracle on the stored single-precision point.
    const double px[3] = {double(float(p.x())), double(float(p.y())), double(float(p.z()))};
    int idx[3];
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      const double origin = centre[a] - side / 2.0;
      const double s = (px[a] - origin) / (side / g);
      if (s < 0.0 || s > g) inside = false;
      idx[a] = std::min(g - 1, static_cast<int>(std::floor(s)));
    }
    bool ok = true;
    for (int i = 0; i < g && ok; ++i) {
      for (int j = 0; j < g && ok; ++j) {
        for (int k = 0; k < g && ok; ++k) {
          const bool hot = inside && i == idx[0] && j == idx[1] && k == idx[2];
          if (grid.occupied({i, j, k}) != hot) ok = false;
          if (hot) {
            for (int ch = 0; ch < 3; ++ch) {
              const double err = std::abs(double(grid.at({i, j, k}, 3 + ch)) - double(c[ch]));
              worst_feature = std::max(worst_feature, err);
              if (err > kFeatureTolerance) ok = false;
            }
          }
        }
      }
    }
    voxel_ok += ok;
  }
  detail << "argmax " << argmax_ok << "/100 exact; voxelize " << voxel_ok << "/1000 exact (max feature error "
         << worst_feature << ")";
  return {argmax_ok == 100 && voxel_ok == 1000, detail.str()};
}

using nn::Parameter;
using nn::Tape;
using nn::Tensor;
using nn::Var;

double primitive_error(std::vector<Parameter<double>>& params,
                       const std::function<Var(Tape<double>&, const std::vector<Var>&)>& f) {
  const c2f::testing::Projection proj{5};
  auto run = [&](bool grad) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(grad ? tape.parameter(p) : tape.constant(p.value));
    const Var loss = proj.apply(tape, f(tape, vars));
    if (grad) tape.backward(loss);
    return tape.value(loss).values[0];
  };
  for (auto& p : params) p.grad.setZero();
  run(true);
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (auto& p : params) {
    worst = std::max(worst, c2f::testing::check_param_gradient(p, [&] { return run(false); }, 1e-5, rng));
  }
  return worst;
}

Outcome criterion3() {
  const auto start = Clock::now();
  std::mt19937_64 rng(99);
  using c2f::testing::random_tensor;
  std::map<std::string, double> errors;
  {
    std::vector<Parameter<double>> p;
    p.emplace_back("x", random_tensor({2, 4, 4, 4, 3}, rng));
    p.emplace_back("w", random_tensor({3, 3, 3, 3, 4}, rng));
    p.emplace_back("b", random_tensor({4}, rng));
    errors["conv3d"] = primitive_error(p, [](Tape<double>& t, const std::vector<Var>& v) {
      return nn::conv3d(t, v[0], v[1], v[2], {3, 1, 1});
    });
  }
  {
    std::vector<Parameter<double>> p;
    p.emplace_back("x", random_tensor({2, 4, 4, 4, 3}, rng));
    errors["maxpool3d"] =
        primitive_error(p, [](Tape<double>& t, const std::vector<Var>& v) { return nn::max_pool3d(t, v[0], 2); });
  }
  {
    std::vector<Parameter<double>> p;
    p.emplace_back("x", random_tensor({2, 2, 2, 2, 3}, rng));
    errors["upsample3d"] =
        primitive_error(p, [](Tape<double>& t, const std::vector<Var>& v) { return nn::upsample3d(t, v[0], 2); });
  }
  {
    std::vector<Parameter<double>> p;
    p.emplace_back("x", random_tensor({2, 4, 4, 4, 3}, rng, -2.0, 2.0));
    errors["soft_argmax"] =
        primitive_error(p, [](Tape<double>& t, const std::vector<Var>& v) { return nn::soft_argmax3d(t, v[0]); });
  }
  {
    std::vector<Parameter<double>> p;
    p.emplace_back("x", random_tensor({3, 6}, rng));
    p.emplace_back("w", random_tensor({6, 5}, rng));
    p.emplace_back("b", random_tensor({5}, rng));
    errors["fully_connected"] = primitive_error(
        p, [](Tape<double>& t, const std::vector<Var>& v) { return nn::linear(t, v[0], v[1], v[2]); });
  }
  double worst_primitive = 0.0;
  for (const auto& [name, err] : errors) worst_primitive = std::max(worst_primitive, err);

  // Whole network through the TD loss: 8^3 grids, width 4, two transitions.
  AgentConfig agent;
  agent.grid_sizes = {8, 8};
  agent.width = 4;
  agent.head_hidden = 16;
  LearnerConfig lc;
  lc.gamma = 0.9;
  lc.reg_weight = 0.1;
  auto model = QAttentionModel<double>::create(agent, 11);
  for (auto& net : model.target) {
    for (auto& p : net.params()) p.value.values *= 1.2;
  }
  Environment env(make_task("reach_target"), make_rig("front"));
  std::vector<Transition> batch;
  for (int e = 0; e < 2; ++e) {
    Transition tr;
    tr.obs = env.reset(50 + e);
    const Vec3 target = env.scene().objects[static_cast<std::size_t>(env.scene().find("target"))].centroid();
    tr.action = encode_demo_action(Pose::make(target, Vec3(5.0, 45.0, 90.0), e), agent);
    tr.next_obs = env.step(Pose::make(target + Vec3(0.0, 0.0, 0.1), Vec3::Zero(), 1)).obs;
    tr.reward = 1.0 * e;  // unit reward keeps the loss O(1) for central differences
    tr.terminal = e == 1;
    batch.push_back(tr);
  }
  td_loss<double>(batch, model, agent, lc, true);
  auto loss = [&] { return td_loss<double>(batch, model, agent, lc, false).total; };
  double worst_network = 0.0;
  for (auto& net : model.online) {
    for (auto& p : net.params()) {
      worst_network = std::max(worst_network, c2f::testing::check_param_gradient(p, loss, 1e-5, rng, 8));
    }
  }
  const double secs = seconds_since(start);
  std::ostringstream detail;
  for (const auto& [name, err] : errors) detail << name << " " << err << "; ";
  detail << "q_forward+td_loss " << worst_network << "; " << secs << " s";
  return {worst_primitive < kPrimitiveRelError && worst_network < kNetworkRelError && secs < kCriterion3Seconds,
          detail.str()};
}

Outcome criterion4() {
  AgentConfig agent;
  agent.grid_sizes = {8, 8};
  agent.width = 8;
  agent.head_hidden = 32;
  LearnerConfig lc;
  lc.batch_size = 8;
  Learner learner(agent, lc, 3);
  const Demonstration demo = scripted_demo(make_task("reach_target"), make_rig("front"), 1);
  const auto keys = keyframe_discovery(demo.trajectory, lc.stillness_threshold);
  std::vector<Transition> batch = demo_augmentation(demo.trajectory, keys, 1, agent, demo.success);
  const Demonstration demo2 = scripted_demo(make_task("reach_target"), make_rig("front"), 2);
  const auto more = demo_augmentation(demo2.trajectory, keyframe_discovery(demo2.trajectory), 1, agent, true);
  batch.insert(batch.end(), more.begin(), more.end());
  batch.resize(std::min<std::size_t>(batch.size(), 8));

  double initial = 0.0;
  double best = 0.0;
  int reached = -1;
  for (int s = 0; s < kOverfitSteps; ++s) {
    const double l = learner.update(batch).loss_total;
    if (s == 0) initial = best = l;
    best = std::min(best, l);
    if (reached < 0 && l < kOverfitRatio * initial) reached = s + 1;
  }
  const double final_loss = td_loss<float>(batch, learner.model(), agent, lc, false).total;
  const bool overfit = final_loss < kOverfitRatio * initial;

  nn::ParamSet<float> online, target;
  online.add("w", nn::Tensor<float>({2}, nn::Array<float>::Constant(2, 1.0f)));
  target.add("w", nn::Tensor<float>({2}));
  soft_update(online, target, 0.005);
  const bool small_tau = (target[0].value.values == 0.005f).all();
  soft_update(online, target, 1.0);
  const bool unit_tau = (target[0].value.values == online[0].value.values).all();

  std::ostringstream detail;
  detail << "batch of " << batch.size() << ": loss " << initial << " -> " << final_loss << " ("
         << final_loss / initial * 100 << "% of initial, first below 1% at step " << reached
         << "); soft_update tau=1 " << (unit_tau ? "exact" : "WRONG") << ", tau=0.005 "
         << (small_tau ? "exact" : "WRONG");
  return {overfit && small_tau && unit_tau, detail.str()};
}

// Hyper-parameters of the scaled end-to-end runs.
std::vector<std::string> e2e_overrides() {
  return {"agent.grid_sizes=[8,8]",      "agent.width=16",          "learner.gamma=0.9",
          "learner.learning_rate=0.003", "learner.batch_size=16",   "schedule.total_env_steps=2000",
          "schedule.eval_cadence=100",   "schedule.eval_episodes=20"};
}

struct RunReport {
  double success = 0.0;
  double peak = 0.0;
  double minutes = 0.0;
  std::string error;
};

RunReport train_once(std::vector<std::string> overrides, const fs::path& out) {
  overrides.push_back("output_dir=" + nlohmann::json(out.string()).dump());
  RunReport report;
  const auto start = Clock::now();
  try {
    const TrainResult r = run_train(load_run_config("", overrides));
    report.success = r.final_success_rate();
    for (const auto& row : r.rows) report.peak = std::max(report.peak, row.success_rate);
  } catch (const std::exception& e) {
    report.error = e.what();
  }
  report.minutes = seconds_since(start) / 60.0;
  return report;
}

Outcome criterion5(const fs::path& out, const std::vector<std::uint64_t>& seeds) {
  std::ostringstream detail;
  bool pass = true;
  struct Task {
    std::string name, protocol;
    double bar;
    std::vector<std::string> extra;
  };
  // Lift learns from three scenes only; more gradient steps and a slower target help it settle.
  const std::vector<Task> tasks = {
      {"reach_target", "simulation", kReachBar, {}},
      {"lift_lid", "minimal", kLiftBar, {"learner.train_steps_per_env_step=3", "learner.tau=0.001"}}};
  for (const Task& task : tasks) {
    int passed = 0;
    detail << task.name << " (" << protocol_demo_count(task.protocol) << " demos, bar " << task.bar << "):";
    for (std::uint64_t seed : seeds) {
      auto o = e2e_overrides();
      o.insert(o.end(), task.extra.begin(), task.extra.end());
      o.push_back("task=" + nlohmann::json(task.name).dump());
      o.push_back("demos.protocol=" + nlohmann::json(task.protocol).dump());
      o.push_back("seed=" + std::to_string(seed));
      const RunReport r = train_once(o, out / (task.name + "_seed" + std::to_string(seed)));
      const bool ok = r.error.empty() && r.success >= task.bar && r.minutes <= kRunMinutes;
      passed += ok;
      // Only the final evaluation counts; the peak is reported to show how unstable a run was.
      detail << " seed " << seed << " "
             << (r.error.empty() ? format_number(r.success) + " (peak " + format_number(r.peak) + ")" : "error: " + r.error)
             << " in " << format_number(r.minutes) << " min;";
    }
    const bool task_pass = passed >= kRunsToPass;
    detail << " " << passed << "/" << seeds.size() << (task_pass ? " pass. " : " FAIL. ");
    pass = pass && task_pass;
  }
  return {pass, detail.str()};
}

Outcome criterion6(const fs::path& out, int sweep_steps) {
  auto o = e2e_overrides();
  o.push_back("schedule.total_env_steps=" + std::to_string(sweep_steps));
  o.push_back("seed=1");
  o.push_back("output_dir=" + nlohmann::json((out / "sweep").string()).dump());
  const RunConfig base = load_run_config("", o);
  const SweepResult sweep = run_sweep(base, {{8, 8}, {16, 16}, {8, 8, 8}});
  std::map<std::string, double> final_rate;
  std::ostringstream detail;
  bool complete = true;
  for (const auto& e : sweep.entries) {
    if (!e.error.empty()) {
      complete = false;
      detail << e.label << " failed: " << e.error << "; ";
      continue;
    }
    final_rate[e.label] = e.result.final_success_rate();
    detail << e.label << " " << format_number(final_rate[e.label]) << "; ";
  }
  if (!complete) return {false, detail.str()};
  const double s88 = final_rate["(8,8)"], s16 = final_rate["(16,16)"], s888 = final_rate["(8,8,8)"];
  const bool bigger = s16 >= s88 - kSweepMargin16;
  const bool deeper = std::abs(s888 - s16) <= kSweepMargin888;
  detail << "(16,16) >= (8,8) - " << kSweepMargin16 << ": " << (bigger ? "yes" : "no") << "; |(8,8,8) - (16,16)| <= "
         << kSweepMargin888 << ": " << (deeper ? "yes" : "no") << "; " << sweep_steps << " env steps each";
  return {bigger && deeper, detail.str()};
}

Outcome criterion7() {
  std::ostringstream detail;
  bool pass = true;
  auto check = [&](bool ok, const std::string& what) {
    pass = pass && ok;
    detail << what << (ok ? " ok; " : " WRONG; ");
  };

  // Rewards actually emitted by the environments.
  std::set<double> seen;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  for (const auto& task : task_names()) {
    const TaskSpec spec = make_task(task);
    for (std::uint64_t s = 0; s < 10; ++s) {
      const Demonstration d = scripted_demo(spec, make_rig("front"), s);
      seen.insert(d.success ? kRewardSuccess : kRewardNone);
      Environment env(spec, make_rig("front"));
      env.reset(s);
      while (env.active()) seen.insert(env.step(Pose::make(Vec3(u(rng), u(rng), u(rng)), Vec3::Zero(), 1)).reward);
    }
  }
  check(seen == std::set<double>{-1.0, 0.0, 100.0}, "reward set {-1,0,100}");
  const RunConfig defaults = load_run_config("");
  check(defaults.agent.codec().bin_count() == 72 && defaults.agent.rotation_increment == 5.0, "72 bins at 5 deg");
  check(defaults.agent.depth() == 2 && defaults.agent.grid_sizes == std::vector<int>{16, 16}, "depth 2 at 16^3");
  check(protocol_demo_count("simulation") == 10 && defaults.demos.effective_count() == 10, "10 demos");
  check(protocol_demo_count("minimal") == 3, "3 demos");
  return {pass, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string out = "acceptance_runs";
  std::string only;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int sweep_steps = 2000;
  app.add_option("--out", out, "Directory for training artifacts");
  app.add_option("--only", only, "Comma-separated criteria to run, e.g. 1,2,3");
  app.add_option("--seeds", seeds, "Run seeds of the end-to-end criterion");
  app.add_option("--sweep-steps", sweep_steps, "Environment steps per sweep configuration");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected{1, 2, 3, 4, 5, 6, 7};
  if (!only.empty()) {
    selected.clear();
    std::stringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ',')) selected.insert(std::stoi(item));
  }
  fs::create_directories(out);

  bool all = true;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!selected.count(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << std::endl;
  };
  report(1, "discretisation bound", criterion1);
  report(2, "oracle equivalence", criterion2);
  report(3, "gradient correctness", criterion3);
  report(4, "learning sanity", criterion4);
  report(7, "protocol constants", criterion7);
  report(5, "end-to-end toy learning", [&] { return criterion5(out, seeds); });
  report(6, "ablation direction", [&] { return criterion6(out, sweep_steps); });
  return all ? 0 : 1;
}
