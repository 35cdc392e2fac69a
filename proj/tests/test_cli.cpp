#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "c2f/config.hpp"
#include "c2f/runner.hpp"

using namespace c2f;
namespace fs = std::filesystem;

#ifndef C2F_ARM_BINARY
#error "C2F_ARM_BINARY must name the CLI executable"
#endif

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "c2f_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(C2F_ARM_BINARY) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> data_lines(const fs::path& csv) {
  std::ifstream in(csv);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Smallest configuration that exercises the whole training loop.
const char* const kTinyOverrides =
    " --override agent.grid_sizes=[8,8] --override agent.width=4 --override agent.head_hidden=8"
    " --override learner.batch_size=4 --override schedule.total_env_steps=200"
    " --override schedule.eval_cadence=100 --override schedule.eval_episodes=3 --override demos.count=2";

RunConfig tiny_config(const fs::path& out) {
  std::vector<std::string> overrides{"agent.grid_sizes=[8,8]", "agent.width=4", "agent.head_hidden=8",
                                     "learner.batch_size=4", "schedule.total_env_steps=200",
                                     "schedule.eval_cadence=100", "schedule.eval_episodes=3", "demos.count=2",
                                     "output_dir=" + out.string()};
  return load_run_config("", overrides);
}

}  // namespace

TEST_CASE("config defaults and protocol presets") {
  const RunConfig c = load_run_config("");
  CHECK(c.task == "reach_target");
  CHECK(c.agent.grid_sizes == std::vector<int>{16, 16});
  CHECK(c.agent.rotation_increment == 5.0);
  CHECK(c.schedule.eval_cadence == 100);
  CHECK(c.learner.gamma == 0.99);
  CHECK(c.learner.tau == 0.005);
  CHECK(c.learner.batch_size == 32);
  CHECK(c.learner.buffer_capacity == 50000);
  CHECK(protocol_demo_count("simulation") == 10);
  CHECK(protocol_demo_count("minimal") == 3);
  CHECK(c.demos.effective_count() == 10);
  CHECK(load_run_config("", {"demos.protocol=minimal"}).demos.effective_count() == 3);
  CHECK(load_run_config("", {"demos.protocol=minimal", "demos.count=5"}).demos.effective_count() == 5);
  CHECK_THROWS_AS(protocol_demo_count("lots"), ConfigError);
}

TEST_CASE("config overrides and validation") {
  const RunConfig c = load_run_config("", {"learner.gamma=0.9", "agent.grid_sizes=[8,8,8]", "task=lift_lid",
                                           "env.rig=three", "seed=12"});
  CHECK(c.learner.gamma == 0.9);
  CHECK(c.agent.depth() == 3);
  CHECK(c.task_spec.name == "lift_lid");
  CHECK(c.rig.cameras.size() == 3);
  CHECK(c.seed == 12);
  CHECK_THROWS_AS(load_run_config("", {"learner.gamma"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"learner.gamm=0.5"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"bogus=1"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"learner.gamma=1.0"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"learner.gamma=\"high\""}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"task=stack"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"agent.grid_sizes=[12,12]"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config json round trip and file loading") {
  const RunConfig c = load_run_config("", {"learner.gamma=0.9", "task=place_in_zone", "env.task.step_limit=9"});
  const auto j = to_json(c);
  CHECK(to_json(run_config_from_json(j)) == j);
  CHECK(run_config_from_json(j).task_spec.step_limit == 9);
  const fs::path dir = scratch("config_file");
  std::ofstream(dir / "c.json") << j.dump(2);
  const RunConfig back = load_run_config((dir / "c.json").string(), {"seed=4"});
  CHECK(back.learner.gamma == 0.9);
  CHECK(back.seed == 4);
}

TEST_CASE("seed streams are independent and reproducible") {
  CHECK(derive_seed(SeedStream::kModel, 1, 0) == derive_seed(SeedStream::kModel, 1, 0));
  CHECK(derive_seed(SeedStream::kModel, 1, 0) != derive_seed(SeedStream::kReplay, 1, 0));
  CHECK(derive_seed(SeedStream::kModel, 1, 0) != derive_seed(SeedStream::kModel, 2, 0));
  CHECK(derive_seed(SeedStream::kModel, 1, 0) != derive_seed(SeedStream::kModel, 1, 1));
  CHECK(eval_episode_seed(3) == derive_seed(SeedStream::kEval, 0, 3));
}

TEST_CASE("grid labels and lists") {
  CHECK(grid_label({8, 8}) == "(8,8)");
  CHECK(grid_label({16, 16}) == "(16,16)");
  CHECK(grid_label({8, 8, 8}) == "(8,8,8)");
  CHECK(parse_grid_list("8,8;16,16;8,8,8") == std::vector<std::vector<int>>{{8, 8}, {16, 16}, {8, 8, 8}});
  CHECK_THROWS_AS(parse_grid_list("8,x"), ConfigError);
  CHECK_THROWS_AS(parse_grid_list(""), ConfigError);
}

TEST_CASE("training csv is deterministic and well formed") {
  const fs::path a = scratch("train_a");
  const fs::path b = scratch("train_b");
  const TrainResult ra = run_train(tiny_config(a));
  const TrainResult rb = run_train(tiny_config(b));
  CHECK(ra.rows.size() == 2);

  auto strip_dir = [](std::string text, const fs::path& dir) {
    for (auto pos = text.find(dir.string()); pos != std::string::npos; pos = text.find(dir.string())) {
      text.erase(pos, dir.string().size());
    }
    return text;
  };
  CHECK(strip_dir(read_file(a / "metrics.csv"), a) == strip_dir(read_file(b / "metrics.csv"), b));

  const std::string csv = read_file(a / "metrics.csv");
  CHECK(csv.rfind("# c2f-arm 0.1.0 schema 1\n# config {", 0) == 0);
  const auto lines = data_lines(a / "metrics.csv");
  REQUIRE(lines.size() == 3);
  const std::vector<std::string> header = fields(lines[0]);
  CHECK(header == train_csv_columns());
  CHECK(header.front() == "env_step");
  CHECK(fields(lines[1])[0] == "100");
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto f = fields(lines[r]);
    REQUIRE(f.size() == header.size());
    const double sr = std::stod(f[2]);
    CHECK(sr >= 0.0);
    CHECK(sr <= 1.0);
    CHECK(std::count(f[7].begin(), f[7].end(), ';') == 1);
  }
  CHECK(fs::exists(a / "checkpoint.c2f"));
  CHECK(fs::exists(a / "config.json"));
  const auto echoed = nlohmann::json::parse(read_file(a / "config.json"));
  CHECK(run_config_from_json(echoed).agent.grid_sizes == std::vector<int>{8, 8});
}

TEST_CASE("evaluation summary") {
  const RunConfig config = tiny_config(scratch("eval"));
  auto model = QAttentionModel<float>::create(config.agent, 1);
  const EvalSummary none = evaluate(model, config, 0);
  CHECK(none.episodes.empty());
  CHECK(std::isnan(none.mean_steps_to_success));
  const EvalSummary some = evaluate(model, config, 4);
  CHECK(some.episodes.size() == 4);
  CHECK(some.success_rate >= 0.0);
  CHECK(some.success_rate <= 1.0);
  const EvalSummary again = evaluate(model, config, 4);
  for (std::size_t e = 0; e < 4; ++e) CHECK(some.episodes[e].episode_return == again.episodes[e].episode_return);
}

TEST_CASE("sweep of one configuration is train plus labels") {
  const fs::path dir = scratch("sweep");
  RunConfig base = tiny_config(dir);
  base.schedule.total_env_steps = 100;
  const SweepResult sweep = run_sweep(base, {{8, 8}});
  REQUIRE(sweep.entries.size() == 1);
  CHECK(sweep.entries[0].error.empty());
  CHECK(sweep.entries[0].label == "(8,8)");
  CHECK(sweep.entries[0].quantisation_error == doctest::Approx(1.0 / (2.0 * 64.0)));

  RunConfig single = base;
  single.output_dir = (dir / "grid_8_8").string();
  const auto lines = data_lines(dir / "sweep.csv");
  const auto train_lines = data_lines(dir / "grid_8_8" / "metrics.csv");
  REQUIRE(lines.size() == 2);
  const auto header = fields(lines[0]);
  CHECK(header[0] == "label");
  CHECK(header[3] == "quantisation_error_m");
  const auto row = fields(lines[1]);
  CHECK(row[0] == "(8,8)");
  CHECK(std::stod(row[3]) == doctest::Approx(1.0 / 128.0));
  // the remaining columns repeat the training CSV row
  const auto train_row = fields(train_lines[1]);
  CHECK(std::vector<std::string>(row.begin() + 5, row.end()) == train_row);
}

TEST_CASE("sweep records failures and continues") {
  const fs::path dir = scratch("sweep_fail");
  RunConfig base = tiny_config(dir);
  base.schedule.total_env_steps = 100;
  const SweepResult sweep = run_sweep(base, {{12, 12}, {8, 8}});
  REQUIRE(sweep.entries.size() == 2);
  CHECK_FALSE(sweep.entries[0].error.empty());
  CHECK(sweep.entries[1].error.empty());
  const std::string csv = read_file(dir / "sweep.csv");
  CHECK(csv.find("failed") != std::string::npos);
}

TEST_CASE("cli subcommands and exit codes") {
  const fs::path dir = scratch("cli");
  const std::string out = " --out " + (dir / "run").string();
  CHECK(run_cli("demos" + std::string(kTinyOverrides) + out) == 0);
  CHECK(fs::exists(dir / "run" / "demos.c2f"));
  CHECK(run_cli("train --demos " + (dir / "run" / "demos.c2f").string() + kTinyOverrides +
                " --override schedule.total_env_steps=100" + out) == 0);
  CHECK(fs::exists(dir / "run" / "metrics.csv"));
  const std::string ckpt = (dir / "run" / "checkpoint.c2f").string();
  CHECK(run_cli("eval --checkpoint " + ckpt + " --episodes 3") == 0);
  CHECK(data_lines(dir / "run" / "eval.csv").size() == 4);
  CHECK(run_cli("eval --checkpoint " + ckpt + " --episodes 0") == 0);
  CHECK(data_lines(dir / "run" / "eval.csv").size() == 1);
  CHECK(run_cli("plot --csv " + (dir / "run" / "metrics.csv").string()) == 0);
  CHECK(read_file(dir / "run" / "metrics.svg").find("<svg") != std::string::npos);

  CHECK(run_cli("train --override learner.gamma=2" + out) == 1);
  CHECK(run_cli("train --override nonsense.key=1" + out) == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("eval --checkpoint " + (dir / "missing.c2f").string()) == 2);

  // demos for another action space are a config error
  CHECK(run_cli("train --demos " + (dir / "run" / "demos.c2f").string() + kTinyOverrides +
                " --override agent.grid_sizes=[16,16]" + out) == 1);

  // corrupt checkpoint: runtime failure naming a tensor
  fs::copy_file(ckpt, dir / "bad.c2f");
  {
    std::fstream f(dir / "bad.c2f", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(fs::file_size(dir / "bad.c2f")) - 12);
    f.put('\x7f');
  }
  const std::string cmd = std::string(C2F_ARM_BINARY) + " eval --checkpoint " + (dir / "bad.c2f").string() +
                          " > " + (dir / "bad.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 2);
  CHECK(read_file(dir / "bad.log").find("checksum") != std::string::npos);
}

TEST_CASE("threads fall back to the environment") {
  const fs::path dir = scratch("threads");
  const std::string cmd = "C2F_THREADS=2 " + std::string(C2F_ARM_BINARY) + " demos" + kTinyOverrides +
                          " --out " + dir.string() + " > /dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
  const auto config = nlohmann::json::parse(read_file(dir / "config.json"));
  CHECK(config["threads"] == 2);
}
