// Command-line entry point: demos, train, eval, sweep, plot.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "c2f/runner.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kRuntime = 2, kDiverged = 3 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  long long seed = -1;
  int threads = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON run config (defaults apply to missing keys)");
  app->add_option("--override", c.overrides, "KEY=VALUE with a dotted key, repeatable")->allow_extra_args(false);
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--seed", c.seed, "Run seed");
  app->add_option("--threads", c.threads, "Worker threads (falls back to C2F_THREADS)");
}

std::vector<std::string> effective_overrides(const Common& c) {
  std::vector<std::string> o = c.overrides;
  if (c.seed >= 0) o.push_back("seed=" + std::to_string(c.seed));
  if (!c.out.empty()) o.push_back("output_dir=" + nlohmann::json(c.out).dump());
  int threads = c.threads;
  if (threads <= 0) {
    if (const char* env = std::getenv("C2F_THREADS")) {
      try {
        threads = std::stoi(env);
      } catch (const std::exception&) {
        throw c2f::ConfigError(std::string("C2F_THREADS is not an integer: ") + env);
      }
    }
  }
  if (threads > 0) o.push_back("threads=" + std::to_string(threads));
  return o;
}

c2f::RunConfig load(const Common& c) { return c2f::load_run_config(c.config_path, effective_overrides(c)); }

int run(int argc, char** argv) {
  CLI::App app{"Coarse-to-fine Q-attention on a toy manipulation world"};
  app.require_subcommand(1);

  Common demos_opts, train_opts, eval_opts, sweep_opts;
  std::string demo_file, checkpoint, grids = "8,8;16,16;8,8,8", csv_path, svg_path;
  int episodes = 20;

  CLI::App* demos = app.add_subcommand("demos", "Generate scripted demonstrations");
  add_common(demos, demos_opts);

  CLI::App* train = app.add_subcommand("train", "Train from demonstrations");
  add_common(train, train_opts);
  train->add_option("--demos", demo_file, "Demo file from the demos subcommand (generated when omitted)");

  CLI::App* eval = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--episodes", episodes, "Evaluation episodes");

  CLI::App* sweep = app.add_subcommand("sweep", "Train across grid configurations");
  add_common(sweep, sweep_opts);
  sweep->add_option("--grids", grids, "Configurations such as \"8,8;16,16;8,8,8\"");

  CLI::App* plot = app.add_subcommand("plot", "Render success curves of a CSV to SVG");
  plot->add_option("--csv", csv_path, "metrics.csv or sweep.csv")->required();
  plot->add_option("--out", svg_path, "Output SVG (defaults next to the CSV)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  namespace fs = std::filesystem;
  if (demos->parsed()) {
    const c2f::RunConfig config = load(demos_opts);
    const c2f::DemoFile file = c2f::generate_demos(config, &std::cout);
    fs::create_directories(config.output_dir);
    const std::string path = (fs::path(config.output_dir) / "demos.c2f").string();
    c2f::save_demo_file(path, file);
    std::ofstream(fs::path(config.output_dir) / "config.json") << c2f::to_json(config).dump(2) << '\n';
    std::cout << "wrote " << path << '\n';
  } else if (train->parsed()) {
    const c2f::RunConfig config = load(train_opts);
    c2f::TrainOptions options;
    options.demo_path = demo_file;
    options.log = &std::cout;
    const c2f::TrainResult result = c2f::run_train(config, options);
    std::cout << "final success rate " << c2f::format_number(result.final_success_rate()) << "\nwrote "
              << result.csv_path << "\nwrote " << result.checkpoint_path << '\n';
  } else if (eval->parsed()) {
    nlohmann::json stored = c2f::read_checkpoint_config(checkpoint);
    for (const auto& o : effective_overrides(eval_opts)) {
      // Seed selects the held-out scene set rather than retraining anything.
      if (o.rfind("seed=", 0) == 0) continue;
      c2f::apply_override(stored, o);
    }
    const c2f::RunConfig config = c2f::run_config_from_json(stored);
    c2f::Learner learner(config.agent, config.learner, 0);
    c2f::load_checkpoint(checkpoint, learner);
    const std::uint64_t seed = eval_opts.seed >= 0 ? static_cast<std::uint64_t>(eval_opts.seed) : 0;
    const c2f::EvalSummary summary = c2f::evaluate(learner.model(), config, episodes, seed);
    const fs::path out_dir = eval_opts.out.empty() ? fs::path(checkpoint).parent_path() : fs::path(eval_opts.out);
    if (!out_dir.empty()) fs::create_directories(out_dir);
    std::ofstream report(out_dir / "eval.csv");
    report << "# c2f-arm " << c2f::kVersion << " schema " << c2f::kCsvSchemaVersion << "\n# config "
           << c2f::to_json(config).dump() << "\nepisode,seed,return,steps,success,unreachable\n";
    for (std::size_t e = 0; e < summary.episodes.size(); ++e) {
      const auto& r = summary.episodes[e];
      report << e << ',' << r.seed << ',' << c2f::format_number(r.episode_return) << ',' << r.steps << ','
             << (r.success ? 1 : 0) << ',' << (r.unreachable ? 1 : 0) << '\n';
    }
    std::cout << "episodes " << summary.episodes.size() << "\nsuccess_rate "
              << c2f::format_number(summary.success_rate) << "\nmean_return "
              << c2f::format_number(summary.mean_return) << "\nmean_steps_to_success "
              << c2f::format_number(summary.mean_steps_to_success) << "\nunreachable " << summary.unreachable
              << "\nwrote " << (out_dir / "eval.csv").string() << '\n';
  } else if (sweep->parsed()) {
    const c2f::RunConfig config = load(sweep_opts);
    c2f::TrainOptions options;
    options.log = &std::cout;
    const c2f::SweepResult result = c2f::run_sweep(config, c2f::parse_grid_list(grids), options);
    for (const auto& e : result.entries) {
      std::cout << e.label << " quantisation " << c2f::format_number(e.quantisation_error) << " final success "
                << (e.error.empty() ? c2f::format_number(e.result.final_success_rate()) : "failed") << '\n';
    }
    std::cout << "wrote " << result.csv_path << '\n';
    for (const auto& e : result.entries) {
      if (!e.error.empty()) return kRuntime;
    }
  } else if (plot->parsed()) {
    if (svg_path.empty()) svg_path = (fs::path(csv_path).replace_extension(".svg")).string();
    c2f::write_plot_svg(csv_path, svg_path);
    std::cout << "wrote " << svg_path << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const c2f::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const c2f::TrainingDivergedError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
