#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "c2f/config.hpp"
#include "c2f/serialize.hpp"

namespace c2f {

// Scripted demos failed more often than the retry budget allows.
struct DemoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Runs scripted demos (retrying failed seeds), finds keyframes and augments.
DemoFile generate_demos(const RunConfig& config, std::ostream* log = nullptr);

struct EpisodeReport {
  std::uint64_t seed = 0;
  double episode_return = 0.0;
  int steps = 0;
  bool success = false;
  bool unreachable = false;
};

struct EvalSummary {
  std::vector<EpisodeReport> episodes;
  double success_rate = 0.0;
  double mean_return = 0.0;
  double mean_steps_to_success = 0.0;  // NaN without successes
  int unreachable = 0;
};

// Greedy rollouts on held-out scenes derive_seed(kEval, eval_seed, e).
EvalSummary evaluate(QAttentionModel<float>& model, const RunConfig& config, int episodes,
                     std::uint64_t eval_seed = 0);

struct EvalRow {
  int env_step = 0;
  int episodes = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
  double mean_steps_to_success = 0.0;
  int unreachable = 0;
  double loss_total = 0.0;
  std::vector<double> loss_per_depth;
  std::int64_t train_steps = 0;
};

struct TrainOptions {
  std::string demo_path;      // empty: generate demos in-process
  bool write_outputs = true;  // config echo, CSV, checkpoints, replay log
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<EvalRow> rows;
  std::string csv_path;
  std::string checkpoint_path;
  double final_success_rate() const { return rows.empty() ? 0.0 : rows.back().success_rate; }
};

// Seeds the buffer with demos, alternates exploration steps and gradient
// steps, evaluates greedily every cadence steps and checkpoints each time.
// On divergence a checkpoint is written before TrainingDivergedError escapes.
TrainResult run_train(const RunConfig& config, const TrainOptions& options = {});

// Column names of the training CSV, in order.
std::vector<std::string> train_csv_columns();
std::string csv_preamble(const RunConfig& config);
std::string csv_row(const EvalRow& row);

struct SweepResult {
  struct Entry {
    std::string label;
    std::vector<int> grid_sizes;
    double quantisation_error = 0.0;
    TrainResult result;
    std::string error;  // empty on success
  };
  std::vector<Entry> entries;
  std::string csv_path;
};

// Runs one training per grid configuration with shared seeds and merges the
// curves into one long-format CSV tagged by the bracket label.
SweepResult run_sweep(const RunConfig& base, const std::vector<std::vector<int>>& grids,
                      const TrainOptions& options = {});
std::vector<std::vector<int>> parse_grid_list(const std::string& text);  // "8,8;16,16;8,8,8"

// Success-rate curves of a train or sweep CSV as a standalone SVG.
void write_plot_svg(const std::string& csv_path, const std::string& svg_path);

std::string format_number(double value);

}  // namespace c2f
