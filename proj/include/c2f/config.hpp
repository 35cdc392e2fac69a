#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "c2f/agent.hpp"
#include "c2f/env.hpp"
#include "c2f/learner.hpp"

namespace c2f {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kCsvSchemaVersion = 1;

struct ScheduleConfig {
  int total_env_steps = 2000;
  int eval_cadence = 100;
  int eval_episodes = 20;
  // Append every online transition to replay.c2f in the output directory.
  bool replay_log = false;
};

struct DemoConfig {
  std::string protocol = "simulation";  // "simulation" (10 demos) or "minimal" (3)
  std::optional<int> count;             // overrides the protocol preset when set
  int retry_budget = 20;                // extra seeds tried when a scripted demo fails

  int effective_count() const;
};

// Demo counts of the two data regimes.
int protocol_demo_count(const std::string& protocol);

struct RunConfig {
  std::string task = "reach_target";
  AgentConfig agent;
  LearnerConfig learner;
  TaskSpec task_spec = make_task("reach_target");
  CameraRig rig = make_rig("front");
  ScheduleConfig schedule;
  DemoConfig demos;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir = "runs/default";

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
// Missing keys take defaults; unknown keys and bad values raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);

// Sets a dotted key ("learner.gamma=0.9") in a raw config document. The value
// is parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& document, const std::string& assignment);

// Reads `path` (empty for all defaults), applies overrides in order, builds and
// validates the effective config.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});

// Independent, reproducible seed streams derived from the run seed.
enum class SeedStream : std::uint64_t { kModel = 1, kReplay = 2, kExplore = 3, kTrainEpisode = 4, kDemo = 5, kEval = 6 };
std::uint64_t derive_seed(SeedStream stream, std::uint64_t run_seed, std::uint64_t index);
// Held-out evaluation scenes do not depend on the run seed.
inline std::uint64_t eval_episode_seed(std::uint64_t episode) {
  return derive_seed(SeedStream::kEval, 0, episode);
}

std::string grid_label(const std::vector<int>& grid_sizes);

}  // namespace c2f
