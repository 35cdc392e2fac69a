#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "c2f/container.hpp"
#include "c2f/env.hpp"
#include "c2f/learner.hpp"

namespace c2f {

// Deduplicating table of observations shared by transitions. Only valid cells
// store coordinates and colours.
class ObservationTable {
 public:
  int add(const ObservationPtr& obs);  // -1 for null
  const std::vector<ObservationPtr>& observations() const { return obs_; }

  void write(io::Writer& writer, const std::string& prefix) const;
  static std::vector<ObservationPtr> read(const io::Container& container, const std::string& prefix);

 private:
  std::vector<ObservationPtr> obs_;
  std::unordered_map<const Observation*, int> index_;
};

// Writes transitions under `prefix`, building their observation table.
void write_transitions(io::Writer& writer, const std::string& prefix, std::span<const Transition> transitions);
std::vector<Transition> read_transitions(const io::Container& container, const std::string& prefix);

struct DemoFile {
  nlohmann::json config;
  std::vector<Demonstration> demos;
  std::vector<std::vector<int>> keyframes;
  std::vector<Transition> transitions;
};

void save_demo_file(const std::string& path, const DemoFile& file);
DemoFile load_demo_file(const std::string& path);

// Checkpoint: run config, code version, free-form state, and every online,
// target and optimizer tensor of the learner.
void save_checkpoint(const std::string& path, const nlohmann::json& config, Learner& learner,
                     const nlohmann::json& state);
nlohmann::json read_checkpoint_config(const std::string& path);
// Restores parameters and optimizer moments; ConfigError when the learner's
// architecture disagrees with the file. Returns the stored state.
nlohmann::json load_checkpoint(const std::string& path, Learner& learner);

// Append-only replay log: each call adds one chunk of transitions.
class ReplayLog {
 public:
  ReplayLog(const std::string& path, const nlohmann::json& config);
  void append(std::span<const Transition> transitions);
  int chunks() const { return chunks_; }

  static std::vector<Transition> read(const std::string& path);

 private:
  std::string path_;
  int chunks_ = 0;
};

}  // namespace c2f
