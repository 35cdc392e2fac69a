#pragma once

#include <cstdint>
#include <deque>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "c2f/agent.hpp"
#include "c2f/core_types.hpp"
#include "c2f/qnet.hpp"

namespace c2f {

struct LearnerConfig {
  // How next-state centroids below depth 1 are chosen for the bootstrap target.
  enum class NextStateDescent { kOnline, kTarget };

  double gamma = 0.99;
  double tau = 0.005;
  double learning_rate = 1e-3;
  OptimizerConfig::Kind optimizer = OptimizerConfig::Kind::kAdam;
  int batch_size = 32;
  double reg_weight = 1e-6;
  double demo_fraction = 0.5;
  std::size_t buffer_capacity = 50000;
  int train_steps_per_env_step = 1;
  NextStateDescent next_state_descent = NextStateDescent::kOnline;
  double stillness_threshold = 1e-3;  // metres per frame
  int demo_stride = 1;

  void validate() const;
};

// Fixed-capacity replay memory with separate demo and online pools. When full,
// the oldest online transition is evicted first; demos go only once no online
// transitions remain. Safe for one writer and one reader.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, double demo_fraction, std::uint64_t seed);

  void add(Transition transition);
  void add(std::span<const Transition> transitions);

  std::size_t size() const;
  std::size_t demo_count() const;
  std::size_t online_count() const;
  std::size_t capacity() const { return capacity_; }
  bool ready(std::size_t batch_size) const { return size() >= batch_size && batch_size > 0; }

  // Uniform sampling with replacement. While both pools are non-empty,
  // round(demo_fraction * batch) items come from the demo pool.
  std::vector<Transition> sample(std::size_t batch_size);

  // Every stored transition, demos first, each pool oldest first.
  std::vector<Transition> snapshot() const;

 private:
  std::size_t capacity_;
  double demo_fraction_;
  std::deque<Transition> demos_;
  std::deque<Transition> online_;
  std::mt19937_64 rng_;
  mutable std::mutex mutex_;
};

struct TrajectoryFrame {
  ObservationPtr obs;
  Pose pose;  // end-effector pose at which `obs` was captured
};
using Trajectory = std::vector<TrajectoryFrame>;

// A frame is a keyframe when the gripper state changes, or when the
// end-effector comes to rest (per-frame displacement below the threshold right
// after a frame that was moving). The final frame is always a keyframe.
// Adjacent keyframes at the same position merge into the later one.
std::vector<int> keyframe_discovery(const Trajectory& trajectory, double stillness_threshold = 1e-3);

// Transitions from intermediate frames (every `stride`-th frame plus every
// keyframe) to the next keyframe. Reaching the final frame of a successful
// demo pays the success reward and terminates.
std::vector<Transition> demo_augmentation(const Trajectory& trajectory, std::span<const int> keyframes,
                                          int stride, const AgentConfig& config, bool success = true);

template <typename T>
struct TdLoss {
  T total = T(0);
  std::vector<T> per_depth;  // TD + regulariser (+ head terms at the final depth)
  T head = T(0);             // rotation and gripper TD terms only
};

// Q-attention loss summed over depths. Gradients are accumulated into
// `model.online[n].params()` (after zeroing) when `with_gradients` is set.
template <typename T>
TdLoss<T> td_loss(std::span<const Transition> batch, QAttentionModel<T>& model,
                  const AgentConfig& agent, const LearnerConfig& config, bool with_gradients = true);

struct TrainMetrics {
  bool ready = false;
  double loss_total = 0.0;
  std::vector<double> loss_per_depth;
  double head_loss = 0.0;
  std::vector<double> grad_norms;
  std::size_t buffer_size = 0;
  std::size_t demo_count = 0;
  std::size_t batch_demos = 0;
};

// Owns the online/target networks and their optimizers.
class Learner {
 public:
  Learner(const AgentConfig& agent, const LearnerConfig& config, std::uint64_t seed);

  // Samples a batch, takes one gradient step per depth and blends the targets.
  // Returns ready = false without training while the buffer is too small.
  TrainMetrics train_step(ReplayBuffer& buffer);
  // Same update on a caller-supplied batch.
  TrainMetrics update(std::span<const Transition> batch);

  QAttentionModel<float>& model() { return model_; }
  const QAttentionModel<float>& model() const { return model_; }
  std::vector<Optimizer<float>>& optimizers() { return optimizers_; }
  const AgentConfig& agent_config() const { return agent_; }
  const LearnerConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }

 private:
  AgentConfig agent_;
  LearnerConfig config_;
  QAttentionModel<float> model_;
  std::vector<Optimizer<float>> optimizers_;
  std::int64_t steps_ = 0;
};

}  // namespace c2f
