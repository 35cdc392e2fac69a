#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "c2f/nn_ops.hpp"
#include "c2f/voxelizer.hpp"

namespace c2f {

struct QNetworkConfig {
  int in_channels = 7;  // 3 coordinates + 3 colour features + occupancy
  int width = 64;       // channels per Inception-style block
  int proprio_dim = kProprioSize;
  bool has_head = false;  // rotation/gripper branch, final depth only
  int rotation_bins = 72;
  int head_hidden = 256;
  double leaky_slope = 0.01;
};

// Per-voxel Q-values for a batch; head outputs only when the network has a head.
template <typename T>
struct QOutput {
  nn::Tensor<T> voxel_q;                   // [B, g, g, g]
  std::optional<nn::Tensor<T>> bottleneck;  // [B, features]
  std::optional<nn::Tensor<T>> rotation_q;  // [B, 3, bins]
  std::optional<nn::Tensor<T>> gripper_q;   // [B, 2]
};

// Tape handles produced by QNetwork::forward.
struct QOutputVars {
  nn::Var voxel_q;     // [B, V]
  nn::Var bottleneck;  // [B, F] or undefined
  nn::Var rotation_q;  // [B, 3 * bins] or undefined
  nn::Var gripper_q;   // [B, 2] or undefined
};

// 3D U-Net over a voxel grid: three Inception-style encoder blocks, each
// followed by 2x max pooling, then three Inception-Upsample-Inception decoder
// stages with skip connections and a 1x1x1 head emitting one Q-value per
// voxel. With a head, the per-channel global max and soft-argmax of each
// decoder stage output are concatenated with the proprioceptive vector and fed
// through two fully connected layers to the rotation and gripper Q-values.
template <typename T>
class QNetwork {
 public:
  QNetwork() = default;
  QNetwork(const QNetworkConfig& config, std::uint64_t seed);

  const QNetworkConfig& config() const { return config_; }
  nn::ParamSet<T>& params() { return params_; }
  const nn::ParamSet<T>& params() const { return params_; }

  // `grids` is [B, g, g, g, in_channels] with g divisible by 8, `proprio` is [B, P].
  // Trainable networks register their parameters for gradients; others run as constants.
  QOutputVars forward(nn::Tape<T>& tape, nn::Var grids, nn::Var proprio, bool trainable);

  // Bottleneck width fed into the fully connected layers, proprio included.
  int bottleneck_size() const;

  template <typename U>
  QNetwork<U> cast() const;

 private:
  struct BlockIndex {
    nn::Index w1, b1, w3, b3;
  };

  BlockIndex add_block(const std::string& name, int in_channels, std::mt19937_64& rng);
  nn::Index add_uniform(const std::string& name, nn::Shape shape, double fan_in, std::mt19937_64& rng);
  nn::Var block(nn::Tape<T>& tape, const BlockIndex& b, nn::Var x, bool trainable);
  nn::Var param(nn::Tape<T>& tape, nn::Index i, bool trainable);

  template <typename U>
  friend class QNetwork;

  QNetworkConfig config_;
  nn::ParamSet<T> params_;
  std::vector<BlockIndex> blocks_;  // enc1..3, then (a, b) per decoder stage
  nn::Index head_w_ = -1, head_b_ = -1;
  nn::Index fc1_w_ = -1, fc1_b_ = -1, fc2_w_ = -1, fc2_b_ = -1;
  nn::Index rot_w_ = -1, rot_b_ = -1, grip_w_ = -1, grip_b_ = -1;
};

// Stacks grids into a [B, g, g, g, C] tensor; all grids must share a shape.
template <typename T>
nn::Tensor<T> stack_grids(std::span<const VoxelGrid* const> grids);
template <typename T>
nn::Tensor<T> stack_proprio(std::span<const Eigen::VectorXf* const> proprio, int dim);

// Inference on one grid.
template <typename T>
QOutput<T> q_forward(const VoxelGrid& grid, const Eigen::VectorXf& proprio, QNetwork<T>& net);
// Inference on a batch.
template <typename T>
QOutput<T> q_forward(std::span<const VoxelGrid* const> grids,
                     std::span<const Eigen::VectorXf* const> proprio, QNetwork<T>& net);

// First-order optimizer over a parameter set (plain SGD or Adam moments).
struct OptimizerConfig {
  enum class Kind { kSgd, kAdam };
  Kind kind = Kind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const OptimizerConfig& config, const nn::ParamSet<T>& params);

  // Applies one update from the accumulated `grad` buffers. Throws
  // TrainingDivergedError naming the first parameter with non-finite gradients.
  void step(nn::ParamSet<T>& params);

  const OptimizerConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }
  std::vector<nn::Array<T>>& first_moments() { return m_; }
  std::vector<nn::Array<T>>& second_moments() { return v_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }

 private:
  OptimizerConfig config_;
  std::vector<nn::Array<T>> m_;
  std::vector<nn::Array<T>> v_;
  std::int64_t steps_ = 0;
};

template <typename T>
void sgd_adam_step(nn::ParamSet<T>& params, Optimizer<T>& optimizer) {
  optimizer.step(params);
}

// target <- tau * online + (1 - tau) * target, elementwise.
template <typename T>
void soft_update(const nn::ParamSet<T>& online, nn::ParamSet<T>& target, double tau);

// Euclidean norm over every gradient buffer.
template <typename T>
double gradient_norm(const nn::ParamSet<T>& params);

}  // namespace c2f
