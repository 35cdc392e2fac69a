#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "c2f/core_types.hpp"
#include "c2f/qnet.hpp"
#include "c2f/voxelizer.hpp"

namespace c2f {

struct AgentConfig {
  std::vector<int> grid_sizes{16, 16};  // one entry per coarse-to-fine depth
  Vec3 initial_centre = Vec3::Constant(0.5);
  double initial_side_length = 1.0;
  double rotation_increment = 5.0;
  double epsilon = 0.05;
  double zoom_overlap = 1.0;
  int width = 64;
  int head_hidden = 256;

  int depth() const { return static_cast<int>(grid_sizes.size()); }
  RotationCodec codec() const { return RotationCodec(rotation_increment); }
  GridGeometry root_geometry() const {
    return GridGeometry{initial_centre, initial_side_length, grid_sizes.at(0)};
  }
  QNetworkConfig network_config(int depth_index) const;

  // Throws ConfigError on any violated invariant.
  void validate() const;
};

// Online networks theta_1..theta_N (the last one owns the rotation/gripper
// head phi) and their target copies.
template <typename T>
struct QAttentionModel {
  std::vector<QNetwork<T>> online;
  std::vector<QNetwork<T>> target;

  static QAttentionModel create(const AgentConfig& config, std::uint64_t seed);
  int depth() const { return static_cast<int>(online.size()); }
};

// Index of the largest value; ties go to the smallest linear index (k fastest).
template <typename T>
VoxelIndex argmax3d(std::span<const T> voxel_q, int grid_size);

// Grid metadata for every depth implied by the indices chosen so far.
// Depth n+1 is centred on the world centre of the voxel picked at depth n.
std::vector<GridGeometry> geometry_chain(std::span<const VoxelIndex> indices,
                                         const AgentConfig& config);
GridGeometry child_geometry(const GridGeometry& parent, const VoxelIndex& chosen, int child_size,
                            double zoom_overlap);

struct ActionSelection {
  DiscreteAction action;
  Pose pose;
  std::vector<GridGeometry> grids;
};

// Runs every Q-attention depth on `obs` and assembles the next-best pose. With
// `explore`, each component is resampled uniformly with probability epsilon.
template <typename T>
ActionSelection select_action(const Observation& obs, QAttentionModel<T>& model,
                              const AgentConfig& config, bool explore, std::mt19937_64& rng);

// Expresses a continuous pose in the discrete action space by descending into
// the voxel containing the target at each depth. Throws EncodingError if the
// target is outside the depth-0 cube. `clamped_depths` counts depths where the
// target fell outside the zoomed cube and was snapped to the nearest voxel.
DiscreteAction encode_demo_action(const Pose& target, const AgentConfig& config,
                                  int* clamped_depths = nullptr);

// Worst-case translation error of the discretisation: side / (2 * prod(grid sizes)).
double quantisation_bound(const AgentConfig& config);

}  // namespace c2f
