#include "c2f/agent.hpp"

#include <cmath>
#include <sstream>
#include <string>

namespace c2f {

QNetworkConfig AgentConfig::network_config(int depth_index) const {
  QNetworkConfig net;
  net.width = width;
  net.head_hidden = head_hidden;
  net.has_head = depth_index == depth() - 1;
  net.rotation_bins = codec().bin_count();
  return net;
}

void AgentConfig::validate() const {
  if (grid_sizes.empty()) throw ConfigError("agent needs at least one Q-attention depth");
  for (int g : grid_sizes) {
    if (g < 2) throw ConfigError("grid size must be >= 2, got " + std::to_string(g));
    if (g % 8 != 0) {
      throw ConfigError("grid size must be divisible by 8 for the 3-level U-Net, got " +
                        std::to_string(g));
    }
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must be in [0, 1]");
  if (!(zoom_overlap >= 1.0)) throw ConfigError("zoom_overlap must be >= 1");
  if (!(initial_side_length > 0.0) || !initial_centre.allFinite()) {
    throw ConfigError("initial workspace cube must be finite with positive side");
  }
  if (width < 2) throw ConfigError("network width must be >= 2");
  if (head_hidden < 1) throw ConfigError("head_hidden must be positive");
  (void)codec();
}

template <typename T>
QAttentionModel<T> QAttentionModel<T>::create(const AgentConfig& config, std::uint64_t seed) {
  config.validate();
  QAttentionModel model;
  std::seed_seq seq{seed, std::uint64_t{0xC2F}};
  std::vector<std::uint64_t> seeds(config.grid_sizes.size());
  seq.generate(seeds.begin(), seeds.end());
  for (int n = 0; n < config.depth(); ++n) {
    model.online.emplace_back(config.network_config(n), seeds[static_cast<std::size_t>(n)]);
  }
  model.target = model.online;
  return model;
}

template <typename T>
VoxelIndex argmax3d(std::span<const T> voxel_q, int grid_size) {
  const auto expected = static_cast<std::size_t>(grid_size) * grid_size * grid_size;
  if (voxel_q.size() != expected || expected == 0) {
    throw StructuralError("argmax3d: " + std::to_string(voxel_q.size()) +
                          " values for grid size " + std::to_string(grid_size));
  }
  std::size_t best = 0;
  for (std::size_t v = 1; v < voxel_q.size(); ++v) {
    if (voxel_q[v] > voxel_q[best]) best = v;
  }
  return GridGeometry{Vec3::Zero(), 1.0, grid_size}.unlinear(static_cast<Eigen::Index>(best));
}

GridGeometry child_geometry(const GridGeometry& parent, const VoxelIndex& chosen, int child_size,
                            double zoom_overlap) {
  return GridGeometry{parent.voxel_centre(chosen), next_extent(parent, zoom_overlap), child_size};
}

std::vector<GridGeometry> geometry_chain(std::span<const VoxelIndex> indices,
                                         const AgentConfig& config) {
  if (indices.size() > config.grid_sizes.size()) {
    throw StructuralError("geometry_chain: " + std::to_string(indices.size()) +
                          " indices for depth " + std::to_string(config.depth()));
  }
  std::vector<GridGeometry> chain{config.root_geometry()};
  for (std::size_t n = 0; n + 1 < config.grid_sizes.size() && n < indices.size(); ++n) {
    chain.push_back(child_geometry(chain.back(), indices[n], config.grid_sizes[n + 1],
                                   config.zoom_overlap));
  }
  return chain;
}

template <typename T>
ActionSelection select_action(const Observation& obs, QAttentionModel<T>& model,
                              const AgentConfig& config, bool explore, std::mt19937_64& rng) {
  if (model.depth() != config.depth()) {
    throw StructuralError("model has " + std::to_string(model.depth()) + " depths, config " +
                          std::to_string(config.depth()));
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  auto explore_now = [&]() { return explore && config.epsilon > 0.0 && coin(rng) < config.epsilon; };

  ActionSelection out;
  GridGeometry geometry = config.root_geometry();
  for (int n = 0; n < config.depth(); ++n) {
    const VoxelGrid grid = voxelize(obs, geometry, n);
    auto& net = model.online[static_cast<std::size_t>(n)];
    const QOutput<T> q = q_forward<T>(grid, obs.proprio, net);
    VoxelIndex chosen = argmax3d<T>(
        std::span<const T>(q.voxel_q.data(), static_cast<std::size_t>(q.voxel_q.size())),
        geometry.grid_size);
    if (explore_now()) {
      std::uniform_int_distribution<int> pick(0, geometry.grid_size - 1);
      chosen = VoxelIndex{pick(rng), pick(rng), pick(rng)};
    }
    out.action.voxel_indices.push_back(chosen);
    out.grids.push_back(geometry);

    if (n == config.depth() - 1) {
      const int bins = net.config().rotation_bins;
      const auto& rot = *q.rotation_q;
      for (int axis = 0; axis < 3; ++axis) {
        const T* row = rot.data() + axis * bins;
        int best = 0;
        for (int b = 1; b < bins; ++b) {
          if (row[b] > row[best]) best = b;
        }
        if (explore_now()) best = std::uniform_int_distribution<int>(0, bins - 1)(rng);
        out.action.rotation_bins[static_cast<std::size_t>(axis)] = best;
      }
      const auto& grip = *q.gripper_q;
      int g = grip.values[1] > grip.values[0] ? 1 : 0;
      if (explore_now()) g = std::uniform_int_distribution<int>(0, 1)(rng);
      out.action.gripper_bin = g;
    } else {
      geometry = child_geometry(geometry, chosen, config.grid_sizes[static_cast<std::size_t>(n) + 1],
                                config.zoom_overlap);
    }
  }
  out.pose = action_to_pose(out.action, out.grids, config.codec());
  return out;
}

DiscreteAction encode_demo_action(const Pose& target, const AgentConfig& config,
                                  int* clamped_depths) {
  config.validate();
  GridGeometry geometry = config.root_geometry();
  const auto root = world_to_voxel_index(target.translation, geometry);
  if (!root) {
    const Vec3 lo = geometry.origin();
    const Vec3 hi = lo + Vec3::Constant(geometry.side_length);
    const char* axes = "xyz";
    for (int a = 0; a < 3; ++a) {
      if (!(target.translation[a] >= lo[a] && target.translation[a] <= hi[a])) {
        std::ostringstream os;
        os << "demo target " << axes[a] << " = " << target.translation[a]
           << " lies outside the workspace [" << lo[a] << ", " << hi[a] << "]";
        throw EncodingError(os.str());
      }
    }
    throw EncodingError("demo target translation is not finite");
  }
  int clamped = 0;
  DiscreteAction action;
  VoxelIndex idx = *root;
  for (int n = 0; n < config.depth(); ++n) {
    if (n > 0) {
      const auto inside = world_to_voxel_index(target.translation, geometry);
      if (inside) {
        idx = *inside;
      } else {
        idx = clamped_voxel_index(target.translation, geometry);
        ++clamped;
      }
    }
    action.voxel_indices.push_back(idx);
    if (n + 1 < config.depth()) {
      geometry = child_geometry(geometry, idx, config.grid_sizes[static_cast<std::size_t>(n) + 1],
                                config.zoom_overlap);
    }
  }
  const RotationCodec codec = config.codec();
  for (int a = 0; a < 3; ++a) {
    action.rotation_bins[static_cast<std::size_t>(a)] = codec.encode(target.rotation[a]);
  }
  action.gripper_bin = target.gripper;
  if (clamped_depths != nullptr) *clamped_depths = clamped;
  return action;
}

double quantisation_bound(const AgentConfig& config) {
  double side = config.initial_side_length;
  for (std::size_t n = 0; n + 1 < config.grid_sizes.size(); ++n) {
    side = config.zoom_overlap * side / config.grid_sizes[n];
  }
  return side / (2.0 * config.grid_sizes.back());
}

template struct QAttentionModel<float>;
template struct QAttentionModel<double>;
template VoxelIndex argmax3d<float>(std::span<const float>, int);
template VoxelIndex argmax3d<double>(std::span<const double>, int);
template ActionSelection select_action<float>(const Observation&, QAttentionModel<float>&,
                                              const AgentConfig&, bool, std::mt19937_64&);
template ActionSelection select_action<double>(const Observation&, QAttentionModel<double>&,
                                               const AgentConfig&, bool, std::mt19937_64&);

}  // namespace c2f
