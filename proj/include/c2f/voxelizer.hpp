#pragma once

#include <cstddef>
#include <optional>

#include <Eigen/Core>

#include "c2f/core_types.hpp"

namespace c2f {

// Dense cubic voxel grid, channels-last with layout [i][j][k][channel] (k fastest).
// Channels: 3 world coordinates of the voxel centre, M features, occupancy.
struct VoxelGrid {
  GridGeometry geometry;
  int depth_index = 0;
  int feature_channels = 3;
  Eigen::VectorXf data;
  // Valid points that fell outside the cube and were dropped.
  std::size_t discarded_points = 0;

  int channels() const { return 3 + feature_channels + 1; }
  int occupancy_channel() const { return 3 + feature_channels; }

  float at(const VoxelIndex& index, int channel) const {
    return data[geometry.linear(index) * channels() + channel];
  }
  float& at(const VoxelIndex& index, int channel) {
    return data[geometry.linear(index) * channels() + channel];
  }
  bool occupied(const VoxelIndex& index) const { return at(index, occupancy_channel()) > 0.5f; }
  Eigen::Index occupied_count() const;
};

// Fuses every valid point of every camera into one grid centred at `centre`.
// Feature channels hold the mean colour of the contributing points.
VoxelGrid voxelize(const Observation& obs, int grid_size, const Vec3& centre, double side_length,
                   int depth_index);
VoxelGrid voxelize(const Observation& obs, const GridGeometry& geometry, int depth_index);

Vec3 voxel_index_to_world(const VoxelIndex& index, const GridGeometry& geometry);
inline Vec3 voxel_index_to_world(const VoxelIndex& index, const VoxelGrid& grid) {
  return voxel_index_to_world(index, grid.geometry);
}

// floor((point - origin) / voxel_size) per axis; nullopt outside the closed cube.
// Points on the maximal face clamp to the last voxel.
std::optional<VoxelIndex> world_to_voxel_index(const Vec3& point, const GridGeometry& geometry);
inline std::optional<VoxelIndex> world_to_voxel_index(const Vec3& point, const VoxelGrid& grid) {
  return world_to_voxel_index(point, grid.geometry);
}

// Like world_to_voxel_index, but points outside the cube snap to the nearest voxel.
VoxelIndex clamped_voxel_index(const Vec3& point, const GridGeometry& geometry);

// Side length of the child grid that zooms into one voxel of `parent`.
double next_extent(const GridGeometry& parent, double zoom_overlap = 1.0);
inline double next_extent(const VoxelGrid& parent, double zoom_overlap = 1.0) {
  return next_extent(parent.geometry, zoom_overlap);
}

}  // namespace c2f
