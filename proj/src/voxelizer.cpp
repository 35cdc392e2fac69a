#include "c2f/voxelizer.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace c2f {

Eigen::Index VoxelGrid::occupied_count() const {
  Eigen::Index n = 0;
  const int occ = occupancy_channel();
  for (Eigen::Index v = 0; v < geometry.voxel_count(); ++v) n += data[v * channels() + occ] > 0.5f;
  return n;
}

namespace {

void check_geometry(const GridGeometry& geometry) {
  if (geometry.grid_size < 2) {
    throw ConfigError("grid_size must be >= 2, got " + std::to_string(geometry.grid_size));
  }
  if (!geometry.centre.allFinite() || !std::isfinite(geometry.side_length)) {
    throw ArgumentError("voxel grid centre and extent must be finite");
  }
  if (!(geometry.side_length > 0.0)) {
    throw ArgumentError("voxel grid side length must be positive");
  }
}

// Per-axis floor index, or -1 when outside [0, g].
int axis_index(double coordinate, double origin, double voxel_size, int g) {
  const double scaled = (coordinate - origin) / voxel_size;
  if (!(scaled >= 0.0) || scaled > g) return -1;
  const int idx = static_cast<int>(std::floor(scaled));
  return idx >= g ? g - 1 : idx;
}

}  // namespace

VoxelGrid voxelize(const Observation& obs, int grid_size, const Vec3& centre, double side_length,
                   int depth_index) {
  return voxelize(obs, GridGeometry{centre, side_length, grid_size}, depth_index);
}

VoxelGrid voxelize(const Observation& obs, const GridGeometry& geometry, int depth_index) {
  check_geometry(geometry);
  obs.validate();

  VoxelGrid grid;
  grid.geometry = geometry;
  grid.depth_index = depth_index;
  grid.feature_channels = 3;
  const int channels = grid.channels();
  const Eigen::Index voxels = geometry.voxel_count();
  grid.data = Eigen::VectorXf::Zero(voxels * channels);

  // Double accumulators keep the mean insensitive to camera order.
  std::vector<double> sums(static_cast<std::size_t>(voxels) * 3, 0.0);
  std::vector<int> counts(static_cast<std::size_t>(voxels), 0);

  const Vec3 origin = geometry.origin();
  const double voxel = geometry.voxel_size();
  const int g = geometry.grid_size;
  for (const CameraCloud& cloud : obs.clouds) {
    for (Eigen::Index cell = 0; cell < cloud.cells(); ++cell) {
      if (!cloud.is_valid(cell)) continue;
      const int i = axis_index(cloud.points(cell, 0), origin.x(), voxel, g);
      const int j = axis_index(cloud.points(cell, 1), origin.y(), voxel, g);
      const int k = axis_index(cloud.points(cell, 2), origin.z(), voxel, g);
      if (i < 0 || j < 0 || k < 0) {
        ++grid.discarded_points;
        continue;
      }
      const auto v = static_cast<std::size_t>(geometry.linear({i, j, k}));
      ++counts[v];
      for (int c = 0; c < 3; ++c) sums[v * 3 + c] += cloud.colors(cell, c);
    }
  }

  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      for (int k = 0; k < g; ++k) {
        const VoxelIndex idx{i, j, k};
        const auto v = static_cast<std::size_t>(geometry.linear(idx));
        float* cell = grid.data.data() + static_cast<Eigen::Index>(v) * channels;
        const Vec3 centre = origin + Vec3(i + 0.5, j + 0.5, k + 0.5) * voxel;
        cell[0] = static_cast<float>(centre.x());
        cell[1] = static_cast<float>(centre.y());
        cell[2] = static_cast<float>(centre.z());
        if (counts[v] > 0) {
          for (int c = 0; c < 3; ++c) cell[3 + c] = static_cast<float>(sums[v * 3 + c] / counts[v]);
          cell[grid.occupancy_channel()] = 1.0f;
        }
      }
    }
  }
  return grid;
}

Vec3 voxel_index_to_world(const VoxelIndex& index, const GridGeometry& geometry) {
  return geometry.voxel_centre(index);
}

std::optional<VoxelIndex> world_to_voxel_index(const Vec3& point, const GridGeometry& geometry) {
  const Vec3 origin = geometry.origin();
  const double voxel = geometry.voxel_size();
  const int g = geometry.grid_size;
  const int i = axis_index(point.x(), origin.x(), voxel, g);
  const int j = axis_index(point.y(), origin.y(), voxel, g);
  const int k = axis_index(point.z(), origin.z(), voxel, g);
  if (i < 0 || j < 0 || k < 0) return std::nullopt;
  return VoxelIndex{i, j, k};
}

VoxelIndex clamped_voxel_index(const Vec3& point, const GridGeometry& geometry) {
  const Vec3 scaled = (point - geometry.origin()) / geometry.voxel_size();
  auto clamp_axis = [&](double s) {
    const double f = std::floor(s);
    if (!(f >= 0.0)) return 0;
    if (f >= geometry.grid_size) return geometry.grid_size - 1;
    return static_cast<int>(f);
  };
  return VoxelIndex{clamp_axis(scaled.x()), clamp_axis(scaled.y()), clamp_axis(scaled.z())};
}

double next_extent(const GridGeometry& parent, double zoom_overlap) {
  if (!(zoom_overlap >= 1.0)) {
    throw ConfigError("zoom_overlap must be >= 1, got " + std::to_string(zoom_overlap));
  }
  return zoom_overlap * parent.side_length / parent.grid_size;
}

}  // namespace c2f
