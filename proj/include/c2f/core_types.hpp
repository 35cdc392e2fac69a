#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "c2f/errors.hpp"

namespace c2f {

using Vec3 = Eigen::Vector3d;

// Reward values emitted by the shipped environments.
inline constexpr double kRewardUnreachable = -1.0;
inline constexpr double kRewardNone = 0.0;
inline constexpr double kRewardSuccess = 100.0;

// Gripper command: 0 = closed, 1 = open.
inline constexpr int kGripperClosed = 0;
inline constexpr int kGripperOpen = 1;

// Wraps an angle in degrees into [0, 360).
double normalize_degrees(double angle);

// 6D end-effector target plus gripper command. Rotation is intrinsic X-Y-Z
// Euler angles in degrees, each in [0, 360).
struct Pose {
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();
  int gripper = kGripperOpen;

  // Normalizes the rotation and validates the gripper value.
  static Pose make(const Vec3& translation, const Vec3& rotation_degrees, int gripper);

  bool valid() const;
};

// Rotation matrix for intrinsic X-Y-Z Euler angles in degrees.
Eigen::Matrix3d euler_xyz_to_matrix(const Vec3& rotation_degrees);

// One organized camera cloud. Cell (r, c) lives at row r * width + c.
struct CameraCloud {
  using PointMatrix = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;

  int height = 0;
  int width = 0;
  PointMatrix points;
  PointMatrix colors;  // in [0, 1]
  std::vector<std::uint8_t> valid;

  static CameraCloud empty(int height, int width);

  Eigen::Index cells() const { return static_cast<Eigen::Index>(height) * width; }
  bool is_valid(Eigen::Index cell) const { return valid[static_cast<std::size_t>(cell)] != 0; }
  Eigen::Index valid_count() const;
};

struct Observation {
  std::vector<CameraCloud> clouds;
  // [gripper_open, x, y, z]
  Eigen::VectorXf proprio;

  // Throws StructuralError when camera shapes disagree or buffers are short.
  void validate() const;
};

inline constexpr int kProprioSize = 4;

using ObservationPtr = std::shared_ptr<const Observation>;

struct VoxelIndex {
  int i = 0;
  int j = 0;
  int k = 0;

  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
};

// Metadata of a cubic voxel grid: world centre, side length and voxels per axis.
struct GridGeometry {
  Vec3 centre = Vec3::Constant(0.5);
  double side_length = 1.0;
  int grid_size = 16;

  double voxel_size() const { return side_length / grid_size; }
  Vec3 origin() const { return centre - Vec3::Constant(0.5 * side_length); }
  bool contains(const VoxelIndex& index) const;
  // Linear index with k fastest.
  Eigen::Index linear(const VoxelIndex& index) const {
    return (static_cast<Eigen::Index>(index.i) * grid_size + index.j) * grid_size + index.k;
  }
  VoxelIndex unlinear(Eigen::Index linear) const;
  Eigen::Index voxel_count() const {
    return static_cast<Eigen::Index>(grid_size) * grid_size * grid_size;
  }
  // Throws IndexError for indices outside the grid.
  Vec3 voxel_centre(const VoxelIndex& index) const;
};

class RotationCodec {
 public:
  explicit RotationCodec(double increment_degrees = 5.0);

  double increment() const { return increment_; }
  int bin_count() const { return bins_; }

  int encode(double angle_degrees) const;
  double decode(int bin) const;

 private:
  double increment_;
  int bins_;
};

struct DiscreteAction {
  std::vector<VoxelIndex> voxel_indices;  // one per depth, coarse first
  std::array<int, 3> rotation_bins{0, 0, 0};
  int gripper_bin = kGripperOpen;

  friend bool operator==(const DiscreteAction&, const DiscreteAction&) = default;
};

struct Transition {
  ObservationPtr obs;
  DiscreteAction action;
  double reward = 0.0;
  ObservationPtr next_obs;
  bool terminal = false;
  bool is_demo = false;
};

int encode_rotation(double angle_degrees, const RotationCodec& codec);
double decode_rotation(int bin, const RotationCodec& codec);

// Translation comes from the centre of the final depth's selected voxel.
Pose action_to_pose(const DiscreteAction& action, std::span<const GridGeometry> grids,
                    const RotationCodec& codec);

}  // namespace c2f
