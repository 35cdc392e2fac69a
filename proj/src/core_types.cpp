#include "c2f/core_types.hpp"

#include <cmath>
#include <string>

#include <Eigen/Geometry>

namespace c2f {

double normalize_degrees(double angle) {
  double wrapped = std::fmod(angle, 360.0);
  if (wrapped < 0.0) wrapped += 360.0;
  // fmod of a tiny negative value can round up to exactly 360.
  if (wrapped >= 360.0) wrapped = 0.0;
  return wrapped;
}

Pose Pose::make(const Vec3& translation, const Vec3& rotation_degrees, int gripper) {
  if (gripper != kGripperClosed && gripper != kGripperOpen) {
    throw ArgumentError("gripper must be 0 (closed) or 1 (open), got " + std::to_string(gripper));
  }
  if (!translation.allFinite() || !rotation_degrees.allFinite()) {
    throw ArgumentError("pose components must be finite");
  }
  Pose pose;
  pose.translation = translation;
  pose.rotation = rotation_degrees.unaryExpr([](double a) { return normalize_degrees(a); });
  pose.gripper = gripper;
  return pose;
}

bool Pose::valid() const {
  if (gripper != kGripperClosed && gripper != kGripperOpen) return false;
  if (!translation.allFinite()) return false;
  return (rotation.array() >= 0.0).all() && (rotation.array() < 360.0).all();
}

Eigen::Matrix3d euler_xyz_to_matrix(const Vec3& rotation_degrees) {
  const Vec3 r = rotation_degrees * (M_PI / 180.0);
  return (Eigen::AngleAxisd(r.x(), Vec3::UnitX()) * Eigen::AngleAxisd(r.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(r.z(), Vec3::UnitZ()))
      .toRotationMatrix();
}

CameraCloud CameraCloud::empty(int height, int width) {
  CameraCloud cloud;
  cloud.height = height;
  cloud.width = width;
  cloud.points = PointMatrix::Zero(cloud.cells(), 3);
  cloud.colors = PointMatrix::Zero(cloud.cells(), 3);
  cloud.valid.assign(static_cast<std::size_t>(cloud.cells()), 0);
  return cloud;
}

Eigen::Index CameraCloud::valid_count() const {
  Eigen::Index n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

void Observation::validate() const {
  for (std::size_t c = 0; c < clouds.size(); ++c) {
    const CameraCloud& cloud = clouds[c];
    if (cloud.height != clouds.front().height || cloud.width != clouds.front().width) {
      throw StructuralError("camera " + std::to_string(c) + " has shape " +
                            std::to_string(cloud.height) + "x" + std::to_string(cloud.width) +
                            ", expected " + std::to_string(clouds.front().height) + "x" +
                            std::to_string(clouds.front().width));
    }
    if (cloud.points.rows() != cloud.cells() || cloud.colors.rows() != cloud.cells() ||
        static_cast<Eigen::Index>(cloud.valid.size()) != cloud.cells()) {
      throw StructuralError("camera " + std::to_string(c) + " buffers do not match its shape");
    }
  }
}

bool GridGeometry::contains(const VoxelIndex& index) const {
  return index.i >= 0 && index.j >= 0 && index.k >= 0 && index.i < grid_size &&
         index.j < grid_size && index.k < grid_size;
}

VoxelIndex GridGeometry::unlinear(Eigen::Index linear) const {
  const auto g = static_cast<Eigen::Index>(grid_size);
  return VoxelIndex{static_cast<int>(linear / (g * g)), static_cast<int>((linear / g) % g),
                    static_cast<int>(linear % g)};
}

Vec3 GridGeometry::voxel_centre(const VoxelIndex& index) const {
  if (!contains(index)) {
    throw IndexError("voxel index (" + std::to_string(index.i) + "," + std::to_string(index.j) +
                     "," + std::to_string(index.k) + ") outside grid of size " +
                     std::to_string(grid_size));
  }
  const Vec3 offset(index.i + 0.5, index.j + 0.5, index.k + 0.5);
  return origin() + offset * voxel_size();
}

RotationCodec::RotationCodec(double increment_degrees) : increment_(increment_degrees) {
  if (!(increment_degrees > 0.0) || !std::isfinite(increment_degrees)) {
    throw ConfigError("rotation increment must be positive, got " +
                      std::to_string(increment_degrees));
  }
  const double count = 360.0 / increment_degrees;
  const double rounded = std::round(count);
  if (std::abs(count - rounded) > 1e-9 * rounded) {
    throw ConfigError("rotation increment " + std::to_string(increment_degrees) +
                      " does not divide 360");
  }
  bins_ = static_cast<int>(rounded);
}

int RotationCodec::encode(double angle_degrees) const {
  if (!std::isfinite(angle_degrees)) throw ArgumentError("rotation angle must be finite");
  // Half-up rounding: floor(x + 0.5).
  const auto bin = static_cast<int>(std::floor(normalize_degrees(angle_degrees) / increment_ + 0.5));
  return bin % bins_;
}

double RotationCodec::decode(int bin) const {
  if (bin < 0 || bin >= bins_) {
    throw IndexError("rotation bin " + std::to_string(bin) + " outside [0, " +
                     std::to_string(bins_) + ")");
  }
  return bin * increment_;
}

int encode_rotation(double angle_degrees, const RotationCodec& codec) {
  return codec.encode(angle_degrees);
}

double decode_rotation(int bin, const RotationCodec& codec) { return codec.decode(bin); }

Pose action_to_pose(const DiscreteAction& action, std::span<const GridGeometry> grids,
                    const RotationCodec& codec) {
  if (action.voxel_indices.empty() || grids.size() != action.voxel_indices.size()) {
    throw StructuralError("action has " + std::to_string(action.voxel_indices.size()) +
                          " depths but grid metadata covers " + std::to_string(grids.size()));
  }
  const Vec3 translation = grids.back().voxel_centre(action.voxel_indices.back());
  const Vec3 rotation(codec.decode(action.rotation_bins[0]), codec.decode(action.rotation_bins[1]),
                      codec.decode(action.rotation_bins[2]));
  return Pose::make(translation, rotation, action.gripper_bin);
}

}  // namespace c2f
