#pragma once

#include <string>
#include <vector>

#include "hoisplat/core.hpp"

namespace hoi {

struct SkeletonRig {
  struct Joint {
    int parent = -1;      // parent index < own index; -1 for roots
    Se3Pose rest;         // world-from-joint at rest
  };
  std::vector<Joint> joints;
  std::vector<Vec3> mesh_vertices;
  std::vector<Eigen::Vector3i> mesh_triangles;
  MatX template_weights;  // V x J, rows sum to 1, entries >= 0

  int joint_count() const { return (int)joints.size(); }
  bool valid() const;
};

struct PoseVector {
  std::vector<Vec3> joint_rotations;  // local axis-angle per joint, |w| < pi
  Vec3 root_translation = Vec3::Zero();

  static PoseVector rest(int joint_count) {
    PoseVector p;
    p.joint_rotations.assign(joint_count, Vec3::Zero());
    return p;
  }
  // Flattened (root translation + per-joint axis-angle) feature vector.
  VecX features() const;
};

struct WeightShapeMismatch : std::runtime_error {
  explicit WeightShapeMismatch(const std::string& w) : std::runtime_error(w) {}
};

// Forward kinematics: per-joint posed-from-canonical transforms.
std::vector<Se3Pose> joint_transforms(const SkeletonRig& rig, const PoseVector& pose);

// Nearest orthogonal factor of a (generally non-orthogonal) blend matrix.
Mat3 polar_rotation(const Mat3& m);

// Linear blend skinning. Positions use the full blended affine; covariances
// are conjugated by the polar rotation of the blend, which keeps them SPD.
GaussianSet skin_gaussians(const GaussianSet& set, const MatX& weights,
                           const SkeletonRig& rig, const PoseVector& pose);
GaussianSet skin_gaussians(const GaussianSet& set, const MatX& weights,
                           const std::vector<Se3Pose>& transforms);

// Skinning weights for free points: barycentric interpolation of the
// template weights at the nearest surface point.
MatX template_skinning_weights(const SkeletonRig& rig, const std::vector<Vec3>& positions);

// Closest point on the rig's template mesh; returns (triangle, barycentrics).
std::pair<int, Vec3> closest_surface_point(const SkeletonRig& rig, const Vec3& query);

// Procedural test rig: a ~1.7-unit-tall biped built from capsules.
SkeletonRig capsule_biped(int radial_segments = 8, int length_segments = 4);

SkeletonRig read_rig(const std::string& path);
void write_rig(const SkeletonRig& rig, const std::string& path);

// Evenly distributed surface samples (area-weighted, deterministic seed).
std::vector<Vec3> sample_mesh_surface(const SkeletonRig& rig, int count, uint64_t seed);

}  // namespace hoi
