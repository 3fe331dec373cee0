#pragma once

#include <string>
#include <vector>

#include "hoisplat/articulation.hpp"
#include "hoisplat/capture.hpp"
#include "hoisplat/core.hpp"

namespace hoi {

struct ScriptError : std::runtime_error {
  explicit ScriptError(const std::string& w) : std::runtime_error(w) {}
};

struct CameraRingSpec {
  int count = 8;
  double radius = 3.2;
  double elevation = 0.15;  // radians above the horizontal
  double focal = 55.0;      // pixels
  int width = 48, height = 48;
  Vec3 look_at = Vec3(0, 0.85, 0);
};

// Extra static gaussians rendered into images (and depth-tested into masks)
// but absent from every ground-truth output.
struct OccluderSpec {
  bool enabled = false;
  Vec3 center = Vec3::Zero();
  double radius = 0.3;
  int count = 80;
  Vec3 color = Vec3(0.4, 0.35, 0.3);
};

struct NoiseSpec {
  double pixel_sigma = 0.0;  // gaussian RGB noise, clamped to [0, 1]
  double pose_jitter = 0.0;  // magnitude of recorded object-pose corruption
};

// Everything needed to render a capture. Pose curves are keyframes at
// ascending times in [0, frame_count); frames interpolate linearly (slerp
// for object rotations) and clamp beyond the last key.
struct SceneScript {
  SkeletonRig rig;
  GaussianSet human_canonical;  // colored canonical human, skinned per frame
  std::vector<double> human_key_times;
  std::vector<PoseVector> human_keys;
  GaussianSet object;
  std::vector<double> object_key_times;
  std::vector<Se3Pose> object_keys;
  CameraRingSpec cameras;
  int frame_count = 1;
  OccluderSpec occluder;
  NoiseSpec noise;
  uint64_t seed = 1;
};

struct GeneratedCapture {
  Capture capture;  // recorded poses: human exact, object possibly jittered
  std::vector<PoseVector> true_human_poses;
  std::vector<Se3Pose> true_object_poses;
  SkeletonRig rig;
  GaussianSet human_gt;  // canonical
  GaussianSet object_gt;
  GaussianSet occluder;  // empty when disabled
};

// Object library. checker > 0 colors by a 3D checkerboard with that many
// cells per unit; checker = 0 uses a smooth position gradient.
GaussianSet make_box_object(const Vec3& half_extents, int count, int checker, uint64_t seed);
GaussianSet make_sphere_object(double radius, int count, int checker, uint64_t seed);
GaussianSet make_chair_object(double size, int count, uint64_t seed);  // checkerboard boxes

// Opaque, smoothly colored canonical human sampled from the rig surface.
GaussianSet make_human_gt(const SkeletonRig& rig, int count, uint64_t seed);

// Keyframe sampling (shared with the CLI's animate stage).
PoseVector sample_human_curve(const SceneScript& script, double t);
Se3Pose sample_object_curve(const SceneScript& script, double t);

// Renders composited frames with per-entity depth-tested masks
// (group alpha > 0.5). Deterministic for a fixed script.
GeneratedCapture generate_capture(const SceneScript& script);

// JSON script file; documented in the README. Throws ScriptError.
SceneScript read_scene_script(const std::string& path);

// Directory layout: images/t{f}_c{c}.png, masks_h/, masks_o/, cameras.txt,
// poses_human.txt, poses_object.txt, gt/ (PLYs, rig, true poses).
void write_capture(const GeneratedCapture& cap, const std::string& dir);
GeneratedCapture read_capture(const std::string& dir);

}  // namespace hoi
