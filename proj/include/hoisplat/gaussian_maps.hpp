#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hoisplat/articulation.hpp"
#include "hoisplat/capture.hpp"
#include "hoisplat/core.hpp"
#include "hoisplat/losses.hpp"
#include "hoisplat/rasterizer.hpp"

namespace hoi {

// One-to-one pixel-to-Gaussian correspondence with canonical 3D positions.
struct GaussianMap {
  int width = 0, height = 0;
  std::vector<int> pixel_to_gaussian;  // -1 where invalid; injective elsewhere
  std::vector<Vec3> position_map;      // canonical positions at valid pixels

  bool valid_pixel(int i) const { return pixel_to_gaussian[size_t(i)] >= 0; }
  size_t valid_count() const;
};

struct MapOverflow : std::runtime_error {
  explicit MapOverflow(const std::string& w) : std::runtime_error(w) {}
};

// Per-pixel learnable offsets; also used as its own gradient container.
struct OffsetTable {
  int width = 0, height = 0;
  std::vector<Vec3> d_position, d_rotation, d_log_scale, d_color;  // axis-angle Δrotation
  std::vector<double> d_opacity_logit;
  // Optional pose-linear Δposition term: per pixel a 3 x pose_dim matrix,
  // stored row-major at pixel * 3 * pose_dim.
  int pose_dim = 0;
  Eigen::VectorXd pose_linear;
  // Per-pixel skinning-weight logits (human maps), joint_count per pixel.
  int joint_count = 0;
  Eigen::VectorXd skinning_logits;

  static OffsetTable zeros(int width, int height, int pose_dim = 0, int joint_count = 0);
  bool is_zero() const;
};

// Orthographic front (+z) / back (-z) projection of the canonical template.
// Gaussians at or above the median z go to the front map; collisions resolve
// by deterministic spiral probing. Throws MapOverflow when the maps are full.
std::pair<GaussianMap, GaussianMap> build_object_maps(const GaussianSet& tmpl, int width = 256,
                                                      int height = 256);

// Canonical human Gaussians: uniform surface samples of the rig's template
// mesh with zero color, opacity logit 0 and log_scale = log(mean edge / 2).
GaussianSet human_canonical_gaussians(const SkeletonRig& rig, int count, uint64_t seed);

// Positions of the LBS-deformed canonical Gaussians, root motion removed;
// validity and pixel assignment are those of the canonical map.
GaussianMap build_human_position_map(const GaussianMap& canonical_map,
                                     const GaussianSet& canonical, const MatX& weights,
                                     const SkeletonRig& rig, const PoseVector& pose);

// Canonical Gaussians updated by the table's offsets; unreferenced Gaussians
// pass through unchanged. Throws ShapeMismatch on misaligned inputs.
GaussianSet apply_offsets(const GaussianSet& canonical, const GaussianMap& map,
                          const OffsetTable& table,
                          const Eigen::VectorXd* pose_features = nullptr);

// Chains per-output-gaussian gradients into table-entry gradients,
// accumulated into `grad` (an OffsetTable of the same shape).
void apply_offsets_backward(const GaussianSet& canonical, const GaussianMap& map,
                            const OffsetTable& table, const Eigen::VectorXd* pose_features,
                            const RenderGrads& grads, OffsetTable* grad);

// Skinning weights w_k = template_w_k * exp(logits_k) / sum, with per-gaussian
// logits gathered from the human maps' tables. Zero logits reproduce the
// template weights exactly.
MatX effective_skinning_weights(const MatX& template_weights, const GaussianMap& front,
                                const GaussianMap& back, const OffsetTable& table_front,
                                const OffsetTable& table_back);

// Everything the deformation model owns; the rig travels separately.
struct MapsModel {
  GaussianSet human_canonical;
  MatX human_template_weights;  // N_h x J
  GaussianMap human_front, human_back;
  OffsetTable table_human_front, table_human_back;
  GaussianSet object_canonical;
  GaussianMap object_front, object_back;
  OffsetTable table_object_front, table_object_back;
  bool use_pose_linear = false;
};

// Offsets + skinning: the posed human Gaussian set for one pose.
GaussianSet deform_human(const MapsModel& model, const SkeletonRig& rig, const PoseVector& pose);
// Offsets + rigid object pose.
GaussianSet deform_object(const MapsModel& model, const Se3Pose& pose);

struct TrainMapsConfig {
  int iterations = 3000;
  double lr_tables = 1e-2;
  double lr_logits = 1e-2;
  double lr_pose = 2e-3;
  bool refine_poses = true;
  LossWeights weights;
  std::vector<int> holdout_cameras;  // excluded from training, used for PSNR
  double psnr_threshold = 32.0;
  int thread_count = 1;
  std::function<void(int, double)> on_step;  // (iteration, loss)
};

struct TrainMapsResult {
  PoseTrack refined;
  double holdout_psnr = 0.0;  // masked, averaged over held-out views and frames
  bool converged = false;
};

// Joint optimization of all offset tables, skinning logits and object poses
// against the capture. Tables in `model` are updated in
// place; human poses are taken from the capture and stay fixed.
TrainMapsResult train_maps(MapsModel& model, const SkeletonRig& rig, const Capture& capture,
                           const PoseTrack& object_track, const TrainMapsConfig& config = {});

// Binary checkpoint (magic "HOIMAPS1", little-endian float32 payload).
void write_maps(const MapsModel& model, const std::string& path);
MapsModel read_maps(const std::string& path);

}  // namespace hoi
