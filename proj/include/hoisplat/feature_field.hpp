#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "hoisplat/capture.hpp"
#include "hoisplat/core.hpp"

namespace hoi {

// Three axis-aligned feature planes (XY, XZ, YZ), each rows x cols cells of
// `feat` channels, over an axis-aligned bounding box. Out-of-bounds queries
// clamp to the border.
struct TriplaneField {
  int rows = 64;  // M
  int cols = 64;  // W
  int feat = 16;  // l
  Vec3 bounds_min = -Vec3::Ones();
  Vec3 bounds_max = Vec3::Ones();
  // Cell (r, c) channel f of plane p lives at planes[p][(r * cols + c) * feat + f].
  std::array<Eigen::VectorXd, 3> planes;

  static TriplaneField zeros(int rows, int cols, int feat, const Vec3& bmin, const Vec3& bmax);
  int plane_size() const { return rows * cols * feat; }
  int feature_dim() const { return 3 * feat; }
};

// Orthographic projection of x onto each plane, bilinear interpolation, and
// concatenation in plane order (XY, XZ, YZ).
Eigen::VectorXd sample_features(const TriplaneField& field, const Vec3& x);

// Accumulates dL/d(planes) into grad_planes (sized like field.planes) and, if
// non-null, dL/dx into grad_x. Gradients w.r.t. x are zero along clamped axes.
void sample_features_backward(const TriplaneField& field, const Vec3& x,
                              const Eigen::VectorXd& grad_out,
                              std::array<Eigen::VectorXd, 3>* grad_planes, Vec3* grad_x);

// Two-hidden-layer tanh network with a linear output layer.
struct Mlp {
  Eigen::MatrixXd w1, w2, w3;
  Eigen::VectorXd b1, b2, b3;

  // Xavier-uniform hidden layers, zero output layer (neutral initial decode).
  static Mlp create(int in, int hidden, int out, uint64_t seed);

  int in_dim() const { return int(w1.cols()); }
  int out_dim() const { return int(w3.rows()); }
  int param_count() const;
  Eigen::VectorXd pack() const;
  void unpack(const Eigen::VectorXd& params);

  struct Trace {
    Eigen::VectorXd x, h1, h2;  // input and post-tanh activations
  };
  Eigen::VectorXd forward(const Eigen::VectorXd& x, Trace* trace = nullptr) const;
  // Accumulates dL/d(params) into grad_params (pack() layout) and returns dL/dx.
  Eigen::VectorXd backward(const Trace& trace, const Eigen::VectorXd& grad_out,
                           Eigen::VectorXd* grad_params) const;
};

// Feature decoders: geometry 3l -> (raw rotation 4, log_scale 3), appearance
// 3l -> (color logits 3, opacity_logit 1). rotation = normalize((1,0,0,0) + raw),
// log_scale = raw + base_log_scale, color = sigmoid(raw).
struct FieldDecoders {
  Mlp geometry;
  Mlp appearance;
  double base_log_scale = 0.0;

  static FieldDecoders create(int feature_dim, int hidden, double base_log_scale, uint64_t seed);
};

struct TemplateModel {
  std::vector<Vec3> sites;
  TriplaneField field;
  FieldDecoders decoders;
};

// One Gaussian per site; position = site, remaining fields decoded from the
// sampled features. Deterministic and pure.
GaussianSet decode_template(const TemplateModel& model, EntityLabel label = EntityLabel::Object);

// argmax over t of the total object-mask pixel count across cameras; ties
// break to the smallest t. Throws EmptyCapture.
size_t select_min_occlusion_frame(const Capture& capture);

struct FitConfig {
  int iterations = 1500;
  int sites = 350;
  int plane_rows = 64, plane_cols = 64, feat = 16;
  int hidden = 64;
  double base_log_scale_factor = 0.04;  // base gaussian scale as a fraction of object radius
  double lr_sites = 2e-3;
  double lr_planes = 2e-2;
  double lr_mlp = 2e-3;
  double lr_direct = 2e-2;  // per-gaussian parameters in bypass mode
  double silhouette_weight = 0.1;
  double psnr_threshold = 35.0;
  bool bypass_decoders = false;  // ablation: direct per-gaussian parameters, no field
  uint64_t seed = 1;
  int thread_count = 1;
  // Optional progress hook: (iteration, per-step loss).
  std::function<void(int, double)> on_step;
};

struct FitResult {
  TemplateModel model;
  GaussianSet decoded;         // the template as a plain set; fields discarded after this
  double train_psnr = 0.0;     // masked PSNR averaged over cameras
  bool converged = false;      // train_psnr >= config.psnr_threshold
  bool low_confidence = false; // fewer than 2 cameras: geometry unconstrained
};

// Coarse template fitting at the minimal-occlusion frame: masked photometric
// L2 plus a silhouette term, one camera per optimizer step, Adam with cosine
// decay. Pixels inside the human mask are excluded when that mask is present.
FitResult fit_template(const CaptureFrame& frame, const std::vector<Camera>& cameras,
                       const FitConfig& config = {});

}  // namespace hoi
