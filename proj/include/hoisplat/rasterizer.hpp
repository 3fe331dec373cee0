#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "hoisplat/core.hpp"
#include "hoisplat/image.hpp"

namespace hoi {

struct SplatProjection {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();  // after low-pass regularization
  double depth = 0.0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
  int source = -1;  // flattened gaussian index
  int group = 0;    // input-set index
};

struct RenderOptions {
  double lowpass = 0.3;       // px^2 added to the cov2d diagonal
  double bin_sigma = 8.0;     // conservative tile-binning radius in sigmas
  double early_stop_T = 1e-4; // transmittance early stop; forced to 0 when
                              // forward state is retained for the backward pass
  int tile_size = 16;
  int thread_count = 1;
  bool retain_forward_state = false;
  bool group_alpha = false;   // emit per-input-set alpha accumulation
};

struct ForwardState;

struct RenderedImage {
  ImageRgb rgb;
  ImageGray alpha;
  std::vector<ImageGray> group_alpha;
  std::shared_ptr<const ForwardState> state;
};

struct RenderGrads {
  // Indexed by flattened gaussian order (set 0 first, then set 1, ...).
  std::vector<Vec3> d_position;
  std::vector<Vec4> d_rotation;  // quaternion coeffs (w,x,y,z), tangent-projected
  std::vector<Vec3> d_log_scale;
  std::vector<double> d_opacity_logit;
  std::vector<Vec3> d_color;

  size_t size() const { return d_position.size(); }
};

struct MissingForwardState : std::runtime_error {
  MissingForwardState() : std::runtime_error("render was not run with retain_forward_state") {}
};

// EWA projection of one gaussian; nullopt when culled (behind camera).
std::optional<SplatProjection> project_gaussian(const Camera& cam, const Gaussian& g,
                                                const RenderOptions& opts = {});

RenderedImage render(const std::vector<const GaussianSet*>& sets, const Camera& cam,
                     const RenderOptions& opts = {});
RenderedImage render(const GaussianSet& set, const Camera& cam,
                     const RenderOptions& opts = {});

// Gradients of a scalar loss w.r.t. every gaussian parameter given
// dL/d(rgb) and optionally dL/d(alpha). Requires retained forward state.
RenderGrads render_backward(const RenderedImage& img, const ImageRgb& loss_grad,
                            const ImageGray* loss_grad_alpha = nullptr);

// Folds per-gaussian gradients of a rigidly pre-transformed subset into the
// gradient w.r.t. the SE(3) tangent (w, v) of a left-multiplied increment.
// [begin, begin+count) selects the subset in flattened order; `posed` holds
// the gaussians as they were rendered (after the rigid transform).
Eigen::Matrix<double, 6, 1> pose_tangent_gradient(const GaussianSet& posed,
                                                  const RenderGrads& grads,
                                                  size_t begin, size_t count);

}  // namespace hoi
