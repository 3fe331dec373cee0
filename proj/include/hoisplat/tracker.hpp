#pragma once

#include <functional>
#include <vector>

#include "hoisplat/capture.hpp"
#include "hoisplat/core.hpp"

namespace hoi {

struct TrackConfig {
  int max_iterations = 100;  // accepted steps per pyramid level
  int pyramid_levels = 3;    // coarse-to-fine, x2 per level
  int max_halvings = 20;
  double step_init = 1e-2;   // initial tangent step scale per unit gradient norm
  double step_tol = 1e-6;    // convergence: accepted step norm below this
  double rel_tol = 1e-6;     // convergence: relative loss decrease below this
  double loss_tol = 1e-8;    // convergence: absolute loss below this
  int thread_count = 1;
  // Optional hook: (pyramid level, accepted-step index, loss after step).
  std::function<void(int, int, double)> on_step;
};

struct TrackFrameResult {
  Se3Pose pose;
  double residual = 0.0;  // final masked photometric loss at full resolution
  bool converged = false;
  bool observed = true;   // false: all object masks empty, pose carried forward
};

// Photometric alignment of the rigid template to one frame: local minimum of
// the masked squared error over the SE(3) tangent, warm-started from `init`.
// The loss is restricted to object-mask pixels outside the human mask.
TrackFrameResult track_frame(const GaussianSet& tmpl, const CaptureFrame& frame,
                             const std::vector<Camera>& cameras, const Se3Pose& init,
                             const TrackConfig& config = {});

// Sequential tracking with warm starts. The anchor frame starts from `init`
// (identity gauge when the template was fitted at that frame) and tracking
// proceeds outward in both temporal directions.
PoseTrack track_sequence(const GaussianSet& tmpl, const std::vector<CaptureFrame>& frames,
                         const std::vector<Camera>& cameras, size_t anchor = 0,
                         const Se3Pose& init = Se3Pose::Identity(),
                         const TrackConfig& config = {});

}  // namespace hoi
