#pragma once

#include <vector>

#include "hoisplat/articulation.hpp"
#include "hoisplat/core.hpp"
#include "hoisplat/image.hpp"

namespace hoi {

// Everything observed at one timestep, across all cameras.
struct CaptureFrame {
  std::vector<ImageRgb> images;
  std::vector<ImageGray> mask_human;
  std::vector<ImageGray> mask_object;
};

struct Capture {
  std::vector<Camera> cameras;
  std::vector<CaptureFrame> frames;
  std::vector<PoseVector> human_poses;  // provided, per timestep
  std::vector<Se3Pose> object_poses;    // ground truth (synthetic) or tracked

  size_t frame_count() const { return frames.size(); }
  size_t camera_count() const { return cameras.size(); }
};

struct PoseTrack {
  std::vector<Se3Pose> poses;
  std::vector<double> residuals;
  std::vector<char> converged;

  size_t size() const { return poses.size(); }
};

struct EmptyCapture : std::runtime_error {
  EmptyCapture() : std::runtime_error("capture has no frames") {}
};

}  // namespace hoi
