#pragma once

#include <string>
#include <vector>

#include "hoisplat/capture.hpp"
#include "hoisplat/core.hpp"
#include "hoisplat/image.hpp"

namespace hoi {

struct ParseError : std::runtime_error {
  size_t offset;
  ParseError(const std::string& what, size_t byte_offset)
      : std::runtime_error(what + " (byte " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
};

// Binary little-endian PLY with float32 properties
// x,y,z,rot_0..3,log_scale_0..2,opacity_logit,red,green,blue. The reader
// also accepts foreign splat PLYs: any float vertex element with x,y,z
// present loads positions, missing properties take neutral defaults.
// Round trips are exact for float32-representable field values.
void write_ply(const GaussianSet& set, const std::string& path);
GaussianSet read_ply(const std::string& path);

double linear_to_srgb(double v);
double srgb_to_linear(double v);

// 8-bit PNG; RGB images pass through the sRGB transfer function, masks and
// other non-color data are stored linearly as 8-bit gray.
void write_png(const ImageRgb& img, const std::string& path);
ImageRgb read_png(const std::string& path);
void write_png_mask(const ImageGray& mask, const std::string& path);
ImageGray read_png_mask(const std::string& path);  // thresholds at 0.5

// One camera per line: id fx fy cx cy width height qw qx qy qz tx ty tz.
void write_cameras(const std::vector<Camera>& cams, const std::string& path);
std::vector<Camera> read_cameras(const std::string& path);

// One frame per line: t qw qx qy qz tx ty tz residual converged.
void write_pose_track(const PoseTrack& track, const std::string& path);
PoseTrack read_pose_track(const std::string& path);

// One frame per line: t tx ty tz then 3 axis-angle values per joint.
void write_pose_curve(const std::vector<PoseVector>& poses, const std::string& path);
std::vector<PoseVector> read_pose_curve(const std::string& path);

// FNV-1a over file bytes, for manifest staleness checks.
uint64_t hash_file(const std::string& path);

}  // namespace hoi
