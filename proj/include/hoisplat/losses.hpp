#pragma once

#include <limits>

#include "hoisplat/core.hpp"
#include "hoisplat/image.hpp"

namespace hoi {

struct MaskPair {
  ImageGray human;   // values in {0,1}
  ImageGray object;
};

struct LossWeights {
  double l1 = 1.0;
  double perceptual = 0.1;
  double skinning_reg = 0.01;
};

struct OcclusionL1 {
  double human = 0.0;
  double object = 0.0;
  double joint = 0.0;
};

// Masked L1 terms for the human-only, object-only and joint renders. Each
// term averages over its own valid-pixel count; pixels covered by the other
// entity's mask contribute exactly zero. Optional out-parameters receive
// dL/d(render rgb) for each term (same normalization).
OcclusionL1 occlusion_l1(const ImageRgb& frame, const MaskPair& masks,
                         const ImageRgb& render_h, const ImageRgb& render_o,
                         const ImageRgb& render_a, ImageRgb* grad_h = nullptr,
                         ImageRgb* grad_o = nullptr, ImageRgb* grad_a = nullptr);

// Mean L1 of forward-difference image gradients over valid pixels; a
// DC-invariant stand-in for a perceptual term. `valid` restricts which
// pixels participate (same masking as occlusion_l1); pass nullptr for all.
double gradient_perceptual(const ImageRgb& target, const ImageRgb& render,
                           const ImageGray* valid = nullptr, ImageRgb* grad_render = nullptr);

// Mean squared row-wise difference between weight rows (rows sum to 1).
double skinning_regularizer(const MatX& predicted, const MatX& reference,
                            MatX* grad_predicted = nullptr);

inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

double psnr(const ImageRgb& a, const ImageRgb& b);
double psnr_masked(const ImageRgb& a, const ImageRgb& b, const ImageGray& mask);
double ssim(const ImageRgb& a, const ImageRgb& b);

}  // namespace hoi
