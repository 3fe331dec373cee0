#pragma once

#include <random>

#include "hoisplat/core.hpp"
#include "hoisplat/image.hpp"
#include "hoisplat/rasterizer.hpp"

namespace hoi::testutil {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 uniform_vec3(Rng& rng, double lo, double hi) {
  return Vec3(uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi));
}

inline Quat random_quat(Rng& rng) {
  std::normal_distribution<double> nd;
  Quat q(nd(rng), nd(rng), nd(rng), nd(rng));
  q.normalize();
  return q;
}

inline Se3Pose random_pose(Rng& rng, double t_range = 1.0) {
  Se3Pose p;
  p.rotation = random_quat(rng);
  p.translation = uniform_vec3(rng, -t_range, t_range);
  return p;
}

inline Gaussian random_gaussian(Rng& rng) {
  Gaussian g;
  g.position = uniform_vec3(rng, -0.6, 0.6);
  g.rotation = random_quat(rng);
  g.log_scale = uniform_vec3(rng, std::log(0.05), std::log(0.25));
  g.opacity_logit = uniform(rng, -1.5, 2.5);
  g.color = uniform_vec3(rng, 0.05, 0.95);
  return g;
}

inline GaussianSet random_set(Rng& rng, int n, EntityLabel label = EntityLabel::Object) {
  GaussianSet s;
  s.label = label;
  for (int i = 0; i < n; ++i) s.gaussians.push_back(random_gaussian(rng));
  return s;
}

// Camera on a ring around the origin looking at `target`.
inline Camera ring_camera(int width, int height, double focal_px, double radius,
                          double azimuth, double elevation = 0.25,
                          const Vec3& target = Vec3::Zero()) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = focal_px;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  const Vec3 eye = target + radius * Vec3(std::cos(azimuth) * std::cos(elevation),
                                          std::sin(elevation),
                                          std::sin(azimuth) * std::cos(elevation));
  const Vec3 fwd = (target - eye).normalized();
  Vec3 up(0, 1, 0);
  Vec3 right = fwd.cross(up).normalized();
  up = right.cross(fwd);
  Mat3 r_cw;  // camera-from-world rotation rows: x=right, y=-up, z=fwd
  r_cw.row(0) = right.transpose();
  r_cw.row(1) = (-up).transpose();
  r_cw.row(2) = fwd.transpose();
  cam.world_to_camera.rotation = Quat(r_cw).normalized();
  cam.world_to_camera.translation = -(r_cw * eye);
  return cam;
}

// Sum-product scalar loss L = sum(grad_rgb .* rgb) (+ alpha term), used for
// finite-difference checks of render_backward.
inline double probe_loss(const GaussianSet& set, const Camera& cam, const ImageRgb& grad_rgb,
                         const ImageGray* grad_alpha, const RenderOptions& opts) {
  RenderOptions o = opts;
  o.retain_forward_state = false;
  o.early_stop_T = 0.0;
  const RenderedImage im = render(set, cam, o);
  double loss = 0;
  for (size_t i = 0; i < im.rgb.data.size(); ++i) loss += grad_rgb.data[i] * im.rgb.data[i];
  if (grad_alpha)
    for (size_t i = 0; i < im.alpha.data.size(); ++i)
      loss += grad_alpha->data[i] * im.alpha.data[i];
  return loss;
}

}  // namespace hoi::testutil
