#include "hoisplat/tracker.hpp"

#include <algorithm>
#include <cmath>

#include "hoisplat/parallel.hpp"
#include "hoisplat/rasterizer.hpp"

namespace hoi {

namespace {

template <int C>
Image<C> downsample2(const Image<C>& im) {
  const int w = std::max(1, im.width / 2), h = std::max(1, im.height / 2);
  Image<C> out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int x1 = std::min(2 * x + 1, im.width - 1);
      const int y1 = std::min(2 * y + 1, im.height - 1);
      for (int c = 0; c < C; ++c)
        out.at(x, y)[c] = 0.25 * (im.at(2 * x, 2 * y)[c] + im.at(x1, 2 * y)[c] +
                                  im.at(2 * x, y1)[c] + im.at(x1, y1)[c]);
    }
  return out;
}

Camera downsample2(const Camera& cam) {
  Camera c = cam;
  c.fx *= 0.5;
  c.fy *= 0.5;
  c.cx *= 0.5;
  c.cy *= 0.5;
  c.width = std::max(1, cam.width / 2);
  c.height = std::max(1, cam.height / 2);
  return c;
}

struct Level {
  std::vector<Camera> cameras;
  std::vector<ImageRgb> images;
  std::vector<ImageGray> valid;  // object mask minus human mask, soft then thresholded
};

std::vector<Level> build_pyramid(const CaptureFrame& frame, const std::vector<Camera>& cameras,
                                 int levels) {
  std::vector<Level> pyr(1);
  Level& base = pyr[0];
  base.cameras = cameras;
  base.images = frame.images;
  for (size_t c = 0; c < cameras.size(); ++c) {
    ImageGray v = frame.mask_object[c];
    if (c < frame.mask_human.size())
      for (size_t i = 0; i < v.data.size(); ++i)
        if (frame.mask_human[c].data[i] > 0.5) v.data[i] = 0.0;
    base.valid.push_back(std::move(v));
  }
  for (int l = 1; l < levels; ++l) {
    const Level& prev = pyr.back();
    Level next;
    for (size_t c = 0; c < prev.cameras.size(); ++c) {
      next.cameras.push_back(downsample2(prev.cameras[c]));
      next.images.push_back(downsample2(prev.images[c]));
      ImageGray v = downsample2(prev.valid[c]);
      for (double& x : v.data) x = x > 0.5 ? 1.0 : 0.0;
      next.valid.push_back(std::move(v));
    }
    pyr.push_back(std::move(next));
  }
  return pyr;
}

// Masked squared photometric loss and (optionally) its SE(3) tangent gradient
// at `pose`. Per-camera terms evaluate in parallel and reduce in index order.
double level_loss(const GaussianSet& tmpl, const Level& lvl, const Se3Pose& pose,
                  int thread_count, Eigen::Matrix<double, 6, 1>* grad) {
  const GaussianSet posed = transform_rigid(tmpl, pose);
  const size_t nc = lvl.cameras.size();
  std::vector<double> losses(nc, 0.0);
  std::vector<Eigen::Matrix<double, 6, 1>> grads(nc, Eigen::Matrix<double, 6, 1>::Zero());
  parallel_chunks(int(nc), thread_count, [&](int c) {
    const ImageGray& valid = lvl.valid[c];
    double count = 0;
    for (double v : valid.data) count += v > 0.5 ? 1.0 : 0.0;
    if (count == 0) return;
    RenderOptions opts;
    opts.retain_forward_state = grad != nullptr;
    const RenderedImage img = render(posed, lvl.cameras[c], opts);
    const ImageRgb& target = lvl.images[c];
    ImageRgb grad_rgb(img.rgb.width, img.rgb.height);
    double loss = 0;
    for (int y = 0; y < img.rgb.height; ++y)
      for (int x = 0; x < img.rgb.width; ++x) {
        if (*valid.at(x, y) <= 0.5) continue;
        const Vec3 diff = pixel3(img.rgb, x, y) - pixel3(target, x, y);
        loss += diff.squaredNorm() / (3.0 * count);
        set_pixel3(grad_rgb, x, y, 2.0 * diff / (3.0 * count));
      }
    losses[c] = loss;
    if (grad) {
      const RenderGrads g = render_backward(img, grad_rgb);
      grads[c] = pose_tangent_gradient(posed, g, 0, posed.size());
    }
  });
  double total = 0;
  if (grad) grad->setZero();
  for (size_t c = 0; c < nc; ++c) {
    total += losses[c];
    if (grad) *grad += grads[c];
  }
  return total;
}

}  // namespace

TrackFrameResult track_frame(const GaussianSet& tmpl, const CaptureFrame& frame,
                             const std::vector<Camera>& cameras, const Se3Pose& init,
                             const TrackConfig& config) {
  TrackFrameResult result;
  result.pose = init;

  const std::vector<Level> pyramid = build_pyramid(frame, cameras, config.pyramid_levels);
  double observed = 0;
  for (const ImageGray& v : pyramid[0].valid)
    for (double x : v.data) observed += x > 0.5 ? 1.0 : 0.0;
  if (observed == 0 || tmpl.empty()) {
    result.observed = false;
    result.converged = false;
    result.residual = 0.0;
    return result;
  }

  // A bit-exact warm start (e.g. re-tracking the anchor frame) is a fixed
  // point; coarse levels must not perturb it.
  const double init_loss = level_loss(tmpl, pyramid[0], result.pose, config.thread_count, nullptr);
  if (init_loss < 1e-14) {
    result.converged = true;
    result.residual = init_loss;
    return result;
  }

  for (int l = config.pyramid_levels - 1; l >= 0; --l) {
    const Level& lvl = pyramid[l];
    Eigen::Matrix<double, 6, 1> grad;
    double loss = level_loss(tmpl, lvl, result.pose, config.thread_count, &grad);
    double step = config.step_init;
    result.converged = loss <= config.loss_tol;
    if (result.converged) continue;
    for (int it = 0; it < config.max_iterations; ++it) {
      const double gnorm = grad.norm();
      if (gnorm == 0) {
        result.converged = true;
        break;
      }
      // Backtracking on the steepest-descent direction.
      bool accepted = false;
      Se3Pose trial_pose;
      double trial_loss = 0;
      Eigen::Matrix<double, 6, 1> delta;
      for (int h = 0; h <= config.max_halvings; ++h) {
        delta = -(step / gnorm) * grad;
        trial_pose = se3_retract(delta, result.pose);
        trial_loss = level_loss(tmpl, lvl, trial_pose, config.thread_count, nullptr);
        if (trial_loss < loss) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        result.converged = true;  // no descent within the halving budget
        break;
      }
      const double rel = (loss - trial_loss) / std::max(loss, 1e-30);
      result.pose = trial_pose;
      loss = trial_loss;
      if (config.on_step) config.on_step(l, it, loss);
      if (delta.norm() < config.step_tol || rel < config.rel_tol ||
          loss <= config.loss_tol) {
        result.converged = true;
        break;
      }
      level_loss(tmpl, lvl, result.pose, config.thread_count, &grad);
      step *= 2.0;  // optimistic growth, re-shrunk by backtracking as needed
    }
  }
  result.residual = level_loss(tmpl, pyramid[0], result.pose, config.thread_count, nullptr);
  return result;
}

PoseTrack track_sequence(const GaussianSet& tmpl, const std::vector<CaptureFrame>& frames,
                         const std::vector<Camera>& cameras, size_t anchor, const Se3Pose& init,
                         const TrackConfig& config) {
  PoseTrack track;
  const size_t n = frames.size();
  track.poses.resize(n);
  track.residuals.assign(n, 0.0);
  track.converged.assign(n, 0);
  if (n == 0) return track;
  anchor = std::min(anchor, n - 1);

  auto run = [&](size_t t, const Se3Pose& warm) {
    const TrackFrameResult r = track_frame(tmpl, frames[t], cameras, warm, config);
    track.poses[t] = r.pose;
    track.residuals[t] = r.residual;
    track.converged[t] = char(r.converged && r.observed);
    return r.pose;
  };

  Se3Pose warm = run(anchor, init);
  for (size_t t = anchor + 1; t < n; ++t) warm = run(t, warm);
  warm = track.poses[anchor];
  for (size_t t = anchor; t-- > 0;) warm = run(t, warm);
  return track;
}

}  // namespace hoi
