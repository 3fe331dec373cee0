#include "hoisplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>

#include "hoisplat/parallel.hpp"

namespace hoi {

namespace {
constexpr double kNearClip = 1e-4;

// Derivatives of the unit-quaternion rotation-matrix polynomial w.r.t. the
// four raw coefficients (w,x,y,z); combine with tangent projection.
void rotation_matrix_jacobian(const Quat& q, Mat3 d[4]) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  d[0] << 0, -z, y,
          z, 0, -x,
          -y, x, 0;
  d[1] << 0, y, z,
          y, -2 * x, -w,
          z, w, -2 * x;
  d[2] << -2 * y, x, w,
          x, 0, z,
          -w, z, -2 * y;
  d[3] << -2 * z, -w, x,
          w, -2 * z, y,
          x, y, 0;
  for (int i = 0; i < 4; ++i) d[i] *= 2.0;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& xc) {
  const double z = xc.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx / z, 0, -cam.fx * xc.x() / (z * z),
       0, cam.fy / z, -cam.fy * xc.y() / (z * z);
  return j;
}

}  // namespace

struct ForwardState {
  Camera cam;
  RenderOptions opts;
  std::vector<Gaussian> flattened;
  std::vector<int> group_of;  // per flattened gaussian
  std::vector<SplatProjection> splats;
  // Per tile: indices into splats, sorted front-to-back by (depth, source).
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<int>> tile_bins;
};

std::optional<SplatProjection> project_gaussian(const Camera& cam, const Gaussian& g,
                                                const RenderOptions& opts) {
  const Vec3 xc = cam.world_to_camera.apply(g.position);
  if (xc.z() <= kNearClip) return std::nullopt;

  SplatProjection s;
  s.depth = xc.z();
  s.mean2d = Vec2(cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy);
  const Eigen::Matrix<double, 2, 3> t =
      projection_jacobian(cam, xc) * cam.world_to_camera.rotation.toRotationMatrix();
  s.cov2d = t * covariance_of(g) * t.transpose();
  s.cov2d(0, 0) += opts.lowpass;
  s.cov2d(1, 1) += opts.lowpass;
  s.color = g.color;
  s.opacity = g.opacity();
  return s;
}

static void bin_splats(ForwardState& st) {
  const int ts = st.opts.tile_size;
  st.tiles_x = (st.cam.width + ts - 1) / ts;
  st.tiles_y = (st.cam.height + ts - 1) / ts;
  st.tile_bins.assign(size_t(st.tiles_x) * st.tiles_y, {});

  for (int i = 0; i < (int)st.splats.size(); ++i) {
    const SplatProjection& s = st.splats[i];
    const Eigen::SelfAdjointEigenSolver<Mat2> eig(s.cov2d);
    const double radius = st.opts.bin_sigma * std::sqrt(eig.eigenvalues().maxCoeff());
    const int x0 = std::max(0, (int)std::floor((s.mean2d.x() - radius) / ts));
    const int x1 = std::min(st.tiles_x - 1, (int)std::floor((s.mean2d.x() + radius) / ts));
    const int y0 = std::max(0, (int)std::floor((s.mean2d.y() - radius) / ts));
    const int y1 = std::min(st.tiles_y - 1, (int)std::floor((s.mean2d.y() + radius) / ts));
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx)
        st.tile_bins[size_t(ty) * st.tiles_x + tx].push_back(i);
  }
  for (auto& bin : st.tile_bins) {
    std::stable_sort(bin.begin(), bin.end(), [&](int a, int b) {
      if (st.splats[a].depth != st.splats[b].depth)
        return st.splats[a].depth < st.splats[b].depth;
      return st.splats[a].source < st.splats[b].source;
    });
  }
}

RenderedImage render(const std::vector<const GaussianSet*>& sets, const Camera& cam,
                     const RenderOptions& opts) {
  auto st = std::make_shared<ForwardState>();
  st->cam = cam;
  st->opts = opts;
  if (opts.retain_forward_state) st->opts.early_stop_T = 0.0;

  for (int gi = 0; gi < (int)sets.size(); ++gi) {
    for (const Gaussian& g : sets[gi]->gaussians) {
      st->flattened.push_back(g);
      st->group_of.push_back(gi);
    }
  }
  for (int i = 0; i < (int)st->flattened.size(); ++i) {
    auto s = project_gaussian(cam, st->flattened[i], st->opts);
    if (!s) continue;
    s->source = i;
    s->group = st->group_of[i];
    st->splats.push_back(*s);
  }
  bin_splats(*st);

  RenderedImage out;
  out.rgb = ImageRgb(cam.width, cam.height);
  out.alpha = ImageGray(cam.width, cam.height);
  if (opts.group_alpha)
    out.group_alpha.assign(sets.size(), ImageGray(cam.width, cam.height));

  const int ts = opts.tile_size;
  const int tile_count = st->tiles_x * st->tiles_y;
  parallel_chunks(tile_count, opts.thread_count, [&](int tile) {
    const int tx = tile % st->tiles_x, ty = tile / st->tiles_x;
    const auto& bin = st->tile_bins[tile];
    const int px1 = std::min(cam.width, (tx + 1) * ts);
    const int py1 = std::min(cam.height, (ty + 1) * ts);
    for (int py = ty * ts; py < py1; ++py) {
      for (int px = tx * ts; px < px1; ++px) {
        const Vec2 pix(px + 0.5, py + 0.5);
        Vec3 c = Vec3::Zero();
        double acc_alpha = 0.0, transmittance = 1.0;
        for (int si : bin) {
          const SplatProjection& s = st->splats[si];
          const Vec2 d = pix - s.mean2d;
          const double alpha = s.opacity * std::exp(-0.5 * d.dot(s.cov2d.inverse() * d));
          const double w = alpha * transmittance;
          c += s.color * w;
          acc_alpha += w;
          if (opts.group_alpha) *out.group_alpha[s.group].at(px, py) += w;
          transmittance *= 1.0 - alpha;
          if (st->opts.early_stop_T > 0 && transmittance < st->opts.early_stop_T) break;
        }
        set_pixel3(out.rgb, px, py, c);
        *out.alpha.at(px, py) = acc_alpha;
      }
    }
  });

  if (opts.retain_forward_state) out.state = st;
  return out;
}

RenderedImage render(const GaussianSet& set, const Camera& cam, const RenderOptions& opts) {
  return render(std::vector<const GaussianSet*>{&set}, cam, opts);
}

namespace {

struct SplatGrad {
  Vec2 d_mean2d = Vec2::Zero();
  Mat2 d_cov2d = Mat2::Zero();  // full symmetric matrix form
  Vec3 d_color = Vec3::Zero();
  double d_opacity = 0.0;
};

// Chains one splat's 2D gradients back to its source gaussian's parameters.
void backward_projection(const ForwardState& st, const SplatProjection& s,
                         const SplatGrad& sg, RenderGrads& out) {
  const Camera& cam = st.cam;
  const Gaussian& g = st.flattened[s.source];
  const Mat3 w_rot = cam.world_to_camera.rotation.toRotationMatrix();
  const Vec3 xc = cam.world_to_camera.apply(g.position);
  const Eigen::Matrix<double, 2, 3> j = projection_jacobian(cam, xc);
  const Eigen::Matrix<double, 2, 3> t = j * w_rot;
  const Mat3 sigma = covariance_of(g);

  // mean2d path.
  Vec3 d_xc = j.transpose() * sg.d_mean2d;

  // cov2d path: Sigma2 = T Sigma T^T (+ const lowpass).
  const Mat3 d_sigma = t.transpose() * sg.d_cov2d * t;

  // J's dependence on the camera-space mean: dSigma2/dxc_k = dT Sigma T^T + T Sigma dT^T.
  const double z = xc.z(), z2 = z * z, z3 = z2 * z;
  Eigen::Matrix<double, 2, 3> dj[3];
  dj[0].setZero();
  dj[0](0, 2) = -cam.fx / z2;
  dj[1].setZero();
  dj[1](1, 2) = -cam.fy / z2;
  dj[2].setZero();
  dj[2](0, 0) = -cam.fx / z2;
  dj[2](0, 2) = 2 * cam.fx * xc.x() / z3;
  dj[2](1, 1) = -cam.fy / z2;
  dj[2](1, 2) = 2 * cam.fy * xc.y() / z3;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Matrix<double, 2, 3> dt = dj[k] * w_rot;
    d_xc[k] += 2.0 * (sg.d_cov2d * dt * sigma * t.transpose()).trace();
  }

  out.d_position[s.source] += w_rot.transpose() * d_xc;

  // Sigma = R diag(exp(2 s)) R^T.
  const Mat3 r = g.rotation.toRotationMatrix();
  const Vec3 var = (2.0 * g.log_scale).array().exp();
  for (int k = 0; k < 3; ++k) {
    const Vec3 col = r.col(k);
    out.d_log_scale[s.source][k] += 2.0 * var[k] * col.dot(d_sigma * col);
  }
  Mat3 dr[4];
  rotation_matrix_jacobian(g.rotation, dr);
  Vec4 d_q;
  const Mat3 rd = r * var.asDiagonal();
  for (int k = 0; k < 4; ++k)
    d_q[k] = 2.0 * (d_sigma * dr[k] * rd.transpose()).trace();
  // Project to the unit-sphere tangent so the gradient matches
  // perturb-then-renormalize finite differences.
  Vec4 qv(g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z());
  out.d_rotation[s.source] += d_q - qv * qv.dot(d_q);

  out.d_color[s.source] += sg.d_color;
  const double o = s.opacity;
  out.d_opacity_logit[s.source] += sg.d_opacity * o * (1.0 - o);
}

}  // namespace

RenderGrads render_backward(const RenderedImage& img, const ImageRgb& loss_grad,
                            const ImageGray* loss_grad_alpha) {
  if (!img.state) throw MissingForwardState();
  const ForwardState& st = *img.state;
  if (!loss_grad.same_dims(st.cam.width, st.cam.height))
    throw ShapeMismatch("loss_grad dims do not match render");
  if (loss_grad_alpha && !loss_grad_alpha->same_dims(st.cam.width, st.cam.height))
    throw ShapeMismatch("loss_grad_alpha dims do not match render");

  const size_t n = st.flattened.size();
  const int tile_count = st.tiles_x * st.tiles_y;

  // Per-tile partial gradients in 2D splat space, reduced in tile order.
  std::vector<std::vector<std::pair<int, SplatGrad>>> tile_grads(tile_count);

  const int ts = st.opts.tile_size;
  parallel_chunks(tile_count, st.opts.thread_count, [&](int tile) {
    const auto& bin = st.tile_bins[tile];
    if (bin.empty()) return;
    std::vector<SplatGrad> local(bin.size());
    std::vector<double> alphas(bin.size());
    std::vector<double> trans(bin.size());
    std::vector<Vec2> diffs(bin.size());

    const int tx = tile % st.tiles_x, ty = tile / st.tiles_x;
    const int px1 = std::min(st.cam.width, (tx + 1) * ts);
    const int py1 = std::min(st.cam.height, (ty + 1) * ts);
    for (int py = ty * ts; py < py1; ++py) {
      for (int px = tx * ts; px < px1; ++px) {
        const Vec2 pix(px + 0.5, py + 0.5);
        const Vec3 g_rgb = pixel3(loss_grad, px, py);
        const double g_alpha = loss_grad_alpha ? *loss_grad_alpha->at(px, py) : 0.0;
        if (g_rgb.isZero(0.0) && g_alpha == 0.0) continue;

        // Recompute the forward compositing for this pixel.
        double transmittance = 1.0;
        for (size_t k = 0; k < bin.size(); ++k) {
          const SplatProjection& s = st.splats[bin[k]];
          diffs[k] = pix - s.mean2d;
          alphas[k] = s.opacity * std::exp(-0.5 * diffs[k].dot(s.cov2d.inverse() * diffs[k]));
          trans[k] = transmittance;
          transmittance *= 1.0 - alphas[k];
        }

        // Reverse sweep with suffix accumulators.
        Vec3 suffix_rgb = Vec3::Zero();
        double suffix_a = 0.0;
        for (int k = (int)bin.size() - 1; k >= 0; --k) {
          const SplatProjection& s = st.splats[bin[k]];
          const double alpha = alphas[k], t_before = trans[k];
          const double one_m = 1.0 - alpha;
          const Vec3 dc_dalpha = s.color * t_before - suffix_rgb / one_m;
          const double da_dalpha = t_before - suffix_a / one_m;
          const double g_a = g_rgb.dot(dc_dalpha) + g_alpha * da_dalpha;

          SplatGrad& lg = local[k];
          lg.d_color += g_rgb * (alpha * t_before);
          lg.d_opacity += g_a * (s.opacity > 0 ? alpha / s.opacity : 0.0);
          const double g_power = g_a * alpha;  // alpha = o * exp(power)
          const Vec2 m = s.cov2d.inverse() * diffs[k];
          lg.d_mean2d += g_power * m;
          lg.d_cov2d += g_power * 0.5 * m * m.transpose();

          suffix_rgb += s.color * (alpha * t_before);
          suffix_a += alpha * t_before;
        }
      }
    }
    auto& out = tile_grads[tile];
    for (size_t k = 0; k < bin.size(); ++k) out.emplace_back(bin[k], local[k]);
  });

  // Deterministic reduction: tile order, then chain through the projection.
  std::vector<SplatGrad> splat_grads(st.splats.size());
  for (const auto& tg : tile_grads)
    for (const auto& [si, g] : tg) {
      splat_grads[si].d_mean2d += g.d_mean2d;
      splat_grads[si].d_cov2d += g.d_cov2d;
      splat_grads[si].d_color += g.d_color;
      splat_grads[si].d_opacity += g.d_opacity;
    }

  RenderGrads out;
  out.d_position.assign(n, Vec3::Zero());
  out.d_rotation.assign(n, Vec4::Zero());
  out.d_log_scale.assign(n, Vec3::Zero());
  out.d_opacity_logit.assign(n, 0.0);
  out.d_color.assign(n, Vec3::Zero());
  for (size_t i = 0; i < st.splats.size(); ++i)
    backward_projection(st, st.splats[i], splat_grads[i], out);
  return out;
}

Eigen::Matrix<double, 6, 1> pose_tangent_gradient(const GaussianSet& posed,
                                                  const RenderGrads& grads,
                                                  size_t begin, size_t count) {
  Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
  for (size_t i = 0; i < count; ++i) {
    const Gaussian& gg = posed[i];
    const Vec3 gp = grads.d_position[begin + i];
    g.tail<3>() += gp;                       // d/dv
    g.head<3>() += gg.position.cross(gp);    // d/dw, position path
    // Rotation path: dq = 0.5 * (0, w) x q, linear in w.
    const Vec4 gq = grads.d_rotation[begin + i];
    const Eigen::Matrix4d right = quat_right(gg.rotation);
    for (int k = 0; k < 3; ++k) {
      Vec4 pure = Vec4::Zero();
      pure[k + 1] = 0.5;
      g[k] += gq.dot(right * pure);
    }
  }
  return g;
}

}  // namespace hoi
