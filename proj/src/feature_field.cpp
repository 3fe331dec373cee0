#include "hoisplat/feature_field.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hoisplat/losses.hpp"
#include "hoisplat/optim.hpp"
#include "hoisplat/parallel.hpp"
#include "hoisplat/rasterizer.hpp"

namespace hoi {

namespace {

// In-plane world axes per plane, order (u -> cols, v -> rows).
constexpr int kPlaneAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};  // XY, XZ, YZ

struct BilinearTap {
  int cell[4];       // flattened (r * cols + c) for (v0u0, v0u1, v1u0, v1u1)
  double w[4];
  double dw_du[4];   // d(weight)/d(grid u), zero when clamped
  double dw_dv[4];
  int axis_u, axis_v;
  double scale_u, scale_v;  // d(grid coord)/d(world coord), zero when clamped
};

BilinearTap plane_tap(const TriplaneField& f, int plane, const Vec3& x) {
  BilinearTap t;
  t.axis_u = kPlaneAxes[plane][0];
  t.axis_v = kPlaneAxes[plane][1];
  auto grid = [&](int axis, int cells, double& coord, double& scale) {
    const double lo = f.bounds_min[axis], hi = f.bounds_max[axis];
    const double raw = (x[axis] - lo) / (hi - lo) * (cells - 1);
    coord = std::clamp(raw, 0.0, double(cells - 1));
    scale = (raw == coord && cells > 1) ? (cells - 1) / (hi - lo) : 0.0;
  };
  double gu, gv;
  grid(t.axis_u, f.cols, gu, t.scale_u);
  grid(t.axis_v, f.rows, gv, t.scale_v);
  const int c0 = std::min(int(gu), f.cols - 2 >= 0 ? f.cols - 2 : 0);
  const int r0 = std::min(int(gv), f.rows - 2 >= 0 ? f.rows - 2 : 0);
  const int c1 = std::min(c0 + 1, f.cols - 1);
  const int r1 = std::min(r0 + 1, f.rows - 1);
  const double au = gu - c0, av = gv - r0;
  t.cell[0] = r0 * f.cols + c0;
  t.cell[1] = r0 * f.cols + c1;
  t.cell[2] = r1 * f.cols + c0;
  t.cell[3] = r1 * f.cols + c1;
  t.w[0] = (1 - au) * (1 - av);
  t.w[1] = au * (1 - av);
  t.w[2] = (1 - au) * av;
  t.w[3] = au * av;
  t.dw_du[0] = -(1 - av);
  t.dw_du[1] = (1 - av);
  t.dw_du[2] = -av;
  t.dw_du[3] = av;
  t.dw_dv[0] = -(1 - au);
  t.dw_dv[1] = -au;
  t.dw_dv[2] = (1 - au);
  t.dw_dv[3] = au;
  return t;
}

Eigen::VectorXd pack_matrix(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

}  // namespace

TriplaneField TriplaneField::zeros(int rows, int cols, int feat, const Vec3& bmin,
                                   const Vec3& bmax) {
  TriplaneField f;
  f.rows = rows;
  f.cols = cols;
  f.feat = feat;
  f.bounds_min = bmin;
  f.bounds_max = bmax;
  for (auto& p : f.planes) p = Eigen::VectorXd::Zero(f.plane_size());
  return f;
}

Eigen::VectorXd sample_features(const TriplaneField& field, const Vec3& x) {
  Eigen::VectorXd out(field.feature_dim());
  for (int p = 0; p < 3; ++p) {
    const BilinearTap t = plane_tap(field, p, x);
    auto seg = out.segment(p * field.feat, field.feat);
    seg.setZero();
    for (int k = 0; k < 4; ++k)
      seg += t.w[k] * field.planes[p].segment(t.cell[k] * field.feat, field.feat);
  }
  return out;
}

void sample_features_backward(const TriplaneField& field, const Vec3& x,
                              const Eigen::VectorXd& grad_out,
                              std::array<Eigen::VectorXd, 3>* grad_planes, Vec3* grad_x) {
  for (int p = 0; p < 3; ++p) {
    const BilinearTap t = plane_tap(field, p, x);
    const auto g = grad_out.segment(p * field.feat, field.feat);
    for (int k = 0; k < 4; ++k) {
      const auto feats = field.planes[p].segment(t.cell[k] * field.feat, field.feat);
      if (grad_planes)
        (*grad_planes)[p].segment(t.cell[k] * field.feat, field.feat) += t.w[k] * g;
      if (grad_x) {
        const double gdot = g.dot(feats);
        (*grad_x)[t.axis_u] += gdot * t.dw_du[k] * t.scale_u;
        (*grad_x)[t.axis_v] += gdot * t.dw_dv[k] * t.scale_v;
      }
    }
  }
}

Mlp Mlp::create(int in, int hidden, int out, uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto xavier = [&](Eigen::MatrixXd& m) {
    const double a = std::sqrt(6.0 / double(m.rows() + m.cols()));
    std::uniform_real_distribution<double> d(-a, a);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  };
  Mlp mlp;
  mlp.w1.resize(hidden, in);
  mlp.w2.resize(hidden, hidden);
  mlp.w3 = Eigen::MatrixXd::Zero(out, hidden);
  xavier(mlp.w1);
  xavier(mlp.w2);
  mlp.b1 = Eigen::VectorXd::Zero(hidden);
  mlp.b2 = Eigen::VectorXd::Zero(hidden);
  mlp.b3 = Eigen::VectorXd::Zero(out);
  return mlp;
}

int Mlp::param_count() const {
  return int(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size());
}

Eigen::VectorXd Mlp::pack() const {
  Eigen::VectorXd p(param_count());
  Eigen::Index o = 0;
  for (const Eigen::MatrixXd* m : {&w1, &w2, &w3}) {
    p.segment(o, m->size()) = pack_matrix(*m);
    o += m->size();
  }
  for (const Eigen::VectorXd* b : {&b1, &b2, &b3}) {
    p.segment(o, b->size()) = *b;
    o += b->size();
  }
  return p;
}

void Mlp::unpack(const Eigen::VectorXd& params) {
  Eigen::Index o = 0;
  for (Eigen::MatrixXd* m : {&w1, &w2, &w3}) {
    *m = Eigen::Map<const Eigen::MatrixXd>(params.data() + o, m->rows(), m->cols());
    o += m->size();
  }
  for (Eigen::VectorXd* b : {&b1, &b2, &b3}) {
    *b = params.segment(o, b->size());
    o += b->size();
  }
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x, Trace* trace) const {
  const Eigen::VectorXd h1 = (w1 * x + b1).array().tanh();
  const Eigen::VectorXd h2 = (w2 * h1 + b2).array().tanh();
  if (trace) {
    trace->x = x;
    trace->h1 = h1;
    trace->h2 = h2;
  }
  return w3 * h2 + b3;
}

Eigen::VectorXd Mlp::backward(const Trace& trace, const Eigen::VectorXd& grad_out,
                              Eigen::VectorXd* grad_params) const {
  const Eigen::VectorXd d_h2 =
      (w3.transpose() * grad_out).cwiseProduct((1.0 - trace.h2.array().square()).matrix().eval());
  // d_h2 here is already the pre-activation gradient of layer 2.
  const Eigen::VectorXd d_h1 =
      (w2.transpose() * d_h2).cwiseProduct((1.0 - trace.h1.array().square()).matrix().eval());
  if (grad_params) {
    Eigen::Index o = 0;
    auto add_mat = [&](const Eigen::VectorXd& d, const Eigen::VectorXd& act, Eigen::Index sz) {
      Eigen::Map<Eigen::MatrixXd>(grad_params->data() + o, d.size(), act.size()) +=
          d * act.transpose();
      o += sz;
    };
    add_mat(d_h1, trace.x, w1.size());
    add_mat(d_h2, trace.h1, w2.size());
    add_mat(grad_out, trace.h2, w3.size());
    grad_params->segment(o, b1.size()) += d_h1;
    o += b1.size();
    grad_params->segment(o, b2.size()) += d_h2;
    o += b2.size();
    grad_params->segment(o, b3.size()) += grad_out;
  }
  return w1.transpose() * d_h1;
}

FieldDecoders FieldDecoders::create(int feature_dim, int hidden, double base_log_scale,
                                    uint64_t seed) {
  FieldDecoders d;
  d.geometry = Mlp::create(feature_dim, hidden, 7, seed * 2 + 1);
  d.appearance = Mlp::create(feature_dim, hidden, 4, seed * 2 + 2);
  d.base_log_scale = base_log_scale;
  return d;
}

namespace {

// Decoded fields for one site, with everything needed to backpropagate.
struct DecodedSite {
  Mlp::Trace geo_trace, app_trace;
  Eigen::VectorXd geo_out, app_out;
  Vec4 rot_unnorm = Vec4::Zero();  // (1,0,0,0) + raw, coeff order (w,x,y,z)
};

Gaussian decode_site(const TemplateModel& model, const Vec3& site, DecodedSite* aux) {
  const Eigen::VectorXd f = sample_features(model.field, site);
  DecodedSite local;
  DecodedSite& d = aux ? *aux : local;
  d.geo_out = model.decoders.geometry.forward(f, aux ? &d.geo_trace : nullptr);
  d.app_out = model.decoders.appearance.forward(f, aux ? &d.app_trace : nullptr);
  d.rot_unnorm = Vec4(1 + d.geo_out[0], d.geo_out[1], d.geo_out[2], d.geo_out[3]);
  Gaussian g;
  g.position = site;
  const Vec4 q = d.rot_unnorm.normalized();
  g.rotation = Quat(q[0], q[1], q[2], q[3]);
  g.log_scale = d.geo_out.segment<3>(4) + Vec3::Constant(model.decoders.base_log_scale);
  g.color = d.app_out.segment<3>(0).unaryExpr([](double v) { return sigmoid(v); });
  g.opacity_logit = d.app_out[3];
  return g;
}

// Chains per-gaussian render gradients back to the decoder outputs.
//   rotation: q = u/|u|, dq/du = (I - q q^T)/|u|
//   color: c = sigmoid(raw)
void site_output_grads(const Gaussian& g, const DecodedSite& d, const Vec3& d_pos_in,
                       const Vec4& d_rot, const Vec3& d_log_scale, double d_opacity,
                       const Vec3& d_color, Eigen::VectorXd& d_geo_out,
                       Eigen::VectorXd& d_app_out) {
  const double un = d.rot_unnorm.norm();
  const Vec4 q = d.rot_unnorm / un;
  const Vec4 du = (d_rot - q * q.dot(d_rot)) / un;
  d_geo_out.resize(7);
  d_geo_out.segment<4>(0) = du;
  d_geo_out.segment<3>(4) = d_log_scale;
  d_app_out.resize(4);
  for (int k = 0; k < 3; ++k) d_app_out[k] = d_color[k] * g.color[k] * (1.0 - g.color[k]);
  d_app_out[3] = d_opacity;
  (void)d_pos_in;
}

double mask_pixel_count(const ImageGray& m) {
  double n = 0;
  for (double v : m.data) n += v > 0.5 ? 1.0 : 0.0;
  return n;
}

// Least-squares point closest to a bundle of camera rays.
Vec3 triangulate_rays(const std::vector<Vec3>& origins, const std::vector<Vec3>& dirs) {
  Mat3 a = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (size_t i = 0; i < origins.size(); ++i) {
    const Mat3 p = Mat3::Identity() - dirs[i] * dirs[i].transpose();
    a += p;
    b += p * origins[i];
  }
  return a.ldlt().solve(b);
}

struct HullEstimate {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

HullEstimate estimate_hull(const CaptureFrame& frame, const std::vector<Camera>& cameras) {
  std::vector<Vec3> origins, dirs;
  std::vector<double> areas;
  std::vector<size_t> used;
  for (size_t c = 0; c < cameras.size(); ++c) {
    const ImageGray& m = frame.mask_object[c];
    double n = 0, su = 0, sv = 0;
    for (int v = 0; v < m.height; ++v)
      for (int u = 0; u < m.width; ++u)
        if (*m.at(u, v) > 0.5) {
          ++n;
          su += u + 0.5;
          sv += v + 0.5;
        }
    if (n == 0) continue;
    const Camera& cam = cameras[c];
    const Se3Pose cw = inverse(cam.world_to_camera);
    const Vec3 dir_cam((su / n - cam.cx) / cam.fx, (sv / n - cam.cy) / cam.fy, 1.0);
    origins.push_back(cw.translation);
    dirs.push_back((cw.rotation * dir_cam).normalized());
    areas.push_back(n);
    used.push_back(c);
  }
  HullEstimate h;
  if (origins.empty()) return h;
  h.center = triangulate_rays(origins, dirs);
  double r = 0;
  for (size_t i = 0; i < used.size(); ++i) {
    const Camera& cam = cameras[used[i]];
    const double depth = (h.center - origins[i]).norm();
    r += depth * std::sqrt(areas[i] / M_PI) / cam.fx;
  }
  h.radius = std::max(1e-6, 1.3 * r / double(used.size()));
  return h;
}

bool inside_all_masks(const Vec3& x, const CaptureFrame& frame,
                      const std::vector<Camera>& cameras) {
  for (size_t c = 0; c < cameras.size(); ++c) {
    if (mask_pixel_count(frame.mask_object[c]) == 0) continue;
    Vec3 px;
    try {
      px = project_point(cameras[c], x);
    } catch (const BehindCamera&) {
      return false;
    }
    const int u = int(px[0]), v = int(px[1]);
    if (u < 0 || v < 0 || u >= cameras[c].width || v >= cameras[c].height) return false;
    if (*frame.mask_object[c].at(u, v) <= 0.5) return false;
  }
  return true;
}

std::vector<Vec3> init_sites(const CaptureFrame& frame, const std::vector<Camera>& cameras,
                             const HullEstimate& hull, int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<Vec3> sites;
  auto draw = [&] {
    for (;;) {
      const Vec3 p(d(rng), d(rng), d(rng));
      if (p.squaredNorm() <= 1.0) return Vec3(hull.center + hull.radius * p);
    }
  };
  int attempts = 0;
  const int max_attempts = 400 * n;
  while (int(sites.size()) < n && attempts < max_attempts) {
    ++attempts;
    const Vec3 p = draw();
    if (inside_all_masks(p, frame, cameras)) sites.push_back(p);
  }
  while (int(sites.size()) < n) sites.push_back(draw());  // bounding-sphere fallback
  return sites;
}

// Masked photometric + silhouette loss for one camera; fills gradient images.
double frame_loss(const RenderedImage& img, const ImageRgb& target, const ImageGray& mask_o,
                  const ImageGray* mask_h, double silhouette_weight, ImageRgb* grad_rgb,
                  ImageGray* grad_alpha) {
  const int w = target.width, h = target.height;
  if (grad_rgb) *grad_rgb = ImageRgb(w, h);
  if (grad_alpha) *grad_alpha = ImageGray(w, h);
  double n_photo = 0, n_valid = 0;
  for (int i = 0; i < w * h; ++i) {
    const bool valid = !mask_h || mask_h->data[i] <= 0.5;
    if (!valid) continue;
    ++n_valid;
    if (mask_o.data[i] > 0.5) ++n_photo;
  }
  if (n_valid == 0) return 0.0;
  double loss = 0;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const int i = v * w + u;
      if (mask_h && mask_h->data[i] > 0.5) continue;
      if (n_photo > 0 && mask_o.data[i] > 0.5) {
        const Vec3 diff = pixel3(img.rgb, u, v) - pixel3(target, u, v);
        loss += diff.squaredNorm() / (3.0 * n_photo);
        if (grad_rgb) set_pixel3(*grad_rgb, u, v, 2.0 * diff / (3.0 * n_photo));
      }
      const double da = *img.alpha.at(u, v) - (mask_o.data[i] > 0.5 ? 1.0 : 0.0);
      loss += silhouette_weight * da * da / n_valid;
      if (grad_alpha) *grad_alpha->at(u, v) = silhouette_weight * 2.0 * da / n_valid;
    }
  return loss;
}

}  // namespace

GaussianSet decode_template(const TemplateModel& model, EntityLabel label) {
  GaussianSet set;
  set.label = label;
  set.gaussians.reserve(model.sites.size());
  for (const Vec3& site : model.sites) set.gaussians.push_back(decode_site(model, site, nullptr));
  return set;
}

size_t select_min_occlusion_frame(const Capture& capture) {
  if (capture.frames.empty()) throw EmptyCapture();
  size_t best = 0;
  double best_count = -1;
  for (size_t t = 0; t < capture.frames.size(); ++t) {
    double n = 0;
    for (const ImageGray& m : capture.frames[t].mask_object) n += mask_pixel_count(m);
    if (n > best_count) {
      best_count = n;
      best = t;
    }
  }
  return best;
}

FitResult fit_template(const CaptureFrame& frame, const std::vector<Camera>& cameras,
                       const FitConfig& config) {
  FitResult result;
  result.low_confidence = cameras.size() < 2;

  const HullEstimate hull = estimate_hull(frame, cameras);
  const int n = config.sites;
  result.model.sites = init_sites(frame, cameras, hull, n, config.seed);
  const Vec3 margin = Vec3::Constant(1.1 * hull.radius);
  result.model.field = TriplaneField::zeros(config.plane_rows, config.plane_cols, config.feat,
                                            hull.center - margin, hull.center + margin);
  const double base_ls = std::log(std::max(1e-6, config.base_log_scale_factor * hull.radius));
  result.model.decoders =
      FieldDecoders::create(result.model.field.feature_dim(), config.hidden, base_ls, config.seed);
  {
    // Zero planes with a zero output layer are a stationary point (all hidden
    // activations vanish); break the symmetry with small random values.
    std::mt19937_64 rng(config.seed + 999);
    std::uniform_real_distribution<double> dp(-0.1, 0.1);
    for (auto& p : result.model.field.planes)
      for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = dp(rng);
    for (Mlp* m : {&result.model.decoders.geometry, &result.model.decoders.appearance}) {
      const double a = 0.3 * std::sqrt(6.0 / double(m->w3.rows() + m->w3.cols()));
      std::uniform_real_distribution<double> dw(-a, a);
      for (Eigen::Index i = 0; i < m->w3.size(); ++i) m->w3.data()[i] = dw(rng);
    }
  }

  // Flat parameter storage; the model structs are refreshed from these.
  Eigen::VectorXd sites_flat(3 * n);
  for (int i = 0; i < n; ++i) sites_flat.segment<3>(3 * i) = result.model.sites[i];
  Eigen::VectorXd geo_params = result.model.decoders.geometry.pack();
  Eigen::VectorXd app_params = result.model.decoders.appearance.pack();
  // Bypass mode: 11 direct parameters per gaussian after the position
  // (raw rotation 4, log_scale 3, opacity_logit, color logits 3).
  Eigen::VectorXd direct(11 * n);
  for (int i = 0; i < n; ++i) {
    direct.segment<11>(11 * i).setZero();
    direct.segment<3>(11 * i + 4).setConstant(base_ls);
  }

  auto sync_sites = [&] {
    for (int i = 0; i < n; ++i) result.model.sites[i] = sites_flat.segment<3>(3 * i);
  };
  auto decode_direct = [&](std::vector<DecodedSite>* aux) {
    GaussianSet set;
    set.gaussians.resize(n);
    if (aux) aux->resize(n);
    for (int i = 0; i < n; ++i) {
      Gaussian& g = set[i];
      g.position = sites_flat.segment<3>(3 * i);
      const auto p = direct.segment<11>(11 * i);
      const Vec4 u(1 + p[0], p[1], p[2], p[3]);
      const Vec4 q = u.normalized();
      g.rotation = Quat(q[0], q[1], q[2], q[3]);
      g.log_scale = p.segment<3>(4);
      g.opacity_logit = p[7];
      g.color = Vec3(sigmoid(p[8]), sigmoid(p[9]), sigmoid(p[10]));
      if (aux) (*aux)[i].rot_unnorm = u;
    }
    return set;
  };
  auto decode_field = [&](std::vector<DecodedSite>* aux) {
    sync_sites();
    GaussianSet set;
    set.gaussians.resize(n);
    if (aux) aux->resize(n);
    for (int i = 0; i < n; ++i)
      set[i] = decode_site(result.model, result.model.sites[i], aux ? &(*aux)[i] : nullptr);
    return set;
  };
  auto decode_current = [&](std::vector<DecodedSite>* aux) {
    return config.bypass_decoders ? decode_direct(aux) : decode_field(aux);
  };

  AdamState adam_sites, adam_geo, adam_app, adam_direct;
  std::array<AdamState, 3> adam_planes;
  RenderOptions ropts;
  ropts.retain_forward_state = true;
  ropts.thread_count = config.thread_count;

  for (int it = 0; it < config.iterations; ++it) {
    const size_t c = cameras.empty() ? 0 : size_t(it) % cameras.size();
    if (cameras.empty()) break;

    std::vector<DecodedSite> aux;
    GaussianSet set = decode_current(&aux);
    if (config.bypass_decoders) {
      result.model.decoders.geometry.unpack(geo_params);  // keep model in sync anyway
      result.model.decoders.appearance.unpack(app_params);
    }
    const RenderedImage img = render(set, cameras[c], ropts);
    ImageRgb grad_rgb;
    ImageGray grad_alpha;
    const ImageGray* mh = frame.mask_human.empty() ? nullptr : &frame.mask_human[c];
    const double step_loss = frame_loss(img, frame.images[c], frame.mask_object[c], mh,
                                        config.silhouette_weight, &grad_rgb, &grad_alpha);
    if (config.on_step) config.on_step(it, step_loss);
    const RenderGrads grads = render_backward(img, grad_rgb, &grad_alpha);

    const double decay = cosine_decay(1.0, it, config.iterations);
    Eigen::VectorXd g_sites = Eigen::VectorXd::Zero(3 * n);
    if (config.bypass_decoders) {
      Eigen::VectorXd g_direct = Eigen::VectorXd::Zero(11 * n);
      for (int i = 0; i < n; ++i) {
        g_sites.segment<3>(3 * i) = grads.d_position[i];
        auto gd = g_direct.segment<11>(11 * i);
        const double un = aux[i].rot_unnorm.norm();
        const Vec4 q = aux[i].rot_unnorm / un;
        const Vec4 dr = grads.d_rotation[i];
        gd.segment<4>(0) = (dr - q * q.dot(dr)) / un;
        gd.segment<3>(4) = grads.d_log_scale[i];
        gd[7] = grads.d_opacity_logit[i];
        for (int k = 0; k < 3; ++k)
          gd[8 + k] = grads.d_color[i][k] * set[i].color[k] * (1.0 - set[i].color[k]);
      }
      adam_direct.step(direct, g_direct, config.lr_direct * decay);
    } else {
      std::array<Eigen::VectorXd, 3> g_planes;
      for (auto& p : g_planes) p = Eigen::VectorXd::Zero(result.model.field.plane_size());
      Eigen::VectorXd g_geo = Eigen::VectorXd::Zero(geo_params.size());
      Eigen::VectorXd g_app = Eigen::VectorXd::Zero(app_params.size());
      Eigen::VectorXd d_geo_out, d_app_out;
      for (int i = 0; i < n; ++i) {
        site_output_grads(set[i], aux[i], grads.d_position[i], grads.d_rotation[i],
                          grads.d_log_scale[i], grads.d_opacity_logit[i], grads.d_color[i],
                          d_geo_out, d_app_out);
        const Eigen::VectorXd d_feat =
            result.model.decoders.geometry.backward(aux[i].geo_trace, d_geo_out, &g_geo) +
            result.model.decoders.appearance.backward(aux[i].app_trace, d_app_out, &g_app);
        Vec3 gx = Vec3::Zero();
        sample_features_backward(result.model.field, result.model.sites[i], d_feat, &g_planes,
                                 &gx);
        g_sites.segment<3>(3 * i) = grads.d_position[i] + gx;
      }
      for (int p = 0; p < 3; ++p)
        adam_planes[p].step(result.model.field.planes[p], g_planes[p],
                            config.lr_planes * decay);
      adam_geo.step(geo_params, g_geo, config.lr_mlp * decay);
      adam_app.step(app_params, g_app, config.lr_mlp * decay);
      result.model.decoders.geometry.unpack(geo_params);
      result.model.decoders.appearance.unpack(app_params);
    }
    adam_sites.step(sites_flat, g_sites, config.lr_sites * decay);
    for (int i = 0; i < 3 * n; ++i)
      sites_flat[i] = std::clamp(sites_flat[i], result.model.field.bounds_min[i % 3],
                                 result.model.field.bounds_max[i % 3]);
  }

  result.decoded = decode_current(nullptr);
  result.decoded.label = EntityLabel::Object;
  sync_sites();

  // Final masked PSNR, evaluated per camera in parallel and reduced in order.
  std::vector<double> psnrs(cameras.size(), 0.0);
  parallel_chunks(int(cameras.size()), config.thread_count, [&](int c) {
    const RenderedImage img = render(result.decoded, cameras[c], {});
    psnrs[c] = psnr_masked(img.rgb, frame.images[c], frame.mask_object[c]);
  });
  double acc = 0;
  for (double p : psnrs) acc += std::min(p, 99.0);
  result.train_psnr = cameras.empty() ? 0.0 : acc / double(cameras.size());
  result.converged = config.iterations > 0 && result.train_psnr >= config.psnr_threshold;
  return result;
}

}  // namespace hoi
