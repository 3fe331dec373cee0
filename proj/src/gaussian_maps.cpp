#include "hoisplat/gaussian_maps.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include "hoisplat/optim.hpp"
#include "hoisplat/parallel.hpp"

namespace hoi {

namespace {

// Deterministic square-spiral pixel probe order around (x0, y0).
int probe_free_pixel(const std::vector<int>& occupancy, int width, int height, int x0, int y0) {
  const int max_ring = std::max(width, height);
  for (int ring = 0; ring <= max_ring; ++ring) {
    for (int dy = -ring; dy <= ring; ++dy)
      for (int dx = -ring; dx <= ring; ++dx) {
        if (std::max(std::abs(dx), std::abs(dy)) != ring) continue;
        const int x = x0 + dx, y = y0 + dy;
        if (x < 0 || y < 0 || x >= width || y >= height) continue;
        const int i = y * width + x;
        if (occupancy[i] < 0) return i;
      }
  }
  return -1;
}

GaussianMap assign_to_map(const GaussianSet& tmpl, const std::vector<int>& indices, int width,
                          int height, double minx, double maxx, double miny, double maxy) {
  GaussianMap map;
  map.width = width;
  map.height = height;
  map.pixel_to_gaussian.assign(size_t(width) * height, -1);
  map.position_map.assign(size_t(width) * height, Vec3::Zero());
  if (indices.size() > size_t(width) * height)
    throw MapOverflow("map " + std::to_string(width) + "x" + std::to_string(height) +
                      " cannot host " + std::to_string(indices.size()) + " gaussians");
  const double sx = maxx > minx ? (width - 1) / (maxx - minx) : 0.0;
  const double sy = maxy > miny ? (height - 1) / (maxy - miny) : 0.0;
  for (const int k : indices) {
    const Vec3& p = tmpl[size_t(k)].position;
    const int x0 = int(std::lround((p.x() - minx) * sx));
    const int y0 = int(std::lround((p.y() - miny) * sy));
    const int i = probe_free_pixel(map.pixel_to_gaussian, width, height,
                                   std::clamp(x0, 0, width - 1), std::clamp(y0, 0, height - 1));
    if (i < 0) throw MapOverflow("no free pixel during probing");
    map.pixel_to_gaussian[size_t(i)] = k;
    map.position_map[size_t(i)] = p;
  }
  return map;
}

void check_aligned(const GaussianMap& map, const OffsetTable& table) {
  if (map.width != table.width || map.height != table.height)
    throw ShapeMismatch("offset table does not match map dimensions");
}

}  // namespace

size_t GaussianMap::valid_count() const {
  size_t n = 0;
  for (const int k : pixel_to_gaussian) n += k >= 0 ? 1 : 0;
  return n;
}

OffsetTable OffsetTable::zeros(int width, int height, int pose_dim, int joint_count) {
  OffsetTable t;
  t.width = width;
  t.height = height;
  const size_t n = size_t(width) * height;
  t.d_position.assign(n, Vec3::Zero());
  t.d_rotation.assign(n, Vec3::Zero());
  t.d_log_scale.assign(n, Vec3::Zero());
  t.d_color.assign(n, Vec3::Zero());
  t.d_opacity_logit.assign(n, 0.0);
  t.pose_dim = pose_dim;
  t.pose_linear = Eigen::VectorXd::Zero(Eigen::Index(n) * 3 * pose_dim);
  t.joint_count = joint_count;
  t.skinning_logits = Eigen::VectorXd::Zero(Eigen::Index(n) * joint_count);
  return t;
}

bool OffsetTable::is_zero() const {
  for (const auto* v : {&d_position, &d_rotation, &d_log_scale, &d_color})
    for (const Vec3& x : *v)
      if (x.norm() != 0.0) return false;
  for (const double x : d_opacity_logit)
    if (x != 0.0) return false;
  return pose_linear.norm() == 0.0 && skinning_logits.norm() == 0.0;
}

std::pair<GaussianMap, GaussianMap> build_object_maps(const GaussianSet& tmpl, int width,
                                                      int height) {
  if (tmpl.empty()) throw ShapeMismatch("cannot build maps for an empty template");
  std::vector<double> zs(tmpl.size());
  for (size_t k = 0; k < tmpl.size(); ++k) zs[k] = tmpl[k].position.z();
  std::vector<double> sorted = zs;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double median = sorted[sorted.size() / 2];
  std::vector<int> front_idx, back_idx;
  for (size_t k = 0; k < tmpl.size(); ++k)
    (zs[k] >= median ? front_idx : back_idx).push_back(int(k));
  double minx = 1e300, maxx = -1e300, miny = 1e300, maxy = -1e300;
  for (size_t k = 0; k < tmpl.size(); ++k) {
    minx = std::min(minx, tmpl[k].position.x());
    maxx = std::max(maxx, tmpl[k].position.x());
    miny = std::min(miny, tmpl[k].position.y());
    maxy = std::max(maxy, tmpl[k].position.y());
  }
  return {assign_to_map(tmpl, front_idx, width, height, minx, maxx, miny, maxy),
          assign_to_map(tmpl, back_idx, width, height, minx, maxx, miny, maxy)};
}

GaussianSet human_canonical_gaussians(const SkeletonRig& rig, int count, uint64_t seed) {
  const std::vector<Vec3> samples = sample_mesh_surface(rig, count, seed);
  double edge_sum = 0;
  size_t edge_count = 0;
  for (const Eigen::Vector3i& t : rig.mesh_triangles)
    for (int e = 0; e < 3; ++e) {
      edge_sum += (rig.mesh_vertices[t[e]] - rig.mesh_vertices[t[(e + 1) % 3]]).norm();
      ++edge_count;
    }
  const double log_scale = std::log(std::max(1e-9, edge_sum / double(edge_count) / 2.0));
  GaussianSet set;
  set.label = EntityLabel::Human;
  for (const Vec3& p : samples) {
    Gaussian g;
    g.position = p;
    g.log_scale = Vec3::Constant(log_scale);
    g.opacity_logit = 0.0;
    g.color = Vec3::Zero();
    set.gaussians.push_back(g);
  }
  return set;
}

GaussianMap build_human_position_map(const GaussianMap& canonical_map,
                                     const GaussianSet& canonical, const MatX& weights,
                                     const SkeletonRig& rig, const PoseVector& pose) {
  PoseVector no_root = pose;
  no_root.root_translation.setZero();
  const GaussianSet skinned = skin_gaussians(canonical, weights, rig, no_root);
  GaussianMap map = canonical_map;
  for (size_t i = 0; i < map.pixel_to_gaussian.size(); ++i) {
    const int k = map.pixel_to_gaussian[i];
    if (k >= 0) map.position_map[i] = skinned[size_t(k)].position;
  }
  return map;
}

GaussianSet apply_offsets(const GaussianSet& canonical, const GaussianMap& map,
                          const OffsetTable& table, const Eigen::VectorXd* pose_features) {
  check_aligned(map, table);
  if (pose_features && table.pose_dim > 0 && pose_features->size() != table.pose_dim)
    throw ShapeMismatch("pose feature size does not match table pose_dim");
  GaussianSet out = canonical;
  for (size_t i = 0; i < map.pixel_to_gaussian.size(); ++i) {
    const int k = map.pixel_to_gaussian[i];
    if (k < 0) continue;
    if (size_t(k) >= canonical.size()) throw ShapeMismatch("map references missing gaussian");
    Gaussian& g = out[size_t(k)];
    Vec3 dp = table.d_position[i];
    if (pose_features && table.pose_dim > 0) {
      const auto m = Eigen::Map<const Eigen::Matrix<double, 3, Eigen::Dynamic, Eigen::RowMajor>>(
          table.pose_linear.data() + Eigen::Index(i) * 3 * table.pose_dim, 3, table.pose_dim);
      dp += m * (*pose_features);
    }
    g.position += dp;
    g.rotation = (quat_exp(table.d_rotation[i]) * g.rotation).normalized();
    g.log_scale += table.d_log_scale[i];
    g.opacity_logit += table.d_opacity_logit[i];
    g.color = (g.color + table.d_color[i]).cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

void apply_offsets_backward(const GaussianSet& canonical, const GaussianMap& map,
                            const OffsetTable& table, const Eigen::VectorXd* pose_features,
                            const RenderGrads& grads, OffsetTable* grad) {
  check_aligned(map, table);
  check_aligned(map, *grad);
  for (size_t i = 0; i < map.pixel_to_gaussian.size(); ++i) {
    const int k = map.pixel_to_gaussian[i];
    if (k < 0) continue;
    const Gaussian& g = canonical[size_t(k)];
    grad->d_position[i] += grads.d_position[size_t(k)];
    if (pose_features && table.pose_dim > 0) {
      auto m = Eigen::Map<Eigen::Matrix<double, 3, Eigen::Dynamic, Eigen::RowMajor>>(
          grad->pose_linear.data() + Eigen::Index(i) * 3 * table.pose_dim, 3, table.pose_dim);
      m += grads.d_position[size_t(k)] * pose_features->transpose();
    }
    // q' = quat_exp(dr) * q: chain through the exp map and the product.
    const Eigen::Matrix4d right = quat_right(g.rotation);
    const Eigen::Matrix<double, 4, 3> jexp = quat_exp_jacobian(table.d_rotation[i]);
    grad->d_rotation[i] += jexp.transpose() * right.transpose() * grads.d_rotation[size_t(k)];
    grad->d_log_scale[i] += grads.d_log_scale[size_t(k)];
    grad->d_opacity_logit[i] += grads.d_opacity_logit[size_t(k)];
    // Clamped color channels get zero gradient.
    const Vec3 unclamped = g.color + table.d_color[i];
    for (int c = 0; c < 3; ++c)
      if (unclamped[c] >= 0.0 && unclamped[c] <= 1.0)  // boundary passes through
        grad->d_color[i][c] += grads.d_color[size_t(k)][c];
  }
}

MatX effective_skinning_weights(const MatX& template_weights, const GaussianMap& front,
                                const GaussianMap& back, const OffsetTable& table_front,
                                const OffsetTable& table_back) {
  const size_t n = size_t(template_weights.rows());
  const int joints = int(template_weights.cols());
  MatX w = template_weights;
  for (const auto& [map, table] : {std::pair<const GaussianMap*, const OffsetTable*>{
                                       &front, &table_front},
                                   {&back, &table_back}}) {
    if (table->joint_count == 0) continue;
    if (table->joint_count != joints) throw ShapeMismatch("skinning logit joint count mismatch");
    for (size_t i = 0; i < map->pixel_to_gaussian.size(); ++i) {
      const int k = map->pixel_to_gaussian[i];
      if (k < 0 || size_t(k) >= n) continue;
      const auto logits = table->skinning_logits.segment(Eigen::Index(i) * joints, joints);
      if (logits.isZero(0.0)) continue;  // bit-exact template weights at zero logits
      Eigen::VectorXd row =
          template_weights.row(k).transpose().cwiseProduct(logits.array().exp().matrix());
      const double z = row.sum();
      if (z > 0) w.row(k) = (row / z).transpose();
    }
  }
  return w;
}

GaussianSet deform_human(const MapsModel& model, const SkeletonRig& rig, const PoseVector& pose) {
  const Eigen::VectorXd feats = pose.features();
  const Eigen::VectorXd* pf = model.use_pose_linear ? &feats : nullptr;
  GaussianSet off = apply_offsets(model.human_canonical, model.human_front,
                                  model.table_human_front, pf);
  off = apply_offsets(off, model.human_back, model.table_human_back, pf);
  const MatX w = effective_skinning_weights(model.human_template_weights, model.human_front,
                                            model.human_back, model.table_human_front,
                                            model.table_human_back);
  GaussianSet out = skin_gaussians(off, w, rig, pose);
  out.label = EntityLabel::Human;
  return out;
}

GaussianSet deform_object(const MapsModel& model, const Se3Pose& pose) {
  GaussianSet off = apply_offsets(model.object_canonical, model.object_front,
                                  model.table_object_front, nullptr);
  off = apply_offsets(off, model.object_back, model.table_object_back, nullptr);
  GaussianSet out = transform_rigid(off, pose);
  out.label = EntityLabel::Object;
  return out;
}

namespace {

// Adam over every learnable array of a table; gradient shares the layout.
struct TableAdam {
  AdamState pos, rot, ls, op, col, plin, logits;

  static Eigen::Map<Eigen::VectorXd> flat(std::vector<Vec3>& v) {
    return {reinterpret_cast<double*>(v.data()), Eigen::Index(v.size()) * 3};
  }
  static Eigen::Map<const Eigen::VectorXd> flat(const std::vector<Vec3>& v) {
    return {reinterpret_cast<const double*>(v.data()), Eigen::Index(v.size()) * 3};
  }

  void step(OffsetTable& t, const OffsetTable& g, double lr_tables, double lr_logits) {
    Eigen::VectorXd tmp;
    auto apply = [&](AdamState& a, Eigen::Ref<Eigen::VectorXd> p,
                     const Eigen::Ref<const Eigen::VectorXd>& gr, double lr) {
      if (p.size() == 0) return;
      tmp = p;
      a.step(tmp, gr, lr);
      p = tmp;
    };
    // Geometry moves slower than appearance, as usual for gaussian fitting.
    apply(pos, flat(t.d_position), flat(g.d_position), 0.1 * lr_tables);
    apply(rot, flat(t.d_rotation), flat(g.d_rotation), 0.1 * lr_tables);
    apply(ls, flat(t.d_log_scale), flat(g.d_log_scale), 0.25 * lr_tables);
    apply(col, flat(t.d_color), flat(g.d_color), lr_tables);
    Eigen::Map<Eigen::VectorXd> o(t.d_opacity_logit.data(), Eigen::Index(t.d_opacity_logit.size()));
    Eigen::Map<const Eigen::VectorXd> go(g.d_opacity_logit.data(),
                                         Eigen::Index(g.d_opacity_logit.size()));
    apply(op, o, go, lr_tables);
    apply(plin, t.pose_linear, g.pose_linear, 0.1 * lr_tables);
    apply(logits, t.skinning_logits, g.skinning_logits, lr_logits);
  }
};

RenderGrads zero_grads(size_t n) {
  RenderGrads g;
  g.d_position.assign(n, Vec3::Zero());
  g.d_rotation.assign(n, Vec4::Zero());
  g.d_log_scale.assign(n, Vec3::Zero());
  g.d_opacity_logit.assign(n, 0.0);
  g.d_color.assign(n, Vec3::Zero());
  return g;
}

void add_grads(RenderGrads& acc, const RenderGrads& g, size_t src_offset, size_t count) {
  for (size_t k = 0; k < count; ++k) {
    acc.d_position[k] += g.d_position[src_offset + k];
    acc.d_rotation[k] += g.d_rotation[src_offset + k];
    acc.d_log_scale[k] += g.d_log_scale[src_offset + k];
    acc.d_opacity_logit[k] += g.d_opacity_logit[src_offset + k];
    acc.d_color[k] += g.d_color[src_offset + k];
  }
}

void scale_image(ImageRgb& im, double s) {
  for (double& v : im.data) v *= s;
}

void add_image(ImageRgb& a, const ImageRgb& b, double s) {
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += s * b.data[i];
}

}  // namespace

TrainMapsResult train_maps(MapsModel& model, const SkeletonRig& rig, const Capture& capture,
                           const PoseTrack& object_track, const TrainMapsConfig& config) {
  TrainMapsResult result;
  result.refined = object_track;
  const size_t T = capture.frame_count();
  const size_t nh = model.human_canonical.size();
  const size_t no = model.object_canonical.size();
  const int joints = rig.joint_count();

  std::vector<int> train_cams;
  for (int c = 0; c < int(capture.camera_count()); ++c)
    if (std::find(config.holdout_cameras.begin(), config.holdout_cameras.end(), c) ==
        config.holdout_cameras.end())
      train_cams.push_back(c);
  if (T == 0 || train_cams.empty()) throw EmptyCapture();

  TableAdam adam_hf, adam_hb, adam_of, adam_ob;
  std::vector<AdamState> adam_pose(T);
  RenderOptions ropts;
  ropts.retain_forward_state = true;
  ropts.thread_count = config.thread_count;

  // Per-frame FK transforms are pose-independent of training, cache them.
  std::vector<std::vector<Se3Pose>> fk(T);
  for (size_t t = 0; t < T; ++t) fk[t] = joint_transforms(rig, capture.human_poses[t]);

  for (int it = 0; it < config.iterations; ++it) {
    const size_t idx = size_t(it) % (T * train_cams.size());
    const size_t t = idx / train_cams.size();
    const int c = train_cams[idx % train_cams.size()];
    const Camera& cam = capture.cameras[size_t(c)];
    const double lr_t = cosine_decay(config.lr_tables, it, config.iterations);
    const double lr_l = cosine_decay(config.lr_logits, it, config.iterations);
    const CaptureFrame& frame = capture.frames[t];
    const Eigen::VectorXd pose_feats = capture.human_poses[t].features();
    const Eigen::VectorXd* pf = model.use_pose_linear ? &pose_feats : nullptr;

    // Forward: canonical -> offsets -> skinning / rigid pose -> renders.
    GaussianSet human_off = apply_offsets(model.human_canonical, model.human_front,
                                          model.table_human_front, pf);
    human_off = apply_offsets(human_off, model.human_back, model.table_human_back, pf);
    const MatX w_eff = effective_skinning_weights(model.human_template_weights, model.human_front,
                                                  model.human_back, model.table_human_front,
                                                  model.table_human_back);
    GaussianSet human = skin_gaussians(human_off, w_eff, rig, capture.human_poses[t]);
    human.label = EntityLabel::Human;
    GaussianSet object_off = apply_offsets(model.object_canonical, model.object_front,
                                           model.table_object_front, nullptr);
    object_off = apply_offsets(object_off, model.object_back, model.table_object_back, nullptr);
    GaussianSet object = transform_rigid(object_off, result.refined.poses[t]);
    object.label = EntityLabel::Object;

    const RenderedImage rh = render(human, cam, ropts);
    const RenderedImage ro = render(object, cam, ropts);
    const RenderedImage ra = render({&human, &object}, cam, ropts);

    MaskPair masks{frame.mask_human[size_t(c)], frame.mask_object[size_t(c)]};
    ImageRgb gh, go, ga;
    const OcclusionL1 l1 =
        occlusion_l1(frame.images[size_t(c)], masks, rh.rgb, ro.rgb, ra.rgb, &gh, &go, &ga);
    ImageGray valid(cam.width, cam.height);
    for (size_t i = 0; i < valid.data.size(); ++i)
      valid.data[i] = std::max(masks.human.data[i], masks.object.data[i]) > 0.5 ? 1.0 : 0.0;
    ImageRgb gper;
    const double lper = gradient_perceptual(frame.images[size_t(c)], ra.rgb, &valid, &gper);
    MatX gw_reg;
    const double lreg = skinning_regularizer(w_eff, model.human_template_weights, &gw_reg);
    const double loss = config.weights.l1 * (l1.human + l1.object + l1.joint) +
                        config.weights.perceptual * lper + config.weights.skinning_reg * lreg;
    if (config.on_step) config.on_step(it, loss);

    scale_image(gh, config.weights.l1);
    scale_image(go, config.weights.l1);
    scale_image(ga, config.weights.l1);
    add_image(ga, gper, config.weights.perceptual);

    const RenderGrads grads_h1 = render_backward(rh, gh);
    const RenderGrads grads_o1 = render_backward(ro, go);
    const RenderGrads grads_a = render_backward(ra, ga);
    RenderGrads grads_human = zero_grads(nh);
    add_grads(grads_human, grads_h1, 0, nh);
    add_grads(grads_human, grads_a, 0, nh);
    RenderGrads grads_object = zero_grads(no);
    add_grads(grads_object, grads_o1, 0, no);
    add_grads(grads_object, grads_a, nh, no);

    // Object pose refinement on the SE(3) tangent. Canonical-space chaining
    // below uses the pose the forward pass rendered with.
    const Se3Pose phi_used = result.refined.poses[t];
    if (config.refine_poses) {
      const Eigen::Matrix<double, 6, 1> g6 =
          pose_tangent_gradient(object, grads_object, 0, no);
      Eigen::VectorXd z = Eigen::VectorXd::Zero(6);
      adam_pose[t].step(z, g6, cosine_decay(config.lr_pose, it, config.iterations));
      result.refined.poses[t] = se3_retract(z, result.refined.poses[t]);
    }

    // Chain object gradients through the rigid transform to canonical space.
    {
      const Mat3 r = phi_used.rotation.toRotationMatrix();
      const Eigen::Matrix4d ql = quat_left(phi_used.rotation);
      RenderGrads go_can = grads_object;
      for (size_t k = 0; k < no; ++k) {
        go_can.d_position[k] = r.transpose() * grads_object.d_position[k];
        go_can.d_rotation[k] = ql.transpose() * grads_object.d_rotation[k];
      }
      OffsetTable gof = OffsetTable::zeros(model.table_object_front.width,
                                           model.table_object_front.height,
                                           model.table_object_front.pose_dim,
                                           model.table_object_front.joint_count);
      OffsetTable gob = OffsetTable::zeros(model.table_object_back.width,
                                           model.table_object_back.height,
                                           model.table_object_back.pose_dim,
                                           model.table_object_back.joint_count);
      // The two maps are disjoint, so the same canonical-space gradients feed both.
      apply_offsets_backward(model.object_canonical, model.object_front,
                             model.table_object_front, nullptr, go_can, &gof);
      GaussianSet mid = apply_offsets(model.object_canonical, model.object_front,
                                      model.table_object_front, nullptr);
      apply_offsets_backward(mid, model.object_back, model.table_object_back, nullptr, go_can,
                             &gob);
      adam_of.step(model.table_object_front, gof, lr_t, lr_l);
      adam_ob.step(model.table_object_back, gob, lr_t, lr_l);
    }

    // Chain human gradients through LBS to canonical space and the weights.
    {
      MatX gw = config.weights.skinning_reg * gw_reg;  // dL/d(effective weights)
      RenderGrads gh_can = grads_human;
      for (size_t k = 0; k < nh; ++k) {
        Mat3 a = Mat3::Zero();
        for (int j = 0; j < joints; ++j)
          a += w_eff(Eigen::Index(k), j) * fk[t][size_t(j)].rotation.toRotationMatrix();
        const Vec3& x = human_off[k].position;
        for (int j = 0; j < joints; ++j)
          gw(Eigen::Index(k), j) += grads_human.d_position[k].dot(fk[t][size_t(j)].apply(x));
        gh_can.d_position[k] = a.transpose() * grads_human.d_position[k];
        // Covariance rotates by the polar factor of the blend; its dependence
        // on the weights is dropped (approximate gradient).
        const Quat rp(polar_rotation(a));
        gh_can.d_rotation[k] =
            quat_left(rp.normalized()).transpose() * grads_human.d_rotation[k];
      }
      OffsetTable ghf = OffsetTable::zeros(model.table_human_front.width,
                                           model.table_human_front.height,
                                           model.table_human_front.pose_dim,
                                           model.table_human_front.joint_count);
      OffsetTable ghb = OffsetTable::zeros(model.table_human_back.width,
                                           model.table_human_back.height,
                                           model.table_human_back.pose_dim,
                                           model.table_human_back.joint_count);
      apply_offsets_backward(model.human_canonical, model.human_front, model.table_human_front,
                             pf, gh_can, &ghf);
      GaussianSet mid = apply_offsets(model.human_canonical, model.human_front,
                                      model.table_human_front, pf);
      apply_offsets_backward(mid, model.human_back, model.table_human_back, pf, gh_can, &ghb);
      // Weight gradient -> per-pixel skinning logits: w_i = t_i e^{l_i} / Z.
      for (const auto& [map, grad_table] :
           {std::pair<const GaussianMap*, OffsetTable*>{&model.human_front, &ghf},
            {&model.human_back, &ghb}}) {
        if (grad_table->joint_count == 0) continue;
        for (size_t i = 0; i < map->pixel_to_gaussian.size(); ++i) {
          const int k = map->pixel_to_gaussian[i];
          if (k < 0) continue;
          const auto wrow = w_eff.row(k);
          const double dot = gw.row(k).dot(wrow);
          for (int j = 0; j < joints; ++j)
            grad_table->skinning_logits[Eigen::Index(i) * joints + j] +=
                wrow[j] * (gw(k, j) - dot);
        }
      }
      adam_hf.step(model.table_human_front, ghf, lr_t, lr_l);
      adam_hb.step(model.table_human_back, ghb, lr_t, lr_l);
    }
  }

  // Held-out evaluation: joint render against the union mask.
  const std::vector<int>& eval_cams =
      config.holdout_cameras.empty() ? train_cams : config.holdout_cameras;
  std::vector<double> psnrs(T * eval_cams.size(), 0.0);
  parallel_chunks(int(psnrs.size()), config.thread_count, [&](int chunk) {
    const size_t t = size_t(chunk) / eval_cams.size();
    const int c = eval_cams[size_t(chunk) % eval_cams.size()];
    const GaussianSet human = deform_human(model, rig, capture.human_poses[t]);
    const GaussianSet object = deform_object(model, result.refined.poses[t]);
    const RenderedImage ra = render({&human, &object}, capture.cameras[size_t(c)], {});
    ImageGray valid(ra.rgb.width, ra.rgb.height);
    const CaptureFrame& frame = capture.frames[t];
    for (size_t i = 0; i < valid.data.size(); ++i)
      valid.data[i] = std::max(frame.mask_human[size_t(c)].data[i],
                               frame.mask_object[size_t(c)].data[i]) > 0.5
                          ? 1.0
                          : 0.0;
    psnrs[size_t(chunk)] = psnr_masked(ra.rgb, frame.images[size_t(c)], valid);
  });
  double acc = 0;
  for (const double p : psnrs) acc += std::min(p, 99.0);
  result.holdout_psnr = psnrs.empty() ? 0.0 : acc / double(psnrs.size());
  result.converged = config.iterations > 0 && result.holdout_psnr >= config.psnr_threshold;
  return result;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
void put_f32s(std::ostream& os, const double* p, size_t n) {
  std::vector<float> buf(n);
  for (size_t i = 0; i < n; ++i) buf[i] = float(p[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(n * 4));
}
void get_f32s(std::istream& is, double* p, size_t n) {
  std::vector<float> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * 4));
  for (size_t i = 0; i < n; ++i) p[i] = double(buf[i]);
}
void put_i32s(std::ostream& os, const int* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n * 4));
}
void get_i32s(std::istream& is, int* p, size_t n) {
  is.read(reinterpret_cast<char*>(p), std::streamsize(n * 4));
}

void put_set(std::ostream& os, const GaussianSet& s) {
  put_u32(os, uint32_t(s.size()));
  put_u32(os, s.label == EntityLabel::Human ? 1 : 0);
  for (const Gaussian& g : s.gaussians) {
    const double vals[14] = {g.position.x(),   g.position.y(),   g.position.z(),
                             g.rotation.w(),   g.rotation.x(),   g.rotation.y(),
                             g.rotation.z(),   g.log_scale.x(),  g.log_scale.y(),
                             g.log_scale.z(),  g.opacity_logit,  g.color.x(),
                             g.color.y(),      g.color.z()};
    put_f32s(os, vals, 14);
  }
}
GaussianSet get_set(std::istream& is) {
  GaussianSet s;
  const uint32_t n = get_u32(is);
  s.label = get_u32(is) == 1 ? EntityLabel::Human : EntityLabel::Object;
  s.gaussians.resize(n);
  for (Gaussian& g : s.gaussians) {
    double v[14];
    get_f32s(is, v, 14);
    g.position = Vec3(v[0], v[1], v[2]);
    g.rotation = Quat(v[3], v[4], v[5], v[6]);
    g.log_scale = Vec3(v[7], v[8], v[9]);
    g.opacity_logit = v[10];
    g.color = Vec3(v[11], v[12], v[13]);
  }
  return s;
}

void put_map(std::ostream& os, const GaussianMap& m) {
  put_u32(os, uint32_t(m.width));
  put_u32(os, uint32_t(m.height));
  put_i32s(os, m.pixel_to_gaussian.data(), m.pixel_to_gaussian.size());
  put_f32s(os, reinterpret_cast<const double*>(m.position_map.data()),
           m.position_map.size() * 3);
}
GaussianMap get_map(std::istream& is) {
  GaussianMap m;
  m.width = int(get_u32(is));
  m.height = int(get_u32(is));
  m.pixel_to_gaussian.resize(size_t(m.width) * m.height);
  m.position_map.resize(size_t(m.width) * m.height);
  get_i32s(is, m.pixel_to_gaussian.data(), m.pixel_to_gaussian.size());
  get_f32s(is, reinterpret_cast<double*>(m.position_map.data()), m.position_map.size() * 3);
  return m;
}

void put_table(std::ostream& os, const OffsetTable& t) {
  put_u32(os, uint32_t(t.width));
  put_u32(os, uint32_t(t.height));
  put_u32(os, uint32_t(t.pose_dim));
  put_u32(os, uint32_t(t.joint_count));
  put_f32s(os, reinterpret_cast<const double*>(t.d_position.data()), t.d_position.size() * 3);
  put_f32s(os, reinterpret_cast<const double*>(t.d_rotation.data()), t.d_rotation.size() * 3);
  put_f32s(os, reinterpret_cast<const double*>(t.d_log_scale.data()), t.d_log_scale.size() * 3);
  put_f32s(os, reinterpret_cast<const double*>(t.d_color.data()), t.d_color.size() * 3);
  put_f32s(os, t.d_opacity_logit.data(), t.d_opacity_logit.size());
  put_f32s(os, t.pose_linear.data(), size_t(t.pose_linear.size()));
  put_f32s(os, t.skinning_logits.data(), size_t(t.skinning_logits.size()));
}
OffsetTable get_table(std::istream& is) {
  const int w = int(get_u32(is)), h = int(get_u32(is));
  const int pd = int(get_u32(is)), jc = int(get_u32(is));
  OffsetTable t = OffsetTable::zeros(w, h, pd, jc);
  get_f32s(is, reinterpret_cast<double*>(t.d_position.data()), t.d_position.size() * 3);
  get_f32s(is, reinterpret_cast<double*>(t.d_rotation.data()), t.d_rotation.size() * 3);
  get_f32s(is, reinterpret_cast<double*>(t.d_log_scale.data()), t.d_log_scale.size() * 3);
  get_f32s(is, reinterpret_cast<double*>(t.d_color.data()), t.d_color.size() * 3);
  get_f32s(is, t.d_opacity_logit.data(), t.d_opacity_logit.size());
  get_f32s(is, t.pose_linear.data(), size_t(t.pose_linear.size()));
  get_f32s(is, t.skinning_logits.data(), size_t(t.skinning_logits.size()));
  return t;
}

constexpr char kMapsMagic[8] = {'H', 'O', 'I', 'M', 'A', 'P', 'S', '1'};

}  // namespace

void write_maps(const MapsModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(kMapsMagic, 8);
  put_u32(os, 1);  // version
  put_u32(os, model.use_pose_linear ? 1 : 0);
  put_set(os, model.human_canonical);
  put_u32(os, uint32_t(model.human_template_weights.rows()));
  put_u32(os, uint32_t(model.human_template_weights.cols()));
  put_f32s(os, model.human_template_weights.data(),
           size_t(model.human_template_weights.size()));
  put_map(os, model.human_front);
  put_map(os, model.human_back);
  put_table(os, model.table_human_front);
  put_table(os, model.table_human_back);
  put_set(os, model.object_canonical);
  put_map(os, model.object_front);
  put_map(os, model.object_back);
  put_table(os, model.table_object_front);
  put_table(os, model.table_object_back);
}

MapsModel read_maps(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (std::memcmp(magic, kMapsMagic, 8) != 0)
    throw std::runtime_error("not a maps checkpoint: " + path);
  if (get_u32(is) != 1) throw std::runtime_error("unsupported maps checkpoint version");
  MapsModel m;
  m.use_pose_linear = get_u32(is) == 1;
  m.human_canonical = get_set(is);
  const uint32_t rows = get_u32(is), cols = get_u32(is);
  m.human_template_weights.resize(rows, cols);
  get_f32s(is, m.human_template_weights.data(), size_t(rows) * cols);
  m.human_front = get_map(is);
  m.human_back = get_map(is);
  m.table_human_front = get_table(is);
  m.table_human_back = get_table(is);
  m.object_canonical = get_set(is);
  m.object_front = get_map(is);
  m.object_back = get_map(is);
  m.table_object_front = get_table(is);
  m.table_object_back = get_table(is);
  if (!is) throw std::runtime_error("truncated maps checkpoint: " + path);
  return m;
}

}  // namespace hoi
