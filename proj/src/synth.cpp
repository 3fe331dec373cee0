#include "hoisplat/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "hoisplat/gaussian_maps.hpp"
#include "hoisplat/io.hpp"
#include "hoisplat/parallel.hpp"
#include "hoisplat/rasterizer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace hoi {

namespace {

using Rng = std::mt19937_64;

double uni(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3 uni3(Rng& rng, double lo, double hi) {
  // Fixed evaluation order; operator arguments would be unsequenced.
  const double x = uni(rng, lo, hi), y = uni(rng, lo, hi), z = uni(rng, lo, hi);
  return {x, y, z};
}

double gauss(Rng& rng, double sigma) {
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

Vec3 checker_color(const Vec3& p, int cells) {
  const auto cell = [&](double v) { return int(std::floor(v * cells + 100 * cells)); };
  const bool odd = (cell(p.x()) + cell(p.y()) + cell(p.z())) % 2 != 0;
  return odd ? Vec3(0.9, 0.9, 0.9) : Vec3(0.15, 0.15, 0.6);
}

Vec3 gradient_color(const Vec3& p, double extent) {
  return (p / (2.0 * extent) + Vec3::Constant(0.5)).cwiseMax(0.05).cwiseMin(0.95);
}

Gaussian splat_at(const Vec3& p, double scale, const Vec3& color, Rng& rng) {
  Gaussian g;
  g.position = p;
  const Vec3 axis = uni3(rng, -1, 1);
  g.rotation = axis.norm() > 1e-9 ? Quat(Eigen::AngleAxisd(uni(rng, 0, M_PI), axis.normalized()))
                                  : Quat::Identity();
  g.log_scale = Vec3::Constant(std::log(scale)) + uni3(rng, -0.2, 0.2);
  g.opacity_logit = uni(rng, 2.5, 4.0);
  g.color = color;
  return g;
}

GaussianSet box_shell(const Vec3& he, int count, int checker, Rng& rng, const Vec3& offset) {
  GaussianSet s;
  s.label = EntityLabel::Object;
  const double area[3] = {he.y() * he.z(), he.x() * he.z(), he.x() * he.y()};
  const double total = area[0] + area[1] + area[2];
  const double scale = 0.7 * std::sqrt(4.0 * total / count);
  for (int i = 0; i < count; ++i) {
    const double pick = uni(rng, 0, total);
    const int axis = pick < area[0] ? 0 : pick < area[0] + area[1] ? 1 : 2;
    Vec3 p = uni3(rng, -1, 1).cwiseProduct(he);
    p[axis] = (uni(rng, 0, 1) < 0.5 ? -1 : 1) * he[axis];
    p += offset;
    const Vec3 c =
        checker > 0 ? checker_color(p, checker) : gradient_color(p - offset, he.maxCoeff());
    s.gaussians.push_back(splat_at(p, scale, c, rng));
  }
  return s;
}

PoseVector lerp_pose(const PoseVector& a, const PoseVector& b, double u) {
  PoseVector out = a;
  for (size_t j = 0; j < a.joint_rotations.size(); ++j)
    out.joint_rotations[j] = (1 - u) * a.joint_rotations[j] + u * b.joint_rotations[j];
  out.root_translation = (1 - u) * a.root_translation + u * b.root_translation;
  return out;
}

Se3Pose lerp_se3(const Se3Pose& a, const Se3Pose& b, double u) {
  Se3Pose out;
  out.rotation = a.rotation.slerp(u, b.rotation);
  out.translation = (1 - u) * a.translation + u * b.translation;
  return out;
}

// Generic clamped piecewise-linear keyframe lookup.
template <typename T, typename Lerp>
T sample_curve(const std::vector<double>& times, const std::vector<T>& keys, double t,
               const Lerp& lerp) {
  if (keys.empty()) throw ScriptError("empty pose curve");
  if (times.size() != keys.size()) throw ScriptError("key times and keys disagree");
  if (t <= times.front()) return keys.front();
  if (t >= times.back()) return keys.back();
  size_t i = 1;
  while (times[i] < t) ++i;
  const double u = (t - times[i - 1]) / (times[i] - times[i - 1]);
  return lerp(keys[i - 1], keys[i], u);
}

Camera ring_cam(const CameraRingSpec& spec, int i) {
  Camera cam;
  cam.width = spec.width;
  cam.height = spec.height;
  cam.fx = cam.fy = spec.focal;
  cam.cx = spec.width / 2.0;
  cam.cy = spec.height / 2.0;
  const double az = 2.0 * M_PI * i / spec.count;
  const Vec3 eye = spec.look_at + spec.radius * Vec3(std::cos(az) * std::cos(spec.elevation),
                                                     std::sin(spec.elevation),
                                                     std::sin(az) * std::cos(spec.elevation));
  const Vec3 fwd = (spec.look_at - eye).normalized();
  const Vec3 right = fwd.cross(Vec3(0, 1, 0)).normalized();
  const Vec3 down = fwd.cross(right).normalized();
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = fwd.transpose();
  cam.world_to_camera.rotation = Quat(r).normalized();
  cam.world_to_camera.translation = -(r * eye);
  return cam;
}

void validate(const SceneScript& script) {
  if (script.frame_count < 1) throw ScriptError("frame_count must be >= 1");
  if (script.cameras.count < 1) throw ScriptError("need at least one camera");
  if (script.object.size() == 0) throw ScriptError("object is empty");
  for (const auto* times : {&script.human_key_times, &script.object_key_times}) {
    if (!std::is_sorted(times->begin(), times->end()))
      throw ScriptError("key times must ascend");
    for (const double t : *times)
      if (t < 0 || t >= script.frame_count) throw ScriptError("key time outside [0, frames)");
  }
}

}  // namespace

GaussianSet make_box_object(const Vec3& half_extents, int count, int checker, uint64_t seed) {
  Rng rng(seed);
  return box_shell(half_extents, count, checker, rng, Vec3::Zero());
}

GaussianSet make_sphere_object(double radius, int count, int checker, uint64_t seed) {
  Rng rng(seed);
  GaussianSet s;
  s.label = EntityLabel::Object;
  const double scale = 0.8 * std::sqrt(4.0 * M_PI * radius * radius / count);
  for (int i = 0; i < count; ++i) {
    Vec3 dir = uni3(rng, -1, 1);
    while (dir.norm() < 1e-3) dir = uni3(rng, -1, 1);
    const Vec3 p = radius * dir.normalized();
    const Vec3 c = checker > 0 ? checker_color(p, checker) : gradient_color(p, radius);
    s.gaussians.push_back(splat_at(p, scale, c, rng));
  }
  return s;
}

GaussianSet make_chair_object(double size, int count, uint64_t seed) {
  Rng rng(seed);
  GaussianSet s;
  s.label = EntityLabel::Object;
  // Seat, backrest and four legs as box shells in one checkerboard coat.
  struct Part {
    Vec3 half, offset;
    double share;
  };
  const double h = size / 2;
  const std::vector<Part> parts = {
      {{h, 0.1 * h, h}, {0, 0, 0}, 0.3},                    // seat
      {{h, h, 0.1 * h}, {0, 1.1 * h, -0.9 * h}, 0.3},       // backrest
      {{0.1 * h, h, 0.1 * h}, {0.8 * h, -h, 0.8 * h}, 0.1},  // legs
      {{0.1 * h, h, 0.1 * h}, {-0.8 * h, -h, 0.8 * h}, 0.1},
      {{0.1 * h, h, 0.1 * h}, {0.8 * h, -h, -0.8 * h}, 0.1},
      {{0.1 * h, h, 0.1 * h}, {-0.8 * h, -h, -0.8 * h}, 0.1},
  };
  const int checker = std::max(1, int(std::round(4.0 / size)));
  for (const Part& part : parts) {
    const GaussianSet piece =
        box_shell(part.half, std::max(4, int(count * part.share)), checker, rng, part.offset);
    s.gaussians.insert(s.gaussians.end(), piece.gaussians.begin(), piece.gaussians.end());
  }
  return s;
}

GaussianSet make_human_gt(const SkeletonRig& rig, int count, uint64_t seed) {
  GaussianSet s = human_canonical_gaussians(rig, count, seed);
  s.label = EntityLabel::Human;
  for (Gaussian& g : s.gaussians) {
    const Vec3& p = g.position;
    g.color = Vec3(0.5 + 0.3 * std::sin(3.0 * p.y()), 0.35 + 0.3 * p.x(),
                   0.55 + 0.25 * std::cos(2.0 * p.y() + p.x()))
                  .cwiseMax(0.1)
                  .cwiseMin(0.9);
    g.opacity_logit = 3.0;
  }
  return s;
}

PoseVector sample_human_curve(const SceneScript& script, double t) {
  return sample_curve(script.human_key_times, script.human_keys, t, lerp_pose);
}

Se3Pose sample_object_curve(const SceneScript& script, double t) {
  return sample_curve(script.object_key_times, script.object_keys, t, lerp_se3);
}

GeneratedCapture generate_capture(const SceneScript& script) {
  validate(script);
  Rng rng(script.seed);

  GeneratedCapture out;
  out.rig = script.rig;
  out.human_gt = script.human_canonical;
  out.object_gt = script.object;

  if (script.occluder.enabled) {
    out.occluder = make_sphere_object(script.occluder.radius, script.occluder.count, 0,
                                      script.seed + 77);
    for (Gaussian& g : out.occluder.gaussians) {
      g.position += script.occluder.center;
      g.color = script.occluder.color;
      g.opacity_logit = 4.0;
    }
  }

  for (int c = 0; c < script.cameras.count; ++c)
    out.capture.cameras.push_back(ring_cam(script.cameras, c));

  std::vector<Vec3> positions;
  for (const Gaussian& g : script.human_canonical.gaussians) positions.push_back(g.position);
  const MatX weights = script.human_canonical.size()
                           ? template_skinning_weights(script.rig, positions)
                           : MatX();

  RenderOptions ropts;
  ropts.group_alpha = true;

  for (int t = 0; t < script.frame_count; ++t) {
    const PoseVector hp = sample_human_curve(script, t);
    const Se3Pose op = sample_object_curve(script, t);
    out.true_human_poses.push_back(hp);
    out.true_object_poses.push_back(op);

    GaussianSet human = script.human_canonical.size()
                            ? skin_gaussians(script.human_canonical, weights, script.rig, hp)
                            : GaussianSet{};
    human.label = EntityLabel::Human;
    GaussianSet object = transform_rigid(script.object, op);
    object.label = EntityLabel::Object;

    std::vector<const GaussianSet*> groups = {&human, &object};
    if (script.occluder.enabled) groups.push_back(&out.occluder);

    CaptureFrame frame;
    for (const Camera& cam : out.capture.cameras) {
      const RenderedImage img = render(groups, cam, ropts);
      ImageRgb rgb = img.rgb;
      if (script.noise.pixel_sigma > 0)
        for (double& v : rgb.data)
          v = std::clamp(v + gauss(rng, script.noise.pixel_sigma), 0.0, 1.0);
      frame.images.push_back(std::move(rgb));
      ImageGray mh(cam.width, cam.height), mo(cam.width, cam.height);
      for (size_t i = 0; i < mh.data.size(); ++i) {
        mh.data[i] = img.group_alpha[0].data[i] > 0.5 ? 1.0 : 0.0;
        mo.data[i] = img.group_alpha[1].data[i] > 0.5 ? 1.0 : 0.0;
      }
      frame.mask_human.push_back(std::move(mh));
      frame.mask_object.push_back(std::move(mo));
    }
    out.capture.frames.push_back(std::move(frame));

    out.capture.human_poses.push_back(hp);
    Se3Pose recorded = op;
    if (script.noise.pose_jitter > 0) {
      const Vec3 axis = uni3(rng, -1, 1).normalized();
      recorded.rotation =
          (quat_exp(script.noise.pose_jitter * axis) * recorded.rotation).normalized();
      recorded.translation += uni3(rng, -script.noise.pose_jitter, script.noise.pose_jitter);
    }
    out.capture.object_poses.push_back(recorded);
  }
  return out;
}

SceneScript read_scene_script(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ScriptError("cannot open script: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ScriptError(std::string("bad JSON: ") + e.what());
  }
  try {
    SceneScript s;
    s.seed = j.value("seed", uint64_t(1));
    s.frame_count = j.value("frames", 1);

    const json rig = j.value("rig", json::object());
    s.rig = capsule_biped(rig.value("radial_segments", 8), rig.value("length_segments", 4));

    const json hum = j.value("human", json::object());
    const int human_count = hum.value("gaussians", 150);
    if (human_count > 0) s.human_canonical = make_human_gt(s.rig, human_count, s.seed + 1);

    const json obj = j.at("object");
    const std::string kind = obj.value("kind", "box");
    const double size = obj.value("size", 0.3);
    const int count = obj.value("count", 200);
    const int checker = obj.value("checker", 4);
    if (kind == "box")
      s.object = make_box_object(Vec3::Constant(size / 2), count, checker, s.seed + 2);
    else if (kind == "sphere")
      s.object = make_sphere_object(size / 2, count, checker, s.seed + 2);
    else if (kind == "chair")
      s.object = make_chair_object(size, count, s.seed + 2);
    else
      throw ScriptError("unknown object kind: " + kind);

    const json cams = j.value("cameras", json::object());
    s.cameras.count = cams.value("count", 8);
    s.cameras.radius = cams.value("radius", 3.2);
    s.cameras.elevation = cams.value("elevation", 0.15);
    s.cameras.focal = cams.value("focal", 55.0);
    s.cameras.width = cams.value("width", 48);
    s.cameras.height = cams.value("height", 48);
    if (cams.contains("look_at")) {
      const auto& l = cams.at("look_at");
      s.cameras.look_at = Vec3(l.at(0), l.at(1), l.at(2));
    }

    for (const json& k : j.at("object_curve")) {
      s.object_key_times.push_back(k.at("t"));
      Se3Pose p;
      const auto& aa = k.at("axis_angle");
      p.rotation = quat_exp(Vec3(aa.at(0), aa.at(1), aa.at(2)));
      const auto& tr = k.at("translation");
      p.translation = Vec3(tr.at(0), tr.at(1), tr.at(2));
      s.object_keys.push_back(p);
    }

    if (j.contains("human_curve")) {
      for (const json& k : j.at("human_curve")) {
        s.human_key_times.push_back(k.at("t"));
        PoseVector p = PoseVector::rest(s.rig.joint_count());
        if (k.contains("root")) {
          const auto& r = k.at("root");
          p.root_translation = Vec3(r.at(0), r.at(1), r.at(2));
        }
        if (k.contains("joints"))
          for (const auto& [key, val] : k.at("joints").items()) {
            const int idx = std::stoi(key);
            if (idx < 0 || idx >= s.rig.joint_count()) throw ScriptError("joint out of range");
            p.joint_rotations[size_t(idx)] = Vec3(val.at(0), val.at(1), val.at(2));
          }
        s.human_keys.push_back(p);
      }
    } else {
      s.human_key_times = {0.0};
      s.human_keys = {PoseVector::rest(s.rig.joint_count())};
    }

    if (j.contains("occluder")) {
      const json& o = j.at("occluder");
      s.occluder.enabled = true;
      const auto& c = o.at("center");
      s.occluder.center = Vec3(c.at(0), c.at(1), c.at(2));
      s.occluder.radius = o.value("radius", 0.3);
      s.occluder.count = o.value("count", 80);
    }

    const json noise = j.value("noise", json::object());
    s.noise.pixel_sigma = noise.value("pixel_sigma", 0.0);
    s.noise.pose_jitter = noise.value("pose_jitter", 0.0);

    validate(s);
    return s;
  } catch (const json::exception& e) {
    throw ScriptError(std::string("bad script: ") + e.what());
  }
}

void write_capture(const GeneratedCapture& cap, const std::string& dir) {
  const fs::path root(dir);
  for (const char* sub : {"images", "masks_h", "masks_o", "gt"})
    fs::create_directories(root / sub);

  write_cameras(cap.capture.cameras, (root / "cameras.txt").string());
  write_pose_curve(cap.capture.human_poses, (root / "poses_human.txt").string());
  PoseTrack track;
  track.poses = cap.capture.object_poses;
  track.residuals.assign(track.poses.size(), 0.0);
  track.converged.assign(track.poses.size(), 1);
  write_pose_track(track, (root / "poses_object.txt").string());

  write_ply(cap.human_gt, (root / "gt" / "human_canonical.ply").string());
  write_ply(cap.object_gt, (root / "gt" / "object.ply").string());
  if (cap.occluder.size()) write_ply(cap.occluder, (root / "gt" / "occluder.ply").string());
  write_rig(cap.rig, (root / "gt" / "rig.txt").string());
  write_pose_curve(cap.true_human_poses, (root / "gt" / "poses_human.txt").string());
  PoseTrack truth;
  truth.poses = cap.true_object_poses;
  truth.residuals.assign(truth.poses.size(), 0.0);
  truth.converged.assign(truth.poses.size(), 1);
  write_pose_track(truth, (root / "gt" / "poses_object.txt").string());

  char name[64];
  for (size_t t = 0; t < cap.capture.frame_count(); ++t)
    for (size_t c = 0; c < cap.capture.camera_count(); ++c) {
      std::snprintf(name, sizeof name, "t%03zu_c%02zu.png", t, c);
      const CaptureFrame& f = cap.capture.frames[t];
      write_png(f.images[c], (root / "images" / name).string());
      write_png_mask(f.mask_human[c], (root / "masks_h" / name).string());
      write_png_mask(f.mask_object[c], (root / "masks_o" / name).string());
    }
}

GeneratedCapture read_capture(const std::string& dir) {
  const fs::path root(dir);
  GeneratedCapture cap;
  cap.capture.cameras = read_cameras((root / "cameras.txt").string());
  cap.capture.human_poses = read_pose_curve((root / "poses_human.txt").string());
  cap.capture.object_poses = read_pose_track((root / "poses_object.txt").string()).poses;
  cap.human_gt = read_ply((root / "gt" / "human_canonical.ply").string());
  cap.human_gt.label = EntityLabel::Human;
  cap.object_gt = read_ply((root / "gt" / "object.ply").string());
  cap.object_gt.label = EntityLabel::Object;
  if (fs::exists(root / "gt" / "occluder.ply"))
    cap.occluder = read_ply((root / "gt" / "occluder.ply").string());
  cap.rig = read_rig((root / "gt" / "rig.txt").string());
  cap.true_human_poses = read_pose_curve((root / "gt" / "poses_human.txt").string());
  cap.true_object_poses = read_pose_track((root / "gt" / "poses_object.txt").string()).poses;

  const size_t T = cap.capture.human_poses.size();
  const size_t C = cap.capture.cameras.size();
  char name[64];
  for (size_t t = 0; t < T; ++t) {
    CaptureFrame f;
    for (size_t c = 0; c < C; ++c) {
      std::snprintf(name, sizeof name, "t%03zu_c%02zu.png", t, c);
      f.images.push_back(read_png((root / "images" / name).string()));
      f.mask_human.push_back(read_png_mask((root / "masks_h" / name).string()));
      f.mask_object.push_back(read_png_mask((root / "masks_o" / name).string()));
    }
    cap.capture.frames.push_back(std::move(f));
  }
  return cap;
}

}  // namespace hoi
