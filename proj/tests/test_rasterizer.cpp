#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"

using namespace hoi;
using namespace hoi::testutil;

namespace {

RenderOptions grad_opts() {
  RenderOptions o;
  o.retain_forward_state = true;
  return o;
}

// Central-difference check of every parameter gradient of every gaussian.
// Returns the max relative error over parameters whose |grad| > floor.
double gradcheck_scene(Rng& rng, const GaussianSet& set, const Camera& cam,
                       double h = 1e-4, double floor_ = 1e-6) {
  ImageRgb grad_rgb(cam.width, cam.height);
  for (auto& v : grad_rgb.data) v = uniform(rng, -1.0, 1.0);

  RenderedImage im = render(set, cam, grad_opts());
  RenderGrads g = render_backward(im, grad_rgb);

  double max_rel = 0.0;
  auto fd = [&](GaussianSet probe, auto&& mutate) {
    mutate(probe, h);
    const double lp = probe_loss(probe, cam, grad_rgb, nullptr, grad_opts());
    mutate(probe, -2 * h);
    const double lm = probe_loss(probe, cam, grad_rgb, nullptr, grad_opts());
    return (lp - lm) / (2 * h);
  };
  auto check = [&](double analytic, double numeric) {
    if (std::abs(analytic) <= floor_ && std::abs(numeric) <= floor_) return;
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), floor_});
    max_rel = std::max(max_rel, rel);
  };

  for (size_t i = 0; i < set.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      check(g.d_position[i][k], fd(set, [&](GaussianSet& s, double d) { s[i].position[k] += d; }));
      check(g.d_log_scale[i][k], fd(set, [&](GaussianSet& s, double d) { s[i].log_scale[k] += d; }));
      check(g.d_color[i][k], fd(set, [&](GaussianSet& s, double d) { s[i].color[k] += d; }));
    }
    check(g.d_opacity_logit[i],
          fd(set, [&](GaussianSet& s, double d) { s[i].opacity_logit += d; }));
    // Quaternion: perturb raw coefficient, renormalize; analytic gradient is
    // tangent-projected so this matches.
    for (int k = 0; k < 4; ++k) {
      GaussianSet plus = set, minus = set;
      Vec4 q(set[i].rotation.w(), set[i].rotation.x(), set[i].rotation.y(), set[i].rotation.z());
      Vec4 qp = q, qm = q;
      qp[k] += h;
      qm[k] -= h;
      plus[i].rotation = Quat(qp[0], qp[1], qp[2], qp[3]).normalized();
      minus[i].rotation = Quat(qm[0], qm[1], qm[2], qm[3]).normalized();
      const double numeric = (probe_loss(plus, cam, grad_rgb, nullptr, grad_opts()) -
                              probe_loss(minus, cam, grad_rgb, nullptr, grad_opts())) /
                             (2 * h);
      check(g.d_rotation[i][k], numeric);
    }
  }
  return max_rel;
}

}  // namespace

TEST_CASE("empty set renders black with zero alpha") {
  GaussianSet s;
  Camera cam = ring_camera(32, 32, 40, 3.0, 0.0);
  RenderedImage im = render(s, cam);
  for (double v : im.rgb.data) CHECK(v == 0.0);
  for (double v : im.alpha.data) CHECK(v == 0.0);
}

TEST_CASE("projected covariance of on-axis isotropic gaussian") {
  Camera cam;
  cam.fx = cam.fy = 100;
  cam.cx = cam.cy = 32;
  cam.width = cam.height = 64;
  Gaussian g;
  const double dist = 4.0, s = 0.05;
  g.position = Vec3(0, 0, dist);
  g.log_scale = Vec3::Constant(std::log(s));

  RenderOptions opts;
  opts.lowpass = 0.0;
  auto proj = project_gaussian(cam, g, opts);
  REQUIRE(proj.has_value());
  const double expect = (cam.fx * s / dist) * (cam.fx * s / dist);
  CHECK(proj->cov2d(0, 0) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(proj->cov2d(1, 1) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(std::abs(proj->cov2d(0, 1)) < 1e-12);

  // Doubling the distance halves projected standard deviations (small s/d).
  g.position = Vec3(0, 0, 2 * dist);
  auto proj2 = project_gaussian(cam, g, opts);
  CHECK(std::sqrt(proj2->cov2d(0, 0)) ==
        doctest::Approx(0.5 * std::sqrt(proj->cov2d(0, 0))).epsilon(0.01));

  g.position = Vec3(0, 0, -1.0);
  CHECK(!project_gaussian(cam, g, opts).has_value());
}

TEST_CASE("single opaque gaussian footprint matches closed form") {
  Camera cam;
  cam.fx = cam.fy = 60;
  cam.cx = cam.cy = 16;
  cam.width = cam.height = 32;
  Gaussian g;
  g.position = Vec3(0, 0, 2);
  g.log_scale = Vec3::Constant(std::log(0.12));
  g.opacity_logit = 8.0;  // alpha ~ 1
  g.color = Vec3(0.8, 0.2, 0.1);
  GaussianSet s;
  s.gaussians.push_back(g);

  RenderedImage im = render(s, cam);
  // Center pixel is (16, 16) with pixel centers at +0.5; the mean projects
  // to (16, 16) exactly so the nearest center sits 0.5 px off.
  const Vec3 center = pixel3(im.rgb, 16, 16);
  CHECK((center - g.color).norm() / g.color.norm() < 0.02);

  auto proj = project_gaussian(cam, g);
  const Mat2 a = proj->cov2d.inverse();
  for (int y = 8; y < 24; ++y)
    for (int x = 8; x < 24; ++x) {
      const Vec2 d = Vec2(x + 0.5, y + 0.5) - proj->mean2d;
      const double expect = g.opacity() * std::exp(-0.5 * d.dot(a * d));
      CHECK(std::abs(*im.alpha.at(x, y) - expect) < 1e-3);
    }
}

TEST_CASE("front splat occludes back splat") {
  Camera cam;
  cam.fx = cam.fy = 60;
  cam.cx = cam.cy = 16;
  cam.width = cam.height = 32;
  GaussianSet s;
  Gaussian red, blue;
  red.position = Vec3(0, 0, 1);
  red.color = Vec3(1, 0, 0);
  red.opacity_logit = 12.0;
  red.log_scale = Vec3::Constant(std::log(0.3));
  blue.position = Vec3(0, 0, 2);
  blue.color = Vec3(0, 0, 1);
  blue.opacity_logit = 12.0;
  blue.log_scale = Vec3::Constant(std::log(0.16));
  s.gaussians = {blue, red};  // intentionally back-to-front in storage

  RenderedImage im = render(s, cam);
  const Vec3 c = pixel3(im.rgb, 16, 16);
  CHECK(c.x() > 0.99);
  CHECK(c.z() < 0.01);
}

TEST_CASE("render invariant to gaussian order") {
  Rng rng(41);
  GaussianSet s = random_set(rng, 8);
  Camera cam = ring_camera(32, 32, 40, 3.0, 0.7);
  RenderedImage a = render(s, cam);
  std::reverse(s.gaussians.begin(), s.gaussians.end());
  RenderedImage b = render(s, cam);
  double max_diff = 0;
  for (size_t i = 0; i < a.rgb.data.size(); ++i)
    max_diff = std::max(max_diff, std::abs(a.rgb.data[i] - b.rgb.data[i]));
  CHECK(max_diff < 1e-12);
}

TEST_CASE("render equivariance under rigid transform") {
  Rng rng(43);
  GaussianSet s = random_set(rng, 6);
  Camera cam = ring_camera(32, 32, 40, 3.0, 1.3);
  Se3Pose p = random_pose(rng, 0.3);

  RenderedImage a = render(transform_rigid(s, p), cam);
  Camera cam_p = cam;
  cam_p.world_to_camera = compose(cam.world_to_camera, p);
  RenderedImage b = render(s, cam_p);
  double max_diff = 0;
  for (size_t i = 0; i < a.rgb.data.size(); ++i)
    max_diff = std::max(max_diff, std::abs(a.rgb.data[i] - b.rgb.data[i]));
  CHECK(max_diff < 1e-5);
}

TEST_CASE("zero loss gradient yields exactly zero parameter gradients") {
  Rng rng(47);
  GaussianSet s = random_set(rng, 4);
  Camera cam = ring_camera(32, 32, 40, 3.0, 0.2);
  RenderedImage im = render(s, cam, grad_opts());
  ImageRgb zero(32, 32);
  RenderGrads g = render_backward(im, zero);
  for (size_t i = 0; i < s.size(); ++i) {
    CHECK(g.d_position[i].norm() == 0.0);
    CHECK(g.d_rotation[i].norm() == 0.0);
    CHECK(g.d_log_scale[i].norm() == 0.0);
    CHECK(g.d_opacity_logit[i] == 0.0);
    CHECK(g.d_color[i].norm() == 0.0);
  }
}

TEST_CASE("backward requires forward state") {
  Rng rng(49);
  GaussianSet s = random_set(rng, 2);
  Camera cam = ring_camera(16, 16, 20, 3.0, 0.2);
  RenderedImage im = render(s, cam);  // no retention
  ImageRgb grad(16, 16);
  CHECK_THROWS_AS(render_backward(im, grad), MissingForwardState);
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(101);
  for (int scene = 0; scene < 8; ++scene) {
    GaussianSet s = random_set(rng, 1 + scene % 5);
    Camera cam = ring_camera(32, 32, 40, 3.0, uniform(rng, 0, 2 * M_PI));
    const double max_rel = gradcheck_scene(rng, s, cam);
    CHECK(max_rel < 1e-3);
  }
}

TEST_CASE("pose tangent gradient matches central differences") {
  Rng rng(103);
  for (int scene = 0; scene < 4; ++scene) {
    GaussianSet s = random_set(rng, 5);
    Se3Pose pose = random_pose(rng, 0.2);
    Camera cam = ring_camera(32, 32, 40, 3.0, uniform(rng, 0, 2 * M_PI));
    ImageRgb grad_rgb(32, 32);
    for (auto& v : grad_rgb.data) v = uniform(rng, -1, 1);

    GaussianSet posed = transform_rigid(s, pose);
    RenderedImage im = render(posed, cam, grad_opts());
    RenderGrads g = render_backward(im, grad_rgb);
    const auto pg = pose_tangent_gradient(posed, g, 0, s.size());

    const double h = 1e-5;
    for (int k = 0; k < 6; ++k) {
      Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
      d[k] = h;
      const double lp =
          probe_loss(transform_rigid(s, se3_retract(d, pose)), cam, grad_rgb, nullptr, grad_opts());
      d[k] = -h;
      const double lm =
          probe_loss(transform_rigid(s, se3_retract(d, pose)), cam, grad_rgb, nullptr, grad_opts());
      const double numeric = (lp - lm) / (2 * h);
      const double rel = std::abs(pg[k] - numeric) /
                         std::max({std::abs(pg[k]), std::abs(numeric), 1e-6});
      if (std::abs(pg[k]) > 1e-6 || std::abs(numeric) > 1e-6) CHECK(rel < 1e-3);
    }
  }
}

TEST_CASE("alpha gradient path matches central differences") {
  Rng rng(107);
  GaussianSet s = random_set(rng, 4);
  Camera cam = ring_camera(32, 32, 40, 3.0, 0.9);
  ImageRgb grad_rgb(32, 32);
  ImageGray grad_alpha(32, 32);
  for (auto& v : grad_alpha.data) v = uniform(rng, -1, 1);

  RenderedImage im = render(s, cam, grad_opts());
  RenderGrads g = render_backward(im, grad_rgb, &grad_alpha);
  const double h = 1e-4;
  for (size_t i = 0; i < s.size(); ++i)
    for (int k = 0; k < 3; ++k) {
      GaussianSet plus = s, minus = s;
      plus[i].position[k] += h;
      minus[i].position[k] -= h;
      const double numeric = (probe_loss(plus, cam, grad_rgb, &grad_alpha, grad_opts()) -
                              probe_loss(minus, cam, grad_rgb, &grad_alpha, grad_opts())) /
                             (2 * h);
      const double rel = std::abs(g.d_position[i][k] - numeric) /
                         std::max({std::abs(numeric), std::abs(g.d_position[i][k]), 1e-6});
      if (std::abs(numeric) > 1e-6) CHECK(rel < 1e-3);
    }
}

TEST_CASE("renders identical across thread counts") {
  Rng rng(109);
  GaussianSet s = random_set(rng, 12);
  Camera cam = ring_camera(64, 48, 60, 3.0, 0.4);
  RenderOptions o1, o4;
  o1.thread_count = 1;
  o4.thread_count = 4;
  RenderedImage a = render(s, cam, o1);
  RenderedImage b = render(s, cam, o4);
  CHECK(a.rgb.data == b.rgb.data);
  CHECK(a.alpha.data == b.alpha.data);
}
