#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"

using namespace hoi;
using namespace hoi::testutil;

TEST_CASE("covariance_of identity case") {
  Gaussian g;
  CHECK(covariance_of(g).isApprox(Mat3::Identity(), 1e-12));
}

TEST_CASE("covariance_of 90deg z-rotation with scaled x-axis") {
  Gaussian g;
  g.rotation = Quat(Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()));
  g.log_scale = Vec3(std::log(2.0), 0, 0);
  // x-axis variance 4 rotates onto the y axis.
  Mat3 expected = Vec3(1, 4, 1).asDiagonal();
  CHECK((covariance_of(g) - expected).norm() < 1e-12);
}

TEST_CASE("covariance eigenvalues equal exp(2 log_scale)") {
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    Gaussian g = random_gaussian(rng);
    Eigen::SelfAdjointEigenSolver<Mat3> eig(covariance_of(g));
    Vec3 expected = (2.0 * g.log_scale).array().exp();
    std::sort(expected.data(), expected.data() + 3);
    CHECK((eig.eigenvalues() - expected).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("transform_rigid identity pose is exact") {
  Rng rng(3);
  GaussianSet s = random_set(rng, 5);
  GaussianSet t = transform_rigid(s, Se3Pose::Identity());
  for (size_t i = 0; i < s.size(); ++i) {
    CHECK(t[i].position == s[i].position);
    CHECK(t[i].log_scale == s[i].log_scale);
    CHECK(t[i].color == s[i].color);
    CHECK(t[i].opacity_logit == s[i].opacity_logit);
    CHECK(t[i].rotation.coeffs().isApprox(s[i].rotation.coeffs(), 1e-15));
  }
}

TEST_CASE("transform_rigid pure translation") {
  Gaussian g;
  GaussianSet s;
  s.gaussians.push_back(g);
  Se3Pose p;
  p.translation = Vec3(1, 2, 3);
  GaussianSet t = transform_rigid(s, p);
  CHECK(t[0].position == Vec3(1, 2, 3));
  CHECK(covariance_of(t[0]).isApprox(covariance_of(g), 1e-12));
}

TEST_CASE("transform_rigid conjugates covariance") {
  Rng rng(11);
  for (int i = 0; i < 10; ++i) {
    GaussianSet s = random_set(rng, 4);
    Se3Pose p = random_pose(rng);
    GaussianSet t = transform_rigid(s, p);
    const Mat3 r = p.rotation.toRotationMatrix();
    for (size_t k = 0; k < s.size(); ++k) {
      CHECK((covariance_of(t[k]) - r * covariance_of(s[k]) * r.transpose()).norm() < 1e-9);
      CHECK((t[k].position - (r * s[k].position + p.translation)).norm() < 1e-12);
    }
  }
}

TEST_CASE("se3 group axioms") {
  Rng rng(13);
  for (int i = 0; i < 20; ++i) {
    Se3Pose p = random_pose(rng);
    Se3Pose id = compose(p, inverse(p));
    CHECK(std::abs(std::abs(id.rotation.w()) - 1.0) < 1e-9);
    CHECK(id.translation.norm() < 1e-9);

    Se3Pose q = compose(Se3Pose::Identity(), p);
    CHECK(q.translation.isApprox(p.translation, 1e-12));

    // Homogeneous-matrix oracle on a random point.
    Se3Pose a = random_pose(rng), b = random_pose(rng);
    Eigen::Matrix4d ma = Eigen::Matrix4d::Identity(), mb = Eigen::Matrix4d::Identity();
    ma.block<3, 3>(0, 0) = a.rotation.toRotationMatrix();
    ma.block<3, 1>(0, 3) = a.translation;
    mb.block<3, 3>(0, 0) = b.rotation.toRotationMatrix();
    mb.block<3, 1>(0, 3) = b.translation;
    const Vec3 x = uniform_vec3(rng, -2, 2);
    const Vec4 xh(x.x(), x.y(), x.z(), 1.0);
    const Vec4 expect = ma * mb * xh;
    CHECK((compose(a, b).apply(x) - expect.head<3>()).norm() < 1e-9);
  }
}

TEST_CASE("transform_rigid is a group action") {
  Rng rng(17);
  for (int i = 0; i < 10; ++i) {
    GaussianSet s = random_set(rng, 3);
    Se3Pose a = random_pose(rng), b = random_pose(rng);
    GaussianSet lhs = transform_rigid(transform_rigid(s, b), a);
    GaussianSet rhs = transform_rigid(s, compose(a, b));
    for (size_t k = 0; k < s.size(); ++k) {
      CHECK((lhs[k].position - rhs[k].position).norm() < 1e-9);
      CHECK((covariance_of(lhs[k]) - covariance_of(rhs[k])).norm() < 1e-9);
    }
  }
}

TEST_CASE("project_point") {
  Camera cam;
  cam.fx = cam.fy = 100;
  cam.cx = cam.cy = 50;
  cam.width = cam.height = 100;

  const Vec3 axis = project_point(cam, Vec3(0, 0, 1));
  CHECK(axis.x() == doctest::Approx(50).epsilon(1e-12));
  CHECK(axis.y() == doctest::Approx(50).epsilon(1e-12));
  CHECK(axis.z() == doctest::Approx(1).epsilon(1e-12));

  const Vec3 p = project_point(cam, Vec3(1, 0, 2));
  CHECK(p.x() == doctest::Approx(100).epsilon(1e-12));
  CHECK(p.y() == doctest::Approx(50).epsilon(1e-12));

  CHECK_THROWS_AS(project_point(cam, Vec3(0, 0, 0)), BehindCamera);
}

TEST_CASE("quat exp/log roundtrip") {
  Rng rng(23);
  for (int i = 0; i < 50; ++i) {
    // Canonical axis-angle: log is only the inverse of exp below angle pi.
    Vec3 w = uniform_vec3(rng, -1, 1).normalized() * uniform(rng, 0, M_PI - 1e-3);
    CHECK((quat_log(quat_exp(w)) - w).norm() < 1e-9);
  }
  CHECK(quat_log(Quat::Identity()).norm() == 0.0);
}

TEST_CASE("quat_exp_jacobian matches finite differences") {
  Rng rng(71);
  for (const double mag : {1e-10, 1e-4, 0.3, 2.0}) {
    const Vec3 w = uniform_vec3(rng, -1, 1).normalized() * mag;
    const auto j = quat_exp_jacobian(w);
    const double h = std::max(1e-7, mag * 1e-6);
    for (int k = 0; k < 3; ++k) {
      Vec3 wp = w, wm = w;
      wp[k] += h;
      wm[k] -= h;
      const Quat qp = quat_exp(wp), qm = quat_exp(wm);
      const Vec4 fd((qp.w() - qm.w()) / (2 * h), (qp.x() - qm.x()) / (2 * h),
                    (qp.y() - qm.y()) / (2 * h), (qp.z() - qm.z()) / (2 * h));
      CHECK((j.col(k) - fd).norm() < 1e-6);
    }
  }
}
