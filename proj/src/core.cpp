#include "hoisplat/core.hpp"

namespace hoi {

Quat quat_exp(const Vec3& w) {
  const double theta = w.norm();
  if (theta < 1e-12) {
    // Second-order series keeps the map smooth near zero.
    Quat q(1.0 - theta * theta / 8.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
    q.normalize();
    return q;
  }
  const double half = 0.5 * theta;
  const Vec3 axis = w / theta;
  Quat q(std::cos(half), std::sin(half) * axis.x(), std::sin(half) * axis.y(),
         std::sin(half) * axis.z());
  return q;
}

Eigen::Matrix<double, 4, 3> quat_exp_jacobian(const Vec3& w) {
  Eigen::Matrix<double, 4, 3> j;
  const double theta = w.norm();
  if (theta < 1e-8) {
    j.row(0) = -0.25 * w.transpose();
    j.bottomRows<3>() = 0.5 * Mat3::Identity();
    return j;
  }
  const double half = 0.5 * theta;
  const double s = std::sin(half) / theta;           // q_v = s * w
  const double ds = (0.5 * std::cos(half) * theta - std::sin(half)) / (theta * theta * theta);
  j.row(0) = -0.5 * std::sin(half) * (w / theta).transpose();
  j.bottomRows<3>() = s * Mat3::Identity() + ds * w * w.transpose();
  return j;
}

Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  const Vec3 v(q.x(), q.y(), q.z());
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(s, q.w());
  return (angle / s) * v;
}

Eigen::Matrix4d quat_left(const Quat& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Eigen::Matrix4d m;
  m << w, -x, -y, -z,
       x,  w, -z,  y,
       y,  z,  w, -x,
       z, -y,  x,  w;
  return m;
}

Eigen::Matrix4d quat_right(const Quat& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Eigen::Matrix4d m;
  m << w, -x, -y, -z,
       x,  w,  z, -y,
       y, -z,  w,  x,
       z,  y, -x,  w;
  return m;
}

Eigen::Matrix<double, 3, 4> rotate_jacobian_wrt_quat(const Quat& q, const Vec3& v) {
  // R(q) v = v + 2 w (u x v) + 2 u x (u x v), u = (x,y,z).
  const double w = q.w();
  const Vec3 u(q.x(), q.y(), q.z());
  Eigen::Matrix<double, 3, 4> jac;
  jac.col(0) = 2.0 * u.cross(v);
  jac.block<3, 3>(0, 1) = 2.0 * (-w * skew(v) + u.dot(v) * Mat3::Identity() +
                                 u * v.transpose() - 2.0 * v * u.transpose());
  return jac;
}

Se3Pose compose(const Se3Pose& a, const Se3Pose& b) {
  Se3Pose out;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

Se3Pose inverse(const Se3Pose& p) {
  Se3Pose out;
  out.rotation = p.rotation.conjugate();
  out.translation = -(out.rotation * p.translation);
  return out;
}

Se3Pose se3_retract(const Eigen::Matrix<double, 6, 1>& delta, const Se3Pose& p) {
  Se3Pose inc;
  inc.rotation = quat_exp(delta.head<3>());
  inc.translation = delta.tail<3>();
  return compose(inc, p);
}

Mat3 covariance_of(const Gaussian& g) {
  const Mat3 r = g.rotation.toRotationMatrix();
  const Vec3 var = (2.0 * g.log_scale).array().exp();
  return r * var.asDiagonal() * r.transpose();
}

Gaussian transform_rigid(const Gaussian& g, const Se3Pose& pose) {
  Gaussian out = g;
  out.position = pose.apply(g.position);
  out.rotation = (pose.rotation * g.rotation).normalized();
  return out;
}

GaussianSet transform_rigid(const GaussianSet& set, const Se3Pose& pose) {
  GaussianSet out;
  out.label = set.label;
  out.gaussians.reserve(set.size());
  for (const auto& g : set.gaussians) out.gaussians.push_back(transform_rigid(g, pose));
  return out;
}

Vec3 project_point(const Camera& cam, const Vec3& x) {
  const Vec3 xc = cam.world_to_camera.apply(x);
  if (xc.z() <= kDepthEpsilon) throw BehindCamera(xc.z());
  return Vec3(cam.fx * xc.x() / xc.z() + cam.cx,
              cam.fy * xc.y() / xc.z() + cam.cy, xc.z());
}

}  // namespace hoi
