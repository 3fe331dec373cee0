#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hoi {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Quaternion exponential of an axis-angle 3-vector (rotation through |w|).
Quat quat_exp(const Vec3& w);
// Inverse of quat_exp for rotations with angle < pi.
Vec3 quat_log(const Quat& q);

// 4x4 matrices for quaternion products as linear maps on coefficient
// 4-vectors ordered (w, x, y, z): quat_left(a) * vec(b) = vec(a * b).
Eigen::Matrix4d quat_left(const Quat& q);
Eigen::Matrix4d quat_right(const Quat& q);

// d(R(q) v)/dq for unit q, as a 3x4 matrix over coefficients (w,x,y,z).
Eigen::Matrix<double, 3, 4> rotate_jacobian_wrt_quat(const Quat& q, const Vec3& v);

// d(quat_exp(w))/dw as a 4x3 matrix over coefficients (w,x,y,z).
Eigen::Matrix<double, 4, 3> quat_exp_jacobian(const Vec3& w);

enum class EntityLabel { Human, Object };

struct Gaussian {
  Vec3 position = Vec3::Zero();
  Quat rotation = Quat::Identity();  // unit quaternion
  Vec3 log_scale = Vec3::Zero();     // per-axis log standard deviation
  double opacity_logit = 0.0;        // sigmoid(opacity_logit) in (0,1)
  Vec3 color = Vec3::Zero();         // linear RGB in [0,1]

  double opacity() const { return sigmoid(opacity_logit); }
};

struct GaussianSet {
  std::vector<Gaussian> gaussians;
  EntityLabel label = EntityLabel::Object;

  size_t size() const { return gaussians.size(); }
  bool empty() const { return gaussians.empty(); }
  Gaussian& operator[](size_t i) { return gaussians[i]; }
  const Gaussian& operator[](size_t i) const { return gaussians[i]; }
};

struct Se3Pose {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  static Se3Pose Identity() { return {}; }
  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
};

Se3Pose compose(const Se3Pose& a, const Se3Pose& b);
Se3Pose inverse(const Se3Pose& p);

// Left-multiplicative SE(3) retraction: exp([w, v]) o p, with w an
// axis-angle rotation increment and v a translation increment.
Se3Pose se3_retract(const Eigen::Matrix<double, 6, 1>& delta, const Se3Pose& p);

struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Se3Pose world_to_camera;

  bool valid() const {
    return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 &&
           cx < width && cy >= 0 && cy < height;
  }
};

struct BehindCamera : std::runtime_error {
  explicit BehindCamera(double z)
      : std::runtime_error("point behind camera, z=" + std::to_string(z)) {}
};

inline constexpr double kDepthEpsilon = 1e-8;

Mat3 covariance_of(const Gaussian& g);

GaussianSet transform_rigid(const GaussianSet& set, const Se3Pose& pose);
Gaussian transform_rigid(const Gaussian& g, const Se3Pose& pose);

// Pinhole projection; throws BehindCamera when camera-frame z <= epsilon.
Vec3 project_point(const Camera& cam, const Vec3& x);

}  // namespace hoi
