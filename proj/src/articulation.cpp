#include "hoisplat/articulation.hpp"

#include <Eigen/SVD>
#include <fstream>
#include <random>
#include <sstream>

namespace hoi {

bool SkeletonRig::valid() const {
  if (joints.empty()) return false;
  for (int j = 0; j < joint_count(); ++j)
    if (joints[j].parent >= j) return false;
  if (template_weights.rows() != (long)mesh_vertices.size() ||
      template_weights.cols() != joint_count())
    return false;
  for (long r = 0; r < template_weights.rows(); ++r)
    if (std::abs(template_weights.row(r).sum() - 1.0) > 1e-6) return false;
  return true;
}

VecX PoseVector::features() const {
  VecX f(3 + 3 * (long)joint_rotations.size());
  f.head<3>() = root_translation;
  for (size_t j = 0; j < joint_rotations.size(); ++j)
    f.segment<3>(3 + 3 * j) = joint_rotations[j];
  return f;
}

std::vector<Se3Pose> joint_transforms(const SkeletonRig& rig, const PoseVector& pose) {
  const int j_count = rig.joint_count();
  if ((int)pose.joint_rotations.size() != j_count)
    throw WeightShapeMismatch("pose joint count does not match rig");

  std::vector<Se3Pose> posed_world(j_count);
  for (int j = 0; j < j_count; ++j) {
    Se3Pose local_rot;
    local_rot.rotation = quat_exp(pose.joint_rotations[j]);
    if (rig.joints[j].parent < 0) {
      posed_world[j] = compose(rig.joints[j].rest, local_rot);
      posed_world[j].translation += pose.root_translation;
    } else {
      // Rest-relative local transform, then the local rotation about the
      // joint's own origin.
      const Se3Pose local_rest =
          compose(inverse(rig.joints[rig.joints[j].parent].rest), rig.joints[j].rest);
      posed_world[j] = compose(posed_world[rig.joints[j].parent],
                               compose(local_rest, local_rot));
    }
  }
  std::vector<Se3Pose> out(j_count);
  for (int j = 0; j < j_count; ++j)
    out[j] = compose(posed_world[j], inverse(rig.joints[j].rest));
  return out;
}

Mat3 polar_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

GaussianSet skin_gaussians(const GaussianSet& set, const MatX& weights,
                           const std::vector<Se3Pose>& transforms) {
  const int j_count = (int)transforms.size();
  if (weights.rows() != (long)set.size() || weights.cols() != j_count)
    throw WeightShapeMismatch("skinning weights shape does not match set/joints");

  std::vector<Mat3> rot(j_count);
  for (int j = 0; j < j_count; ++j) rot[j] = transforms[j].rotation.toRotationMatrix();

  GaussianSet out;
  out.label = set.label;
  out.gaussians.resize(set.size());
  for (size_t k = 0; k < set.size(); ++k) {
    Mat3 a = Mat3::Zero();
    Vec3 b = Vec3::Zero();
    for (int j = 0; j < j_count; ++j) {
      const double w = weights(k, j);
      if (w == 0.0) continue;
      a += w * rot[j];
      b += w * transforms[j].translation;
    }
    Gaussian g = set[k];
    g.position = a * set[k].position + b;
    g.rotation = (Quat(polar_rotation(a)) * set[k].rotation).normalized();
    out.gaussians[k] = g;
  }
  return out;
}

GaussianSet skin_gaussians(const GaussianSet& set, const MatX& weights,
                           const SkeletonRig& rig, const PoseVector& pose) {
  return skin_gaussians(set, weights, joint_transforms(rig, pose));
}

namespace {

// Ericson-style closest point on triangle, returned as barycentrics.
Vec3 closest_barycentric(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return Vec3(1, 0, 0);
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return Vec3(0, 1, 0);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return Vec3(1 - v, v, 0);
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return Vec3(0, 0, 1);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return Vec3(1 - w, 0, w);
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return Vec3(0, 1 - w, w);
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return Vec3(1 - v - w, v, w);
}

}  // namespace

std::pair<int, Vec3> closest_surface_point(const SkeletonRig& rig, const Vec3& query) {
  int best_tri = -1;
  Vec3 best_bary = Vec3::Zero();
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int t = 0; t < (int)rig.mesh_triangles.size(); ++t) {
    const auto& tri = rig.mesh_triangles[t];
    const Vec3 bary = closest_barycentric(query, rig.mesh_vertices[tri[0]],
                                          rig.mesh_vertices[tri[1]], rig.mesh_vertices[tri[2]]);
    const Vec3 pt = bary[0] * rig.mesh_vertices[tri[0]] + bary[1] * rig.mesh_vertices[tri[1]] +
                    bary[2] * rig.mesh_vertices[tri[2]];
    const double d2 = (pt - query).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best_tri = t;
      best_bary = bary;
    }
  }
  return {best_tri, best_bary};
}

MatX template_skinning_weights(const SkeletonRig& rig, const std::vector<Vec3>& positions) {
  MatX out(positions.size(), rig.joint_count());
  for (size_t i = 0; i < positions.size(); ++i) {
    const auto [tri, bary] = closest_surface_point(rig, positions[i]);
    const auto& t = rig.mesh_triangles[tri];
    out.row(i) = bary[0] * rig.template_weights.row(t[0]) +
                 bary[1] * rig.template_weights.row(t[1]) +
                 bary[2] * rig.template_weights.row(t[2]);
  }
  return out;
}

namespace {

// Appends a capsule along [p0, p1], skinned to `joint` with a linear blend
// toward `blend_joint` over the distal 30% (blend_joint < 0 for rigid).
void append_capsule(SkeletonRig& rig, const Vec3& p0, const Vec3& p1, double radius,
                    int joint, int blend_joint, int radial, int lengthwise,
                    std::vector<std::pair<int, std::pair<int, double>>>& vert_weights) {
  const Vec3 axis = (p1 - p0).normalized();
  Vec3 u = std::abs(axis.y()) < 0.9 ? Vec3(0, 1, 0) : Vec3(1, 0, 0);
  const Vec3 e1 = axis.cross(u).normalized();
  const Vec3 e2 = axis.cross(e1);
  const int base = (int)rig.mesh_vertices.size();
  for (int s = 0; s <= lengthwise; ++s) {
    const double t = double(s) / lengthwise;
    const Vec3 center = p0 + t * (p1 - p0);
    const double blend = blend_joint >= 0 ? std::clamp((t - 0.7) / 0.3, 0.0, 1.0) : 0.0;
    for (int r = 0; r < radial; ++r) {
      const double ang = 2 * M_PI * r / radial;
      rig.mesh_vertices.push_back(center + radius * (std::cos(ang) * e1 + std::sin(ang) * e2));
      vert_weights.push_back({joint, {blend_joint, blend}});
    }
  }
  for (int s = 0; s < lengthwise; ++s)
    for (int r = 0; r < radial; ++r) {
      const int a = base + s * radial + r;
      const int b = base + s * radial + (r + 1) % radial;
      const int c = a + radial, d = b + radial;
      rig.mesh_triangles.push_back({a, b, c});
      rig.mesh_triangles.push_back({b, d, c});
    }
}

}  // namespace

SkeletonRig capsule_biped(int radial_segments, int length_segments) {
  SkeletonRig rig;
  auto add_joint = [&](int parent, const Vec3& world) {
    SkeletonRig::Joint j;
    j.parent = parent;
    j.rest.translation = world;
    rig.joints.push_back(j);
    return (int)rig.joints.size() - 1;
  };
  // y-up biped, feet at y=0, ~1.7 tall.
  const int pelvis = add_joint(-1, Vec3(0, 0.95, 0));
  const int spine = add_joint(pelvis, Vec3(0, 1.25, 0));
  const int head = add_joint(spine, Vec3(0, 1.55, 0));
  const int l_hip = add_joint(pelvis, Vec3(-0.1, 0.9, 0));
  const int l_knee = add_joint(l_hip, Vec3(-0.1, 0.5, 0));
  const int l_foot = add_joint(l_knee, Vec3(-0.1, 0.05, 0));
  const int r_hip = add_joint(pelvis, Vec3(0.1, 0.9, 0));
  const int r_knee = add_joint(r_hip, Vec3(0.1, 0.5, 0));
  const int r_foot = add_joint(r_knee, Vec3(0.1, 0.05, 0));
  const int l_shoulder = add_joint(spine, Vec3(-0.2, 1.4, 0));
  const int l_elbow = add_joint(l_shoulder, Vec3(-0.45, 1.4, 0));
  const int l_hand = add_joint(l_elbow, Vec3(-0.7, 1.4, 0));
  const int r_shoulder = add_joint(spine, Vec3(0.2, 1.4, 0));
  const int r_elbow = add_joint(r_shoulder, Vec3(0.45, 1.4, 0));
  const int r_hand = add_joint(r_elbow, Vec3(0.7, 1.4, 0));

  std::vector<std::pair<int, std::pair<int, double>>> vw;
  auto at = [&](int j) { return rig.joints[j].rest.translation; };
  auto cap = [&](int from, int to, double r) {
    append_capsule(rig, at(from), at(to), r, from, to, radial_segments, length_segments, vw);
  };
  cap(pelvis, spine, 0.13);
  cap(spine, head, 0.09);
  append_capsule(rig, at(head), at(head) + Vec3(0, 0.18, 0), 0.1, head, -1, radial_segments,
                 length_segments, vw);
  cap(l_hip, l_knee, 0.06);
  cap(l_knee, l_foot, 0.05);
  cap(r_hip, r_knee, 0.06);
  cap(r_knee, r_foot, 0.05);
  cap(l_shoulder, l_elbow, 0.045);
  cap(l_elbow, l_hand, 0.04);
  cap(r_shoulder, r_elbow, 0.045);
  cap(r_elbow, r_hand, 0.04);

  rig.template_weights = MatX::Zero(rig.mesh_vertices.size(), rig.joint_count());
  for (size_t v = 0; v < vw.size(); ++v) {
    const auto& [joint, blend] = vw[v];
    const auto& [bj, bw] = blend;
    if (bj >= 0 && bw > 0) {
      rig.template_weights(v, joint) = 1.0 - bw;
      rig.template_weights(v, bj) = bw;
    } else {
      rig.template_weights(v, joint) = 1.0;
    }
  }
  return rig;
}

void write_rig(const SkeletonRig& rig, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write rig: " + path);
  f.precision(17);
  f << "hoirig 1\n";
  f << "joints " << rig.joint_count() << "\n";
  for (const auto& j : rig.joints) {
    const Quat& q = j.rest.rotation;
    f << j.parent << " " << q.w() << " " << q.x() << " " << q.y() << " " << q.z() << " "
      << j.rest.translation.x() << " " << j.rest.translation.y() << " "
      << j.rest.translation.z() << "\n";
  }
  f << "vertices " << rig.mesh_vertices.size() << "\n";
  for (const auto& v : rig.mesh_vertices) f << v.x() << " " << v.y() << " " << v.z() << "\n";
  f << "triangles " << rig.mesh_triangles.size() << "\n";
  for (const auto& t : rig.mesh_triangles) f << t[0] << " " << t[1] << " " << t[2] << "\n";
  f << "weights " << rig.template_weights.rows() << " " << rig.template_weights.cols() << "\n";
  for (long r = 0; r < rig.template_weights.rows(); ++r) {
    for (long c = 0; c < rig.template_weights.cols(); ++c)
      f << rig.template_weights(r, c) << (c + 1 == rig.template_weights.cols() ? '\n' : ' ');
  }
}

SkeletonRig read_rig(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read rig: " + path);
  std::string magic;
  int version = 0;
  f >> magic >> version;
  if (magic != "hoirig" || version != 1) throw std::runtime_error("bad rig header: " + path);

  SkeletonRig rig;
  std::string key;
  int n = 0;
  f >> key >> n;
  if (key != "joints") throw std::runtime_error("rig: expected joints");
  rig.joints.resize(n);
  for (auto& j : rig.joints) {
    double qw, qx, qy, qz;
    f >> j.parent >> qw >> qx >> qy >> qz >> j.rest.translation.x() >>
        j.rest.translation.y() >> j.rest.translation.z();
    j.rest.rotation = Quat(qw, qx, qy, qz).normalized();
  }
  f >> key >> n;
  if (key != "vertices") throw std::runtime_error("rig: expected vertices");
  rig.mesh_vertices.resize(n);
  for (auto& v : rig.mesh_vertices) f >> v.x() >> v.y() >> v.z();
  f >> key >> n;
  if (key != "triangles") throw std::runtime_error("rig: expected triangles");
  rig.mesh_triangles.resize(n);
  for (auto& t : rig.mesh_triangles) f >> t[0] >> t[1] >> t[2];
  long rows = 0, cols = 0;
  f >> key >> rows >> cols;
  if (key != "weights") throw std::runtime_error("rig: expected weights");
  rig.template_weights.resize(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) f >> rig.template_weights(r, c);
  if (!f) throw std::runtime_error("rig: truncated file");
  return rig;
}

std::vector<Vec3> sample_mesh_surface(const SkeletonRig& rig, int count, uint64_t seed) {
  std::vector<double> cum_area;
  double total = 0;
  for (const auto& t : rig.mesh_triangles) {
    const Vec3 a = rig.mesh_vertices[t[0]], b = rig.mesh_vertices[t[1]],
               c = rig.mesh_vertices[t[2]];
    total += 0.5 * (b - a).cross(c - a).norm();
    cum_area.push_back(total);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0, 1);
  std::vector<Vec3> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double pick = uni(rng) * total;
    const auto it = std::lower_bound(cum_area.begin(), cum_area.end(), pick);
    const int tri = (int)(it - cum_area.begin());
    const auto& t = rig.mesh_triangles[std::min(tri, (int)rig.mesh_triangles.size() - 1)];
    double u = uni(rng), v = uni(rng);
    if (u + v > 1) {
      u = 1 - u;
      v = 1 - v;
    }
    out.push_back((1 - u - v) * rig.mesh_vertices[t[0]] + u * rig.mesh_vertices[t[1]] +
                  v * rig.mesh_vertices[t[2]]);
  }
  return out;
}

}  // namespace hoi
