#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>
#include <set>

#include "hoisplat/contact.hpp"
#include "test_util.hpp"

using namespace hoi;
using namespace hoi::testutil;

namespace {

GaussianSet point_cloud(const std::vector<Vec3>& points, EntityLabel label) {
  GaussianSet s;
  s.label = label;
  for (const Vec3& p : points) {
    Gaussian g;
    g.position = p;
    s.gaussians.push_back(g);
  }
  return s;
}

// Fibonacci sphere: roughly uniform points on a radius-rad sphere.
std::vector<Vec3> sphere_points(int n, double rad, const Vec3& center = Vec3::Zero()) {
  std::vector<Vec3> out;
  const double ga = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(1.0 - y * y);
    out.push_back(center + rad * Vec3(r * std::cos(ga * i), y, r * std::sin(ga * i)));
  }
  return out;
}

double brute_min(const Vec3& x, const GaussianSet& s) {
  double best = std::numeric_limits<double>::infinity();
  for (const Gaussian& g : s.gaussians) best = std::min(best, (x - g.position).norm());
  return best;
}

// Rest poses whose root follows the given vertical offsets.
std::vector<PoseVector> height_track(const SkeletonRig& rig, const std::vector<double>& h) {
  std::vector<PoseVector> poses;
  for (const double y : h) {
    PoseVector p = PoseVector::rest(rig.joint_count());
    p.root_translation = Vec3(0, y, 0);
    poses.push_back(p);
  }
  return poses;
}

// Lowest-y template vertices work as a feet analogue.
std::vector<int> foot_vertices(const SkeletonRig& rig, int count) {
  std::vector<int> ids(rig.mesh_vertices.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = int(i);
  std::sort(ids.begin(), ids.end(), [&](int a, int b) {
    return rig.mesh_vertices[size_t(a)].y() < rig.mesh_vertices[size_t(b)].y();
  });
  ids.resize(size_t(count));
  return ids;
}

}  // namespace

TEST_CASE("contact vertex coincident with a gaussian selects it") {
  const SkeletonRig rig = capsule_biped();
  Rng rng(61);
  GaussianSet human;
  for (int i = 0; i < 12; ++i) {
    Gaussian g;
    g.position = uniform_vec3(rng, 2.0, 3.0);  // keep everyone away from the mesh
    human.gaussians.push_back(g);
  }
  human[7].position = rig.mesh_vertices[40];
  ContactSpec spec;
  spec.contact_vertex_ids = {40};
  CHECK(assign_contact_gaussians(human, rig, spec) == std::vector<int>{7});
  // Two vertices nearest to the same gaussian collapse to a singleton.
  spec.contact_vertex_ids = {40, 41};
  human[7].position = 0.5 * (rig.mesh_vertices[40] + rig.mesh_vertices[41]);
  CHECK(assign_contact_gaussians(human, rig, spec) == std::vector<int>{7});
  spec.contact_vertex_ids = {};
  CHECK_THROWS_AS(assign_contact_gaussians(human, rig, spec), EmptyContactSet);
}

TEST_CASE("assignment matches the exhaustive oracle") {
  const SkeletonRig rig = capsule_biped();
  Rng rng(62);
  GaussianSet human;
  for (int i = 0; i < 500; ++i) {
    Gaussian g;
    g.position = uniform_vec3(rng, -1.0, 1.8);
    human.gaussians.push_back(g);
  }
  ContactSpec spec;
  std::uniform_int_distribution<int> pick(0, int(rig.mesh_vertices.size()) - 1);
  for (int i = 0; i < 50; ++i) spec.contact_vertex_ids.push_back(pick(rng));
  const std::vector<int> got = assign_contact_gaussians(human, rig, spec);

  std::set<int> expect;
  for (const int v : spec.contact_vertex_ids) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < human.size(); ++k) {
      const double d = (human[k].position - rig.mesh_vertices[size_t(v)]).norm();
      if (d < best_d) {
        best_d = d;
        best = int(k);
      }
    }
    expect.insert(best);
  }
  CHECK(got == std::vector<int>(expect.begin(), expect.end()));
}

TEST_CASE("static sequence is all contact; ballistic flight is not") {
  const SkeletonRig rig = capsule_biped();
  ContactSpec spec;
  spec.contact_vertex_ids = foot_vertices(rig, 8);

  const std::vector<char> still = detect_contact_frames(rig, height_track(rig, {0, 0, 0, 0}), spec);
  CHECK(still == std::vector<char>(4, 1));

  // Grounded, then a jump: mid-ascent speed far above threshold.
  const std::vector<double> h = {0, 0, 0, 0.3, 0.5, 0.6, 0.5, 0.3, 0, 0, 0};
  const std::vector<char> d = detect_contact_frames(rig, height_track(rig, h), spec);
  CHECK(d[0] == 1);
  CHECK(d[1] == 1);
  CHECK(d[3] == 0);  // v = (0.5 - 0) / 2
  CHECK(d[4] == 0);
  CHECK(d[6] == 0);
  CHECK(d[8] == 0);  // landing: still descending quickly
  CHECK(d[9] == 1);
  CHECK(d[10] == 1);
  // Apex: zero velocity and downward acceleration; the motion cue fires
  // there by construction (a known property of the heuristic).
  CHECK(d[5] == 1);

  CHECK_THROWS_AS(detect_contact_frames(rig, height_track(rig, {0, 0}), spec), TooFewFrames);
}

TEST_CASE("soft-min distance closed forms and bounds") {
  Rng rng(63);
  // Single gaussian: exact distance for any beta.
  const GaussianSet one = point_cloud({Vec3(0, 0, 2)}, EntityLabel::Object);
  for (const double beta : {0.5, 10.0, 1000.0})
    CHECK(soft_min_distance(Vec3::Zero(), one, beta) == doctest::Approx(2.0).epsilon(1e-12));

  // Two gaussians at equal distance 1: 1 - ln(2)/beta.
  const GaussianSet two =
      point_cloud({Vec3(1, 0, 0), Vec3(-1, 0, 0)}, EntityLabel::Object);
  for (const double beta : {2.0, 50.0})
    CHECK(soft_min_distance(Vec3::Zero(), two, beta) ==
          doctest::Approx(1.0 - std::log(2.0) / beta).epsilon(1e-12));

  // Random cloud: bounds and the beta=1000 approximation.
  GaussianSet cloud;
  for (int i = 0; i < 200; ++i) {
    Gaussian g;
    g.position = uniform_vec3(rng, -1, 1);
    cloud.gaussians.push_back(g);
  }
  for (int i = 0; i < 50; ++i) {
    const Vec3 x = uniform_vec3(rng, -2, 2);
    const double truth = brute_min(x, cloud);
    for (const double beta : {10.0, 100.0, 1000.0}) {
      const double d = soft_min_distance(x, cloud, beta);
      CHECK(d <= truth + 1e-12);
      CHECK(truth - d <= std::log(200.0) / beta + 1e-12);
    }
    CHECK(std::abs(soft_min_distance(x, cloud, 1000.0) - truth) < 0.01);
  }

  CHECK_THROWS_AS(soft_min_distance(Vec3::Zero(), GaussianSet{}, 10.0), EmptyObject);
}

TEST_CASE("perfect contact is a fixed point") {
  const GaussianSet object =
      point_cloud(sphere_points(200, 0.5), EntityLabel::Object);
  GaussianSet human;
  Gaussian g;
  g.position = object[0].position;  // contact gaussian already touching
  human.gaussians.push_back(g);
  g.position = Vec3(3, 3, 3);  // far bystander
  human.gaussians.push_back(g);
  ContactSpec spec;
  const ContactResult res =
      refine_contacts({human, human}, {object, object}, {0}, {1, 1}, spec);
  CHECK(res.report.max_delta < 1e-4);
  CHECK(res.report.converged);
  CHECK(res.report.penetrations == std::vector<int>{0, 0});
}

TEST_CASE("hand above a sphere is pulled into contact") {
  const GaussianSet object =
      point_cloud(sphere_points(200, 0.5), EntityLabel::Object);
  GaussianSet human;
  Gaussian g;
  // 5 cm outward along the direction of a known surface point.
  const Vec3 dir = object[17].position.normalized();
  g.position = object[17].position + 0.05 * dir;
  human.gaussians.push_back(g);
  g.position = 4.0 * dir;
  human.gaussians.push_back(g);

  ContactSpec spec;
  std::vector<double> losses;
  ContactRefineConfig cfg;
  cfg.on_step = [&](int, double l) { losses.push_back(l); };
  const ContactResult res = refine_contacts({human}, {object}, {0}, {1}, spec, cfg);
  const double after = brute_min(res.refined[0][0].position, object);
  CHECK(after < 0.005);
  const double moved = res.displacements[0][0].norm();
  CHECK(moved == doctest::Approx(0.05).epsilon(0.12));  // lambda_r holds back ~9%
  CHECK(res.displacements[0][1].norm() < 1e-9);         // bystander untouched
  for (size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] <= losses[i - 1] + 1e-15);
  CHECK(res.report.mean_contact_after < res.report.mean_contact_before);
  CHECK(res.report.objective_after <= res.report.objective_before);
}

TEST_CASE("penetrating bystander is pushed out to the margin") {
  const GaussianSet object =
      point_cloud(sphere_points(200, 0.5), EntityLabel::Object);
  const double diam = 1.0, r = 0.01 * diam, beta = 200.0 / diam;
  GaussianSet human;
  Gaussian g;
  const Vec3 dir = object[3].position.normalized();
  g.position = object[3].position + 0.001 * dir;  // 1 mm from an object gaussian
  human.gaussians.push_back(g);

  ContactSpec spec;
  spec.lambda_r = 1e-4;  // nearly free push; the margin dominates
  const ContactResult res = refine_contacts({human}, {object}, {}, {1}, spec);
  const double d_after = soft_min_distance(res.refined[0][0].position, object, beta);
  CHECK(d_after >= r * (1.0 - 1e-3));
  CHECK(res.report.penetrations == std::vector<int>{0});
}

TEST_CASE("temporal weight tightens displacement differences") {
  const GaussianSet object =
      point_cloud(sphere_points(200, 0.5), EntityLabel::Object);
  const Vec3 dir = object[11].position.normalized();
  std::vector<GaussianSet> humans;
  for (const double gap : {0.02, 0.08, 0.03}) {
    GaussianSet h;
    Gaussian g;
    g.position = object[11].position + gap * dir;
    h.gaussians.push_back(g);
    humans.push_back(h);
  }
  auto max_diff = [&](double lambda_t) {
    ContactSpec spec;
    spec.lambda_t = lambda_t;
    const ContactResult res =
        refine_contacts(humans, {object, object, object}, {0}, {1, 1, 1}, spec);
    double m = 0;
    for (size_t t = 1; t < 3; ++t)
      m = std::max(m, (res.displacements[t][0] - res.displacements[t - 1][0]).norm());
    return m;
  };
  const double loose = max_diff(0.1);
  const double tight = max_diff(100.0);
  CHECK(tight < loose);
  CHECK(tight < 5e-3);
}

TEST_CASE("mismatched frame counts and empty objects are rejected") {
  GaussianSet h;
  h.gaussians.push_back(Gaussian{});
  GaussianSet o;
  o.gaussians.push_back(Gaussian{});
  CHECK_THROWS_AS(refine_contacts({h, h}, {o}, {}, {1, 1}, ContactSpec{}), ShapeMismatch);
  CHECK_THROWS_AS(refine_contacts({h}, {GaussianSet{}}, {}, {1}, ContactSpec{}), EmptyObject);
}
