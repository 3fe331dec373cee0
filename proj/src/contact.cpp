#include "hoisplat/contact.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "hoisplat/image.hpp"
#include "hoisplat/parallel.hpp"

namespace hoi {

namespace {

// Mean height of the posed contact vertices along spec.up, one value per frame.
std::vector<double> contact_heights(const SkeletonRig& rig, const std::vector<PoseVector>& poses,
                                    const ContactSpec& spec) {
  std::vector<double> h(poses.size(), 0.0);
  for (size_t t = 0; t < poses.size(); ++t) {
    const std::vector<Se3Pose> tf = joint_transforms(rig, poses[t]);
    double acc = 0;
    for (const int v : spec.contact_vertex_ids) {
      const Vec3& u = rig.mesh_vertices[size_t(v)];
      Vec3 x = Vec3::Zero();
      for (int j = 0; j < rig.joint_count(); ++j) {
        const double w = rig.template_weights(v, j);
        if (w != 0.0) x += w * tf[size_t(j)].apply(u);
      }
      acc += spec.up.dot(x);
    }
    h[t] = acc / double(spec.contact_vertex_ids.size());
  }
  return h;
}

double hard_min_distance(const Vec3& x, const GaussianSet& object, int* argmin = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  for (size_t p = 0; p < object.size(); ++p) {
    const double d = (x - object[p].position).norm();
    if (d < best) {
      best = d;
      if (argmin) *argmin = int(p);
    }
  }
  return best;
}

// d_beta and its gradient wrt x (softmax-weighted unit directions).
double soft_min_grad(const Vec3& x, const GaussianSet& object, double beta, Vec3* grad) {
  double m = -std::numeric_limits<double>::infinity();
  std::vector<double> dist(object.size());
  for (size_t p = 0; p < object.size(); ++p) {
    dist[p] = (x - object[p].position).norm();
    m = std::max(m, -beta * dist[p]);
  }
  double z = 0;
  Vec3 g = Vec3::Zero();
  for (size_t p = 0; p < object.size(); ++p) {
    const double w = std::exp(-beta * dist[p] - m);
    z += w;
    if (grad && dist[p] > 1e-12) g += w * (x - object[p].position) / dist[p];
  }
  if (grad) *grad = g / z;
  return -(m + std::log(z)) / beta;
}

double object_diameter(const GaussianSet& object) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const Gaussian& g : object.gaussians) {
    lo = lo.cwiseMin(g.position);
    hi = hi.cwiseMax(g.position);
  }
  return (hi - lo).norm();
}

}  // namespace

std::vector<int> assign_contact_gaussians(const GaussianSet& canonical_human,
                                          const SkeletonRig& rig, const ContactSpec& spec) {
  if (spec.contact_vertex_ids.empty()) throw EmptyContactSet();
  std::set<int> out;
  for (const int v : spec.contact_vertex_ids) {
    const Vec3& u = rig.mesh_vertices.at(size_t(v));
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < canonical_human.size(); ++k) {
      const double d = (canonical_human[k].position - u).norm();
      if (d < best_d) {  // strict: ties keep the smallest index
        best_d = d;
        best = int(k);
      }
    }
    out.insert(best);
  }
  return {out.begin(), out.end()};
}

std::vector<char> detect_contact_frames(const SkeletonRig& rig,
                                        const std::vector<PoseVector>& poses,
                                        const ContactSpec& spec) {
  if (spec.contact_vertex_ids.empty()) throw EmptyContactSet();
  const size_t n = poses.size();
  if (n < 3) throw TooFewFrames();
  const std::vector<double> h = contact_heights(rig, poses, spec);
  std::vector<char> delta(n, 0);
  for (size_t t = 0; t < n; ++t) {
    double v, a;
    if (t == 0) {
      v = h[1] - h[0];
      a = h[2] - 2 * h[1] + h[0];
    } else if (t + 1 == n) {
      v = h[t] - h[t - 1];
      a = h[t] - 2 * h[t - 1] + h[t - 2];
    } else {
      v = 0.5 * (h[t + 1] - h[t - 1]);
      a = h[t + 1] - 2 * h[t] + h[t - 1];
    }
    delta[t] = std::abs(v) < spec.v_thresh && a <= spec.a_thresh ? 1 : 0;
  }
  return delta;
}

double soft_min_distance(const Vec3& x, const GaussianSet& object, double beta) {
  if (object.size() == 0) throw EmptyObject();
  return soft_min_grad(x, object, beta, nullptr);
}

std::string ContactReport::to_text() const {
  std::ostringstream os;
  os << "contact refinement report\n";
  os << "  objective: " << objective_before << " -> " << objective_after << "\n";
  os << "  mean contact distance: " << mean_contact_before << " -> " << mean_contact_after
     << "\n";
  os << "  displacement: mean " << mean_delta << ", max " << max_delta << "\n";
  os << "  converged: " << (converged ? "yes" : "no") << "\n";
  for (size_t t = 0; t < penetrations.size(); ++t)
    os << "  frame " << t << ": penetrations " << penetrations[t] << "\n";
  return os.str();
}

ContactResult refine_contacts(const std::vector<GaussianSet>& human_frames,
                              const std::vector<GaussianSet>& object_frames,
                              const std::vector<int>& contact_ids,
                              const std::vector<char>& delta, const ContactSpec& spec,
                              const ContactRefineConfig& config) {
  const size_t T = human_frames.size();
  if (T == 0 || object_frames.size() != T || delta.size() != T)
    throw ShapeMismatch("frame counts disagree");
  const size_t n = human_frames[0].size();
  for (const GaussianSet& o : object_frames)
    if (o.size() == 0) throw EmptyObject();

  const double diam = object_diameter(object_frames[0]);
  const double beta = spec.beta > 0 ? spec.beta : 200.0 / diam;
  const double r = spec.margin_r > 0 ? spec.margin_r : 0.01 * diam;

  std::vector<char> is_contact(n, 0);
  for (const int k : contact_ids) is_contact[size_t(k)] = 1;

  // Flat displacement vector over (frame, gaussian, xyz).
  Eigen::VectorXd d = Eigen::VectorXd::Zero(Eigen::Index(T * n * 3));
  auto at = [&](const Eigen::VectorXd& v, size_t t, size_t k) -> Vec3 {
    return v.segment<3>(Eigen::Index((t * n + k) * 3));
  };

  std::vector<std::vector<int>> nn(T, std::vector<int>(n, -1));

  // Contact objective with nearest neighbours frozen; gradient optional.
  auto objective = [&](const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
    if (grad) grad->setZero(v.size());
    std::vector<double> per_frame(T, 0.0);
    std::vector<Eigen::VectorXd> per_grad;
    if (grad) per_grad.assign(T, Eigen::VectorXd::Zero(Eigen::Index(n * 3)));
    parallel_chunks(int(T), config.thread_count, [&](int ti) {
      const size_t t = size_t(ti);
      double acc = 0;
      for (size_t k = 0; k < n; ++k) {
        const Vec3 x = human_frames[t][k].position + at(v, t, k);
        Vec3 g = Vec3::Zero();
        if (is_contact[k]) {
          if (delta[t]) {
            const Vec3 diff = x - object_frames[t][size_t(nn[t][k])].position;
            acc += spec.lambda_c * diff.squaredNorm();
            g += 2.0 * spec.lambda_c * diff;
          }
        } else {
          Vec3 gd;
          const double db = soft_min_grad(x, object_frames[t], beta, &gd);
          const double h = std::max(0.0, r - db);
          if (h > 0) {
            acc += spec.lambda_p * h * h;
            g += -2.0 * spec.lambda_p * h * gd;
          }
        }
        const Vec3 dk = at(v, t, k);
        acc += spec.lambda_r * dk.squaredNorm();
        g += 2.0 * spec.lambda_r * dk;
        if (grad) per_grad[t].segment<3>(Eigen::Index(k * 3)) += g;
      }
      per_frame[t] = acc;
    });
    double total = 0;
    for (const double f : per_frame) total += f;
    if (grad)
      for (size_t t = 0; t < T; ++t)
        grad->segment(Eigen::Index(t * n * 3), Eigen::Index(n * 3)) += per_grad[t];
    // Temporal smoothness couples adjacent frames; handled serially.
    for (size_t t = 1; t < T; ++t)
      for (size_t k = 0; k < n; ++k) {
        const Vec3 diff = at(v, t, k) - at(v, t - 1, k);
        total += spec.lambda_t * diff.squaredNorm();
        if (grad) {
          grad->segment<3>(Eigen::Index((t * n + k) * 3)) += 2.0 * spec.lambda_t * diff;
          grad->segment<3>(Eigen::Index(((t - 1) * n + k) * 3)) -= 2.0 * spec.lambda_t * diff;
        }
      }
    return total;
  };

  auto refresh_nn = [&](const Eigen::VectorXd& v) {
    for (size_t t = 0; t < T; ++t) {
      if (!delta[t]) continue;
      for (const int k : contact_ids) {
        int arg = 0;
        hard_min_distance(human_frames[t][size_t(k)].position + at(v, t, size_t(k)),
                          object_frames[t], &arg);
        nn[t][size_t(k)] = arg;
      }
    }
  };

  auto mean_contact = [&](const Eigen::VectorXd& v) {
    double acc = 0;
    int count = 0;
    for (size_t t = 0; t < T; ++t) {
      if (!delta[t]) continue;
      for (const int k : contact_ids) {
        acc += hard_min_distance(human_frames[t][size_t(k)].position + at(v, t, size_t(k)),
                                 object_frames[t]);
        ++count;
      }
    }
    return count ? acc / count : 0.0;
  };

  ContactResult result;
  result.report.mean_contact_before = mean_contact(d);

  refresh_nn(d);
  result.report.objective_before = objective(d, nullptr);

  double step = config.step_init;
  double loss = result.report.objective_before;
  bool converged = false;
  int global_step = 0;
  for (int outer = 0; outer < config.outer_iterations && !converged; ++outer) {
    refresh_nn(d);
    loss = objective(d, nullptr);  // NN change can only lower the contact term
    for (int inner = 0; inner < config.inner_iterations; ++inner) {
      Eigen::VectorXd grad;
      objective(d, &grad);
      const double gnorm = grad.norm();
      if (gnorm < 1e-14) {
        converged = true;
        break;
      }
      bool accepted = false;
      for (int h = 0; h < config.max_halvings; ++h) {
        const Eigen::VectorXd trial = d - (step / gnorm) * grad;
        const double trial_loss = objective(trial, nullptr);
        if (trial_loss < loss) {
          d = trial;
          loss = trial_loss;
          step *= 2.0;
          accepted = true;
          break;
        }
        step *= 0.5;
        if (step < config.step_tol) break;
      }
      if (config.on_step) config.on_step(global_step++, loss);
      if (!accepted || step < config.step_tol) {
        converged = true;
        break;
      }
    }
  }

  result.report.objective_after = loss;
  result.report.mean_contact_after = mean_contact(d);
  result.report.converged = converged;

  result.displacements.assign(T, std::vector<Vec3>(n, Vec3::Zero()));
  result.refined = human_frames;
  double dsum = 0;
  for (size_t t = 0; t < T; ++t)
    for (size_t k = 0; k < n; ++k) {
      const Vec3 dk = at(d, t, k);
      result.displacements[t][k] = dk;
      result.refined[t][k].position += dk;
      result.report.max_delta = std::max(result.report.max_delta, dk.lpNorm<Eigen::Infinity>());
      dsum += dk.norm();
    }
  result.report.mean_delta = dsum / double(T * n);

  result.report.penetrations.assign(T, 0);
  for (size_t t = 0; t < T; ++t)
    for (size_t k = 0; k < n; ++k) {
      if (is_contact[k]) continue;
      const double db = soft_min_distance(result.refined[t][k].position, object_frames[t], beta);
      if (db < r * (1.0 - 1e-3)) ++result.report.penetrations[t];
    }
  return result;
}

}  // namespace hoi
