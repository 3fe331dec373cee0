#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hoisplat/articulation.hpp"
#include "hoisplat/core.hpp"

namespace hoi {

// Contact vertices, margins and objective weights. beta / margin_r <= 0 means
// "derive from the object diameter" (200/diam and 0.01*diam).
struct ContactSpec {
  std::vector<int> contact_vertex_ids;  // into the rig template mesh
  double margin_r = 0.0;
  double beta = 0.0;
  double lambda_c = 1.0, lambda_p = 1.0, lambda_r = 0.1, lambda_t = 0.5;
  double v_thresh = 0.05;  // units per frame
  double a_thresh = 0.0;
  Vec3 up = Vec3(0, 1, 0);  // world vertical for the motion cues
};

struct EmptyContactSet : std::runtime_error {
  EmptyContactSet() : std::runtime_error("no contact vertices") {}
};
struct TooFewFrames : std::runtime_error {
  TooFewFrames() : std::runtime_error("need at least 3 frames") {}
};
struct EmptyObject : std::runtime_error {
  EmptyObject() : std::runtime_error("object has no gaussians") {}
};

// Nearest canonical human Gaussian per contact vertex; deduplicated,
// ascending. Ties break to the smallest Gaussian index.
std::vector<int> assign_contact_gaussians(const GaussianSet& canonical_human,
                                          const SkeletonRig& rig, const ContactSpec& spec);

// Per-frame contact indicator from motion cues: 1 when the mean vertical
// speed of the posed contact vertices is below v_thresh and vertical
// acceleration is at most a_thresh. Central differences inside, one-sided
// at the ends. Throws TooFewFrames for fewer than 3 frames.
std::vector<char> detect_contact_frames(const SkeletonRig& rig,
                                        const std::vector<PoseVector>& poses,
                                        const ContactSpec& spec);

// Soft nearest-neighbour distance -log(sum exp(-beta |x - x_p|)) / beta.
double soft_min_distance(const Vec3& x, const GaussianSet& object, double beta);

struct ContactRefineConfig {
  int outer_iterations = 20;  // nearest neighbours frozen within each
  int inner_iterations = 25;
  int max_halvings = 30;
  double step_init = 1e-2;
  double step_tol = 1e-10;
  int thread_count = 1;
  std::function<void(int, double)> on_step;  // (global step index, objective)
};

struct ContactReport {
  std::vector<int> penetrations;          // per frame, after refinement
  double mean_contact_before = 0.0;       // over delta=1 frames and I_c
  double mean_contact_after = 0.0;
  double max_delta = 0.0;                 // |Delta| infinity norm
  double mean_delta = 0.0;
  double objective_before = 0.0, objective_after = 0.0;
  bool converged = false;

  std::string to_text() const;
};

struct ContactResult {
  std::vector<std::vector<Vec3>> displacements;  // [frame][gaussian]
  std::vector<GaussianSet> refined;              // humans with positions moved
  ContactReport report;
};

// Contact-objective refinement of per-frame displacements over all human Gaussians.
// Object Gaussians stay fixed; only human positions move.
ContactResult refine_contacts(const std::vector<GaussianSet>& human_frames,
                              const std::vector<GaussianSet>& object_frames,
                              const std::vector<int>& contact_ids,
                              const std::vector<char>& delta, const ContactSpec& spec,
                              const ContactRefineConfig& config = {});

}  // namespace hoi
