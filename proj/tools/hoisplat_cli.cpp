#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>

#include "hoisplat/contact.hpp"
#include "hoisplat/feature_field.hpp"
#include "hoisplat/gaussian_maps.hpp"
#include "hoisplat/io.hpp"
#include "hoisplat/losses.hpp"
#include "hoisplat/rasterizer.hpp"
#include "hoisplat/synth.hpp"
#include "hoisplat/tracker.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hoi;

namespace {

// Stage failures turn into "error: Category: detail" on stderr, exit 1.
struct StageError {
  std::string category, detail;
};
[[noreturn]] void fail(const std::string& category, const std::string& detail) {
  throw StageError{category, detail};
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
  return buf;
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) fail("MissingInput", path);
}

// Output directory that is deleted again if the stage throws before commit().
struct StageDir {
  fs::path dir;
  bool created = false;
  bool committed = false;

  explicit StageDir(const std::string& d) : dir(d) {
    if (!fs::exists(dir)) {
      fs::create_directories(dir);
      created = true;
    }
  }
  void commit() { committed = true; }
  ~StageDir() {
    if (!committed && created) {
      std::error_code ec;
      fs::remove_all(dir, ec);
    }
  }
};

json hash_inputs(const std::vector<std::string>& paths) {
  json j = json::object();
  for (const std::string& p : paths) {
    require_file(p);
    j[p] = hex64(hash_file(p));
  }
  return j;
}

// Re-hashes the outputs recorded by an upstream manifest, if one exists.
void check_upstream(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) return;
  json m;
  try {
    std::ifstream f(mpath);
    f >> m;
  } catch (const std::exception& e) {
    fail("ParseError", mpath.string() + ": " + e.what());
  }
  const json outputs = m.value("outputs", json::object());
  for (const auto& [rel, hash] : outputs.items()) {
    const fs::path p = dir / rel;
    if (!fs::exists(p)) fail("MissingInput", p.string());
    if (hex64(hash_file(p.string())) != hash.get<std::string>())
      fail("StaleInput", p.string());
  }
}

void write_manifest(const fs::path& dir, const std::string& stage, const json& config,
                    const json& inputs, const json& metrics) {
  json outputs = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const fs::path& p : files)
    outputs[fs::relative(p, dir).generic_string()] = hex64(hash_file(p.string()));
  json m{{"stage", stage}, {"config", config}, {"inputs", inputs},
         {"outputs", outputs}, {"metrics", metrics}};
  std::ofstream f(dir / "manifest.json");
  f << m.dump(2) << "\n";
}

GeneratedCapture load_capture(const std::string& dir) {
  require_file(dir);
  require_file(dir + "/cameras.txt");
  check_upstream(dir);
  try {
    return read_capture(dir);
  } catch (const std::exception& e) {
    fail("ParseError", std::string(dir) + ": " + e.what());
  }
}

MapsModel load_maps(const std::string& path) {
  require_file(path);
  check_upstream(fs::path(path).parent_path());
  try {
    return read_maps(path);
  } catch (const std::exception& e) {
    fail("ParseError", path + ": " + e.what());
  }
}

PoseTrack load_track(const std::string& path) {
  require_file(path);
  check_upstream(fs::path(path).parent_path());
  return read_pose_track(path);
}

// Mesh vertices dominated by one of the given joints; the CLI's contact set.
std::vector<int> joint_vertices(const SkeletonRig& rig, const std::vector<int>& joints) {
  for (int j : joints)
    if (j < 0 || j >= rig.joint_count()) fail("InvalidInput", "contact joint out of range");
  const std::set<int> wanted(joints.begin(), joints.end());
  std::vector<int> out;
  for (size_t v = 0; v < rig.mesh_vertices.size(); ++v) {
    int best = 0;
    rig.template_weights.row(long(v)).maxCoeff(&best);
    if (wanted.count(best)) out.push_back(int(v));
  }
  return out;
}

ImageGray union_mask(const ImageGray& a, const ImageGray& b) {
  ImageGray m = a;
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = std::max(a.data[i], b.data[i]);
  return m;
}

struct ContactFlags {
  std::vector<int> joints{11, 14};  // hands of the capsule biped
  double margin = 0.0, beta = 0.0;
  double lambda_c = 1.0, lambda_p = 1.0, lambda_r = 0.1, lambda_t = 0.5;
  double v_thresh = 0.05;
  int outer = 20, inner = 25;

  void attach(CLI::App* cmd) {
    cmd->add_option("--contact-joints", joints, "rig joints whose vertices are contact vertices");
    cmd->add_option("--margin", margin, "contact margin r (0: 1% of object diameter)");
    cmd->add_option("--beta", beta, "soft-min sharpness (0: 200 / object diameter)");
    cmd->add_option("--lambda-c", lambda_c, "contact attraction weight");
    cmd->add_option("--lambda-p", lambda_p, "penetration weight");
    cmd->add_option("--lambda-r", lambda_r, "displacement regularizer weight");
    cmd->add_option("--lambda-t", lambda_t, "temporal smoothness weight");
    cmd->add_option("--v-thresh", v_thresh, "contact-detection vertical speed threshold");
    cmd->add_option("--outer-iterations", outer, "nearest-neighbour refreshes");
    cmd->add_option("--inner-iterations", inner, "descent steps per refresh");
  }
  ContactSpec spec(const SkeletonRig& rig) const {
    ContactSpec s;
    s.contact_vertex_ids = joint_vertices(rig, joints);
    s.margin_r = margin;
    s.beta = beta;
    s.lambda_c = lambda_c;
    s.lambda_p = lambda_p;
    s.lambda_r = lambda_r;
    s.lambda_t = lambda_t;
    s.v_thresh = v_thresh;
    return s;
  }
  json echo() const {
    return {{"contact_joints", joints}, {"margin", margin},     {"beta", beta},
            {"lambda_c", lambda_c},     {"lambda_p", lambda_p}, {"lambda_r", lambda_r},
            {"lambda_t", lambda_t},     {"v_thresh", v_thresh}, {"outer", outer},
            {"inner", inner}};
  }
};

// Runs contact refinement for already-posed frames and writes the artifacts.
json run_contact_stage(const SkeletonRig& rig, const MapsModel& model,
                       const std::vector<PoseVector>& human_poses,
                       const std::vector<Se3Pose>& object_poses, const ContactFlags& flags,
                       int threads, const fs::path& out) {
  std::vector<GaussianSet> humans, objects;
  for (size_t t = 0; t < human_poses.size(); ++t) {
    humans.push_back(deform_human(model, rig, human_poses[t]));
    objects.push_back(deform_object(model, object_poses[t]));
  }
  const ContactSpec spec = flags.spec(rig);
  std::vector<int> ids;
  std::vector<char> delta;
  ContactResult result;
  try {
    ids = assign_contact_gaussians(model.human_canonical, rig, spec);
    delta = detect_contact_frames(rig, human_poses, spec);
    ContactRefineConfig rc;
    rc.outer_iterations = flags.outer;
    rc.inner_iterations = flags.inner;
    rc.thread_count = threads;
    result = refine_contacts(humans, objects, ids, delta, spec, rc);
  } catch (const std::runtime_error& e) {
    fail("InvalidInput", e.what());
  }
  char name[64];
  for (size_t t = 0; t < result.refined.size(); ++t) {
    std::snprintf(name, sizeof name, "human_%03zu.ply", t);
    write_ply(result.refined[t], (out / name).string());
    std::snprintf(name, sizeof name, "object_%03zu.ply", t);
    write_ply(objects[t], (out / name).string());
  }
  std::ofstream rep(out / "contact_report.txt");
  rep << result.report.to_text();
  int penetrations = 0;
  for (int p : result.report.penetrations) penetrations += p;
  return {{"contact_gaussians", ids.size()},
          {"contact_frames", std::count(delta.begin(), delta.end(), char(1))},
          {"mean_contact_before", result.report.mean_contact_before},
          {"mean_contact_after", result.report.mean_contact_after},
          {"objective_before", result.report.objective_before},
          {"objective_after", result.report.objective_after},
          {"penetrations_after", penetrations},
          {"converged", result.report.converged}};
}

int run(int argc, char** argv) {
  CLI::App app{"hoisplat: human-object gaussian splatting pipeline"};
  app.set_config("--config", "", "read options from a TOML/INI file");
  app.require_subcommand(1);

  // ---- synth ----
  std::string sy_script, sy_out;
  auto* sy = app.add_subcommand("synth", "generate a synthetic capture from a scene script");
  sy->add_option("--script", sy_script, "scene script (json)")->required();
  sy->add_option("--out", sy_out, "capture output directory")->required();
  sy->callback([&] {
    require_file(sy_script);
    SceneScript script;
    try {
      script = read_scene_script(sy_script);
    } catch (const ScriptError& e) {
      fail("ScriptError", e.what());
    }
    StageDir out(sy_out);
    const GeneratedCapture cap = generate_capture(script);
    write_capture(cap, sy_out);
    write_manifest(out.dir, "synth",
                   {{"seed", script.seed},
                    {"frames", script.frame_count},
                    {"cameras", script.cameras.count}},
                   hash_inputs({sy_script}),
                   {{"human_gaussians", cap.human_gt.size()},
                    {"object_gaussians", cap.object_gt.size()}});
    out.commit();
    std::cout << "synth: " << script.frame_count << " frames, " << script.cameras.count
              << " cameras -> " << sy_out << "\n";
  });

  // ---- fit-template ----
  std::string ft_capture, ft_out;
  FitConfig ft_cfg;
  auto* ft = app.add_subcommand("fit-template", "fit the coarse object template");
  ft->add_option("--capture", ft_capture, "capture directory")->required();
  ft->add_option("--out", ft_out, "output directory")->required();
  ft->add_option("--iterations", ft_cfg.iterations);
  ft->add_option("--sites", ft_cfg.sites);
  ft->add_option("--psnr-threshold", ft_cfg.psnr_threshold);
  ft->add_option("--seed", ft_cfg.seed);
  ft->add_option("--threads", ft_cfg.thread_count);
  ft->add_flag("--bypass-decoders", ft_cfg.bypass_decoders,
               "ablation: optimize per-gaussian parameters directly");
  ft->callback([&] {
    const GeneratedCapture cap = load_capture(ft_capture);
    const size_t anchor = select_min_occlusion_frame(cap.capture);
    StageDir out(ft_out);
    const FitResult fit =
        fit_template(cap.capture.frames[anchor], cap.capture.cameras, ft_cfg);
    write_ply(fit.decoded, ft_out + "/object_template.ply");
    {
      std::ofstream f(fs::path(ft_out) / "anchor_frame.txt");
      f << anchor << "\n";
    }
    write_manifest(out.dir, "fit-template",
                   {{"iterations", ft_cfg.iterations},
                    {"sites", ft_cfg.sites},
                    {"bypass_decoders", ft_cfg.bypass_decoders},
                    {"seed", ft_cfg.seed},
                    {"threads", ft_cfg.thread_count}},
                   hash_inputs({ft_capture + "/cameras.txt"}),
                   {{"train_psnr", fit.train_psnr},
                    {"anchor_frame", anchor},
                    {"converged", fit.converged},
                    {"low_confidence", fit.low_confidence}});
    out.commit();
    std::cout << "fit-template: frame " << anchor << ", masked psnr " << fit.train_psnr
              << " dB\n";
  });

  // ---- track ----
  std::string tr_capture, tr_template, tr_out;
  TrackConfig tr_cfg;
  auto* tr = app.add_subcommand("track", "track the object template through the capture");
  tr->add_option("--capture", tr_capture)->required();
  tr->add_option("--template", tr_template, "object template ply")->required();
  tr->add_option("--out", tr_out)->required();
  tr->add_option("--max-iterations", tr_cfg.max_iterations);
  tr->add_option("--threads", tr_cfg.thread_count);
  tr->callback([&] {
    const GeneratedCapture cap = load_capture(tr_capture);
    require_file(tr_template);
    check_upstream(fs::path(tr_template).parent_path());
    const GaussianSet tmpl = read_ply(tr_template);
    const size_t anchor = select_min_occlusion_frame(cap.capture);
    StageDir out(tr_out);
    const PoseTrack track =
        track_sequence(tmpl, cap.capture.frames, cap.capture.cameras, anchor,
                       Se3Pose::Identity(), tr_cfg);
    write_pose_track(track, tr_out + "/object_track.txt");
    double residual = 0;
    int converged = 0;
    for (size_t t = 0; t < track.size(); ++t) {
      residual += track.residuals[t];
      converged += track.converged[t] != 0;
    }
    write_manifest(out.dir, "track",
                   {{"max_iterations", tr_cfg.max_iterations},
                    {"threads", tr_cfg.thread_count},
                    {"anchor", anchor}},
                   hash_inputs({tr_template}),
                   {{"mean_residual", residual / double(std::max<size_t>(1, track.size()))},
                    {"converged_frames", converged},
                    {"frames", track.size()}});
    out.commit();
    std::cout << "track: " << track.size() << " frames, " << converged << " converged\n";
  });

  // ---- train-maps ----
  std::string tm_capture, tm_template, tm_track, tm_out;
  TrainMapsConfig tm_cfg;
  int tm_map_size = 16, tm_human_count = 110;
  uint64_t tm_seed = 1;
  bool tm_pose_linear = false, tm_no_refine = false, tm_pretrain_zero = false;
  auto* tm = app.add_subcommand("train-maps", "train the gaussian-map offset tables");
  tm->add_option("--capture", tm_capture)->required();
  tm->add_option("--template", tm_template, "object template ply")->required();
  tm->add_option("--track", tm_track, "object pose track")->required();
  tm->add_option("--out", tm_out)->required();
  tm->add_option("--iterations", tm_cfg.iterations);
  tm->add_option("--lr-tables", tm_cfg.lr_tables);
  tm->add_option("--lr-pose", tm_cfg.lr_pose);
  tm->add_option("--map-size", tm_map_size, "offset table side length");
  tm->add_option("--human-gaussians", tm_human_count);
  tm->add_option("--holdout", tm_cfg.holdout_cameras, "cameras held out for evaluation");
  tm->add_option("--psnr-threshold", tm_cfg.psnr_threshold);
  tm->add_option("--seed", tm_seed);
  tm->add_option("--threads", tm_cfg.thread_count);
  tm->add_flag("--pose-linear", tm_pose_linear, "enable pose-linear position offsets");
  tm->add_flag("--no-refine-poses", tm_no_refine, "freeze the object track");
  tm->add_flag("--pretrain-zero", tm_pretrain_zero,
               "no-op: offset tables already start at zero");
  tm->callback([&] {
    const GeneratedCapture cap = load_capture(tm_capture);
    require_file(tm_template);
    check_upstream(fs::path(tm_template).parent_path());
    const PoseTrack track = load_track(tm_track);
    if (track.size() != cap.capture.frame_count())
      fail("InvalidInput", "track length does not match capture");
    tm_cfg.refine_poses = !tm_no_refine;

    MapsModel model;
    model.human_canonical = human_canonical_gaussians(cap.rig, tm_human_count, tm_seed);
    std::vector<Vec3> positions;
    for (const Gaussian& g : model.human_canonical.gaussians) positions.push_back(g.position);
    model.human_template_weights = template_skinning_weights(cap.rig, positions);
    const int joints = cap.rig.joint_count();
    const int pose_dim =
        tm_pose_linear ? int(PoseVector::rest(joints).features().size()) : 0;
    model.use_pose_linear = tm_pose_linear;
    try {
      std::tie(model.human_front, model.human_back) =
          build_object_maps(model.human_canonical, tm_map_size, tm_map_size);
      model.object_canonical = read_ply(tm_template);
      std::tie(model.object_front, model.object_back) =
          build_object_maps(model.object_canonical, tm_map_size, tm_map_size);
    } catch (const MapOverflow& e) {
      fail("InvalidInput", e.what());
    }
    model.table_human_front = OffsetTable::zeros(tm_map_size, tm_map_size, pose_dim, joints);
    model.table_human_back = OffsetTable::zeros(tm_map_size, tm_map_size, pose_dim, joints);
    model.table_object_front = OffsetTable::zeros(tm_map_size, tm_map_size);
    model.table_object_back = OffsetTable::zeros(tm_map_size, tm_map_size);

    StageDir out(tm_out);
    const TrainMapsResult result = train_maps(model, cap.rig, cap.capture, track, tm_cfg);
    write_maps(model, tm_out + "/maps.bin");
    write_pose_track(result.refined, tm_out + "/object_track_refined.txt");
    write_manifest(out.dir, "train-maps",
                   {{"iterations", tm_cfg.iterations},
                    {"map_size", tm_map_size},
                    {"human_gaussians", tm_human_count},
                    {"holdout", tm_cfg.holdout_cameras},
                    {"pose_linear", tm_pose_linear},
                    {"refine_poses", tm_cfg.refine_poses},
                    {"seed", tm_seed},
                    {"threads", tm_cfg.thread_count}},
                   hash_inputs({tm_template, tm_track}),
                   {{"holdout_psnr", result.holdout_psnr}, {"converged", result.converged}});
    out.commit();
    std::cout << "train-maps: holdout psnr " << result.holdout_psnr << " dB\n";
  });

  // ---- refine-contacts ----
  std::string rc_capture, rc_maps, rc_track, rc_out;
  ContactFlags rc_flags;
  int rc_threads = 1;
  auto* rc = app.add_subcommand("refine-contacts", "contact-consistent human refinement");
  rc->add_option("--capture", rc_capture)->required();
  rc->add_option("--maps", rc_maps, "maps checkpoint")->required();
  rc->add_option("--track", rc_track, "object pose track")->required();
  rc->add_option("--out", rc_out)->required();
  rc->add_option("--threads", rc_threads);
  rc_flags.attach(rc);
  rc->callback([&] {
    const GeneratedCapture cap = load_capture(rc_capture);
    const MapsModel model = load_maps(rc_maps);
    const PoseTrack track = load_track(rc_track);
    if (track.size() != cap.capture.frame_count())
      fail("InvalidInput", "track length does not match capture");
    StageDir out(rc_out);
    const json metrics = run_contact_stage(cap.rig, model, cap.capture.human_poses,
                                           track.poses, rc_flags, rc_threads, out.dir);
    write_manifest(out.dir, "refine-contacts", rc_flags.echo(),
                   hash_inputs({rc_maps, rc_track}), metrics);
    out.commit();
    std::cout << "refine-contacts: objective " << metrics["objective_before"] << " -> "
              << metrics["objective_after"] << ", penetrations "
              << metrics["penetrations_after"] << "\n";
  });

  // ---- animate ----
  std::string an_maps, an_rig, an_curve, an_track, an_out;
  ContactFlags an_flags;
  bool an_refine = false;
  int an_threads = 1;
  auto* an = app.add_subcommand("animate", "pose the model along a novel pose curve");
  an->add_option("--maps", an_maps)->required();
  an->add_option("--rig", an_rig, "skeleton rig file")->required();
  an->add_option("--curve", an_curve, "human pose curve")->required();
  an->add_option("--object-track", an_track, "object pose track")->required();
  an->add_option("--out", an_out)->required();
  an->add_option("--threads", an_threads);
  an->add_flag("--refine-contacts", an_refine, "run contact refinement on the result");
  an_flags.attach(an);
  an->callback([&] {
    const MapsModel model = load_maps(an_maps);
    require_file(an_rig);
    const SkeletonRig rig = read_rig(an_rig);
    require_file(an_curve);
    const std::vector<PoseVector> curve = read_pose_curve(an_curve);
    const PoseTrack track = load_track(an_track);
    if (curve.empty()) fail("InvalidInput", "empty pose curve");
    std::vector<Se3Pose> object_poses;
    for (size_t t = 0; t < curve.size(); ++t)
      object_poses.push_back(track.poses[std::min(t, track.size() - 1)]);
    StageDir out(an_out);
    json metrics;
    if (an_refine) {
      metrics = run_contact_stage(rig, model, curve, object_poses, an_flags, an_threads,
                                  out.dir);
    } else {
      char name[64];
      for (size_t t = 0; t < curve.size(); ++t) {
        std::snprintf(name, sizeof name, "human_%03zu.ply", t);
        write_ply(deform_human(model, rig, curve[t]), (out.dir / name).string());
        std::snprintf(name, sizeof name, "object_%03zu.ply", t);
        write_ply(deform_object(model, object_poses[t]), (out.dir / name).string());
      }
      metrics = {{"frames", curve.size()}};
    }
    json config = {{"refine_contacts", an_refine}, {"threads", an_threads}};
    if (an_refine) config["contact"] = an_flags.echo();
    write_manifest(out.dir, "animate", config,
                   hash_inputs({an_maps, an_rig, an_curve, an_track}), metrics);
    out.commit();
    std::cout << "animate: " << curve.size() << " frames -> " << an_out << "\n";
  });

  // ---- render ----
  std::string rd_cameras, rd_human, rd_object, rd_frames, rd_out;
  int rd_threads = 1;
  auto* rd = app.add_subcommand("render", "rasterize gaussian sets from saved cameras");
  rd->add_option("--cameras", rd_cameras, "cameras file")->required();
  rd->add_option("--human", rd_human, "human ply");
  rd->add_option("--object", rd_object, "object ply");
  rd->add_option("--frames", rd_frames, "animate output directory (ply pairs per frame)");
  rd->add_option("--out", rd_out)->required();
  rd->add_option("--threads", rd_threads);
  rd->callback([&] {
    require_file(rd_cameras);
    const std::vector<Camera> cams = read_cameras(rd_cameras);
    struct FrameSets {
      std::string tag;
      std::vector<GaussianSet> sets;
    };
    std::vector<FrameSets> frames;
    if (!rd_frames.empty()) {
      require_file(rd_frames);
      check_upstream(rd_frames);
      char name[64];
      for (size_t t = 0;; ++t) {
        std::snprintf(name, sizeof name, "human_%03zu.ply", t);
        const fs::path h = fs::path(rd_frames) / name;
        std::snprintf(name, sizeof name, "object_%03zu.ply", t);
        const fs::path o = fs::path(rd_frames) / name;
        if (!fs::exists(h) && !fs::exists(o)) break;
        FrameSets f;
        std::snprintf(name, sizeof name, "t%03zu", t);
        f.tag = name;
        if (fs::exists(h)) f.sets.push_back(read_ply(h.string()));
        if (fs::exists(o)) f.sets.push_back(read_ply(o.string()));
        frames.push_back(std::move(f));
      }
      if (frames.empty()) fail("MissingInput", rd_frames + ": no frame plys");
    } else {
      FrameSets f;
      f.tag = "t000";
      if (!rd_human.empty()) {
        require_file(rd_human);
        f.sets.push_back(read_ply(rd_human));
      }
      if (!rd_object.empty()) {
        require_file(rd_object);
        f.sets.push_back(read_ply(rd_object));
      }
      if (f.sets.empty()) fail("InvalidInput", "nothing to render: give --human/--object/--frames");
      frames.push_back(std::move(f));
    }
    StageDir out(rd_out);
    RenderOptions opts;
    opts.thread_count = rd_threads;
    size_t written = 0;
    for (const FrameSets& f : frames) {
      std::vector<const GaussianSet*> ptrs;
      for (const GaussianSet& s : f.sets) ptrs.push_back(&s);
      for (size_t c = 0; c < cams.size(); ++c) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_c%02zu.png", f.tag.c_str(), c);
        write_png(render(ptrs, cams[c], opts).rgb, (out.dir / name).string());
        ++written;
      }
    }
    write_manifest(out.dir, "render", {{"threads", rd_threads}},
                   hash_inputs({rd_cameras}), {{"images", written}});
    out.commit();
    std::cout << "render: " << written << " images -> " << rd_out << "\n";
  });

  // ---- eval ----
  std::string ev_capture, ev_maps, ev_track, ev_out;
  std::vector<int> ev_holdout;
  int ev_threads = 1;
  auto* ev = app.add_subcommand("eval", "masked PSNR / SSIM of the trained model");
  ev->add_option("--capture", ev_capture)->required();
  ev->add_option("--maps", ev_maps)->required();
  ev->add_option("--track", ev_track)->required();
  ev->add_option("--out", ev_out)->required();
  ev->add_option("--holdout", ev_holdout, "cameras to evaluate (default: all)");
  ev->add_option("--threads", ev_threads);
  ev->callback([&] {
    const GeneratedCapture cap = load_capture(ev_capture);
    const MapsModel model = load_maps(ev_maps);
    const PoseTrack track = load_track(ev_track);
    if (track.size() != cap.capture.frame_count())
      fail("InvalidInput", "track length does not match capture");
    std::vector<int> cams = ev_holdout;
    if (cams.empty())
      for (size_t c = 0; c < cap.capture.camera_count(); ++c) cams.push_back(int(c));
    for (int c : cams)
      if (c < 0 || size_t(c) >= cap.capture.camera_count())
        fail("InvalidInput", "holdout camera out of range");
    RenderOptions opts;
    opts.thread_count = ev_threads;
    double psnr_sum = 0, ssim_sum = 0;
    size_t views = 0;
    for (size_t t = 0; t < cap.capture.frame_count(); ++t) {
      const GaussianSet human = deform_human(model, cap.rig, cap.capture.human_poses[t]);
      const GaussianSet object = deform_object(model, track.poses[t]);
      for (int c : cams) {
        const RenderedImage img =
            render({&human, &object}, cap.capture.cameras[size_t(c)], opts);
        const CaptureFrame& f = cap.capture.frames[t];
        const ImageGray mask = union_mask(f.mask_human[size_t(c)], f.mask_object[size_t(c)]);
        psnr_sum += psnr_masked(img.rgb, f.images[size_t(c)], mask);
        ssim_sum += ssim(img.rgb, f.images[size_t(c)]);
        ++views;
      }
    }
    const double mean_psnr = psnr_sum / double(std::max<size_t>(1, views));
    const double mean_ssim = ssim_sum / double(std::max<size_t>(1, views));
    StageDir out(ev_out);
    {
      json metrics{{"psnr", mean_psnr}, {"ssim", mean_ssim}, {"views", views}};
      std::ofstream f(out.dir / "metrics.json");
      f << metrics.dump(2) << "\n";
    }
    write_manifest(out.dir, "eval", {{"holdout", cams}, {"threads", ev_threads}},
                   hash_inputs({ev_maps, ev_track}),
                   {{"psnr", mean_psnr}, {"ssim", mean_ssim}, {"views", views}});
    out.commit();
    std::cout << "eval: psnr " << mean_psnr << " dB, ssim " << mean_ssim << " over " << views
              << " views\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: Usage: " << e.what() << "\n";
    return 1;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.category << ": " << e.detail << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: ParseError: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
