#include "posefree/evaluation.hpp"

#include <numbers>
#include <stdexcept>

#include "posefree/config.hpp"
#include "posefree/metrics.hpp"
#include "posefree/toy_denoiser.hpp"

namespace posefree {

OrbitPose default_reference_pose(const EvalSidecar& sidecar, double orbit_radius) {
  if (sidecar.frame_poses.empty()) throw std::invalid_argument("evaluation: sidecar has no frame poses");
  return make_orbit_pose(orbit_radius, 0.0, sidecar.frame_poses.front().polar);
}

std::vector<OrbitPose> align_to_reference(const EvalSidecar& sidecar, const OrbitPose& p0) {
  if (sidecar.frame_poses.empty())
    throw std::invalid_argument("evaluation: sidecar " + sidecar.object_id + " has no reference frame pose");
  const OrbitPose& g0 = sidecar.frame_poses.front();
  const double offset = g0.azimuth - p0.azimuth;
  const double scale = p0.radius / g0.radius;
  std::vector<OrbitPose> out;
  for (const auto& h : sidecar.holdout)
    out.push_back(make_orbit_pose(h.pose.radius * scale, h.pose.azimuth - offset, h.pose.polar));
  return out;
}

nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["tag"] = report.tag;
  j["config"] = report.config;
  j["aggregate"] = {{"psnr", report.psnr}, {"ssim", report.ssim}, {"perceptual", report.perceptual}};
  j["objects"] = nlohmann::ordered_json::array();
  for (const auto& o : report.objects)
    j["objects"].push_back({{"object_id", o.object_id},
                            {"psnr", o.psnr},
                            {"ssim", o.ssim},
                            {"perceptual", o.perceptual},
                            {"view_psnr", o.view_psnr}});
  return j;
}

ObjectMetrics evaluate_object(const Model& model, const TrainConfig& cfg, const UnposedVideo& video,
                              const EvalSidecar& sidecar, bool align) {
  if (sidecar.holdout.empty()) throw std::invalid_argument("evaluation: sidecar " + sidecar.object_id + " has no held-out views");
  std::vector<OrbitPose> poses;
  if (align) {
    poses = align_to_reference(sidecar, default_reference_pose(sidecar, cfg.orbit_radius));
  } else {
    for (const auto& h : sidecar.holdout) poses.push_back(h.pose);
  }
  const Reconstruction rec = reconstruct(video, model);
  ObjectMetrics m;
  m.object_id = video.object_id;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Image& target = sidecar.holdout[i].image;
    if (target.height != cfg.render_resolution || target.width != cfg.render_resolution)
      throw std::invalid_argument("evaluation: held-out view resolution differs from render_resolution");
    const Image img = render_view(rec.triplane, model, poses[i], cfg);
    const double p = psnr(img, target);
    m.view_psnr.push_back(p);
    m.psnr += p;
    m.ssim += ssim(img, target);
    m.perceptual += perceptual(img, target);
  }
  const double n = static_cast<double>(poses.size());
  m.psnr /= n;
  m.ssim /= n;
  m.perceptual /= n;
  return m;
}

double mean_holdout_psnr(const Model& model, const TrainConfig& cfg, const std::vector<UnposedVideo>& videos,
                         const std::vector<EvalSidecar>& sidecars) {
  if (videos.size() != sidecars.size() || videos.empty())
    throw std::invalid_argument("evaluation: need one sidecar per video");
  double s = 0.0;
  for (std::size_t i = 0; i < videos.size(); ++i) s += evaluate_object(model, cfg, videos[i], sidecars[i]).psnr;
  return s / static_cast<double>(videos.size());
}

EvalReport evaluate_dataset(const Model& model, const TrainConfig& cfg, const std::filesystem::path& root,
                            const std::string& tag) {
  const DatasetManifest manifest = load_manifest(root);
  EvalReport r;
  r.tag = tag;
  r.config = train_config_to_json(cfg);
  for (const auto& id : manifest.object_ids) {
    r.objects.push_back(evaluate_object(model, cfg, load_unposed_video(root, id), load_eval_sidecar(root, id)));
    r.psnr += r.objects.back().psnr;
    r.ssim += r.objects.back().ssim;
    r.perceptual += r.objects.back().perceptual;
  }
  if (!r.objects.empty()) {
    const double n = static_cast<double>(r.objects.size());
    r.psnr /= n;
    r.ssim /= n;
    r.perceptual /= n;
  }
  return r;
}

Image turntable_strip(const TriPlane& tp, const Model& model, const TrainConfig& cfg, int n_views) {
  if (n_views < 1) throw std::invalid_argument("turntable: n_views must be >= 1");
  const int res = cfg.render_resolution;
  Image strip(res, res * n_views);
  for (int v = 0; v < n_views; ++v) {
    const Image img = render_view(tp, model, make_orbit_pose(cfg.orbit_radius, 2 * std::numbers::pi * v / n_views, 0.0), cfg);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        for (int c = 0; c < 3; ++c) strip.at(y, v * res + x, c) = img.at(y, x, c);
  }
  return strip;
}

PriorProvider dataset_priors(const DatasetManifest& manifest, const std::string& kind,
                             const std::filesystem::path& toy_weights, double orbit_radius) {
  std::vector<std::shared_ptr<const Denoiser>> dens;
  if (kind == "oracle") {
    for (const auto& id : manifest.object_ids)
      dens.push_back(std::make_shared<OracleDenoiser>(load_prior_scene(manifest.root, id), NoiseSchedule::cosine(),
                                                      orbit_radius));
  } else if (kind == "toy") {
    if (toy_weights.empty()) throw std::invalid_argument("prior toy needs a weights file (toy_prior)");
    const auto shared = std::make_shared<ToyDenoiser>(ToyDenoiser::load(toy_weights));
    dens.assign(manifest.object_ids.size(), shared);
  } else {
    throw std::invalid_argument("unknown prior '" + kind + "' (expected oracle or toy)");
  }
  return [dens](std::size_t i) {
    if (i >= dens.size()) throw std::out_of_range("prior requested for object index " + std::to_string(i));
    return dens[i];
  };
}

void write_triplane_dump(const std::filesystem::path& path, const TriPlane& tp, const RadianceDecoder& dec) {
  nlohmann::json j;
  j["format"] = "triplane_v1";
  j["extent"] = tp.extent;
  j["shape"] = tp.planes.shape();
  j["planes"] = tp.planes.vector();
  j["decoder"] = nlohmann::json::array();
  for (const auto& p : dec.parameters()) j["decoder"].push_back({{"shape", p.shape()}, {"values", p.vector()}});
  const std::string text = j.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

std::pair<TriPlane, RadianceDecoder> read_triplane_dump(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(read_text_file(path));
  if (j.value("format", "") != "triplane_v1") throw std::invalid_argument("not a tri-plane dump: " + path.string());
  const auto shape = j.at("shape").get<ad::Shape>();
  if (shape.size() != 3 || shape[0] % 3 != 0) throw std::invalid_argument("tri-plane dump: bad plane shape");
  TriPlane tp{ad::Tensor::from_data(j.at("planes").get<std::vector<double>>(), shape), j.at("extent").get<double>()};
  const auto& d = j.at("decoder");
  if (d.size() != 8) throw std::invalid_argument("tri-plane dump: decoder needs 8 tensors");
  RadianceDecoder dec;
  for (int l = 0; l < 4; ++l) {
    dec.weights[l] = ad::Tensor::from_data(d[2 * l].at("values").get<std::vector<double>>(), d[2 * l].at("shape").get<ad::Shape>());
    dec.biases[l] =
        ad::Tensor::from_data(d[2 * l + 1].at("values").get<std::vector<double>>(), d[2 * l + 1].at("shape").get<ad::Shape>());
  }
  if (dec.feature_dim() != tp.feature_dim()) throw std::invalid_argument("tri-plane dump: decoder width mismatch");
  return {std::move(tp), std::move(dec)};
}

std::vector<std::string> ablation_tags() { return {"full", "no_aug", "no_weak"}; }

TrainConfig ablation_config(const TrainConfig& base, const std::string& tag) {
  TrainConfig cfg = base;
  if (tag == "full") {
  } else if (tag == "no_aug") {
    cfg.use_augmentation = false;
  } else if (tag == "no_weak") {
    cfg.use_sds = false;
  } else {
    throw std::invalid_argument("ablation: unknown variant '" + tag + "' (expected full, no_aug or no_weak)");
  }
  return cfg;
}

std::vector<AblationRun> run_ablation_suite(const std::filesystem::path& root, const TrainConfig& base,
                                            const PriorProvider& priors, const std::vector<std::string>& tags,
                                            const std::filesystem::path& out_dir) {
  const DatasetManifest manifest = load_manifest(root);
  const auto videos = load_unposed_dataset(manifest);
  std::vector<AblationRun> runs;
  for (const auto& tag : tags) {
    const TrainConfig cfg = ablation_config(base, tag);
    TrainState state = init_train_state(cfg, videos.size());
    TrainHooks hooks;
    if (!out_dir.empty()) {
      hooks.metrics_path = out_dir / tag / "metrics.jsonl";
      std::filesystem::remove(hooks.metrics_path);
    }
    train_pose_free(state, videos, priors, hooks);
    EvalReport report = evaluate_dataset(state.model, cfg, root, tag);
    runs.push_back(AblationRun{std::move(report), std::move(state)});
  }
  return runs;
}

}  // namespace posefree
