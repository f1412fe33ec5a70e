#include "posefree/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <stdexcept>

#include "posefree/checkpoint.hpp"
#include "posefree/ops.hpp"

namespace posefree {

namespace {

// First `count` entries of a random permutation of 0..n-1.
std::vector<int> sample_without_replacement(int n, int count, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[i] = i;
  count = std::min(count, n);
  for (int i = 0; i < count; ++i) std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(i, n - 1))]);
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

RenderConfig train_render_config(const TrainConfig& cfg) {
  RenderConfig rc;
  rc.samples_per_ray = cfg.samples_per_ray;
  rc.stratified = true;
  return rc;
}

ad::Tensor pseudo_term(const ad::Tensor& render, const Image& target, double lambda, double weight, double& mse_out,
                       double& perc_out) {
  ad::Tensor m = ad::mse(render, target.to_tensor());
  mse_out = m.item();
  if (lambda == 0.0) {
    perc_out = 0.0;
    return ad::weighted_sum({m}, {weight});
  }
  ad::Tensor p = default_perceptual().distance(render, target);
  perc_out = p.item();
  return ad::weighted_sum({m, p}, {weight, weight * lambda});
}

double grad_norm(const Image& g) {
  double s = 0.0;
  for (double v : g.pixels) s += v * v;
  return std::sqrt(s);
}

void check_finite(const std::vector<ad::Tensor>& params, const MetricRecord& rec) {
  if (!std::isfinite(rec.loss_mse) || !std::isfinite(rec.loss_perc) || !std::isfinite(rec.sds_grad_norm))
    throw std::runtime_error("training diverged at step " + std::to_string(rec.step) + ": non-finite loss (mse " +
                             std::to_string(rec.loss_mse) + ", perceptual " + std::to_string(rec.loss_perc) +
                             ", sds norm " + std::to_string(rec.sds_grad_norm) + ")");
  for (const auto& p : params)
    for (double g : p.grad())
      if (!std::isfinite(g))
        throw std::runtime_error("training diverged at step " + std::to_string(rec.step) + ": non-finite gradient");
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path) {
    if (path.empty()) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::app);
    if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
  }
  void write(const MetricRecord& r) {
    if (out_.is_open()) out_ << metric_json_line(r) << '\n' << std::flush;
  }

 private:
  std::ofstream out_;
};

// Leaf copy of the synthesized planes, so each render can be back-propagated
// on its own and the synthesizer only once.
struct PlaneLeaf {
  TriPlane leaf;
  explicit PlaneLeaf(const TriPlane& tp)
      : leaf{ad::Tensor::from_data(tp.planes.vector(), tp.planes.shape(), true), tp.extent} {}
  void flush_into(const TriPlane& tp) const {
    if (leaf.planes.has_grad()) tp.planes.backward(leaf.planes.grad());
  }
};

struct StepContext {
  TrainState& state;
  const TrainHooks& hooks;
  std::vector<ad::Tensor> params;
  MetricsWriter writer;
  StepContext(TrainState& s, const TrainHooks& h) : state(s), hooks(h), params(s.model.parameters()), writer(h.metrics_path) {}

  void begin_step() {
    for (auto& p : params) p.zero_grad();
  }
  void finish_step(MetricRecord rec) {
    check_finite(params, rec);
    state.optimizer.step(params, rec.lr);
    if (hooks.holdout_psnr) rec.psnr_holdout = hooks.holdout_psnr(state);
    writer.write(rec);
    state.history.push_back(rec);
    ++state.step;
    if (!hooks.checkpoint_path.empty() && hooks.checkpoint_every > 0 && state.step % hooks.checkpoint_every == 0)
      save_checkpoint(hooks.checkpoint_path, state);
  }
};

std::int64_t resolve_until(const TrainState& state, std::optional<std::int64_t> until) {
  const std::int64_t stop = until.value_or(state.config.total_steps);
  if (stop > state.config.total_steps) throw std::invalid_argument("until_step beyond total_steps");
  return stop;
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](const char* name, std::int64_t v) {
    if (v < 1) throw std::invalid_argument(std::string("config: ") + name + " must be >= 1");
  };
  if (total_steps < 0) throw std::invalid_argument("config: total_steps must be >= 0");
  if (warmup_steps < 0) throw std::invalid_argument("config: warmup_steps must be >= 0");
  positive("batch_objects", batch_objects);
  positive("frames_per_object", frames_per_object);
  positive("sds_views", sds_views);
  positive("pseudo_views_per_step", pseudo_views_per_step);
  positive("posed_views_per_step", posed_views_per_step);
  positive("render_resolution", render_resolution);
  if (samples_per_ray < 2) throw std::invalid_argument("config: samples_per_ray must be >= 2");
  if (lambda_perceptual < 0) throw std::invalid_argument("config: lambda_perceptual must be >= 0");
  if (!(learning_rate >= 0)) throw std::invalid_argument("config: learning_rate must be >= 0");
  if (!(adam_beta2 > 0 && adam_beta2 < 1)) throw std::invalid_argument("config: adam_beta2 must lie in (0, 1)");
  if (!(beta_start > 0) || !(beta_end > 0)) throw std::invalid_argument("config: beta endpoints must be positive");
  if (!(orbit_radius > 0)) throw std::invalid_argument("config: orbit_radius must be positive");
  if (!(sds_theta >= 0 && sds_theta <= std::numbers::pi / 2))
    throw std::invalid_argument("config: sds_theta outside [0, pi/2]");
  if (sds_t_min < 1 || sds_t_min > augmentation.t_max)
    throw std::invalid_argument("config: sds_t_min must lie in [1, t_max]");
  if (prior != "oracle" && prior != "toy") throw std::invalid_argument("config: prior must be oracle or toy");
  augmentation.validate();
}

void AdamState::step(const std::vector<ad::Tensor>& params, double lr) {
  if (m.empty()) {
    for (const auto& p : params) {
      m.emplace_back(p.vector().size(), 0.0);
      v.emplace_back(p.vector().size(), 0.0);
    }
  }
  if (m.size() != params.size()) throw std::logic_error("AdamState: parameter count changed");
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    if (!p.has_grad()) continue;
    auto w = p.mutable_values();
    const auto g = p.grad();
    auto& mi = m[i];
    auto& vi = v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      mi[j] = beta1 * mi[j] + (1 - beta1) * g[j];
      vi[j] = beta2 * vi[j] + (1 - beta2) * g[j] * g[j];
      w[j] -= lr * (mi[j] / c1) / (std::sqrt(vi[j] / c2) + eps);
    }
  }
}

double learning_rate_at(std::int64_t step, const TrainConfig& cfg) {
  if (cfg.total_steps <= 0) return 0.0;
  if (step < cfg.warmup_steps) return cfg.learning_rate * static_cast<double>(step) / cfg.warmup_steps;
  const double span = static_cast<double>(std::max<std::int64_t>(cfg.total_steps - cfg.warmup_steps, 1));
  const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / span);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string metric_json_line(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["loss_mse"] = r.loss_mse;
  j["loss_perc"] = r.loss_perc;
  j["sds_grad_norm"] = r.sds_grad_norm;
  j["beta"] = r.beta;
  j["lr"] = r.lr;
  if (r.psnr_holdout) j["psnr_holdout"] = *r.psnr_holdout;
  return j.dump();
}

TrainState init_train_state(const TrainConfig& cfg, std::size_t n_objects) {
  cfg.validate();
  ModelConfig mc = ModelConfig::from_preset(cfg.model_preset);
  mc.decoder_density_bias = cfg.decoder_density_bias;
  Rng init_rng(cfg.seed);
  TrainState st{cfg, Model::create(mc, init_rng), {}, 0, std::vector<PseudoViewSet>(n_objects), Rng(cfg.seed ^ 0x5DEECE66DULL), {}};
  st.optimizer.beta2 = cfg.adam_beta2;
  return st;
}

ReconLoss recon_loss(const std::vector<ad::Tensor>& renders, const std::vector<Image>& pseudo,
                     const std::vector<ad::Tensor>& sds_renders, const std::vector<Image>& sds_grads, double lambda,
                     double beta, int height, int width) {
  if (renders.size() != pseudo.size()) throw std::invalid_argument("recon_loss: renders and pseudo-views differ in count");
  if (sds_renders.size() != sds_grads.size())
    throw std::invalid_argument("recon_loss: SDS renders and gradients differ in count");
  if (!(beta > 0)) throw std::invalid_argument("recon_loss: beta must be positive");
  ReconLoss out;
  std::vector<ad::Tensor> terms;
  std::vector<double> weights;
  const double m = static_cast<double>(renders.size());
  for (std::size_t i = 0; i < renders.size(); ++i) {
    if (!pseudo[i].same_shape(Image(height, width)) || renders[i].numel() != static_cast<std::int64_t>(pseudo[i].size()))
      throw std::invalid_argument("recon_loss: render/pseudo-view shape mismatch");
    double e = 0.0, p = 0.0;
    terms.push_back(pseudo_term(renders[i], pseudo[i], lambda, 1.0 / m, e, p));
    weights.push_back(1.0);
    out.mse += e / m;
    out.perceptual += p / m;
  }
  const double k = static_cast<double>(sds_renders.size());
  for (std::size_t j = 0; j < sds_renders.size(); ++j) {
    terms.push_back(ad::dot_constant(sds_renders[j], sds_grads[j].pixels));
    weights.push_back(1.0 / (beta * k));
    out.sds_grad_norm += grad_norm(sds_grads[j]) / k;
  }
  out.value = out.mse + lambda * out.perceptual;
  out.total = terms.empty() ? ad::Tensor::scalar(0.0) : ad::weighted_sum(terms, weights);
  return out;
}

OrbitPose relative_to_reference(const OrbitPose& pose, const OrbitPose& reference, double orbit_radius) {
  return make_orbit_pose(pose.radius * orbit_radius / reference.radius, pose.azimuth - reference.azimuth, pose.polar);
}

RenderConfig eval_render_config(const TrainConfig& cfg) {
  RenderConfig rc;
  rc.samples_per_ray = cfg.samples_per_ray;
  rc.stratified = false;
  return rc;
}

Image render_view(const TriPlane& tp, const Model& model, const OrbitPose& pose, const TrainConfig& cfg) {
  ad::NoGradGuard guard;
  return render(tp, model.decoder, orbit_camera(pose, cfg.render_resolution), eval_render_config(cfg)).image();
}

Reconstruction reconstruct(const UnposedVideo& video, const Model& model) {
  ad::NoGradGuard guard;
  return forward(model, video.frames);
}

void train_pose_free(TrainState& state, const std::vector<UnposedVideo>& data, const PriorProvider& priors,
                     const TrainHooks& hooks, std::optional<std::int64_t> until_step) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_pose_free: empty dataset");
  if (data.size() != state.pseudo.size()) throw std::invalid_argument("train_pose_free: state/dataset object count mismatch");
  for (const auto& v : data)
    if (v.frames.empty()) throw std::invalid_argument("train_pose_free: video " + v.object_id + " has no frames");
  const std::int64_t until = resolve_until(state, until_step);
  const NoiseSchedule sched = NoiseSchedule::cosine(cfg.augmentation.t_max);
  const int res = cfg.render_resolution;
  const RenderConfig rc = train_render_config(cfg);
  std::vector<std::shared_ptr<const Denoiser>> dens;
  for (std::size_t i = 0; i < data.size(); ++i) dens.push_back(priors(i));
  StepContext ctx(state, hooks);
  const int n_obj = static_cast<int>(data.size());

  while (state.step < until) {
    const std::int64_t s = state.step;
    if (s % cfg.augmentation.interval_steps == 0) {
      const int gen = state.pseudo.front().generations;
      const bool allowed = cfg.use_augmentation ? (cfg.max_generations < 0 || gen < cfg.max_generations) : gen == 0;
      if (allowed) {
        if (hooks.on_generation) hooks.on_generation(state, gen);
        for (int o = 0; o < n_obj; ++o) {
          const Reconstruction rec = reconstruct(data[o], state.model);
          auto views = synthesize_pseudo_views(
              [&](const OrbitPose& pose) { return render_view(rec.triplane, state.model, pose, cfg); },
              data[o].frames.front(), *dens[o], sched, cfg.augmentation, s, std::max<std::int64_t>(cfg.total_steps, 1),
              gen, cfg.orbit_radius, state.rng);
          if (!hooks.pseudo_dump_dir.empty()) dump_pseudo_views(hooks.pseudo_dump_dir / data[o].object_id, views);
          state.pseudo[o].append(std::move(views), cfg.augmentation.replace);
        }
      }
    }

    MetricRecord rec;
    rec.step = s;
    rec.beta = beta_schedule(s, std::max<std::int64_t>(cfg.total_steps, 1), cfg.beta_start, cfg.beta_end);
    rec.lr = learning_rate_at(s, cfg);
    const int cap = timestep_schedule(s, std::max<std::int64_t>(cfg.total_steps, 1), cfg.augmentation.t_max,
                                      cfg.augmentation.t_floor_fraction);
    ctx.begin_step();
    const auto batch = sample_without_replacement(n_obj, cfg.batch_objects, state.rng);
    const double b = static_cast<double>(batch.size());
    int sds_count = 0;
    for (int o : batch) {
      const auto& video = data[o];
      std::vector<Image> frames;
      for (int i : sample_without_replacement(static_cast<int>(video.frames.size()), cfg.frames_per_object, state.rng))
        frames.push_back(video.frames[i]);
      const Reconstruction recon = forward(state.model, frames);
      const PlaneLeaf leaf(recon.triplane);

      if (cfg.use_sds) {
        const auto poses = sample_orbit_poses(cfg.sds_views, cfg.orbit_radius, cfg.sds_theta, state.rng);
        for (const auto& pose : poses) {
          RenderOutput out = render(leaf.leaf, state.model.decoder, orbit_camera(pose, res), rc, &state.rng);
          const int t = static_cast<int>(state.rng.uniform_int(std::min(cfg.sds_t_min, cap), cap));
          const Image g = sds_gradient(out.image(), video.frames.front(), pose, t, *dens[o], sched, cfg.sds_weighting,
                                       state.rng);
          ad::weighted_sum({ad::dot_constant(out.rgb, g.pixels)}, {1.0 / (rec.beta * cfg.sds_views * b)}).backward();
          rec.sds_grad_norm += grad_norm(g);
          ++sds_count;
        }
      }
      const auto& set = state.pseudo[o].views;
      if (!set.empty()) {
        const auto pick = sample_without_replacement(static_cast<int>(set.size()), cfg.pseudo_views_per_step, state.rng);
        const double m = static_cast<double>(pick.size());
        for (int i : pick) {
          RenderOutput out = render(leaf.leaf, state.model.decoder, orbit_camera(set[i].pose, res), rc, &state.rng);
          double e = 0.0, p = 0.0;
          pseudo_term(out.rgb, set[i].image, cfg.lambda_perceptual, 1.0 / (m * b), e, p).backward();
          rec.loss_mse += e / (m * b);
          rec.loss_perc += p / (m * b);
        }
        rec.pseudo_views += static_cast<int>(set.size());
      }
      leaf.flush_into(recon.triplane);
    }
    if (sds_count > 0) rec.sds_grad_norm /= sds_count;
    ctx.finish_step(rec);
  }
  if (hooks.on_generation) hooks.on_generation(state, -1);
}

void train_posed(TrainState& state, const std::vector<PosedVideo>& data, const TrainHooks& hooks,
                 std::optional<std::int64_t> until_step) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_posed: empty dataset");
  if (data.size() != state.pseudo.size()) throw std::invalid_argument("train_posed: state/dataset object count mismatch");
  for (const auto& v : data)
    if (v.video.frames.empty() || v.poses.size() != v.video.frames.size())
      throw std::invalid_argument("train_posed: video " + v.video.object_id + " needs one pose per frame");
  const std::int64_t until = resolve_until(state, until_step);
  const int res = cfg.render_resolution;
  const RenderConfig rc = train_render_config(cfg);
  StepContext ctx(state, hooks);
  const int n_obj = static_cast<int>(data.size());

  while (state.step < until) {
    const std::int64_t s = state.step;
    MetricRecord rec;
    rec.step = s;
    rec.lr = learning_rate_at(s, cfg);
    ctx.begin_step();
    const auto batch = sample_without_replacement(n_obj, cfg.batch_objects, state.rng);
    const double b = static_cast<double>(batch.size());
    for (int o : batch) {
      const auto& pv = data[o];
      const int n = static_cast<int>(pv.video.frames.size());
      std::vector<Image> frames;
      for (int i : sample_without_replacement(n, cfg.frames_per_object, state.rng)) frames.push_back(pv.video.frames[i]);
      const Reconstruction recon = forward(state.model, frames);
      const PlaneLeaf leaf(recon.triplane);
      const auto targets = sample_without_replacement(n, cfg.posed_views_per_step, state.rng);
      const double m = static_cast<double>(targets.size());
      for (int j : targets) {
        const OrbitPose pose = relative_to_reference(pv.poses[j], pv.poses.front(), cfg.orbit_radius);
        RenderOutput out = render(leaf.leaf, state.model.decoder, orbit_camera(pose, res), rc, &state.rng);
        double e = 0.0, p = 0.0;
        pseudo_term(out.rgb, pv.video.frames[j], cfg.lambda_perceptual, 1.0 / (m * b), e, p).backward();
        rec.loss_mse += e / (m * b);
        rec.loss_perc += p / (m * b);
      }
      leaf.flush_into(recon.triplane);
    }
    ctx.finish_step(rec);
  }
  if (hooks.on_generation) hooks.on_generation(state, -1);
}

}  // namespace posefree
