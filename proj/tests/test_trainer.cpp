#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "posefree/checkpoint.hpp"
#include "posefree/evaluation.hpp"
#include "posefree/ops.hpp"
#include "posefree/trainer.hpp"

using namespace posefree;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct SmallDataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<UnposedVideo> videos;

  explicit SmallDataset(const std::string& name, int objects = 1) {
    root = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(root);
    DatasetOptions opt;
    opt.n_objects = objects;
    opt.frames_per_object = 4;
    opt.holdout_per_object = 1;
    opt.resolution = 32;
    opt.samples_per_ray = 12;
    opt.seed = 5;
    manifest = build_dataset(opt, root);
    videos = load_unposed_dataset(manifest);
  }
  ~SmallDataset() { std::filesystem::remove_all(root); }
};

TrainConfig small_config(std::int64_t total) {
  TrainConfig cfg;
  cfg.model_preset = "tiny";
  cfg.render_resolution = 32;
  cfg.samples_per_ray = 8;
  cfg.total_steps = total;
  cfg.warmup_steps = 2;
  cfg.learning_rate = 1e-3;
  cfg.batch_objects = 1;
  cfg.frames_per_object = 3;
  cfg.sds_views = 1;
  cfg.pseudo_views_per_step = 2;
  cfg.augmentation.interval_steps = 4;
  cfg.augmentation.k0 = 2;
  cfg.augmentation.k_increment = 1;
  cfg.posed_views_per_step = 1;
  cfg.seed = 17;
  return cfg;
}

ad::Tensor pixels_of(const Image& img, bool grad = true) {
  return ad::Tensor::from_data(img.pixels, {img.height * img.width, 3}, grad);
}

}  // namespace

TEST_CASE("reconstruction loss vanishes when renders match the pseudo-views") {
  Rng rng(1);
  Image target(16, 16);
  for (auto& v : target.pixels) v = rng.uniform();
  const ReconLoss l = recon_loss({pixels_of(target)}, {target}, {}, {}, 1.0, 1.0, 16, 16);
  CHECK(l.mse == 0.0);
  CHECK(l.perceptual == 0.0);
  CHECK(l.value == 0.0);
}

TEST_CASE("hand-computed 2x2 MSE with the SDS term switched off") {
  // Render all 0.5; target pixel values 0, 0.25, 0.5, 1 in every channel.
  Image target(2, 2);
  const double t[4] = {0.0, 0.25, 0.5, 1.0};
  for (int p = 0; p < 4; ++p)
    for (int c = 0; c < 3; ++c) target.pixels[3 * p + c] = t[p];
  auto render = pixels_of(Image(2, 2, 0.5));
  auto sds_render = pixels_of(Image(2, 2, 0.3));
  const ReconLoss l = recon_loss({render}, {target}, {sds_render}, {Image(2, 2, 7.0)}, 0.0, kInf, 2, 2);
  // (0.25 + 0.0625 + 0 + 0.25) / 4
  CHECK(l.mse == doctest::Approx(0.140625));
  CHECK(l.value == doctest::Approx(0.140625));
  l.total.backward();
  for (int p = 0; p < 4; ++p)
    for (int c = 0; c < 3; ++c) CHECK(render.grad()[3 * p + c] == doctest::Approx(2.0 * (0.5 - t[p]) / 12.0));
  for (double g : sds_render.grad()) CHECK(g == 0.0);
}

TEST_CASE("SDS surrogate injects g / (beta k) at each SDS render") {
  Rng rng(2);
  std::vector<ad::Tensor> renders;
  std::vector<Image> grads;
  for (int j = 0; j < 3; ++j) {
    renders.push_back(pixels_of(Image(4, 4, 0.5)));
    Image g(4, 4);
    for (auto& v : g.pixels) v = rng.normal();
    grads.push_back(g);
  }
  const double beta = 8.0;
  const ReconLoss l = recon_loss({}, {}, renders, grads, 1.0, beta, 4, 4);
  CHECK(l.value == 0.0);
  double mean_norm = 0.0;
  for (const auto& g : grads) {
    double s = 0.0;
    for (double v : g.pixels) s += v * v;
    mean_norm += std::sqrt(s) / 3.0;
  }
  CHECK(l.sds_grad_norm == doctest::Approx(mean_norm));
  l.total.backward();
  for (int j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < grads[j].size(); ++i) CHECK(renders[j].grad()[i] == doctest::Approx(grads[j].pixels[i] / (beta * 3)));
}

TEST_CASE("loss value is mean MSE plus lambda times mean perceptual") {
  Rng rng(3);
  std::vector<ad::Tensor> renders;
  std::vector<Image> targets;
  double mse_sum = 0.0, perc_sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    Image a(16, 16), b(16, 16);
    for (auto& v : a.pixels) v = rng.uniform();
    for (auto& v : b.pixels) v = rng.uniform();
    renders.push_back(pixels_of(a));
    targets.push_back(b);
    mse_sum += mse(a, b);
    perc_sum += perceptual(a, b);
  }
  const double lambda = 0.7;
  const ReconLoss l = recon_loss(renders, targets, {}, {}, lambda, 1.0, 16, 16);
  CHECK(l.mse == doctest::Approx(mse_sum / 3));
  CHECK(l.perceptual == doctest::Approx(perc_sum / 3));
  CHECK(l.value == doctest::Approx(mse_sum / 3 + lambda * perc_sum / 3));
  CHECK(l.total.item() == doctest::Approx(l.value));
}

TEST_CASE("reconstruction loss rejects malformed inputs") {
  const Image img(4, 4, 0.5);
  CHECK_THROWS_AS(recon_loss({pixels_of(img)}, {}, {}, {}, 1.0, 1.0, 4, 4), std::invalid_argument);
  CHECK_THROWS_AS(recon_loss({}, {}, {pixels_of(img)}, {}, 1.0, 1.0, 4, 4), std::invalid_argument);
  CHECK_THROWS_AS(recon_loss({pixels_of(img)}, {img}, {}, {}, 1.0, 0.0, 4, 4), std::invalid_argument);
  CHECK_THROWS_AS(recon_loss({pixels_of(img)}, {Image(4, 5)}, {}, {}, 1.0, 1.0, 4, 4), std::invalid_argument);
}

TEST_CASE("learning rate warms up linearly then anneals on a cosine") {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.warmup_steps = 100;
  cfg.total_steps = 1100;
  CHECK(learning_rate_at(0, cfg) == 0.0);
  CHECK(learning_rate_at(50, cfg) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(100, cfg) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(600, cfg) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(350, cfg) == doctest::Approx(1e-3 * 0.5 * (1 + std::cos(std::numbers::pi / 4))));
  CHECK(learning_rate_at(1100, cfg) == doctest::Approx(0.0));
}

TEST_CASE("first Adam step moves each entry by lr against its gradient sign") {
  auto w = ad::Tensor::from_data({1.0, -2.0, 0.5}, {3}, true);
  ad::dot_constant(w, std::vector<double>{3.0, -0.01, 0.0}).backward();
  AdamState adam;
  adam.step({w}, 0.1);
  CHECK(w.values()[0] == doctest::Approx(0.9));
  CHECK(w.values()[1] == doctest::Approx(-1.9));
  CHECK(w.values()[2] == doctest::Approx(0.5));
  CHECK(adam.t == 1);
}

TEST_CASE("config validation rejects bad fields") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.batch_objects = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.prior = "clip";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.samples_per_ray = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.beta_start = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.model_preset = "huge";
  CHECK_THROWS_AS(init_train_state(bad, 1), std::invalid_argument);
}

TEST_CASE("reference-relative poses remove the frame 0 azimuth") {
  const OrbitPose ref = make_orbit_pose(3.0, 1.0, 0.1);
  const OrbitPose p = relative_to_reference(make_orbit_pose(3.0, 2.5, -0.05), ref, 2.0);
  CHECK(p.radius == doctest::Approx(2.0));
  CHECK(p.azimuth == doctest::Approx(1.5));
  CHECK(p.polar == -0.05);
  CHECK(relative_to_reference(ref, ref, 2.0).azimuth == doctest::Approx(0.0));
}

TEST_CASE("zero-step run leaves the model untouched") {
  SmallDataset data("posefree_test_zero_step");
  TrainState state = init_train_state(small_config(0), 1);
  const auto before = state.model.parameters()[0].vector();
  const auto metrics = data.root / "metrics.jsonl";
  std::vector<int> gens;
  TrainHooks hooks;
  hooks.metrics_path = metrics;
  hooks.on_generation = [&](const TrainState&, int g) { gens.push_back(g); };
  train_pose_free(state, data.videos, dataset_priors(data.manifest, "oracle", {}, 2.0), hooks);
  CHECK(state.step == 0);
  CHECK(state.history.empty());
  CHECK(state.model.parameters()[0].vector() == before);
  CHECK((!std::filesystem::exists(metrics) || std::filesystem::file_size(metrics) == 0));
  CHECK_THROWS_AS(train_pose_free(state, data.videos, dataset_priors(data.manifest, "oracle", {}, 2.0), {}, 5),
                  std::invalid_argument);
}

TEST_CASE("pose-free training grows the pseudo-view set per generation") {
  SmallDataset data("posefree_test_generations");
  TrainConfig cfg = small_config(9);
  TrainState state = init_train_state(cfg, 1);
  std::vector<std::pair<std::int64_t, int>> events;
  TrainHooks hooks;
  hooks.on_generation = [&](const TrainState& s, int g) { events.emplace_back(s.step, g); };
  train_pose_free(state, data.videos, dataset_priors(data.manifest, "oracle", {}, 2.0), hooks);
  CHECK(state.step == 9);
  REQUIRE(state.history.size() == 9);
  CHECK(events == std::vector<std::pair<std::int64_t, int>>{{0, 0}, {4, 1}, {8, 2}, {9, -1}});
  CHECK(state.pseudo[0].generations == 3);
  CHECK(state.pseudo[0].size() == 2 + 3 + 4);
  for (const auto& v : state.pseudo[0].views) CHECK(v.created_at_step == 4 * v.generation);
  for (const auto& r : state.history) {
    CHECK(std::isfinite(r.loss_mse));
    CHECK(r.beta == doctest::Approx(beta_schedule(r.step, 9)));
    CHECK(r.lr == doctest::Approx(learning_rate_at(r.step, cfg)));
    CHECK(r.sds_grad_norm > 0.0);
  }
}

TEST_CASE("ablation switches reach the training loop") {
  SmallDataset data("posefree_test_ablation_switches");
  const auto priors = dataset_priors(data.manifest, "oracle", {}, 2.0);
  TrainState no_aug = init_train_state(ablation_config(small_config(9), "no_aug"), 1);
  train_pose_free(no_aug, data.videos, priors);
  CHECK(no_aug.pseudo[0].generations == 1);
  CHECK(no_aug.pseudo[0].size() == 2);

  TrainState no_weak = init_train_state(ablation_config(small_config(5), "no_weak"), 1);
  train_pose_free(no_weak, data.videos, priors);
  for (const auto& r : no_weak.history) CHECK(r.sds_grad_norm == 0.0);

  TrainConfig capped = small_config(9);
  capped.max_generations = 2;
  TrainState cap = init_train_state(capped, 1);
  train_pose_free(cap, data.videos, priors);
  CHECK(cap.pseudo[0].generations == 2);
}

TEST_CASE("resuming from a checkpoint reproduces an uninterrupted run") {
  SmallDataset data("posefree_test_resume", 2);
  const auto priors = dataset_priors(data.manifest, "oracle", {}, 2.0);
  TrainConfig cfg = small_config(10);
  cfg.batch_objects = 2;

  TrainState straight = init_train_state(cfg, 2);
  train_pose_free(straight, data.videos, priors);

  const auto ckpt = data.root / "run.ckpt";
  TrainState first = init_train_state(cfg, 2);
  train_pose_free(first, data.videos, priors, {}, 5);
  save_checkpoint(ckpt, first);
  TrainState resumed = load_checkpoint(ckpt);
  CHECK(resumed.step == 5);
  CHECK(resumed.history.size() == 5);
  train_pose_free(resumed, data.videos, priors);

  REQUIRE(resumed.history.size() == straight.history.size());
  for (std::size_t i = 0; i < straight.history.size(); ++i) {
    CHECK(resumed.history[i].loss_mse == straight.history[i].loss_mse);
    CHECK(resumed.history[i].loss_perc == straight.history[i].loss_perc);
    CHECK(resumed.history[i].sds_grad_norm == straight.history[i].sds_grad_norm);
  }
  const auto a = straight.model.parameters(), b = resumed.model.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].vector() == b[i].vector());
}

TEST_CASE("known-pose training lowers the reconstruction loss") {
  SmallDataset data("posefree_test_posed");
  std::vector<PosedVideo> posed{load_posed_video(data.root, data.manifest.object_ids[0])};
  TrainConfig cfg = small_config(40);
  cfg.learning_rate = 3e-3;
  cfg.lambda_perceptual = 0.0;
  TrainState state = init_train_state(cfg, 1);
  train_posed(state, posed);
  REQUIRE(state.history.size() == 40);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 5; ++i) {
    early += state.history[i].loss_mse;
    late += state.history[35 + i].loss_mse;
  }
  CHECK(late < 0.7 * early);
}

TEST_CASE("metrics lines carry the documented keys in order") {
  MetricRecord r;
  r.step = 3;
  r.loss_mse = 0.5;
  r.beta = 2.0;
  CHECK(metric_json_line(r) == R"({"step":3,"loss_mse":0.5,"loss_perc":0.0,"sds_grad_norm":0.0,"beta":2.0,"lr":0.0})");
  r.psnr_holdout = 21.0;
  CHECK(metric_json_line(r).find(R"("psnr_holdout":21.0)") != std::string::npos);
}
