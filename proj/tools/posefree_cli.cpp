// posefree: dataset generation, training, reconstruction, evaluation, mesh
// export and ablations from the command line.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <numbers>
#include <sstream>

#include "posefree/checkpoint.hpp"
#include "posefree/config.hpp"
#include "posefree/evaluation.hpp"
#include "posefree/toy_denoiser.hpp"

namespace fs = std::filesystem;
using namespace posefree;

namespace {

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  const std::string text = j.dump(2) + "\n";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

std::string dashed(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

// Flag values for config keys, kept as raw strings until the merge.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "JSON run config; flags override its values")->check(CLI::ExistingFile);
    for (const auto& f : run_config_fields()) cmd.add_option("--" + dashed(f.key), values[f.key], f.description);
  }

  // Defaults < config file < flags.
  RunConfig resolve(const CLI::App& cmd) const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    const auto current = run_config_to_json(cfg);
    nlohmann::json overrides = nlohmann::json::object();
    for (const auto& [key, raw] : values) {
      if (cmd.count("--" + dashed(key)) == 0) continue;
      if (current.at(key).is_string()) {
        overrides[key] = raw;
      } else {
        try {
          overrides[key] = nlohmann::json::parse(raw);
        } catch (const nlohmann::json::parse_error&) {
          throw std::invalid_argument("flag --" + dashed(key) + ": cannot parse '" + raw + "'");
        }
      }
    }
    return run_config_from_json(overrides, cfg);
  }
};

fs::path require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw std::invalid_argument(std::string("missing required ") + flag);
  return value;
}

// Keeps metric lines of steps before `step`; used when resuming.
void truncate_metrics(const fs::path& path, std::int64_t step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (nlohmann::json::parse(line).at("step").get<std::int64_t>() < step) kept += line + "\n";
  }
  in.close();
  write_file_atomic(path, std::span<const char>(kept.data(), kept.size()));
}

int cmd_gen_data(const DatasetOptions& opt, const std::string& out) {
  const DatasetManifest m = build_dataset(opt, require_path(out, "--out"));
  std::cout << nlohmann::json{{"dataset", m.root.string()}, {"objects", m.object_ids.size()}}.dump() << "\n";
  return 0;
}

struct TrainArgs {
  std::int64_t steps = -1;
  std::int64_t stop_at = -1;
  std::string resume;
  std::int64_t checkpoint_every = 0;
  std::int64_t eval_every = 0;
};

int cmd_train(const RunConfig& run, const TrainArgs& args) {
  const fs::path out = require_path(run.out, "--out");
  const fs::path dataset = require_path(run.dataset, "--dataset");
  const DatasetManifest manifest = load_manifest(dataset);
  fs::create_directories(out);
  const fs::path metrics = out / "metrics.jsonl";

  TrainState state = [&] {
    if (!args.resume.empty()) {
      TrainState s = load_checkpoint(args.resume);
      if (args.steps >= 0) s.config.total_steps = args.steps;
      truncate_metrics(metrics, s.step);
      return s;
    }
    TrainConfig cfg = run.train;
    if (args.steps >= 0) cfg.total_steps = args.steps;
    fs::remove(metrics);
    return init_train_state(cfg, manifest.object_ids.size());
  }();
  if (state.pseudo.size() != manifest.object_ids.size())
    throw std::invalid_argument("checkpoint object count differs from the dataset");
  RunConfig echo = run;
  echo.train = state.config;
  write_json(out / "config.json", run_config_to_json(echo));

  TrainHooks hooks;
  hooks.metrics_path = metrics;
  hooks.checkpoint_path = out / "checkpoint.ckpt";
  hooks.checkpoint_every = args.checkpoint_every;
  const auto until = args.stop_at >= 0 ? std::optional<std::int64_t>(args.stop_at) : std::nullopt;
  if (run.mode == "pose_free") {
    hooks.pseudo_dump_dir = out / "pseudo_views";
    const auto videos = load_unposed_dataset(manifest);
    train_pose_free(state, videos, dataset_priors(manifest, state.config.prior, run.toy_prior, state.config.orbit_radius),
                    hooks, until);
  } else {
    std::vector<PosedVideo> posed;
    std::vector<UnposedVideo> videos;
    std::vector<EvalSidecar> sidecars;
    for (const auto& id : manifest.object_ids) {
      posed.push_back(load_posed_video(dataset, id));
      videos.push_back(posed.back().video);
      sidecars.push_back(load_eval_sidecar(dataset, id));
    }
    if (args.eval_every > 0)
      hooks.holdout_psnr = [&](const TrainState& s) -> std::optional<double> {
        if (s.step % args.eval_every != 0) return std::nullopt;
        return mean_holdout_psnr(s.model, s.config, videos, sidecars);
      };
    train_posed(state, posed, hooks, until);
  }
  save_checkpoint(out / "checkpoint.ckpt", state);
  std::cout << nlohmann::json{{"checkpoint", (out / "checkpoint.ckpt").string()}, {"step", state.step}}.dump() << "\n";
  return 0;
}

int cmd_reconstruct(const std::string& checkpoint, const std::string& video_dir, const std::string& out_dir, int views) {
  const TrainState state = load_checkpoint(require_path(checkpoint, "--checkpoint"));
  const fs::path dir = fs::absolute(require_path(video_dir, "--video")).lexically_normal();
  const fs::path out = require_path(out_dir, "--out");
  const UnposedVideo video = load_unposed_video(dir.parent_path(), dir.filename().string());
  const Reconstruction rec = reconstruct(video, state.model);
  write_triplane_dump(out / "triplane.json", rec.triplane, state.model.decoder);
  write_png(out / "turntable.png", turntable_strip(rec.triplane, state.model, state.config, views));
  std::cout << nlohmann::json{{"triplane", (out / "triplane.json").string()}, {"turntable", (out / "turntable.png").string()}}.dump()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const std::string& out, const std::string& tag) {
  const TrainState state = load_checkpoint(require_path(checkpoint, "--checkpoint"));
  const EvalReport report = evaluate_dataset(state.model, state.config, require_path(dataset, "--dataset"), tag);
  write_json(fs::path(require_path(out, "--out")) / "report.json", report_to_json(report));
  std::cout << nlohmann::json{{"psnr", report.psnr}, {"ssim", report.ssim}, {"perceptual", report.perceptual}}.dump() << "\n";
  return 0;
}

int cmd_export_mesh(const std::string& triplane, const std::string& out, int grid, double iso) {
  const auto [tp, dec] = read_triplane_dump(require_path(triplane, "--triplane"));
  const TriangleMesh mesh = export_mesh(tp, dec, grid, iso);
  if (mesh.empty_warning) std::cerr << nlohmann::json{{"warning", "empty mesh: iso level not crossed"}}.dump() << "\n";
  write_obj(require_path(out, "--out"), mesh);
  std::cout << nlohmann::json{{"vertices", mesh.vertices.size()}, {"faces", mesh.faces.size()}}.dump() << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& run, std::int64_t steps, const std::vector<std::string>& variants) {
  const fs::path out = require_path(run.out, "--out");
  const fs::path dataset = require_path(run.dataset, "--dataset");
  TrainConfig base = run.train;
  if (steps >= 0) base.total_steps = steps;
  const DatasetManifest manifest = load_manifest(dataset);
  RunConfig echo = run;
  echo.train = base;
  write_json(out / "config.json", run_config_to_json(echo));
  const auto runs = run_ablation_suite(dataset, base,
                                       dataset_priors(manifest, base.prior, run.toy_prior, base.orbit_radius),
                                       variants.empty() ? ablation_tags() : variants, out);
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    write_json(out / r.report.tag / "report.json", report_to_json(r.report));
    all.push_back({{"tag", r.report.tag}, {"psnr", r.report.psnr}, {"ssim", r.report.ssim}, {"perceptual", r.report.perceptual}});
  }
  write_json(out / "ablation.json", all);
  std::cout << all.dump() << "\n";
  return 0;
}

struct PriorArgs {
  std::string dataset;
  std::string out;
  int steps = 3000;
  int batch = 8;
  double learning_rate = 2e-3;
  int channels = 16;
  int bank_views = 64;
  std::uint64_t seed = 0;
};

int cmd_train_prior(const PriorArgs& a) {
  const DatasetManifest manifest = load_manifest(require_path(a.dataset, "--dataset"));
  std::vector<PriorScene> scenes;
  for (const auto& id : manifest.object_ids) scenes.push_back(load_prior_scene(manifest.root, id));
  Rng rng(a.seed);
  ToyDenoiser den(ToyDenoiserConfig{manifest.resolution, a.channels}, NoiseSchedule::cosine(), rng);
  ToyTrainOptions opt;
  opt.steps = a.steps;
  opt.batch = a.batch;
  opt.learning_rate = a.learning_rate;
  opt.bank_views = a.bank_views;
  opt.seed = a.seed;
  const double loss = train_toy_denoiser(den, scenes, opt);
  den.save(require_path(a.out, "--out"));
  std::cout << nlohmann::json{{"weights", a.out}, {"loss", loss}}.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-free tri-plane reconstruction from unposed videos"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "posefree 1.0");

  DatasetOptions gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a procedural dataset");
  gen_cmd->add_option("--objects", gen.n_objects, "number of objects")->capture_default_str();
  gen_cmd->add_option("--frames", gen.frames_per_object, "frames per video")->capture_default_str();
  gen_cmd->add_option("--holdout", gen.holdout_per_object, "held-out views per object")->capture_default_str();
  gen_cmd->add_option("--resolution", gen.resolution, "image size")->capture_default_str();
  gen_cmd->add_option("--samples-per-ray", gen.samples_per_ray, "renderer samples per ray")->capture_default_str();
  gen_cmd->add_option("--orbit-radius", gen.orbit_radius, "camera orbit radius")->capture_default_str();
  gen_cmd->add_option("--polar-range", gen.polar_range, "polar half-range, radians")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "random seed")->capture_default_str();
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  int gen_workers = 1;
  gen_cmd->add_option("--workers", gen_workers, "worker cap")->capture_default_str();

  ConfigFlags train_flags;
  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train pose-free or with known poses");
  train_flags.attach(*train_cmd);
  train_cmd->add_option("--steps", train_args.steps, "total steps (overrides total_steps)");
  train_cmd->add_option("--stop-at", train_args.stop_at, "stop after this many steps; the schedule still spans total steps");
  train_cmd->add_option("--resume", train_args.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--checkpoint-every", train_args.checkpoint_every, "checkpoint interval in steps (0: end only)");
  train_cmd->add_option("--eval-every", train_args.eval_every, "posed mode: held-out PSNR interval in steps");

  std::string rec_ckpt, rec_video, rec_out;
  int rec_views = 8;
  std::uint64_t rec_seed = 0;
  auto* rec_cmd = app.add_subcommand("reconstruct", "One forward pass on a video directory");
  rec_cmd->add_option("--checkpoint", rec_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  rec_cmd->add_option("--video", rec_video, "object directory containing frames/")->required()->check(CLI::ExistingDirectory);
  rec_cmd->add_option("--out", rec_out, "output directory")->required();
  rec_cmd->add_option("--views", rec_views, "turntable views")->capture_default_str();
  rec_cmd->add_option("--seed", rec_seed, "unused; accepted for uniformity");

  std::string eval_ckpt, eval_data, eval_out, eval_tag = "eval";
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on held-out views");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", eval_data, "dataset root")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", eval_out, "output directory")->required();
  eval_cmd->add_option("--tag", eval_tag, "report tag")->capture_default_str();
  eval_cmd->add_option("--seed", eval_seed, "unused; accepted for uniformity");

  std::string mesh_tp, mesh_out;
  int mesh_grid = 64;
  double mesh_iso = 20.0;
  auto* mesh_cmd = app.add_subcommand("export-mesh", "Marching cubes on a tri-plane dump");
  mesh_cmd->add_option("--triplane", mesh_tp, "triplane.json from reconstruct")->required()->check(CLI::ExistingFile);
  mesh_cmd->add_option("--out", mesh_out, "output OBJ file")->required();
  mesh_cmd->add_option("--grid", mesh_grid, "lattice size per axis")->capture_default_str();
  mesh_cmd->add_option("--iso", mesh_iso, "density level")->capture_default_str();

  ConfigFlags ablate_flags;
  std::int64_t ablate_steps = -1;
  std::vector<std::string> ablate_variants;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate full, no_aug and no_weak");
  ablate_flags.attach(*ablate_cmd);
  ablate_cmd->add_option("--steps", ablate_steps, "total steps per variant (overrides total_steps)");
  ablate_cmd->add_option("--variants", ablate_variants, "subset of full, no_aug, no_weak");

  PriorArgs prior;
  auto* prior_cmd = app.add_subcommand("train-prior", "Fit a ToyDenoiser on a dataset's scenes");
  prior_cmd->add_option("--dataset", prior.dataset, "dataset root")->required()->check(CLI::ExistingDirectory);
  prior_cmd->add_option("--out", prior.out, "weights file")->required();
  prior_cmd->add_option("--steps", prior.steps, "optimizer steps")->capture_default_str();
  prior_cmd->add_option("--batch", prior.batch, "samples per step")->capture_default_str();
  prior_cmd->add_option("--learning-rate", prior.learning_rate, "peak learning rate")->capture_default_str();
  prior_cmd->add_option("--channels", prior.channels, "U-net base channels")->capture_default_str();
  prior_cmd->add_option("--bank-views", prior.bank_views, "rendered views per scene")->capture_default_str();
  prior_cmd->add_option("--seed", prior.seed, "random seed")->capture_default_str();

  std::string command = "posefree";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json{{"error", e.what()}, {"kind", "usage"}}.dump() << "\n";
    return 2;
  }

  try {
    if (gen_cmd->parsed()) {
      command = "gen-data";
      return cmd_gen_data(gen, gen_out);
    }
    if (train_cmd->parsed()) {
      command = "train";
      return cmd_train(train_flags.resolve(*train_cmd), train_args);
    }
    if (rec_cmd->parsed()) {
      command = "reconstruct";
      return cmd_reconstruct(rec_ckpt, rec_video, rec_out, rec_views);
    }
    if (eval_cmd->parsed()) {
      command = "eval";
      return cmd_eval(eval_ckpt, eval_data, eval_out, eval_tag);
    }
    if (mesh_cmd->parsed()) {
      command = "export-mesh";
      return cmd_export_mesh(mesh_tp, mesh_out, mesh_grid, mesh_iso);
    }
    if (ablate_cmd->parsed()) {
      command = "ablate";
      return cmd_ablate(ablate_flags.resolve(*ablate_cmd), ablate_steps, ablate_variants);
    }
    if (prior_cmd->parsed()) {
      command = "train-prior";
      return cmd_train_prior(prior);
    }
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}, {"command", command}}.dump() << "\n";
    return 1;
  }
  return 1;
}
