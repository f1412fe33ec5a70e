#include "posefree/config.hpp"

#include <functional>
#include <map>
#include <stdexcept>

#include "posefree/synthetic_data.hpp"

namespace posefree {

namespace {

using Json = nlohmann::json;

template <class Cfg>
struct Binding {
  ConfigField field;
  std::function<Json(const Cfg&)> get;
  std::function<void(Cfg&, const Json&)> set;
};

template <class T>
T typed(const Json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
    } else {
      if (!v.is_string()) throw std::invalid_argument("expected a string");
    }
    return v.get<T>();
  } catch (const std::exception& e) {
    throw std::invalid_argument("config key '" + key + "': " + e.what());
  }
}

#define FIELD(Cfg, key, member, desc)                                                                  \
  Binding<Cfg> {                                                                                     \
    ConfigField{key, desc}, [](const Cfg& c) { return Json(c.member); },                             \
        [](Cfg& c, const Json& v) { c.member = typed<std::decay_t<decltype(c.member)>>(v, key); } \
  }

const std::vector<Binding<TrainConfig>>& train_bindings() {
  static const std::vector<Binding<TrainConfig>> b = {
      FIELD(TrainConfig, "model_preset", model_preset, "model size preset: paper, desk or tiny (default desk)"),
      FIELD(TrainConfig, "decoder_density_bias", decoder_density_bias, "initial density bias of the decoder (default 0)"),
      FIELD(TrainConfig, "learning_rate", learning_rate, "peak Adam learning rate (default 1e-4)"),
      FIELD(TrainConfig, "adam_beta2", adam_beta2, "Adam second-moment decay (default 0.999)"),
      FIELD(TrainConfig, "warmup_steps", warmup_steps, "linear warmup steps (default 1000)"),
      FIELD(TrainConfig, "total_steps", total_steps, "total optimizer steps (default 20000)"),
      FIELD(TrainConfig, "batch_objects", batch_objects, "objects per step (default 4)"),
      FIELD(TrainConfig, "frames_per_object", frames_per_object, "frames fed to the aligner per object and step (default 8)"),
      FIELD(TrainConfig, "sds_views", sds_views, "random SDS views per object and step (default 4)"),
      FIELD(TrainConfig, "sds_theta", sds_theta, "polar half-range of SDS views, radians (default pi/18)"),
      FIELD(TrainConfig, "sds_t_min", sds_t_min, "smallest SDS timestep (default 20)"),
      Binding<TrainConfig>{ConfigField{"sds_weighting", "SDS weight w(t): one_minus_alpha_bar or unit"},
                           [](const TrainConfig& c) { return Json(to_string(c.sds_weighting)); },
                           [](TrainConfig& c, const Json& v) {
                             c.sds_weighting = parse_sds_weighting(typed<std::string>(v, "sds_weighting"));
                           }},
      FIELD(TrainConfig, "lambda_perceptual", lambda_perceptual, "perceptual loss weight (default 1)"),
      FIELD(TrainConfig, "beta_start", beta_start, "SDS divisor at step 0 (default 1)"),
      FIELD(TrainConfig, "beta_end", beta_end, "SDS divisor at the last step (default 25000)"),
      FIELD(TrainConfig, "aug_interval_steps", augmentation.interval_steps, "steps between pseudo-view generations (default 2000)"),
      FIELD(TrainConfig, "aug_k0", augmentation.k0, "pseudo-views in generation 0 (default 6)"),
      FIELD(TrainConfig, "aug_k_increment", augmentation.k_increment, "extra pseudo-views per generation (default 5)"),
      FIELD(TrainConfig, "aug_t_floor_fraction", augmentation.t_floor_fraction, "lower bound of the timestep schedule as a fraction of t_max (default 0.2)"),
      FIELD(TrainConfig, "aug_t_max", augmentation.t_max, "diffusion timesteps (default 1000)"),
      FIELD(TrainConfig, "aug_theta", augmentation.theta_aug, "polar half-range of pseudo-views, radians (default 0)"),
      FIELD(TrainConfig, "aug_replace", augmentation.replace, "discard older generations when a new one arrives (default false)"),
      FIELD(TrainConfig, "max_generations", max_generations, "cap on generation events, negative for none (default -1)"),
      FIELD(TrainConfig, "pseudo_views_per_step", pseudo_views_per_step, "pseudo-views rendered per object and step (default 4)"),
      FIELD(TrainConfig, "use_sds", use_sds, "enable the SDS term (default true)"),
      FIELD(TrainConfig, "use_augmentation", use_augmentation, "enable generations after the first (default true)"),
      FIELD(TrainConfig, "prior", prior, "diffusion prior: oracle or toy (default oracle)"),
      FIELD(TrainConfig, "render_resolution", render_resolution, "training and evaluation render size (default 64)"),
      FIELD(TrainConfig, "samples_per_ray", samples_per_ray, "quadrature samples per ray (default 64)"),
      FIELD(TrainConfig, "orbit_radius", orbit_radius, "camera orbit radius of the model frame (default 2)"),
      FIELD(TrainConfig, "posed_views_per_step", posed_views_per_step, "target frames per object and step in posed mode (default 2)"),
      FIELD(TrainConfig, "seed", seed, "random seed (default 0)"),
  };
  return b;
}

const std::vector<Binding<RunConfig>>& run_bindings() {
  static const std::vector<Binding<RunConfig>> b = {
      FIELD(RunConfig, "dataset", dataset, "dataset root written by gen-data"),
      FIELD(RunConfig, "out", out, "output directory"),
      FIELD(RunConfig, "mode", mode, "training mode: pose_free or posed (default pose_free)"),
      FIELD(RunConfig, "toy_prior", toy_prior, "ToyDenoiser weights file used when prior = toy"),
      FIELD(RunConfig, "workers", workers, "worker cap (default 1)"),
  };
  return b;
}

#undef FIELD

template <class Cfg>
std::vector<ConfigField> fields_of(const std::vector<Binding<Cfg>>& bs) {
  std::vector<ConfigField> out;
  for (const auto& b : bs) out.push_back(b.field);
  return out;
}

}  // namespace

const std::vector<ConfigField>& train_config_fields() {
  static const auto f = fields_of(train_bindings());
  return f;
}

const std::vector<ConfigField>& run_config_fields() {
  static const auto f = [] {
    auto out = fields_of(run_bindings());
    const auto& t = train_config_fields();
    out.insert(out.end(), t.begin(), t.end());
    return out;
  }();
  return f;
}

nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& b : train_bindings()) j[b.field.key] = nlohmann::ordered_json::parse(b.get(cfg).dump());
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  TrainConfig cfg = base;
  std::map<std::string, const Binding<TrainConfig>*> by_key;
  for (const auto& b : train_bindings()) by_key[b.field.key] = &b;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto found = by_key.find(it.key());
    if (found == by_key.end()) throw std::invalid_argument("config: unknown key '" + it.key() + "'");
    found->second->set(cfg, it.value());
  }
  return cfg;
}

nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& b : run_bindings()) j[b.field.key] = nlohmann::ordered_json::parse(b.get(cfg).dump());
  const auto train = train_config_to_json(cfg.train);
  for (const auto& [k, v] : train.items()) j[k] = v;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  RunConfig cfg = base;
  std::map<std::string, const Binding<RunConfig>*> by_key;
  for (const auto& b : run_bindings()) by_key[b.field.key] = &b;
  nlohmann::json rest = nlohmann::json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto found = by_key.find(it.key());
    if (found == by_key.end())
      rest[it.key()] = it.value();
    else
      found->second->set(cfg, it.value());
  }
  cfg.train = train_config_from_json(rest, cfg.train);
  if (cfg.mode != "pose_free" && cfg.mode != "posed")
    throw std::invalid_argument("config: mode must be pose_free or posed");
  if (cfg.workers < 1) throw std::invalid_argument("config: workers must be >= 1");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace posefree
