#include "posefree/synthetic_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace posefree {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

const Eigen::Vector3d& light_direction() {
  static const Eigen::Vector3d l = Eigen::Vector3d(0.4, 0.3, 0.85).normalized();
  return l;
}

double union_sdf(const SceneSpec& scene, const Eigen::Vector3d& p) {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& prim : scene.primitives) d = std::min(d, prim.sdf(p));
  return d;
}

std::string kind_name(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::sphere:
      return "sphere";
    case PrimitiveKind::box:
      return "box";
    case PrimitiveKind::torus:
      return "torus";
    case PrimitiveKind::capsule:
      return "capsule";
  }
  return "sphere";
}

PrimitiveKind parse_kind(const std::string& s) {
  if (s == "sphere") return PrimitiveKind::sphere;
  if (s == "box") return PrimitiveKind::box;
  if (s == "torus") return PrimitiveKind::torus;
  if (s == "capsule") return PrimitiveKind::capsule;
  throw std::invalid_argument("unknown primitive kind '" + s + "'");
}

nlohmann::json vec_json(const Eigen::Vector3d& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }
Eigen::Vector3d json_vec(const nlohmann::json& j) {
  return Eigen::Vector3d(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d.png", i);
  return buf;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file_atomic(path, text);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

double Primitive::sdf(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d q = p - center;
  switch (kind) {
    case PrimitiveKind::sphere:
      return q.norm() - size.x();
    case PrimitiveKind::box: {
      const Eigen::Vector3d d = q.cwiseAbs() - size;
      return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
    }
    case PrimitiveKind::torus: {
      const double ring = std::hypot(q.x(), q.y()) - size.x();
      return std::hypot(ring, q.z()) - size.y();
    }
    case PrimitiveKind::capsule: {
      const double z = std::clamp(q.z(), -size.x(), size.x());
      return (q - Eigen::Vector3d(0, 0, z)).norm() - size.y();
    }
  }
  return q.norm();
}

double Primitive::bounding_radius() const {
  double reach = 0.0;
  switch (kind) {
    case PrimitiveKind::sphere:
      reach = size.x();
      break;
    case PrimitiveKind::box:
      reach = size.norm();
      break;
    case PrimitiveKind::torus:
    case PrimitiveKind::capsule:
      reach = size.x() + size.y();
      break;
  }
  return center.norm() + reach;
}

SceneSpec generate_scene(std::uint64_t seed) {
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
  SceneSpec scene;
  scene.seed = seed;
  const int count = static_cast<int>(rng.uniform_int(1, 5));
  // Cluster centre off the origin so layouts are generally not symmetric.
  const double phi = rng.uniform(0.0, kTwoPi);
  const double rho = rng.uniform(0.0, 0.25);
  const Eigen::Vector3d cluster(rho * std::cos(phi), rho * std::sin(phi), rng.uniform(-0.1, 0.1));
  for (int i = 0; i < count; ++i) {
    Primitive prim;
    prim.kind = static_cast<PrimitiveKind>(rng.uniform_int(0, 3));
    switch (prim.kind) {
      case PrimitiveKind::sphere:
        prim.size = Eigen::Vector3d(rng.uniform(0.15, 0.4), 0, 0);
        break;
      case PrimitiveKind::box:
        prim.size = Eigen::Vector3d(rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3));
        break;
      case PrimitiveKind::torus:
        prim.size = Eigen::Vector3d(rng.uniform(0.2, 0.35), rng.uniform(0.06, 0.12), 0);
        break;
      case PrimitiveKind::capsule:
        prim.size = Eigen::Vector3d(rng.uniform(0.1, 0.3), rng.uniform(0.08, 0.18), 0);
        break;
    }
    Eigen::Vector3d offset(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    prim.center = cluster + 0.35 * offset;
    prim.albedo = Eigen::Vector3d(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
    // Pull the primitive towards the origin, then shrink it, until it fits.
    const double limit = 0.95;
    while (prim.bounding_radius() > limit && prim.center.norm() > 1e-6) prim.center *= 0.9;
    if (prim.bounding_radius() > limit) prim.size *= limit / prim.bounding_radius();
    scene.primitives.push_back(prim);
  }
  return scene;
}

SceneSpec single_sphere_scene(double radius, const Eigen::Vector3d& albedo) {
  SceneSpec scene;
  Primitive prim;
  prim.size = Eigen::Vector3d(radius, 0, 0);
  prim.albedo = albedo;
  scene.primitives.push_back(prim);
  return scene;
}

SceneSample evaluate_scene(const SceneSpec& scene, const Eigen::Vector3d& p) {
  double density = 0.0;
  Eigen::Vector3d albedo = Eigen::Vector3d::Zero();
  for (const auto& prim : scene.primitives) {
    const double s = scene.peak_density / (1.0 + std::exp(prim.sdf(p) / prim.soft_edge));
    density += s;
    albedo += s * prim.albedo;
  }
  if (density < 1e-9) return SceneSample{Eigen::Vector3d::Zero(), density};
  albedo /= density;
  const double h = 1e-3;
  Eigen::Vector3d grad;
  for (int a = 0; a < 3; ++a) {
    Eigen::Vector3d e = Eigen::Vector3d::Zero();
    e[a] = h;
    grad[a] = union_sdf(scene, p + e) - union_sdf(scene, p - e);
  }
  const double n = grad.norm();
  const double lambert = n > 0 ? std::max(0.0, grad.dot(light_direction()) / n) : 0.0;
  return SceneSample{(albedo * (0.55 + 0.45 * lambert)).cwiseMin(1.0), density};
}

Image render_ground_truth(const SceneSpec& scene, const OrbitPose& pose, int resolution, const RenderConfig& cfg) {
  ad::NoGradGuard guard;
  RenderConfig c = cfg;
  c.background = scene.background;
  c.stratified = false;
  const RayBundle rays = generate_rays(orbit_camera(pose, resolution), c.near_far_margin);
  auto out = render_field(
      rays, c,
      [&](const std::vector<Eigen::Vector3d>& pts) {
        std::vector<double> v(pts.size() * 4);
        for (std::size_t i = 0; i < pts.size(); ++i) {
          const SceneSample s = evaluate_scene(scene, pts[i]);
          v[i * 4] = s.rgb.x();
          v[i * 4 + 1] = s.rgb.y();
          v[i * 4 + 2] = s.rgb.z();
          v[i * 4 + 3] = s.density;
        }
        return ad::Tensor::from_data(std::move(v), {static_cast<std::int64_t>(pts.size()), 4});
      },
      [](const Eigen::Vector3d& p) { return p.cwiseAbs().maxCoeff() <= 1.0; });
  return out.image();
}

void to_json(nlohmann::json& j, const SceneSpec& scene) {
  j = nlohmann::json{{"seed", scene.seed},
                     {"background", vec_json(scene.background)},
                     {"peak_density", scene.peak_density},
                     {"primitives", nlohmann::json::array()}};
  for (const auto& p : scene.primitives)
    j["primitives"].push_back({{"kind", kind_name(p.kind)},
                               {"center", vec_json(p.center)},
                               {"size", vec_json(p.size)},
                               {"albedo", vec_json(p.albedo)},
                               {"soft_edge", p.soft_edge}});
}

void from_json(const nlohmann::json& j, SceneSpec& scene) {
  scene = SceneSpec{};
  scene.seed = j.at("seed").get<std::uint64_t>();
  scene.background = json_vec(j.at("background"));
  scene.peak_density = j.at("peak_density").get<double>();
  for (const auto& p : j.at("primitives")) {
    Primitive prim;
    prim.kind = parse_kind(p.at("kind").get<std::string>());
    prim.center = json_vec(p.at("center"));
    prim.size = json_vec(p.at("size"));
    prim.albedo = json_vec(p.at("albedo"));
    prim.soft_edge = p.at("soft_edge").get<double>();
    scene.primitives.push_back(prim);
  }
  if (scene.primitives.empty()) throw std::invalid_argument("scene has no primitives");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path sidecar_path(const std::filesystem::path& root, const std::string& object_id) {
  return root / object_id / "eval_sidecar.json";
}

DatasetManifest build_dataset(const DatasetOptions& opt, const std::filesystem::path& out_dir) {
  if (opt.n_objects < 1) throw std::invalid_argument("build_dataset: n_objects must be >= 1");
  if (opt.frames_per_object < 1) throw std::invalid_argument("build_dataset: frames_per_object must be >= 1");
  if (opt.holdout_per_object < 0) throw std::invalid_argument("build_dataset: holdout_per_object must be >= 0");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());

  RenderConfig cfg;
  cfg.samples_per_ray = opt.samples_per_ray;
  Rng rng(opt.seed);
  DatasetManifest manifest{out_dir, {}, opt.resolution, opt.frames_per_object};
  for (int obj = 0; obj < opt.n_objects; ++obj) {
    char id[32];
    std::snprintf(id, sizeof id, "obj_%03d", obj);
    const std::filesystem::path dir = out_dir / id;
    std::filesystem::create_directories(dir / "frames");
    std::filesystem::create_directories(dir / "holdout");
    Rng orng = rng.split();
    const SceneSpec scene = generate_scene(opt.seed * 1000003ULL + static_cast<std::uint64_t>(obj));
    const double offset = orng.uniform(0.0, kTwoPi);

    EvalSidecar sidecar{id, {}, {}};
    for (int i = 0; i < opt.frames_per_object; ++i) {
      const OrbitPose pose = make_orbit_pose(opt.orbit_radius, offset + kTwoPi * i / opt.frames_per_object,
                                             orng.uniform(-opt.polar_range, opt.polar_range));
      write_png(dir / "frames" / frame_name(i), render_ground_truth(scene, pose, opt.resolution, cfg));
      sidecar.frame_poses.push_back(pose);
    }
    nlohmann::json side{{"object_id", id}, {"frames", sidecar.frame_poses}, {"holdout", nlohmann::json::array()}};
    for (int i = 0; i < opt.holdout_per_object; ++i) {
      const OrbitPose pose = make_orbit_pose(opt.orbit_radius, offset + orng.uniform(0.0, kTwoPi),
                                             orng.uniform(-opt.polar_range, opt.polar_range));
      const std::string rel = "holdout/" + frame_name(i);
      write_png(dir / rel, render_ground_truth(scene, pose, opt.resolution, cfg));
      side["holdout"].push_back({{"pose", pose}, {"image", rel}});
    }
    write_json(sidecar_path(out_dir, id), side);
    write_json(dir / "prior_scene.json", {{"object_id", id},
                                          {"scene", scene},
                                          {"reference_pose", sidecar.frame_poses.front()},
                                          {"samples_per_ray", opt.samples_per_ray}});
    manifest.object_ids.push_back(id);
  }
  write_json(out_dir / "manifest.json", {{"objects", manifest.object_ids},
                                         {"resolution", opt.resolution},
                                         {"frames_per_object", opt.frames_per_object}});
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  const auto j = read_json(root / "manifest.json");
  DatasetManifest m;
  m.root = root;
  m.object_ids = j.at("objects").get<std::vector<std::string>>();
  m.resolution = j.at("resolution").get<int>();
  m.frames_per_object = j.at("frames_per_object").get<int>();
  return m;
}

UnposedVideo load_unposed_video(const std::filesystem::path& root, const std::string& object_id) {
  const auto dir = root / object_id / "frames";
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("missing frame directory " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no frames in " + dir.string());
  UnposedVideo video{object_id, {}};
  for (const auto& f : files) {
    video.frames.push_back(read_png(f));
    if (!video.frames.back().same_shape(video.frames.front()))
      throw std::runtime_error("mixed frame resolutions in " + dir.string());
  }
  return video;
}

std::vector<UnposedVideo> load_unposed_dataset(const DatasetManifest& manifest) {
  std::vector<UnposedVideo> out;
  for (const auto& id : manifest.object_ids) out.push_back(load_unposed_video(manifest.root, id));
  return out;
}

EvalSidecar load_eval_sidecar(const std::filesystem::path& root, const std::string& object_id) {
  const auto path = sidecar_path(root, object_id);
  if (!std::filesystem::exists(path)) throw std::invalid_argument("missing eval sidecar " + path.string());
  const auto j = read_json(path);
  EvalSidecar s;
  s.object_id = j.at("object_id").get<std::string>();
  s.frame_poses = j.at("frames").get<std::vector<OrbitPose>>();
  for (const auto& h : j.at("holdout"))
    s.holdout.push_back(HoldoutView{h.at("pose").get<OrbitPose>(), read_png(root / object_id / h.at("image").get<std::string>())});
  return s;
}

PriorScene load_prior_scene(const std::filesystem::path& root, const std::string& object_id) {
  const auto j = read_json(root / object_id / "prior_scene.json");
  return PriorScene{j.at("object_id").get<std::string>(), j.at("scene").get<SceneSpec>(),
                    j.at("reference_pose").get<OrbitPose>(), j.at("samples_per_ray").get<int>()};
}

PosedVideo load_posed_video(const std::filesystem::path& root, const std::string& object_id) {
  PosedVideo pv{load_unposed_video(root, object_id), load_eval_sidecar(root, object_id).frame_poses};
  if (pv.poses.size() != pv.video.frames.size())
    throw std::runtime_error("sidecar pose count does not match frames for " + object_id);
  return pv;
}

}  // namespace posefree
