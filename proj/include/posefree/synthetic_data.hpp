#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "posefree/geometry.hpp"
#include "posefree/image.hpp"
#include "posefree/triplane.hpp"

namespace posefree {

enum class PrimitiveKind { sphere, box, torus, capsule };

// size: sphere (radius), box (half extents), torus (major, minor radius),
// capsule (half length, radius). Tori lie in the xy plane, capsules run
// along z.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d(0.5, 0.0, 0.0);
  Eigen::Vector3d albedo = Eigen::Vector3d(0.8, 0.3, 0.2);
  double soft_edge = 0.02;

  double sdf(const Eigen::Vector3d& p) const;
  // Radius of an origin-centred sphere containing the primitive.
  double bounding_radius() const;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<Primitive> primitives;
  Eigen::Vector3d background = Eigen::Vector3d::Ones();
  double peak_density = 40.0;
};

// 1-5 primitives clustered around a random offset, all inside the unit sphere.
SceneSpec generate_scene(std::uint64_t seed);
SceneSpec single_sphere_scene(double radius, const Eigen::Vector3d& albedo);

// Density sigma = peak * sigmoid(-sdf / soft_edge) summed over primitives;
// emission is the density-weighted albedo under a fixed world light.
struct SceneSample {
  Eigen::Vector3d rgb;
  double density = 0.0;
};
SceneSample evaluate_scene(const SceneSpec& scene, const Eigen::Vector3d& p);

// Same quadrature and support cube [-1,1]^3 as the tri-plane renderer.
// The scene background replaces cfg.background.
Image render_ground_truth(const SceneSpec& scene, const OrbitPose& pose, int resolution,
                          const RenderConfig& cfg = RenderConfig{});

void to_json(nlohmann::json& j, const SceneSpec& scene);
void from_json(const nlohmann::json& j, SceneSpec& scene);

// Frames only; carries no pose data by construction.
struct UnposedVideo {
  std::string object_id;
  std::vector<Image> frames;
};

struct PosedVideo {
  UnposedVideo video;
  std::vector<OrbitPose> poses;  // one per frame
};

struct HoldoutView {
  OrbitPose pose;
  Image image;
};

struct EvalSidecar {
  std::string object_id;
  std::vector<OrbitPose> frame_poses;
  std::vector<HoldoutView> holdout;
};

// What the ground-truth prior needs for one object: the scene and the true
// pose of the reference frame (frame 0).
struct PriorScene {
  std::string object_id;
  SceneSpec scene;
  OrbitPose reference_pose;
  int samples_per_ray = 64;
};

struct DatasetOptions {
  int n_objects = 20;
  int frames_per_object = 40;
  int holdout_per_object = 4;
  double orbit_radius = 2.0;
  double polar_range = 0.17453292519943295;  // pi / 18
  int resolution = 64;
  int samples_per_ray = 64;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> object_ids;
  int resolution = 0;
  int frames_per_object = 0;
};

// Layout: <out>/<id>/frames/NNN.png, <out>/<id>/eval_sidecar.json with
// holdout/NNN.png, <out>/<id>/prior_scene.json, <out>/manifest.json.
DatasetManifest build_dataset(const DatasetOptions& options, const std::filesystem::path& out_dir);
DatasetManifest load_manifest(const std::filesystem::path& root);

UnposedVideo load_unposed_video(const std::filesystem::path& root, const std::string& object_id);
std::vector<UnposedVideo> load_unposed_dataset(const DatasetManifest& manifest);
EvalSidecar load_eval_sidecar(const std::filesystem::path& root, const std::string& object_id);
PriorScene load_prior_scene(const std::filesystem::path& root, const std::string& object_id);
PosedVideo load_posed_video(const std::filesystem::path& root, const std::string& object_id);

std::filesystem::path sidecar_path(const std::filesystem::path& root, const std::string& object_id);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace posefree
