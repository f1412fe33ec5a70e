#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <functional>
#include <vector>

#include "posefree/autograd.hpp"
#include "posefree/geometry.hpp"
#include "posefree/image.hpp"
#include "posefree/rng.hpp"

namespace posefree {

// Three axis-aligned feature planes stored as one [3*C, H, W] map. Channel
// blocks are XY, XZ, YZ in that order. Plane u/v axes are (x,y), (x,z) and
// (y,z); u maps to columns, v to rows, and grid nodes sit exactly on the
// extent boundary.
struct TriPlane {
  ad::Tensor planes;
  double extent = 1.0;

  int channels() const { return static_cast<int>(planes.dim(0) / 3); }
  int height() const { return static_cast<int>(planes.dim(1)); }
  int width() const { return static_cast<int>(planes.dim(2)); }
  int feature_dim() const { return static_cast<int>(planes.dim(0)); }

  static TriPlane zeros(int resolution, int channels, double extent = 1.0);
};

// Bilinear features of the three projections, concatenated. Points outside
// the extent cube get the zero feature.
std::vector<double> query_features(const TriPlane& tp, const Eigen::Vector3d& point);
// Differentiable batch query: [P, 3*C].
ad::Tensor sample_triplane(const TriPlane& tp, const std::vector<Eigen::Vector3d>& points);
bool inside_extent(const TriPlane& tp, const Eigen::Vector3d& point);

// 4-layer MLP: 3*C -> hidden -> hidden -> hidden -> (rgb, density).
struct RadianceDecoder {
  std::array<ad::Tensor, 4> weights;
  std::array<ad::Tensor, 4> biases;

  static RadianceDecoder create(int feature_dim, int hidden, Rng& rng, double density_bias = 0.0);
  int feature_dim() const { return static_cast<int>(weights[0].dim(0)); }
  std::vector<ad::Tensor> parameters() const;
};

struct Radiance {
  Eigen::Vector3d rgb;
  double density = 0.0;
};

// features [P, 3*C] -> [P, 4] with sigmoid rgb and softplus density.
ad::Tensor decode_radiance(const ad::Tensor& features, const RadianceDecoder& dec, double density_scale = 1.0);
Radiance decode_radiance(std::span<const double> features, const RadianceDecoder& dec, double density_scale = 1.0);

struct RenderConfig {
  int samples_per_ray = 64;
  Eigen::Vector3d background = Eigen::Vector3d::Ones();
  bool stratified = false;
  double density_scale = 1.0;
  double near_far_margin = 1.2;
};

struct RenderOutput {
  ad::Tensor rgb;             // [H*W, 3]
  std::vector<double> alpha;  // accumulated opacity per pixel
  int height = 0;
  int width = 0;

  Image image() const { return Image::from_tensor(rgb, height, width); }
};

// Evaluates radiance [P, 4] (rgb, density) at the given points.
using RadianceField = std::function<ad::Tensor(const std::vector<Eigen::Vector3d>& points)>;
// Points rejected by the predicate have zero density and are never evaluated.
using SupportPredicate = std::function<bool(const Eigen::Vector3d& point)>;

// Shared quadrature: C = sum_j T_j (1 - exp(-sigma_j dt)) c_j + T_S bg.
// With cfg.stratified each sample is jittered inside its bin using rng.
RenderOutput render_field(const RayBundle& rays, const RenderConfig& cfg, const RadianceField& field,
                          const SupportPredicate& support, Rng* rng = nullptr);

RenderOutput render(const TriPlane& tp, const RadianceDecoder& dec, const CameraFrame& cam, const RenderConfig& cfg,
                    Rng* rng = nullptr);

struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;
  bool empty_warning = false;
};

// Marching cubes over `values` sampled on a grid^3 lattice spanning
// [-extent, extent]^3 (x fastest). Triangles face away from values > iso.
TriangleMesh extract_isosurface(const std::vector<double>& values, int grid, double extent, double iso);
TriangleMesh export_mesh(const TriPlane& tp, const RadianceDecoder& dec, int grid, double iso,
                         double density_scale = 1.0);
void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

}  // namespace posefree
