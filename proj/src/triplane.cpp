#include "posefree/triplane.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "posefree/ops.hpp"

namespace posefree {

namespace {

struct Corner {
  std::int64_t index[4];
  double weight[4];
};

// Bilinear footprint of (u, v) in [-extent, extent]^2 on an H x W grid.
Corner bilinear_corner(double u, double v, double extent, int height, int width) {
  const double fx = (u + extent) / (2.0 * extent) * (width - 1);
  const double fy = (v + extent) / (2.0 * extent) * (height - 1);
  int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, std::max(width - 2, 0));
  int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, std::max(height - 2, 0));
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double ax = fx - x0;
  const double ay = fy - y0;
  Corner c;
  c.index[0] = static_cast<std::int64_t>(y0) * width + x0;
  c.index[1] = static_cast<std::int64_t>(y0) * width + x1;
  c.index[2] = static_cast<std::int64_t>(y1) * width + x0;
  c.index[3] = static_cast<std::int64_t>(y1) * width + x1;
  c.weight[0] = (1 - ax) * (1 - ay);
  c.weight[1] = ax * (1 - ay);
  c.weight[2] = (1 - ax) * ay;
  c.weight[3] = ax * ay;
  return c;
}

std::array<std::pair<double, double>, 3> projections(const Eigen::Vector3d& p) {
  return {{{p.x(), p.y()}, {p.x(), p.z()}, {p.y(), p.z()}}};
}

}  // namespace

TriPlane TriPlane::zeros(int resolution, int channels, double extent) {
  return TriPlane{ad::Tensor::zeros({3LL * channels, resolution, resolution}), extent};
}

bool inside_extent(const TriPlane& tp, const Eigen::Vector3d& point) {
  return std::abs(point.x()) <= tp.extent && std::abs(point.y()) <= tp.extent && std::abs(point.z()) <= tp.extent;
}

ad::Tensor sample_triplane(const TriPlane& tp, const std::vector<Eigen::Vector3d>& points) {
  const int c = tp.channels(), h = tp.height(), w = tp.width();
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const std::int64_t fdim = 3LL * c;
  const auto n = static_cast<std::int64_t>(points.size());
  std::vector<Corner> corners(static_cast<std::size_t>(n * 3));
  std::vector<char> valid(static_cast<std::size_t>(n));
  std::vector<double> out(static_cast<std::size_t>(n * fdim), 0.0);
  const auto& pv = tp.planes.vector();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    if (!p.allFinite()) throw std::invalid_argument("sample_triplane: non-finite point");
    valid[i] = inside_extent(tp, p);
    if (!valid[i]) continue;
    const auto proj = projections(p);
    for (int k = 0; k < 3; ++k) {
      Corner cr = bilinear_corner(proj[k].first, proj[k].second, tp.extent, h, w);
      corners[i * 3 + k] = cr;
      double* dst = out.data() + i * fdim + k * c;
      const double* src = pv.data() + static_cast<std::int64_t>(k) * c * hw;
      for (int ch = 0; ch < c; ++ch) {
        const double* plane = src + ch * hw;
        dst[ch] = cr.weight[0] * plane[cr.index[0]] + cr.weight[1] * plane[cr.index[1]] +
                  cr.weight[2] * plane[cr.index[2]] + cr.weight[3] * plane[cr.index[3]];
      }
    }
  }
  return ad::make_result(std::move(out), {n, fdim}, {tp.planes},
                         [=, corners = std::move(corners), valid = std::move(valid)](ad::Node& self) {
                           auto g = self.input_grad(0);
                           for (std::int64_t i = 0; i < n; ++i) {
                             if (!valid[i]) continue;
                             for (int k = 0; k < 3; ++k) {
                               const Corner& cr = corners[i * 3 + k];
                               const double* dy = self.grad.data() + i * fdim + k * c;
                               double* dst = g.data() + static_cast<std::int64_t>(k) * c * hw;
                               for (int ch = 0; ch < c; ++ch) {
                                 double* plane = dst + ch * hw;
                                 for (int q = 0; q < 4; ++q) plane[cr.index[q]] += cr.weight[q] * dy[ch];
                               }
                             }
                           }
                         });
}

std::vector<double> query_features(const TriPlane& tp, const Eigen::Vector3d& point) {
  ad::NoGradGuard guard;
  return sample_triplane(tp, {point}).vector();
}

RadianceDecoder RadianceDecoder::create(int feature_dim, int hidden, Rng& rng, double density_bias) {
  RadianceDecoder dec;
  const int dims[5] = {feature_dim, hidden, hidden, hidden, 4};
  for (int l = 0; l < 4; ++l) {
    const double stddev = (l == 3 ? 0.1 : 1.0) / std::sqrt(static_cast<double>(dims[l]));
    dec.weights[l] = ad::Tensor::from_data(rng.normal_vector(static_cast<std::size_t>(dims[l]) * dims[l + 1], stddev),
                                           {dims[l], dims[l + 1]}, true);
    dec.biases[l] = ad::Tensor::zeros({dims[l + 1]}, true);
  }
  dec.biases[3].mutable_values()[3] = density_bias;
  return dec;
}

std::vector<ad::Tensor> RadianceDecoder::parameters() const {
  std::vector<ad::Tensor> out;
  for (int l = 0; l < 4; ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
  return out;
}

ad::Tensor decode_radiance(const ad::Tensor& features, const RadianceDecoder& dec, double density_scale) {
  if (features.rank() != 2 || features.dim(1) != dec.feature_dim())
    throw std::invalid_argument("decode_radiance: feature width " +
                                std::to_string(features.rank() == 2 ? features.dim(1) : -1) + ", decoder expects " +
                                std::to_string(dec.feature_dim()));
  ad::Tensor h = features;
  for (int l = 0; l < 3; ++l) h = ad::softplus(ad::linear(h, dec.weights[l], dec.biases[l]));
  ad::Tensor raw = ad::linear(h, dec.weights[3], dec.biases[3]);

  // Fused head: sigmoid on rgb columns, scaled softplus on density.
  const auto n = raw.dim(0);
  std::vector<double> out(raw.vector().size());
  const auto& rv = raw.vector();
  for (std::int64_t i = 0; i < n; ++i) {
    for (int ch = 0; ch < 3; ++ch) out[i * 4 + ch] = 1.0 / (1.0 + std::exp(-rv[i * 4 + ch]));
    const double x = rv[i * 4 + 3];
    out[i * 4 + 3] = density_scale * (x > 30.0 ? x : std::log1p(std::exp(x)));
  }
  return ad::make_result(std::move(out), {n, 4}, {raw}, [n, density_scale](ad::Node& self) {
    auto g = self.input_grad(0);
    const auto& rv = self.inputs[0]->value;
    for (std::int64_t i = 0; i < n; ++i) {
      for (int ch = 0; ch < 3; ++ch) {
        const double y = self.value[i * 4 + ch];
        g[i * 4 + ch] += self.grad[i * 4 + ch] * y * (1.0 - y);
      }
      const double s = 1.0 / (1.0 + std::exp(-rv[i * 4 + 3]));
      g[i * 4 + 3] += self.grad[i * 4 + 3] * density_scale * s;
    }
  });
}

Radiance decode_radiance(std::span<const double> features, const RadianceDecoder& dec, double density_scale) {
  ad::NoGradGuard guard;
  auto out = decode_radiance(
      ad::Tensor::from_data(std::vector<double>(features.begin(), features.end()),
                            {1, static_cast<std::int64_t>(features.size())}),
      dec, density_scale);
  const auto v = out.values();
  return Radiance{Eigen::Vector3d(v[0], v[1], v[2]), v[3]};
}

RenderOutput render_field(const RayBundle& rays, const RenderConfig& cfg, const RadianceField& field,
                          const SupportPredicate& support, Rng* rng) {
  if (cfg.samples_per_ray < 2) throw std::invalid_argument("render: samples_per_ray must be >= 2");
  if (cfg.stratified && rng == nullptr) throw std::invalid_argument("render: stratified sampling needs an rng");
  const int s = cfg.samples_per_ray;
  const auto r = static_cast<std::int64_t>(rays.size());
  const double dt = (rays.far - rays.near) / s;

  std::vector<std::int64_t> point_of(static_cast<std::size_t>(r * s), -1);
  std::vector<Eigen::Vector3d> points;
  points.reserve(static_cast<std::size_t>(r * s));
  for (std::int64_t i = 0; i < r; ++i) {
    for (int j = 0; j < s; ++j) {
      const double offset = cfg.stratified ? rng->uniform() : 0.5;
      const double t = rays.near + (j + offset) * dt;
      Eigen::Vector3d p = rays.origins[i] + t * rays.directions[i];
      if (!support || support(p)) {
        point_of[i * s + j] = static_cast<std::int64_t>(points.size());
        points.push_back(p);
      }
    }
  }

  ad::Tensor radiance = points.empty() ? ad::Tensor::zeros({0, 4}) : field(points);
  if (radiance.rank() != 2 || radiance.dim(1) != 4 || radiance.dim(0) != static_cast<std::int64_t>(points.size()))
    throw std::logic_error("render: radiance field returned shape " + ad::shape_string(radiance.shape()));

  const Eigen::Vector3d bg = cfg.background;
  std::vector<double> color(static_cast<std::size_t>(r * 3));
  std::vector<double> alpha(static_cast<std::size_t>(r));
  const auto& rad = radiance.vector();
  for (std::int64_t i = 0; i < r; ++i) {
    double transmittance = 1.0;
    double acc[3] = {0, 0, 0};
    for (int j = 0; j < s; ++j) {
      const auto p = point_of[i * s + j];
      if (p < 0) continue;
      const double a = 1.0 - std::exp(-rad[p * 4 + 3] * dt);
      const double wgt = transmittance * a;
      for (int ch = 0; ch < 3; ++ch) acc[ch] += wgt * rad[p * 4 + ch];
      transmittance *= 1.0 - a;
    }
    for (int ch = 0; ch < 3; ++ch) color[i * 3 + ch] = acc[ch] + transmittance * bg[ch];
    alpha[i] = 1.0 - transmittance;
  }

  RenderOutput out;
  out.height = rays.height;
  out.width = rays.width;
  out.alpha = alpha;
  out.rgb = ad::make_result(std::move(color), {r, 3}, {radiance},
                            [r, s, dt, bg, point_of = std::move(point_of)](ad::Node& self) {
                              auto g = self.input_grad(0);
                              const auto& rad = self.inputs[0]->value;
                              for (std::int64_t i = 0; i < r; ++i) {
                                const double* dc = self.grad.data() + i * 3;
                                const double* c_total = self.value.data() + i * 3;
                                double transmittance = 1.0;
                                double acc[3] = {0, 0, 0};
                                for (int j = 0; j < s; ++j) {
                                  const auto p = point_of[i * s + j];
                                  if (p < 0) continue;
                                  const double a = 1.0 - std::exp(-rad[p * 4 + 3] * dt);
                                  const double wgt = transmittance * a;
                                  const double t_next = transmittance * (1.0 - a);
                                  double dsigma = 0.0;
                                  for (int ch = 0; ch < 3; ++ch) {
                                    acc[ch] += wgt * rad[p * 4 + ch];
                                    const double rest = c_total[ch] - acc[ch];
                                    g[p * 4 + ch] += dc[ch] * wgt;
                                    dsigma += dc[ch] * dt * (t_next * rad[p * 4 + ch] - rest);
                                  }
                                  g[p * 4 + 3] += dsigma;
                                  transmittance = t_next;
                                }
                              }
                            });
  return out;
}

RenderOutput render(const TriPlane& tp, const RadianceDecoder& dec, const CameraFrame& cam, const RenderConfig& cfg,
                    Rng* rng) {
  const RayBundle rays = generate_rays(cam, cfg.near_far_margin);
  return render_field(
      rays, cfg,
      [&](const std::vector<Eigen::Vector3d>& pts) {
        return decode_radiance(sample_triplane(tp, pts), dec, cfg.density_scale);
      },
      [&](const Eigen::Vector3d& p) { return inside_extent(tp, p); }, rng);
}

TriangleMesh export_mesh(const TriPlane& tp, const RadianceDecoder& dec, int grid, double iso, double density_scale) {
  if (grid < 8) throw std::invalid_argument("export_mesh: grid must be >= 8");
  ad::NoGradGuard guard;
  std::vector<double> values(static_cast<std::size_t>(grid) * grid * grid);
  auto coord = [&](int i) { return -tp.extent + 2.0 * tp.extent * i / (grid - 1); };
  std::vector<Eigen::Vector3d> slab(static_cast<std::size_t>(grid) * grid);
  for (int z = 0; z < grid; ++z) {
    for (int y = 0; y < grid; ++y)
      for (int x = 0; x < grid; ++x)
        slab[static_cast<std::size_t>(y) * grid + x] =
            Eigen::Vector3d(coord(x), coord(y), coord(z));
    auto rad = decode_radiance(sample_triplane(tp, slab), dec, density_scale);
    for (std::size_t i = 0; i < slab.size(); ++i)
      values[static_cast<std::size_t>(z) * grid * grid + i] = rad.values()[i * 4 + 3];
  }
  return extract_isosurface(values, grid, tp.extent, iso);
}

void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::string text = "# triangle mesh\n";
  char line[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(line, sizeof line, "v %.6f %.6f %.6f\n", v.x(), v.y(), v.z());
    text += line;
  }
  for (const auto& f : mesh.faces) {
    std::snprintf(line, sizeof line, "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
    text += line;
  }
  write_file_atomic(path, text);
}

}  // namespace posefree
