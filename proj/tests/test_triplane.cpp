#include <cmath>
#include <map>
#include <Eigen/Geometry>

#include "doctest.h"
#include "posefree/ops.hpp"
#include "posefree/triplane.hpp"
#include "support/finite_difference.hpp"
#include "support/fixtures.hpp"

using namespace posefree;
using posefree::testing::central_difference;
using posefree::testing::relative_error;

namespace {

TriPlane random_triplane(Rng& rng, int res, int channels, double extent = 1.0) {
  auto tp = TriPlane::zeros(res, channels, extent);
  tp.planes = ad::Tensor::from_data(rng.normal_vector(static_cast<std::size_t>(tp.planes.numel())), tp.planes.shape(),
                                    true);
  return tp;
}

double plane_value(const TriPlane& tp, int plane, int channel, int row, int col) {
  const int c = tp.channels(), h = tp.height(), w = tp.width();
  return tp.planes.values()[((static_cast<std::size_t>(plane) * c + channel) * h + row) * w + col];
}

}  // namespace

TEST_CASE("features at a grid node are the stored node features") {
  Rng rng(1);
  auto tp = random_triplane(rng, 9, 3);  // node spacing 0.25
  const Eigen::Vector3d p(0.25, -0.5, 0.75);
  const int ix = 5, iy = 2, iz = 7;  // (coord + 1) / 0.25
  auto f = query_features(tp, p);
  REQUIRE(f.size() == 9);
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(f[ch] == doctest::Approx(plane_value(tp, 0, ch, iy, ix)).epsilon(1e-12));
    CHECK(f[3 + ch] == doctest::Approx(plane_value(tp, 1, ch, iz, ix)).epsilon(1e-12));
    CHECK(f[6 + ch] == doctest::Approx(plane_value(tp, 2, ch, iz, iy)).epsilon(1e-12));
  }
}

TEST_CASE("features at a cell centre average the four corners") {
  Rng rng(2);
  auto tp = random_triplane(rng, 5, 2);  // spacing 0.5
  // On the XY plane (x, y) = (-0.25, 0.25) is the centre of cell cols 1..2, rows 2..3.
  auto f = query_features(tp, Eigen::Vector3d(-0.25, 0.25, 0.0));
  for (int ch = 0; ch < 2; ++ch) {
    const double avg = 0.25 * (plane_value(tp, 0, ch, 2, 1) + plane_value(tp, 0, ch, 2, 2) +
                               plane_value(tp, 0, ch, 3, 1) + plane_value(tp, 0, ch, 3, 2));
    CHECK(f[ch] == doctest::Approx(avg).epsilon(1e-12));
  }
}

TEST_CASE("points outside the extent have zero features") {
  Rng rng(3);
  auto tp = random_triplane(rng, 8, 4);
  for (const Eigen::Vector3d p : {Eigen::Vector3d(1.01, 0, 0), Eigen::Vector3d(0, -3, 0), Eigen::Vector3d(0, 0, 1.5)}) {
    auto f = query_features(tp, p);
    REQUIRE(f.size() == 12);
    for (double v : f) CHECK(v == 0.0);
  }
}

TEST_CASE("feature query is Lipschitz continuous") {
  Rng rng(4);
  auto tp = random_triplane(rng, 16, 4);
  // Bilinear interpolation: |df| <= sum of adjacent node differences / spacing.
  double max_node = 0.0;
  for (double v : tp.planes.values()) max_node = std::max(max_node, std::abs(v));
  const double spacing = 2.0 / 15;
  const double bound = 2.0 * 2.0 * max_node / spacing * std::sqrt(12.0);
  for (int i = 0; i < 200; ++i) {
    Eigen::Vector3d p(rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9));
    const double h = 1e-4;
    Eigen::Vector3d q = p + h * Eigen::Vector3d::Random().normalized();
    auto a = query_features(tp, p);
    auto b = query_features(tp, q);
    double d = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
    CHECK(std::sqrt(d) <= bound * h);
  }
}

TEST_CASE("zero feature through a zero final layer decodes to mid grey") {
  Rng rng(5);
  auto dec = RadianceDecoder::create(12, 16, rng);
  for (auto v : {&dec.weights[3], &dec.biases[3]})
    for (auto& x : v->mutable_values()) x = 0.0;
  std::vector<double> zero(12, 0.0);
  auto r = decode_radiance(zero, dec);
  CHECK(r.rgb.x() == doctest::Approx(0.5));
  CHECK(r.rgb.y() == doctest::Approx(0.5));
  CHECK(r.rgb.z() == doctest::Approx(0.5));
  CHECK(r.density == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(decode_radiance(std::vector<double>(11, 0.0), dec), std::invalid_argument);
}

TEST_CASE("decoded density is nonnegative and rgb bounded") {
  Rng rng(6);
  auto dec = RadianceDecoder::create(24, 32, rng, 0.0);
  for (auto& w : dec.weights[3].mutable_values()) w *= 50.0;  // push to saturation
  ad::NoGradGuard guard;
  auto features = ad::Tensor::from_data(rng.normal_vector(10000 * 24, 3.0), {10000, 24});
  auto out = decode_radiance(features, dec);
  for (std::int64_t i = 0; i < 10000; ++i) {
    CHECK(out.values()[i * 4 + 3] >= 0.0);
    for (int c = 0; c < 3; ++c) {
      CHECK(out.values()[i * 4 + c] >= 0.0);
      CHECK(out.values()[i * 4 + c] <= 1.0);
    }
  }
}

TEST_CASE("decoder gradient w.r.t. features matches finite differences") {
  Rng rng(7);
  auto dec = RadianceDecoder::create(6, 8, rng, 0.3);
  auto features = ad::Tensor::from_data(rng.normal_vector(3 * 6), {3, 6}, true);
  const auto weights = rng.normal_vector(12);
  auto loss = [&] {
    ad::NoGradGuard guard;
    return ad::dot_constant(decode_radiance(features, dec, 1.7), weights).item();
  };
  ad::dot_constant(decode_radiance(features, dec, 1.7), weights).backward();
  for (std::size_t i = 0; i < 18; ++i) {
    const double numeric = central_difference(features, i, loss, 1e-5);
    CHECK(relative_error(features.grad()[i], numeric) < 1e-4);
  }
}

TEST_CASE("zero density renders the background exactly") {
  Rng rng(8);
  auto tp = random_triplane(rng, 8, 4);
  auto dec = RadianceDecoder::create(12, 16, rng, 0.0);
  RenderConfig cfg;
  cfg.samples_per_ray = 16;
  cfg.density_scale = 0.0;
  cfg.background = Eigen::Vector3d(0.2, 0.4, 0.9);
  auto out = render(tp, dec, pose_to_camera(make_orbit_pose(2.0, 0.3, 0.1), 10.0, 8), cfg);
  for (std::size_t p = 0; p < 64; ++p)
    for (int c = 0; c < 3; ++c) CHECK(out.rgb.values()[p * 3 + c] == cfg.background[c]);
}

TEST_CASE("homogeneous medium matches the closed-form transmittance") {
  // Oracle: C = c (1 - exp(-sigma L)) + bg exp(-sigma L) along the central ray
  // through a cube of constant density.
  const double sigma = 2.0, half_width = 0.8, emission = 0.2;
  std::vector<double> errors;
  for (int samples : {32, 64, 128, 256}) {
    auto fixture = testing::homogeneous_cube(sigma, emission, half_width);
    RenderConfig cfg;
    cfg.samples_per_ray = samples;
    auto cam = pose_to_camera(make_orbit_pose(2.0, 0.0, 0.0), 20.0, 33);
    auto out = render(fixture.triplane, fixture.decoder, cam, cfg);
    const double L = 2 * half_width;
    const double expected = emission * (1 - std::exp(-sigma * L)) + 1.0 * std::exp(-sigma * L);
    const std::size_t centre = 16 * 33 + 16;
    errors.push_back(std::abs(out.rgb.values()[centre * 3] - expected));
  }
  CHECK(errors[2] < 1e-3);
  CHECK(errors[3] < 1e-3);
  for (std::size_t i = 1; i < errors.size(); ++i) CHECK(errors[i] < errors[i - 1]);
}

TEST_CASE("alpha and final transmittance sum to one") {
  Rng rng(9);
  auto tp = random_triplane(rng, 8, 4);
  auto dec = RadianceDecoder::create(12, 16, rng, 0.5);
  RenderConfig cfg;
  cfg.samples_per_ray = 24;
  cfg.stratified = true;
  auto cam = pose_to_camera(make_orbit_pose(2.0, 1.0, 0.3), 8.0, 8);
  auto out = render(tp, dec, cam, cfg, &rng);
  CHECK_THROWS_AS(render(tp, dec, cam, cfg, nullptr), std::invalid_argument);
  // With black emission and white background, each pixel is the transmittance.
  auto fields = render_field(
      generate_rays(cam), cfg,
      [&](const std::vector<Eigen::Vector3d>& pts) {
        auto r = decode_radiance(sample_triplane(tp, pts), dec).vector();
        for (std::size_t i = 0; i < pts.size(); ++i) r[i * 4] = r[i * 4 + 1] = r[i * 4 + 2] = 0.0;
        return ad::Tensor::from_data(r, {static_cast<std::int64_t>(pts.size()), 4});
      },
      [&](const Eigen::Vector3d& p) { return inside_extent(tp, p); }, &rng);
  for (std::size_t p = 0; p < 64; ++p) {
    CHECK(out.alpha[p] >= 0.0);
    CHECK(out.alpha[p] <= 1.0);
    CHECK(std::abs(fields.alpha[p] + fields.rgb.values()[p * 3] - 1.0) < 1e-6);
  }
}

TEST_CASE("rendering is linear in emission for fixed density") {
  Rng rng(10);
  RenderConfig cfg;
  cfg.samples_per_ray = 32;
  cfg.background = Eigen::Vector3d::Zero();
  auto cam = pose_to_camera(make_orbit_pose(2.0, 0.4, 0.0), 8.0, 8);
  auto field_with = [&](double a) {
    return [a](const std::vector<Eigen::Vector3d>& pts) {
      std::vector<double> r(pts.size() * 4);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        r[i * 4] = a * (0.5 + 0.5 * std::sin(3 * pts[i].x()));
        r[i * 4 + 1] = a * 0.3;
        r[i * 4 + 2] = a * std::abs(pts[i].z());
        r[i * 4 + 3] = 2.0 * std::exp(-pts[i].squaredNorm());
      }
      return ad::Tensor::from_data(r, {static_cast<std::int64_t>(pts.size()), 4});
    };
  };
  auto rays = generate_rays(cam);
  auto base = render_field(rays, cfg, field_with(1.0), {});
  auto scaled = render_field(rays, cfg, field_with(0.37), {});
  for (std::size_t i = 0; i < base.rgb.vector().size(); ++i)
    CHECK(scaled.rgb.values()[i] == doctest::Approx(0.37 * base.rgb.values()[i]).epsilon(1e-12));
}

TEST_CASE("render gradient w.r.t. plane entries matches finite differences") {
  Rng rng(11);
  auto tp = random_triplane(rng, 6, 3, 1.0);
  auto dec = RadianceDecoder::create(9, 12, rng, 0.5);
  RenderConfig cfg;
  cfg.samples_per_ray = 32;
  auto cam = pose_to_camera(make_orbit_pose(2.0, 0.6, 0.25), 6.0, 8);
  const auto weights = rng.normal_vector(8 * 8 * 3);
  auto loss = [&] {
    ad::NoGradGuard guard;
    return ad::dot_constant(render(tp, dec, cam, cfg).rgb, weights).item();
  };
  ad::dot_constant(render(tp, dec, cam, cfg).rgb, weights).backward();
  int nonzero = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto idx = static_cast<std::size_t>(rng.uniform_int(0, tp.planes.numel() - 1));
    const double numeric = central_difference(tp.planes, idx, loss, 1e-6);
    if (numeric != 0.0) ++nonzero;
    INFO("entry " << idx << " analytic " << tp.planes.grad()[idx] << " numeric " << numeric);
    CHECK(relative_error(tp.planes.grad()[idx], numeric, 1e-7) < 1e-3);
  }
  CHECK(nonzero > 5);
}

namespace {

// Each undirected edge of a closed 2-manifold is used by exactly two faces,
// once in each direction.
bool closed_and_oriented(const TriangleMesh& mesh) {
  std::map<std::pair<int, int>, int> directed;
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) directed[{f[k], f[(k + 1) % 3]}]++;
  for (const auto& [edge, count] : directed) {
    if (count != 1) return false;
    auto it = directed.find({edge.second, edge.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return true;
}

double signed_volume(const TriangleMesh& mesh) {
  double v = 0.0;
  for (const auto& f : mesh.faces)
    v += mesh.vertices[f[0]].dot(mesh.vertices[f[1]].cross(mesh.vertices[f[2]])) / 6.0;
  return v;
}

}  // namespace

TEST_CASE("marching cubes recovers an analytic sphere") {
  const int grid = 64;
  std::vector<double> values(static_cast<std::size_t>(grid) * grid * grid);
  auto coord = [&](int i) { return -1.0 + 2.0 * i / (grid - 1); };
  for (int z = 0; z < grid; ++z)
    for (int y = 0; y < grid; ++y)
      for (int x = 0; x < grid; ++x) {
        const double r = std::sqrt(coord(x) * coord(x) + coord(y) * coord(y) + coord(z) * coord(z));
        values[(static_cast<std::size_t>(z) * grid + y) * grid + x] = r < 0.5 ? 50.0 : 0.0;
      }
  auto mesh = extract_isosurface(values, grid, 1.0, 25.0);
  REQUIRE_FALSE(mesh.empty_warning);
  const double voxel = 2.0 / (grid - 1);
  for (const auto& v : mesh.vertices) CHECK(std::abs(v.norm() - 0.5) < 2 * voxel);
  CHECK(closed_and_oriented(mesh));
  CHECK(signed_volume(mesh) > 0.0);  // outward facing
}

TEST_CASE("mesh export through a tri-plane sphere fixture") {
  auto fixture = testing::sphere_triplane(0.5, 64);
  auto mesh = export_mesh(fixture.triplane, fixture.decoder, 64, fixture.iso);
  REQUIRE(mesh.faces.size() > 0);
  const double voxel = 2.0 / 63;
  for (const auto& v : mesh.vertices) {
    CHECK(std::abs(v.norm() - 0.5) < 2 * voxel);
    CHECK(v.cwiseAbs().maxCoeff() <= fixture.triplane.extent + 1e-12);
  }
  CHECK(closed_and_oriented(mesh));
}

TEST_CASE("empty density yields an empty mesh with the warning flag") {
  auto empty = extract_isosurface(std::vector<double>(16 * 16 * 16, 0.0), 16, 1.0, 0.5);
  CHECK(empty.empty_warning);
  CHECK(empty.faces.empty());
  auto tp = TriPlane::zeros(8, 2);
  Rng rng(12);
  auto dec = RadianceDecoder::create(6, 8, rng);
  CHECK_THROWS_AS(export_mesh(tp, dec, 4, 0.1), std::invalid_argument);
}
