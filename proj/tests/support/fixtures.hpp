#pragma once

// Hand-built tri-plane fields with known closed-form behaviour.

#include <cmath>

#include "posefree/triplane.hpp"

namespace posefree::testing {

struct FieldFixture {
  TriPlane triplane;
  RadianceDecoder decoder;
  double iso = 0.0;
};

inline void zero_decoder(RadianceDecoder& dec) {
  for (int l = 0; l < 4; ++l) {
    for (auto& v : dec.weights[l].mutable_values()) v = 0.0;
    for (auto& v : dec.biases[l].mutable_values()) v = 0.0;
  }
}

// Constant density `sigma` and grey emission inside [-half_width, half_width]^3.
inline FieldFixture homogeneous_cube(double sigma, double emission, double half_width) {
  Rng rng(0);
  FieldFixture f{TriPlane::zeros(4, 1, half_width), RadianceDecoder::create(3, 4, rng)};
  zero_decoder(f.decoder);
  auto b = f.decoder.biases[3].mutable_values();
  for (int c = 0; c < 3; ++c) b[c] = std::log(emission / (1.0 - emission));
  b[3] = std::log(std::expm1(sigma));  // softplus^-1
  return f;
}

// Density is a decreasing function of |p|^2: the XY plane stores x^2 + y^2 and
// the YZ plane stores z^2, summed by the first layer. iso is the density on
// the sphere of the given radius.
inline FieldFixture sphere_triplane(double radius, int resolution, double sharpness = 10.0) {
  Rng rng(0);
  FieldFixture f{TriPlane::zeros(resolution, 1, 1.0), RadianceDecoder::create(3, 2, rng)};
  zero_decoder(f.decoder);
  auto planes = f.triplane.planes.mutable_values();
  const std::size_t hw = static_cast<std::size_t>(resolution) * resolution;
  auto coord = [&](int i) { return -1.0 + 2.0 * i / (resolution - 1); };
  for (int row = 0; row < resolution; ++row)
    for (int col = 0; col < resolution; ++col) {
      const std::size_t i = static_cast<std::size_t>(row) * resolution + col;
      planes[i] = coord(col) * coord(col) + coord(row) * coord(row);  // XY: (x, y)
      planes[2 * hw + i] = coord(row) * coord(row);                   // YZ: (y, z), z on rows
    }
  // Weights are [in, out].
  auto w0 = f.decoder.weights[0].mutable_values();
  w0[0 * 2 + 0] = -sharpness;
  w0[2 * 2 + 0] = -sharpness;
  f.decoder.biases[0].mutable_values()[0] = sharpness * radius * radius;
  f.decoder.weights[1].mutable_values()[0] = 1.0;
  f.decoder.weights[2].mutable_values()[0] = 1.0;
  f.decoder.weights[3].mutable_values()[0 * 4 + 3] = 1.0;
  const double r2 = radius * radius;
  f.iso = decode_radiance(std::vector<double>{r2, 0.0, 0.0}, f.decoder).density;
  return f;
}

}  // namespace posefree::testing
