#include "posefree/geometry.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>
#include <stdexcept>

namespace posefree {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kHalfPi = 0.5 * std::numbers::pi;

double wrap_angle(double radians) {
  double a = std::fmod(radians, kTwoPi);
  if (a < 0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;
  return a;
}

OrbitPose make_orbit_pose(double radius, double azimuth, double polar) {
  if (!(radius > 0) || !std::isfinite(radius)) throw std::invalid_argument("orbit radius must be positive");
  if (!(std::abs(polar) <= kHalfPi + 1e-12)) throw std::invalid_argument("polar offset outside [-pi/2, pi/2]");
  if (!std::isfinite(azimuth)) throw std::invalid_argument("azimuth must be finite");
  return OrbitPose{radius, wrap_angle(azimuth), std::clamp(polar, -kHalfPi, kHalfPi)};
}

Eigen::Vector3d OrbitPose::position() const {
  return radius * Eigen::Vector3d(std::cos(polar) * std::cos(azimuth), std::cos(polar) * std::sin(azimuth),
                                  std::sin(polar));
}

void to_json(nlohmann::json& j, const OrbitPose& pose) {
  j = nlohmann::json{{"radius", pose.radius}, {"azimuth_rad", pose.azimuth}, {"polar_rad", pose.polar}};
}

void from_json(const nlohmann::json& j, OrbitPose& pose) {
  pose = make_orbit_pose(j.at("radius").get<double>(), j.at("azimuth_rad").get<double>(),
                         j.at("polar_rad").get<double>());
}

std::vector<OrbitPose> sample_orbit_poses(int k, double radius, double theta, Rng& rng) {
  if (k < 1) throw std::invalid_argument("sample_orbit_poses: k must be >= 1");
  if (!(radius > 0)) throw std::invalid_argument("sample_orbit_poses: radius must be positive");
  if (!(theta >= 0.0 && theta <= kHalfPi)) throw std::invalid_argument("sample_orbit_poses: theta outside [0, pi/2]");
  std::vector<OrbitPose> poses;
  poses.reserve(static_cast<std::size_t>(k));
  for (int i = 1; i <= k; ++i) {
    const double delta = theta == 0.0 ? 0.0 : rng.uniform(-theta, theta);
    poses.push_back(make_orbit_pose(radius, kTwoPi * i / k, delta));
  }
  return poses;
}

CameraFrame pose_to_camera(const OrbitPose& pose, double focal, int resolution) {
  if (!(focal > 0)) throw std::invalid_argument("pose_to_camera: focal must be positive");
  if (resolution < 1) throw std::invalid_argument("pose_to_camera: resolution must be >= 1");
  const Eigen::Vector3d eye = pose.position();
  const Eigen::Vector3d forward = (-eye).normalized();
  Eigen::Vector3d up_world(0, 0, 1);
  Eigen::Vector3d right = forward.cross(up_world);
  if (right.norm() < 1e-9) {
    up_world = Eigen::Vector3d(1, 0, 0);
    right = forward.cross(up_world);
  }
  right.normalize();
  const Eigen::Vector3d up = right.cross(forward);

  CameraFrame cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = -up.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * eye;
  cam.intrinsics = Intrinsics{focal, resolution / 2.0, resolution / 2.0, resolution, resolution};
  return cam;
}

CameraFrame orbit_camera(const OrbitPose& pose, int resolution) {
  return pose_to_camera(pose, kFocalFactor * resolution, resolution);
}

RayBundle generate_rays(const CameraFrame& camera, double margin) {
  const auto& k = camera.intrinsics;
  RayBundle rays;
  rays.width = k.width;
  rays.height = k.height;
  const Eigen::Vector3d origin = camera.center();
  const double dist = origin.norm();
  rays.near = std::max(dist - margin, 1e-3);
  rays.far = dist + margin;
  const Eigen::Matrix3d cam_to_world = camera.rotation.transpose();
  rays.origins.assign(static_cast<std::size_t>(k.width) * k.height, origin);
  rays.directions.resize(rays.origins.size());
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      const Eigen::Vector3d d_cam((x + 0.5 - k.cx) / k.focal, (y + 0.5 - k.cy) / k.focal, 1.0);
      rays.directions[static_cast<std::size_t>(y) * k.width + x] = (cam_to_world * d_cam).normalized();
    }
  return rays;
}

}  // namespace posefree
