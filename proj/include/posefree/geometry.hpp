#pragma once

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>
#include <vector>

#include "posefree/rng.hpp"

namespace posefree {

// Camera on an origin-centred orbit. polar is the elevation above the
// equatorial (xy) plane; +z is world up.
struct OrbitPose {
  double radius = 2.0;
  double azimuth = 0.0;  // [0, 2pi)
  double polar = 0.0;    // [-pi/2, pi/2]

  Eigen::Vector3d position() const;
  bool operator==(const OrbitPose&) const = default;
};

// Validates and normalizes the azimuth into [0, 2pi).
OrbitPose make_orbit_pose(double radius, double azimuth, double polar);
double wrap_angle(double radians);

void to_json(nlohmann::json& j, const OrbitPose& pose);
void from_json(const nlohmann::json& j, OrbitPose& pose);

struct Intrinsics {
  double focal = 1.0;  // pixels
  double cx = 0.0;     // principal point, pixels
  double cy = 0.0;
  int width = 1;
  int height = 1;
};

// World-to-camera rigid transform x_cam = R x_world + t, with camera axes
// x right, y down, z forward.
struct CameraFrame {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Intrinsics intrinsics;

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  Eigen::Vector3d forward() const { return rotation.row(2).transpose(); }
};

struct RayBundle {
  std::vector<Eigen::Vector3d> origins;
  std::vector<Eigen::Vector3d> directions;  // unit length
  double near = 0.8;
  double far = 3.2;
  int width = 0;
  int height = 0;

  std::size_t size() const { return directions.size(); }
};

// k poses with azimuths 2*pi*i/k (i = 1..k), shared radius and polar offsets
// drawn uniformly from [-theta, theta].
std::vector<OrbitPose> sample_orbit_poses(int k, double radius, double theta, Rng& rng);

// Looks at the origin with world +z as up; at the poles world +x is used.
CameraFrame pose_to_camera(const OrbitPose& pose, double focal, int resolution);

// Focal length used by every orbit camera, as a fraction of the resolution.
inline constexpr double kFocalFactor = 0.8;
CameraFrame orbit_camera(const OrbitPose& pose, int resolution);

// One ray per pixel centre; near/far are the camera distance -/+ margin.
RayBundle generate_rays(const CameraFrame& camera, double margin = 1.2);

}  // namespace posefree
