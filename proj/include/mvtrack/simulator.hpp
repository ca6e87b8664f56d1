#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvtrack/geometry.hpp"
#include "mvtrack/tensor.hpp"

// Deterministic synthetic multi-camera scenes: waypoint walkers rendered as
// colored vertical capsules, with exact ground-truth annotations.
namespace mvtrack {

struct SceneConfig {
  double world_x = 12.0;  // meters
  double world_y = 8.0;
  int num_cameras = 2;
  double camera_radius = 7.5;  // ring placement around the world center
  double camera_height = 3.0;
  double camera_tilt_deg = 30.0;
  int num_agents = 3;
  double speed_min = 0.02;  // meters per frame
  double speed_max = 0.06;
  int waypoints = 6;
  int frames = 200;
  int image_width = 64;
  int image_height = 32;
  double focal = 36.0;  // pixels
  uint64_t seed = 7;
  double agent_radius = 0.25;  // capsule half-width, meters
  double agent_height = 1.7;

  void validate() const {
    if (world_x <= 0 || world_y <= 0) throw ConfigInvalidError("scene: extents must be positive");
    if (frames < 2) throw ConfigInvalidError("scene: frames must be >= 2");
    if (num_agents < 0) throw ConfigInvalidError("scene: agents must be >= 0");
    if (num_cameras < 1) throw ConfigInvalidError("scene: need at least one camera");
    if (speed_min < 0 || speed_max < speed_min)
      throw ConfigInvalidError("scene: bad speed range");
    if (waypoints < 1) throw ConfigInvalidError("scene: need at least one waypoint");
    if (image_width < 8 || image_height < 8) throw ConfigInvalidError("scene: image too small");
  }
};

struct PersonObservation {
  int cam = 0;
  double u = 0;
  double v = 0;
  bool visible = false;
};

struct PersonAnnotation {
  int64_t id = 0;
  double x_m = 0;
  double y_m = 0;
  std::vector<PersonObservation> views;
};

struct AnnotationFrame {
  int frame = 0;
  std::vector<PersonAnnotation> persons;
};

struct SimulatedFrame {
  std::vector<Tensor> images;  // per camera, [H x W x 3] floats in [0,1]
  AnnotationFrame ann;
};

struct SimulatedSequence {
  SceneConfig config;
  std::vector<CameraCalibration> calibs;
  std::vector<SimulatedFrame> frames;
};

// Evenly spaced cameras on a ring around the world center, tilted down at
// the configured angle, y-down optical convention.
std::vector<CameraCalibration> ring_cameras(const SceneConfig& cfg);

// Deterministic id -> RGB in [0.35, 0.95].
std::array<float, 3> agent_color(int64_t id);

struct AgentSnapshot {
  int64_t id = 0;
  double x = 0;
  double y = 0;
};

// Flat background plus far-to-near filled capsules of world height
// agent_height centered on each agent's ground point.
Tensor render_view(const std::vector<AgentSnapshot>& agents, const CameraCalibration& calib,
                   const SceneConfig& cfg);

SimulatedSequence simulate_sequence(const SceneConfig& cfg);

}  // namespace mvtrack
