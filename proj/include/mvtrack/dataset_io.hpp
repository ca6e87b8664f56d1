#pragma once

#include <map>
#include <string>
#include <vector>

#include "mvtrack/simulator.hpp"
#include "mvtrack/tensor.hpp"

// On-disk formats: the simulator dataset layout (scene.json, calib.txt,
// frames/<t>/cam<i>.ppm, annotations.csv), heatmap exports and trajectory
// CSVs. Writers and parsers round-trip byte-identically.
namespace mvtrack {

// --- images ---------------------------------------------------------------

void write_ppm(const std::string& path, const Tensor& image);  // [H x W x 3] floats in [0,1]
Tensor read_ppm(const std::string& path);

void write_pgm(const std::string& path, const Tensor& heatmap);  // [H x W], scaled to 0..255
// raw f32 dump with a "H W" text header line, row-major little-endian
void write_f32_dump(const std::string& path, const Tensor& heatmap);
Tensor read_f32_dump(const std::string& path);

// --- scene config ---------------------------------------------------------

std::string scene_config_to_json(const SceneConfig& cfg);
SceneConfig scene_config_from_json(const std::string& text, const std::string& context);

// --- trajectories ---------------------------------------------------------

struct TrajectoryPoint {
  int frame = 0;
  int64_t track_id = 0;
  double x_m = 0;
  double y_m = 0;
};

void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryPoint>& rows);
std::vector<TrajectoryPoint> read_trajectory_csv(const std::string& path);

// --- datasets ---------------------------------------------------------------

struct LoadedFrame {
  std::vector<Tensor> images;
  AnnotationFrame ann;
};

struct Dataset {
  SceneConfig config;
  std::vector<CameraCalibration> calibs;
  std::vector<LoadedFrame> frames;
};

void write_dataset(const std::string& dir, const SimulatedSequence& seq);
Dataset load_dataset(const std::string& dir);

std::string format_annotations(const std::vector<AnnotationFrame>& frames);
std::vector<AnnotationFrame> parse_annotations(const std::string& text,
                                               const std::string& context, int num_cameras);

// Ground-truth trajectories (the cam = -1 rows) in tracker output format.
std::vector<TrajectoryPoint> dataset_ground_truth(const Dataset& data, int frame_begin,
                                                  int frame_end);

}  // namespace mvtrack
