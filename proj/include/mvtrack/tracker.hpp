#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mvtrack/dataset_io.hpp"
#include "mvtrack/geometry.hpp"
#include "mvtrack/tensor.hpp"

// Inference-time track assembly: heatmap peaks, gated Hungarian association
// of offset-propagated tracks against detections, and track lifecycle.
namespace mvtrack {

struct TrackerParams {
  double gate_cells = 10.0;
  int max_misses = 1;
  double det_threshold = 0.4;
  int max_detections = 64;
};

struct Detection {
  int64_t x = 0;  // integer cells
  int64_t y = 0;
  double score = 0;
};

struct TrackState {
  int64_t id = 0;
  double x = 0;  // cells
  double y = 0;
  int miss_count = 0;
  struct HistoryPoint {
    int frame;
    double x, y;
  };
  std::vector<HistoryPoint> history;
};

struct Trajectory {
  int64_t id = 0;
  std::vector<TrackState::HistoryPoint> points;  // cells; converted on export
};

// A cell is a detection iff its value passes the threshold and strictly
// dominates its 3x3 neighborhood; kept by descending score (ties toward the
// smaller row-major index), at most max_detections.
std::vector<Detection> extract_peaks(const Tensor& heatmap, double threshold,
                                     int max_detections);

struct AssociationResult {
  std::vector<std::pair<int, int>> matches;  // (track index, detection index)
  std::vector<int> unmatched_tracks;
  std::vector<int> unmatched_detections;
};

// Optimal one-to-one assignment minimizing total Euclidean distance among
// pairs within the gate; pairs beyond the gate are forbidden.
AssociationResult associate(const std::vector<std::array<double, 2>>& predicted,
                            const std::vector<Detection>& detections, double gate);

struct TrackerRun {
  std::vector<TrackState> tracks;
  int64_t next_id = 0;
  std::vector<Trajectory> finished;
};

// One tracking step: propagate by offsets, associate, update matched tracks,
// coast or retire unmatched ones, spawn tracks from unmatched detections.
// offsets rows must align with run.tracks.
void step_tracks(TrackerRun& run, const std::vector<std::array<double, 2>>& offsets,
                 const std::vector<Detection>& detections, int frame, const TrackerParams& params,
                 const GroundGrid& grid);

// Flushes all live tracks into finished trajectories.
void finish_tracks(TrackerRun& run);

// Cells -> meters conversion for the output format.
std::vector<TrajectoryPoint> trajectories_to_rows(const std::vector<Trajectory>& trajectories,
                                                  const GroundGrid& grid);

}  // namespace mvtrack
