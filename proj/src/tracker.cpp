#include "mvtrack/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvtrack/assignment.hpp"

namespace mvtrack {

std::vector<Detection> extract_peaks(const Tensor& heatmap, double threshold,
                                     int max_detections) {
  if (heatmap.rank() != 2) throw ShapeMismatchError("extract_peaks: [H x W] heatmap expected");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigInvalidError("extract_peaks: threshold must be in (0,1)");
  int64_t h = heatmap.dim(0), w = heatmap.dim(1);
  const auto& d = heatmap.data();
  std::vector<Detection> out;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      float v = d[static_cast<size_t>(y * w + x)];
      if (double(v) < threshold) continue;
      bool peak = true;
      for (int64_t dy = -1; dy <= 1 && peak; ++dy)
        for (int64_t dx = -1; dx <= 1 && peak; ++dx) {
          if (dx == 0 && dy == 0) continue;
          int64_t ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          if (d[static_cast<size_t>(ny * w + nx)] >= v) peak = false;
        }
      if (peak) out.push_back({x, y, double(v)});
    }
  }
  std::stable_sort(out.begin(), out.end(), [w](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.y * w + a.x < b.y * w + b.x;
  });
  if (static_cast<int>(out.size()) > max_detections) out.resize(static_cast<size_t>(max_detections));
  return out;
}

AssociationResult associate(const std::vector<std::array<double, 2>>& predicted,
                            const std::vector<Detection>& detections, double gate) {
  if (gate <= 0) throw ConfigInvalidError("associate: gate must be > 0");
  const double inf = std::numeric_limits<double>::infinity();
  int nt = static_cast<int>(predicted.size());
  int nd = static_cast<int>(detections.size());
  std::vector<double> cost(static_cast<size_t>(nt) * static_cast<size_t>(nd), inf);
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < nd; ++j) {
      double dx = predicted[static_cast<size_t>(i)][0] - double(detections[static_cast<size_t>(j)].x);
      double dy = predicted[static_cast<size_t>(i)][1] - double(detections[static_cast<size_t>(j)].y);
      double dist = std::sqrt(dx * dx + dy * dy);
      if (dist <= gate) cost[static_cast<size_t>(i) * nd + j] = dist;
    }
  auto row_to_col = solve_assignment(cost, nt, nd);
  AssociationResult res;
  std::vector<char> det_used(static_cast<size_t>(nd), 0);
  for (int i = 0; i < nt; ++i) {
    int j = row_to_col[static_cast<size_t>(i)];
    if (j >= 0) {
      res.matches.emplace_back(i, j);
      det_used[static_cast<size_t>(j)] = 1;
    } else {
      res.unmatched_tracks.push_back(i);
    }
  }
  for (int j = 0; j < nd; ++j)
    if (!det_used[static_cast<size_t>(j)]) res.unmatched_detections.push_back(j);
  return res;
}

namespace {

double clamp_cell(double v, int64_t cells) {
  return std::min(std::max(v, 0.0), double(cells - 1));
}

Trajectory to_trajectory(const TrackState& t) { return {t.id, t.history}; }

}  // namespace

void step_tracks(TrackerRun& run, const std::vector<std::array<double, 2>>& offsets,
                 const std::vector<Detection>& detections, int frame, const TrackerParams& params,
                 const GroundGrid& grid) {
  if (offsets.size() != run.tracks.size())
    throw ShapeMismatchError("step_tracks: offsets misaligned with live tracks");
  std::vector<std::array<double, 2>> predicted(run.tracks.size());
  for (size_t i = 0; i < run.tracks.size(); ++i)
    predicted[i] = {run.tracks[i].x + offsets[i][0], run.tracks[i].y + offsets[i][1]};

  auto res = associate(predicted, detections, params.gate_cells);

  std::vector<char> retire(run.tracks.size(), 0);
  for (auto [ti, dj] : res.matches) {
    auto& t = run.tracks[static_cast<size_t>(ti)];
    t.x = double(detections[static_cast<size_t>(dj)].x);
    t.y = double(detections[static_cast<size_t>(dj)].y);
    t.miss_count = 0;
    t.history.push_back({frame, t.x, t.y});
  }
  for (int ti : res.unmatched_tracks) {
    auto& t = run.tracks[static_cast<size_t>(ti)];
    t.miss_count += 1;
    if (t.miss_count > params.max_misses) {
      retire[static_cast<size_t>(ti)] = 1;
    } else {
      t.x = clamp_cell(predicted[static_cast<size_t>(ti)][0], grid.cells_x);
      t.y = clamp_cell(predicted[static_cast<size_t>(ti)][1], grid.cells_y);
      t.history.push_back({frame, t.x, t.y});
    }
  }
  std::vector<TrackState> alive;
  for (size_t i = 0; i < run.tracks.size(); ++i) {
    if (retire[i])
      run.finished.push_back(to_trajectory(run.tracks[i]));
    else
      alive.push_back(std::move(run.tracks[i]));
  }
  run.tracks = std::move(alive);

  for (int dj : res.unmatched_detections) {
    TrackState t;
    t.id = run.next_id++;
    t.x = double(detections[static_cast<size_t>(dj)].x);
    t.y = double(detections[static_cast<size_t>(dj)].y);
    t.miss_count = 0;
    t.history.push_back({frame, t.x, t.y});
    run.tracks.push_back(std::move(t));
  }
}

void finish_tracks(TrackerRun& run) {
  for (auto& t : run.tracks) run.finished.push_back(to_trajectory(t));
  run.tracks.clear();
}

std::vector<TrajectoryPoint> trajectories_to_rows(const std::vector<Trajectory>& trajectories,
                                                  const GroundGrid& grid) {
  std::vector<TrajectoryPoint> rows;
  for (const auto& t : trajectories)
    for (const auto& p : t.points)
      rows.push_back({p.frame, t.id, grid.cell_to_world_x(p.x), grid.cell_to_world_y(p.y)});
  std::sort(rows.begin(), rows.end(), [](const TrajectoryPoint& a, const TrajectoryPoint& b) {
    if (a.frame != b.frame) return a.frame < b.frame;
    return a.track_id < b.track_id;
  });
  return rows;
}

}  // namespace mvtrack
