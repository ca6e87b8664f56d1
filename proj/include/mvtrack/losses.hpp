#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "mvtrack/nn_ops.hpp"
#include "mvtrack/tensor.hpp"

// Ground-truth target construction and the three-term uncertainty-weighted
// objective.
namespace mvtrack {

// Gaussian target heatmap over a cells_y x cells_x grid. Center cells carry
// exactly 1; overlapping Gaussians combine by max so the positive-cell
// definition (value == 1) stays intact.
template <typename T>
std::pair<std::vector<T>, std::vector<uint8_t>> build_gt_heatmap(
    const std::vector<std::array<double, 2>>& centers_cells, int64_t cells_x, int64_t cells_y,
    double sigma) {
  if (sigma <= 0) throw ConfigInvalidError("build_gt_heatmap: sigma must be > 0");
  std::vector<T> heat(static_cast<size_t>(cells_x * cells_y), T(0));
  std::vector<uint8_t> mask(static_cast<size_t>(cells_x * cells_y), 0);
  std::vector<std::array<int64_t, 2>> rounded;
  for (const auto& c : centers_cells) {
    int64_t cx = static_cast<int64_t>(std::llround(c[0]));
    int64_t cy = static_cast<int64_t>(std::llround(c[1]));
    if (cx < 0 || cx >= cells_x || cy < 0 || cy >= cells_y)
      throw PositionOutOfGridError("heatmap center outside the grid");
    rounded.push_back({cx, cy});
    mask[static_cast<size_t>(cy * cells_x + cx)] = 1;
  }
  double inv = 1.0 / (2.0 * sigma * sigma);
  for (int64_t y = 0; y < cells_y; ++y)
    for (int64_t x = 0; x < cells_x; ++x) {
      double best = 0;
      for (const auto& c : rounded) {
        double dx = double(x - c[0]), dy = double(y - c[1]);
        best = std::max(best, std::exp(-(dx * dx + dy * dy) * inv));
      }
      heat[static_cast<size_t>(y * cells_x + x)] = T(best);
    }
  for (const auto& c : rounded) heat[static_cast<size_t>(c[1] * cells_x + c[0])] = T(1);
  return {heat, mask};
}

// Penalty-reduced pixelwise focal loss for Gaussian targets. Cells with
// target exactly 1 are positives; elsewhere the (1-target)^beta factor
// down-weights the ring around each center. Normalized by the positive count
// (at least 1). Predictions are clamped to [1e-6, 1 - 1e-6] first.
template <typename T>
TensorT<T> focal_loss(const TensorT<T>& pred, const std::vector<T>& target, double alpha = 2,
                      double beta = 4) {
  check_shape(static_cast<int64_t>(target.size()) == pred.numel(),
              "focal_loss: prediction/target size mismatch");
  const T lo = T(1e-6), hi = T(1) - T(1e-6);
  int64_t npos = 0;
  for (T t : target)
    if (t == T(1)) ++npos;
  const T norm = T(1) / T(std::max<int64_t>(1, npos));
  const auto& pd = pred.data();
  double acc = 0;
  for (size_t i = 0; i < pd.size(); ++i) {
    if (!std::isfinite(double(pd[i])) || !std::isfinite(double(target[i])))
      throw NaNDetectedError("focal_loss input not finite");
    double p = std::min(std::max(double(pd[i]), double(lo)), double(hi));
    double t = double(target[i]);
    if (t == 1.0)
      acc += -std::pow(1 - p, alpha) * std::log(p);
    else
      acc += -std::pow(1 - t, beta) * std::pow(p, alpha) * std::log(1 - p);
  }
  T value = T(acc) * norm;
  std::vector<T> tcopy = target;
  return TensorT<T>::make_op(
      {}, {value}, {pred},
      [tcopy, alpha, beta, norm, lo, hi](auto& self, const std::vector<T>& g, const auto& gp) {
        if (!gp[0]) return;
        const auto& pd2 = self.parents[0]->data;
        for (size_t i = 0; i < pd2.size(); ++i) {
          if (pd2[i] <= lo || pd2[i] >= hi) continue;  // clamped flat
          double p = double(pd2[i]);
          double t = double(tcopy[i]);
          double d;
          if (t == 1.0)
            d = alpha * std::pow(1 - p, alpha - 1) * std::log(p) - std::pow(1 - p, alpha) / p;
          else
            d = std::pow(1 - t, beta) *
                (-alpha * std::pow(p, alpha - 1) * std::log(1 - p) + std::pow(p, alpha) / (1 - p));
          (*gp[0])[i] += g[0] * norm * T(d);
        }
      });
}

// Mean L1 over valid rows of [K x 2] offsets; zero when no row is valid.
template <typename T>
TensorT<T> offset_l1_loss(const TensorT<T>& pred, const std::vector<std::array<T, 2>>& target,
                          const std::vector<uint8_t>& valid) {
  check_shape(pred.rank() == 2 && pred.dim(1) == 2, "offset_l1_loss: [K x 2] expected");
  int64_t k = pred.dim(0);
  check_shape(static_cast<int64_t>(target.size()) == k &&
                  static_cast<int64_t>(valid.size()) == k,
              "offset_l1_loss: row count mismatch");
  int64_t kv = 0;
  for (uint8_t v : valid)
    if (v) ++kv;
  if (kv == 0) {
    // constant zero, still a graph node so callers can compose uniformly
    return TensorT<T>::make_op({}, {T(0)}, {pred}, [](auto&, const auto&, const auto&) {});
  }
  const T norm = T(1) / T(kv);
  const auto& pd = pred.data();
  double acc = 0;
  for (int64_t i = 0; i < k; ++i) {
    if (!valid[static_cast<size_t>(i)]) continue;
    acc += std::abs(double(pd[i * 2]) - double(target[static_cast<size_t>(i)][0]));
    acc += std::abs(double(pd[i * 2 + 1]) - double(target[static_cast<size_t>(i)][1]));
  }
  std::vector<std::array<T, 2>> tc = target;
  std::vector<uint8_t> vc = valid;
  return TensorT<T>::make_op(
      {}, {T(acc) * norm}, {pred},
      [tc, vc, norm, k](auto& self, const std::vector<T>& g, const auto& gp) {
        if (!gp[0]) return;
        const auto& pd2 = self.parents[0]->data;
        for (int64_t i = 0; i < k; ++i) {
          if (!vc[static_cast<size_t>(i)]) continue;
          for (int c = 0; c < 2; ++c) {
            T diff = pd2[i * 2 + c] - tc[static_cast<size_t>(i)][static_cast<size_t>(c)];
            T s = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
            (*gp[0])[i * 2 + c] += g[0] * norm * s;
          }
        }
      });
}

// total = w_g * exp(-sigma_c) * l_ground + exp(-sigma_t) * l_track + l_img
//         + sigma_c + sigma_t
// Differentiable in all five scalar inputs.
template <typename T>
TensorT<T> total_loss(const TensorT<T>& l_ground, const TensorT<T>& l_track,
                      const TensorT<T>& l_img, const TensorT<T>& sigma_c,
                      const TensorT<T>& sigma_t, T ground_weight = T(10)) {
  for (const TensorT<T>* in : {&l_ground, &l_track, &l_img, &sigma_c, &sigma_t}) {
    check_shape(in->numel() == 1, "total_loss: scalar inputs expected");
    if (!std::isfinite(double(in->data()[0]))) throw NaNDetectedError("total_loss input");
  }
  auto g = scale(mul(exp_op(scale(sigma_c, T(-1))), l_ground), ground_weight);
  auto t = mul(exp_op(scale(sigma_t, T(-1))), l_track);
  return add(add(add(g, t), l_img), add(sigma_c, sigma_t));
}

// Displacement targets: for each live track whose person id still exists at
// t0, the offset is position_t0 - position_t0-1 in cells; absent ids are
// masked invalid.
template <typename T>
std::pair<std::vector<std::array<T, 2>>, std::vector<uint8_t>> build_offset_targets(
    const std::vector<int64_t>& track_person_ids,
    const std::vector<std::array<double, 2>>& prev_cells,
    const std::map<int64_t, std::array<double, 2>>& cur_cells) {
  if (track_person_ids.size() != prev_cells.size())
    throw ShapeMismatchError("build_offset_targets: id/position count mismatch");
  std::vector<std::array<T, 2>> offsets(track_person_ids.size(), {T(0), T(0)});
  std::vector<uint8_t> valid(track_person_ids.size(), 0);
  for (size_t i = 0; i < track_person_ids.size(); ++i) {
    auto it = cur_cells.find(track_person_ids[i]);
    if (it == cur_cells.end()) continue;
    offsets[i] = {T(it->second[0] - prev_cells[i][0]), T(it->second[1] - prev_cells[i][1])};
    valid[i] = 1;
  }
  return {offsets, valid};
}

// Per-branch values of one training step, recorded after the forward pass.
struct LossBreakdown {
  double l_ground = 0;
  double l_track = 0;
  double l_img = 0;
  double sigma_c = 0;
  double sigma_t = 0;
  double total = 0;
  // instrumentation: training samples track queries at ground-truth previous
  // positions; inference uses tracker state instead
  bool teacher_forced = false;
  int num_tracks = 0;
};

}  // namespace mvtrack
