#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <omp.h>

#include "mvtrack/errors.hpp"
#include "mvtrack/nn_ops.hpp"
#include "mvtrack/tensor.hpp"

// Pinhole camera math, ground-plane grids and the multi-height feature lift.
// Calibration math runs in double; feature tensors carry the library scalar.
namespace mvtrack {

struct CameraCalibration {
  std::array<double, 9> intrinsics{};   // K, row-major
  std::array<double, 9> rotation{};     // R, row-major, world -> camera
  std::array<double, 3> translation{};  // T, meters
  int image_width = 0;
  int image_height = 0;

  void validate() const {
    if (image_width <= 0 || image_height <= 0)
      throw ConfigInvalidError("calibration: image size must be positive");
    const auto& k = intrinsics;
    if (k[8] != 1.0 || k[6] != 0.0 || k[7] != 0.0)
      throw ConfigInvalidError("calibration: last K row must be [0 0 1]");
    // R^T R = I within 1e-9 per entry
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double dot = 0;
        for (int r = 0; r < 3; ++r) dot += rotation[r * 3 + i] * rotation[r * 3 + j];
        double want = (i == j) ? 1.0 : 0.0;
        if (std::abs(dot - want) > 1e-9)
          throw ConfigInvalidError("calibration: rotation is not orthonormal");
      }
  }
};

struct Projection {
  double u = 0;
  double v = 0;
  double depth = 0;  // camera-frame z before dehomogenization
  bool ok = false;   // false when the point is behind or on the camera plane
};

inline Projection try_project(const CameraCalibration& c, double x, double y, double z) {
  const auto& r = c.rotation;
  const auto& t = c.translation;
  double cx = r[0] * x + r[1] * y + r[2] * z + t[0];
  double cy = r[3] * x + r[4] * y + r[5] * z + t[1];
  double cz = r[6] * x + r[7] * y + r[8] * z + t[2];
  Projection p;
  p.depth = cz;
  if (cz <= 1e-9) return p;
  const auto& k = c.intrinsics;
  p.u = (k[0] * cx + k[1] * cy + k[2] * cz) / cz;
  p.v = (k[3] * cx + k[4] * cy + k[5] * cz) / cz;
  p.ok = true;
  return p;
}

// K[R|T] projection dehomogenized by the camera-frame z; throws when the
// point is not in front of the camera.
inline Projection project_world_to_image(const CameraCalibration& c, double x, double y,
                                         double z) {
  Projection p = try_project(c, x, y, z);
  if (!p.ok) throw DepthNonPositiveError("point is behind or on the camera plane");
  return p;
}

// Discretized ground plane. Cell (0,0)'s center sits at (origin_x, origin_y)
// world meters; cell centers step by meters_per_cell.
struct GroundGrid {
  int64_t cells_x = 0;
  int64_t cells_y = 0;
  double meters_per_cell = 0.1;
  double origin_x = 0;
  double origin_y = 0;

  void validate() const {
    if (meters_per_cell <= 0) throw ConfigInvalidError("grid: meters_per_cell must be > 0");
    if (cells_x <= 0 || cells_y <= 0) throw ConfigInvalidError("grid: cell counts must be > 0");
  }

  double cell_to_world_x(double cx) const { return origin_x + cx * meters_per_cell; }
  double cell_to_world_y(double cy) const { return origin_y + cy * meters_per_cell; }

  // Inverse of cell_to_world; snaps to the integer lattice when the input is
  // bit-exactly a cell center so the round trip is exact there.
  double world_to_cell_x(double wx) const { return inverse(wx, origin_x); }
  double world_to_cell_y(double wy) const { return inverse(wy, origin_y); }

  bool cell_in_bounds(double cx, double cy) const {
    return cx >= 0 && cx <= double(cells_x - 1) && cy >= 0 && cy <= double(cells_y - 1);
  }

  // Grid of the same extent with `factor`-times coarser cells; coarse cell
  // (0,0) covers fine cells 0..factor-1, so its center shifts by half the
  // size difference.
  GroundGrid scaled(int factor) const {
    if (factor < 1 || cells_x % factor != 0 || cells_y % factor != 0)
      throw ConfigInvalidError("grid: cell counts not divisible by scale factor");
    GroundGrid g;
    g.cells_x = cells_x / factor;
    g.cells_y = cells_y / factor;
    g.meters_per_cell = meters_per_cell * factor;
    g.origin_x = origin_x + 0.5 * (factor - 1) * meters_per_cell;
    g.origin_y = origin_y + 0.5 * (factor - 1) * meters_per_cell;
    return g;
  }

 private:
  double inverse(double w, double origin) const {
    double c = (w - origin) / meters_per_cell;
    double r = std::round(c);
    if (r == c) return c;
    // exact-center snap: if w is precisely the representable center of cell
    // r, the division error of up to one ulp must not leak out
    if (origin + r * meters_per_cell == w) return r;
    return c;
  }
};

template <typename T>
struct VoxelGridT {
  GroundGrid ground;
  std::vector<double> heights;  // strictly increasing sample heights, meters
  TensorT<T> values;            // [num_heights x cells_y x cells_x x C]

  void validate_layout() const {
    ground.validate();
    if (heights.empty()) throw ConfigInvalidError("voxel grid: no sample heights");
    for (size_t i = 0; i < heights.size(); ++i) {
      if (heights[i] < 0) throw ConfigInvalidError("voxel grid: negative height");
      if (i > 0 && heights[i] <= heights[i - 1])
        throw ConfigInvalidError("voxel grid: heights must be strictly increasing");
    }
    if (values.defined()) {
      if (values.rank() != 4 || values.dim(0) != static_cast<int64_t>(heights.size()) ||
          values.dim(1) != ground.cells_y || values.dim(2) != ground.cells_x)
        throw ShapeMismatchError("voxel grid: values shape inconsistent");
    }
  }
};

using VoxelGrid = VoxelGridT<float>;

// Plain bilinear sample of a [H x W x C] map at continuous index (u, v).
// Returns the interpolated vector and whether (u, v) was inside
// [0, W-1] x [0, H-1]; outside samples are zero and invalid.
template <typename T>
std::pair<std::vector<T>, bool> bilinear_sample(const TensorT<T>& map, double u, double v) {
  check_shape(map.rank() == 3 && map.numel() > 0, "bilinear_sample: non-empty [H x W x C] map");
  int64_t h = map.dim(0), w = map.dim(1), c = map.dim(2);
  std::vector<T> out(static_cast<size_t>(c), T(0));
  auto t = bilinear_tap<double>(u, v, h, w);
  if (!t.valid) return {out, false};
  const T* md = map.data().data();
  const double w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
  const double w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
  const T* p00 = md + (t.y0 * w + t.x0) * c;
  const T* p10 = md + (t.y0 * w + t.x1) * c;
  const T* p01 = md + (t.y1 * w + t.x0) * c;
  const T* p11 = md + (t.y1 * w + t.x1) * c;
  for (int64_t j = 0; j < c; ++j)
    out[j] = T(w00 * p00[j] + w10 * p10[j] + w01 * p01[j] + w11 * p11[j]);
  return {out, true};
}

// Feature lift: every voxel center is projected into every camera, the
// camera's feature map is sampled at (u, v) / feature_stride, and valid
// samples are averaged. Voxels seen by no camera stay zero. Differentiable
// into the view feature maps; the geometry is constant.
template <typename T>
TensorT<T> lift_to_voxels(const std::vector<TensorT<T>>& view_features,
                          const std::vector<CameraCalibration>& calibs,
                          const GroundGrid& ground, const std::vector<double>& heights,
                          double feature_stride) {
  if (view_features.size() != calibs.size())
    throw ShapeMismatchError("lift_to_voxels: camera count differs from feature map count");
  check_shape(!view_features.empty(), "lift_to_voxels: no cameras");
  int64_t c = view_features[0].dim(2);
  for (const auto& f : view_features)
    check_shape(f.rank() == 3 && f.dim(2) == c, "lift_to_voxels: feature channel mismatch");
  int64_t nh = static_cast<int64_t>(heights.size());
  int64_t cy = ground.cells_y, cx = ground.cells_x;
  int64_t ncam = static_cast<int64_t>(calibs.size());
  std::vector<T> out(static_cast<size_t>(nh * cy * cx * c), T(0));

  std::vector<const T*> fdat(view_features.size());
  std::vector<int64_t> fh(view_features.size()), fw(view_features.size());
  for (size_t i = 0; i < view_features.size(); ++i) {
    fdat[i] = view_features[i].data().data();
    fh[i] = view_features[i].dim(0);
    fw[i] = view_features[i].dim(1);
  }

#pragma omp parallel for collapse(2) if (nh * cy * cx > 512)
  for (int64_t hz = 0; hz < nh; ++hz) {
    for (int64_t gy = 0; gy < cy; ++gy) {
      for (int64_t gx = 0; gx < cx; ++gx) {
        double wx = ground.cell_to_world_x(double(gx));
        double wy = ground.cell_to_world_y(double(gy));
        double wz = heights[static_cast<size_t>(hz)];
        T* orow = out.data() + ((hz * cy + gy) * cx + gx) * c;
        int cnt = 0;
        for (int64_t cam = 0; cam < ncam; ++cam) {
          Projection p = try_project(calibs[static_cast<size_t>(cam)], wx, wy, wz);
          if (!p.ok) continue;
          auto t = bilinear_tap<double>(p.u / feature_stride, p.v / feature_stride, fh[cam],
                                        fw[cam]);
          if (!t.valid) continue;
          ++cnt;
          const double w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
          const double w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
          const T* p00 = fdat[cam] + (t.y0 * fw[cam] + t.x0) * c;
          const T* p10 = fdat[cam] + (t.y0 * fw[cam] + t.x1) * c;
          const T* p01 = fdat[cam] + (t.y1 * fw[cam] + t.x0) * c;
          const T* p11 = fdat[cam] + (t.y1 * fw[cam] + t.x1) * c;
          for (int64_t j = 0; j < c; ++j)
            orow[j] += T(w00 * p00[j] + w10 * p10[j] + w01 * p01[j] + w11 * p11[j]);
        }
        if (cnt > 1)
          for (int64_t j = 0; j < c; ++j) orow[j] /= T(cnt);
      }
    }
  }

  GroundGrid g = ground;
  std::vector<double> hcopy = heights;
  std::vector<CameraCalibration> ccopy = calibs;
  return TensorT<T>::make_op(
      {nh, cy, cx, c}, std::move(out), view_features,
      [g, hcopy, ccopy, nh, cy, cx, c, fh, fw, feature_stride](auto&,
                                                               const std::vector<T>& grad,
                                                               const auto& gp) {
        int64_t ncam = static_cast<int64_t>(ccopy.size());
        for (int64_t hz = 0; hz < nh; ++hz) {
          for (int64_t gy = 0; gy < cy; ++gy) {
            for (int64_t gx = 0; gx < cx; ++gx) {
              double wx = g.cell_to_world_x(double(gx));
              double wy = g.cell_to_world_y(double(gy));
              double wz = hcopy[static_cast<size_t>(hz)];
              // first pass: count valid views (the mean divisor)
              int cnt = 0;
              for (int64_t cam = 0; cam < ncam; ++cam) {
                Projection p = try_project(ccopy[static_cast<size_t>(cam)], wx, wy, wz);
                if (!p.ok) continue;
                if (bilinear_tap<double>(p.u / feature_stride, p.v / feature_stride, fh[cam],
                                         fw[cam])
                        .valid)
                  ++cnt;
              }
              if (cnt == 0) continue;
              const T inv = T(1) / T(cnt);
              const T* grow = grad.data() + ((hz * cy + gy) * cx + gx) * c;
              for (int64_t cam = 0; cam < ncam; ++cam) {
                if (!gp[static_cast<size_t>(cam)]) continue;
                Projection p = try_project(ccopy[static_cast<size_t>(cam)], wx, wy, wz);
                if (!p.ok) continue;
                auto t = bilinear_tap<double>(p.u / feature_stride, p.v / feature_stride,
                                              fh[cam], fw[cam]);
                if (!t.valid) continue;
                auto& gv = *gp[static_cast<size_t>(cam)];
                const T w00 = T((1 - t.fx) * (1 - t.fy)), w10 = T(t.fx * (1 - t.fy));
                const T w01 = T((1 - t.fx) * t.fy), w11 = T(t.fx * t.fy);
                int64_t b00 = (t.y0 * fw[cam] + t.x0) * c, b10 = (t.y0 * fw[cam] + t.x1) * c;
                int64_t b01 = (t.y1 * fw[cam] + t.x0) * c, b11 = (t.y1 * fw[cam] + t.x1) * c;
                for (int64_t j = 0; j < c; ++j) {
                  T gval = grow[j] * inv;
                  gv[b00 + j] += gval * w00;
                  gv[b10 + j] += gval * w10;
                  gv[b01 + j] += gval * w01;
                  gv[b11 + j] += gval * w11;
                }
              }
            }
          }
        }
      });
}

// Fills grid.values per the grid's own layout.
template <typename T>
void lift_to_voxels(const std::vector<TensorT<T>>& view_features,
                    const std::vector<CameraCalibration>& calibs, VoxelGridT<T>& grid,
                    double feature_stride) {
  grid.values = lift_to_voxels(view_features, calibs, grid.ground, grid.heights, feature_stride);
  grid.validate_layout();
}

// Concatenates the height axis into channels, heights in ascending order:
// out[y][x][h*C + c] = values[h][y][x][c].
template <typename T>
TensorT<T> collapse_height(const VoxelGridT<T>& grid) {
  const TensorT<T>& v = grid.values;
  check_shape(v.defined() && v.rank() == 4, "collapse_height: unfilled voxel grid");
  int64_t nh = v.dim(0), cy = v.dim(1), cx = v.dim(2), c = v.dim(3);
  std::vector<T> out(static_cast<size_t>(cy * cx * nh * c));
  const T* vd = v.data().data();
  for (int64_t h = 0; h < nh; ++h)
    for (int64_t y = 0; y < cy; ++y)
      for (int64_t x = 0; x < cx; ++x) {
        const T* src = vd + ((h * cy + y) * cx + x) * c;
        T* dst = out.data() + ((y * cx + x) * nh + h) * c;
        for (int64_t j = 0; j < c; ++j) dst[j] = src[j];
      }
  return TensorT<T>::make_op(
      {cy, cx, nh * c}, std::move(out), {v},
      [nh, cy, cx, c](auto&, const std::vector<T>& g, const auto& gp) {
        if (!gp[0]) return;
        for (int64_t h = 0; h < nh; ++h)
          for (int64_t y = 0; y < cy; ++y)
            for (int64_t x = 0; x < cx; ++x) {
              T* dst = gp[0]->data() + ((h * cy + y) * cx + x) * c;
              const T* src = g.data() + ((y * cx + x) * nh + h) * c;
              for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
            }
      });
}

// calib.txt parsing/writing (one camera per block: K, R, T, SIZE lines).
std::vector<CameraCalibration> parse_calibrations(const std::string& text,
                                                  const std::string& context);
std::vector<CameraCalibration> load_calibrations(const std::string& path);
std::string format_calibrations(const std::vector<CameraCalibration>& calibs);
void save_calibrations(const std::string& path, const std::vector<CameraCalibration>& calibs);

}  // namespace mvtrack
