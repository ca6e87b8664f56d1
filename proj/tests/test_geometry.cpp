#include "mvtrack/geometry.hpp"

#include <array>
#include <random>

#include "doctest.h"
#include "mvtrack/ref/naive_kernels.hpp"
#include "test_util.hpp"

using namespace mvtrack;

namespace {

CameraCalibration make_calib(double fx, double fy, double cx, double cy,
                             std::array<double, 9> r, std::array<double, 3> t, int w, int h) {
  CameraCalibration c;
  c.intrinsics = {fx, 0, cx, 0, fy, cy, 0, 0, 1};
  c.rotation = r;
  c.translation = t;
  c.image_width = w;
  c.image_height = h;
  c.validate();
  return c;
}

constexpr std::array<double, 9> kIdentity = {1, 0, 0, 0, 1, 0, 0, 0, 1};

std::array<double, 9> yaw_rotation(double rad) {
  double c = std::cos(rad), s = std::sin(rad);
  return {c, -s, 0, s, c, 0, 0, 0, 1};
}

// Independent route: the full 4x4 homogeneous projection matrix.
std::array<double, 16> homogeneous_matrix(const CameraCalibration& c) {
  std::array<double, 16> m{};
  // top 3 rows = K * [R|T]
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += c.intrinsics[i * 3 + k] * c.rotation[k * 3 + j];
      m[i * 4 + j] = acc;
    }
    double acc = 0;
    for (int k = 0; k < 3; ++k) acc += c.intrinsics[i * 3 + k] * c.translation[k];
    m[i * 4 + 3] = acc;
  }
  m[15] = 1.0;
  return m;
}

std::array<double, 3> project_via_matrix(const std::array<double, 16>& m, double x, double y,
                                         double z) {
  double in[4] = {x, y, z, 1.0};
  double out[4] = {0, 0, 0, 0};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) out[i] += m[i * 4 + j] * in[j];
  return {out[0] / out[2], out[1] / out[2], out[2]};
}

}  // namespace

TEST_CASE("pinhole projection with identity extrinsics") {
  auto c = make_calib(100, 100, 64, 36, kIdentity, {0, 0, 0}, 128, 72);
  auto p = project_world_to_image(c, 1, 2, 10);
  CHECK(p.u == doctest::Approx(74.0));
  CHECK(p.v == doctest::Approx(56.0));
  CHECK(p.depth == doctest::Approx(10.0));

  auto pp = project_world_to_image(c, 0, 0, 5);
  CHECK(pp.u == doctest::Approx(64.0));  // principal point
  CHECK(pp.v == doctest::Approx(36.0));
  CHECK(pp.depth == doctest::Approx(5.0));
}

TEST_CASE("projection rejects non-positive depth") {
  auto c = make_calib(100, 100, 64, 36, kIdentity, {0, 0, 0}, 128, 72);
  CHECK_THROWS_AS(project_world_to_image(c, 0, 0, -1), DepthNonPositiveError);
  CHECK_THROWS_AS(project_world_to_image(c, 1, 1, 0), DepthNonPositiveError);
  CHECK_FALSE(try_project(c, 0, 0, 0).ok);
}

TEST_CASE("projection matches homogeneous-matrix oracle on 1000 random pairs") {
  std::mt19937_64 gen(123);
  std::uniform_real_distribution<double> uf(-1, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    double yaw = uf(gen) * M_PI;
    auto c = make_calib(80 + 40 * uf(gen), 80 + 40 * uf(gen), 60 + 10 * uf(gen),
                        30 + 10 * uf(gen), yaw_rotation(yaw), {uf(gen), uf(gen), uf(gen)}, 128,
                        72);
    // sample a point guaranteed in front of the camera: pick camera coords,
    // pull back to world
    double pc[3] = {2 * uf(gen), 2 * uf(gen), 2 + uf(gen)};
    const auto& r = c.rotation;
    double w[3] = {0, 0, 0};
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) w[i] += r[k * 3 + i] * (pc[k] - c.translation[k]);
    auto p = project_world_to_image(c, w[0], w[1], w[2]);
    auto m = homogeneous_matrix(c);
    auto q = project_via_matrix(m, w[0], w[1], w[2]);
    CHECK(std::abs(p.u - q[0]) < 1e-9);
    CHECK(std::abs(p.v - q[1]) < 1e-9);
    CHECK(std::abs(p.depth - q[2]) < 1e-9);
  }
}

TEST_CASE("projection is homogeneous in camera-frame scale") {
  auto c = make_calib(90, 95, 64, 36, yaw_rotation(0.5), {0.3, -0.2, 0.1}, 128, 72);
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> uf(-1, 1);
  for (int trial = 0; trial < 100; ++trial) {
    double pc[3] = {uf(gen), uf(gen), 2 + uf(gen)};
    for (double lam : {0.5, 2.0, 7.5}) {
      double a[3], b[3];
      const auto& r = c.rotation;
      for (int i = 0; i < 3; ++i) {
        a[i] = 0;
        b[i] = 0;
        for (int k = 0; k < 3; ++k) {
          a[i] += r[k * 3 + i] * (pc[k] - c.translation[k]);
          b[i] += r[k * 3 + i] * (lam * pc[k] - c.translation[k]);
        }
      }
      auto pa = project_world_to_image(c, a[0], a[1], a[2]);
      auto pb = project_world_to_image(c, b[0], b[1], b[2]);
      CHECK(pa.u == doctest::Approx(pb.u).epsilon(1e-9));
      CHECK(pa.v == doctest::Approx(pb.v).epsilon(1e-9));
    }
  }
}

TEST_CASE("calibration invariants are enforced") {
  CHECK_THROWS_AS(make_calib(100, 100, 64, 36, {1, 0, 0, 0, 1, 0, 0, 0, 1.5}, {0, 0, 0}, 64, 32),
                  ConfigInvalidError);
  CameraCalibration c;
  c.intrinsics = {100, 0, 64, 0, 100, 36, 0, 0.5, 1};
  c.rotation = kIdentity;
  c.image_width = 64;
  c.image_height = 32;
  CHECK_THROWS_AS(c.validate(), ConfigInvalidError);
  c.intrinsics[7] = 0;
  c.image_width = 0;
  CHECK_THROWS_AS(c.validate(), ConfigInvalidError);
}

TEST_CASE("ground grid round-trips exactly at cell centers") {
  GroundGrid g{1024, 1024, 0.1, 3.25, -1.7};
  for (int64_t c = 0; c < 1024; ++c) {
    double wx = g.cell_to_world_x(double(c));
    CHECK(g.world_to_cell_x(wx) == double(c));
    double wy = g.cell_to_world_y(double(c));
    CHECK(g.world_to_cell_y(wy) == double(c));
  }
  // continuous positions stay continuous
  CHECK(g.world_to_cell_x(3.25 + 0.05) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("scaled grids keep the same coverage") {
  GroundGrid g{32, 20, 0.4, 0.2, 0.2};
  auto g2 = g.scaled(2);
  CHECK(g2.cells_x == 16);
  CHECK(g2.meters_per_cell == doctest::Approx(0.8));
  // coarse cell 0 center = mean of fine cells 0 and 1 centers
  CHECK(g2.cell_to_world_x(0) ==
        doctest::Approx(0.5 * (g.cell_to_world_x(0) + g.cell_to_world_x(1))));
  CHECK_THROWS_AS(g.scaled(3), ConfigInvalidError);
}

TEST_CASE("bilinear_sample contract") {
  TensorD map = TensorD::from({2, 2, 1}, {0, 1, 2, 3});
  auto [v, ok] = bilinear_sample(map, 0.5, 0.5);
  CHECK(ok);
  CHECK(v[0] == doctest::Approx(1.5));

  auto [v2, ok2] = bilinear_sample(map, 1.0, 0.0);
  CHECK(ok2);
  CHECK(v2[0] == doctest::Approx(1.0));

  auto [v3, ok3] = bilinear_sample(map, -0.1, 0.0);
  CHECK_FALSE(ok3);
  CHECK(v3[0] == 0.0);
}

TEST_CASE("lift: constant field passes through for visible voxels") {
  // camera looking straight down the x axis across the grid, at z=1
  std::array<double, 9> r = {0, 1, 0, 0, 0, -1, 1, 0, 0};  // cam z = world +x
  auto c = make_calib(20, 20, 16, 8, r, {0, 0, 0}, 128, 64);
  // adjust T so the camera sits at world (-2, 0, 1): T = -R*eye
  c.translation = {0, 1, -(-2.0)};
  c.validate();

  GroundGrid g{8, 8, 0.5, -1.75, -1.75};
  std::vector<double> heights = {0.0, 1.0};
  TensorD feat = TensorD::full({16, 32, 3}, 7.0);
  auto vals = lift_to_voxels<double>({feat}, {c}, g, heights, 4.0);
  int visible = 0, invisible = 0;
  for (double v : vals.data()) {
    if (v == 0.0)
      ++invisible;
    else {
      CHECK(v == doctest::Approx(7.0));
      ++visible;
    }
  }
  CHECK(visible > 0);

  // two cameras seeing a voxel average their features: 2 and 4 -> 3
  auto c2 = c;
  TensorD f2 = TensorD::full({16, 32, 3}, 2.0);
  TensorD f4 = TensorD::full({16, 32, 3}, 4.0);
  auto both = lift_to_voxels<double>({f2, f4}, {c, c2}, g, heights, 4.0);
  bool saw = false;
  for (double v : both.data()) {
    if (v != 0.0) {
      CHECK(v == doctest::Approx(3.0));
      saw = true;
    }
  }
  CHECK(saw);
}

TEST_CASE("lift rejects camera/feature count mismatch") {
  auto c = make_calib(20, 20, 16, 8, kIdentity, {0, 0, 0}, 128, 64);
  GroundGrid g{4, 4, 0.5, 0, 0};
  TensorD feat = TensorD::zeros({8, 8, 2});
  CHECK_THROWS_AS((lift_to_voxels<double>({feat, feat}, {c}, g, {0.0}, 4.0)),
                  ShapeMismatchError);
}

TEST_CASE("lift matches the naive per-voxel oracle on a random 2-camera scene") {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> uf(-1, 1);
  GroundGrid g{6, 5, 0.3, -0.8, -0.7};
  std::vector<double> heights = {0.0, 0.6, 1.2};

  std::vector<CameraCalibration> calibs;
  std::vector<TensorD> feats;
  std::vector<std::vector<double>> rawfeats;
  std::vector<int64_t> fh, fw;
  std::vector<std::array<double, 16>> mats;
  for (int cam = 0; cam < 2; ++cam) {
    auto r = yaw_rotation(0.4 * uf(gen));
    // tilt the camera to look slightly down: compose a small x-axis rotation
    double a = 0.9 + 0.2 * uf(gen);
    std::array<double, 9> rx = {1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a)};
    std::array<double, 9> rot{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) rot[i * 3 + j] += rx[i * 3 + k] * r[k * 3 + j];
    auto c = make_calib(30 + 5 * uf(gen), 30 + 5 * uf(gen), 20, 12, rot,
                        {uf(gen), uf(gen), 3 + uf(gen)}, 160, 96);
    calibs.push_back(c);
    auto f = testutil::random_tensor<double>({12, 20, 4}, gen);
    feats.push_back(f);
    rawfeats.push_back(f.data());
    fh.push_back(12);
    fw.push_back(20);
    mats.push_back(homogeneous_matrix(c));
  }

  auto fast = lift_to_voxels<double>(feats, calibs, g, heights, 4.0);
  auto naive = ref::lift_naive(rawfeats, fh, fw, 4, mats, g.cells_x, g.cells_y,
                               g.meters_per_cell, g.origin_x, g.origin_y, heights, 4.0);
  REQUIRE(fast.numel() == static_cast<int64_t>(naive.size()));
  for (size_t i = 0; i < naive.size(); ++i)
    CHECK(std::abs(fast.data()[i] - naive[i]) < 1e-6);
}

TEST_CASE("lift is permutation invariant over cameras") {
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> uf(-1, 1);
  GroundGrid g{5, 4, 0.4, -0.6, -0.5};
  std::vector<double> heights = {0.0, 0.9};
  std::vector<CameraCalibration> calibs;
  std::vector<TensorD> feats;
  for (int cam = 0; cam < 3; ++cam) {
    double a = 1.0 + 0.1 * uf(gen);
    std::array<double, 9> rx = {1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a)};
    calibs.push_back(make_calib(25, 25, 16, 10, rx, {uf(gen), uf(gen), 3.0}, 128, 80));
    feats.push_back(testutil::random_tensor<double>({10, 16, 2}, gen));
  }
  auto a = lift_to_voxels<double>(feats, calibs, g, heights, 4.0);
  auto b = lift_to_voxels<double>({feats[2], feats[0], feats[1]},
                                  {calibs[2], calibs[0], calibs[1]}, g, heights, 4.0);
  for (size_t i = 0; i < a.data().size(); ++i)
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
}

TEST_CASE("lift back-propagates into view features") {
  std::mt19937_64 gen(78);
  GroundGrid g{4, 4, 0.5, -0.75, -0.75};
  std::array<double, 9> rx = {1, 0, 0, 0, 0, -1, 0, 1, 0};  // looking along +y.. adjust below
  CameraCalibration c;
  c.intrinsics = {30, 0, 16, 0, 30, 10, 0, 0, 1};
  c.rotation = rx;
  c.translation = {0, 0, 4};
  c.image_width = 128;
  c.image_height = 80;
  c.validate();
  TensorD feat = testutil::random_tensor<double>({10, 16, 2}, gen);
  double err = testutil::fd_max_rel_err(
      [&] {
        auto v = lift_to_voxels<double>({feat}, {c}, g, {0.0, 1.0}, 4.0);
        return sum(mul(v, v));
      },
      {&feat});
  CHECK(err < 1e-5);
}

TEST_CASE("collapse_height layout and identity") {
  VoxelGridT<double> vg;
  vg.ground = GroundGrid{1, 1, 0.1, 0, 0};
  vg.heights = {0.0, 0.5};
  vg.values = TensorD::from({2, 1, 1, 3}, {1, 2, 3, 10, 20, 30}, true);
  auto out = collapse_height(vg);
  CHECK(out.shape() == std::vector<int64_t>{1, 1, 6});
  CHECK(out.data() == std::vector<double>{1, 2, 3, 10, 20, 30});  // height-0 channels first

  // single height: output equals the input slice
  VoxelGridT<double> vg1;
  vg1.ground = vg.ground;
  vg1.heights = {0.0};
  vg1.values = TensorD::from({1, 1, 1, 3}, {4, 5, 6});
  auto out1 = collapse_height(vg1);
  CHECK(out1.data() == std::vector<double>{4, 5, 6});

  // index-arithmetic oracle on a larger grid
  std::mt19937_64 gen(5);
  VoxelGridT<double> vg3;
  vg3.ground = GroundGrid{4, 4, 0.1, 0, 0};
  vg3.heights = {0.0, 0.3, 0.6};
  vg3.values = testutil::random_tensor<double>({3, 4, 4, 2}, gen);
  auto big = collapse_height(vg3);
  CHECK(big.shape() == std::vector<int64_t>{4, 4, 6});
  for (int64_t h = 0; h < 3; ++h)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 4; ++x)
        for (int64_t ch = 0; ch < 2; ++ch)
          CHECK(big.at({y, x, h * 2 + ch}) == vg3.values.at({h, y, x, ch}));

  // gradients route back through the reshape
  double err = testutil::fd_max_rel_err(
      [&] {
        auto o = collapse_height(vg3);
        return sum(mul(o, o));
      },
      {&vg3.values});
  CHECK(err < 1e-6);
}

TEST_CASE("calibration text round-trips and validates") {
  auto c1 = make_calib(100, 100, 64, 36, yaw_rotation(0.3), {0.5, -1, 2}, 128, 72);
  auto c2 = make_calib(90, 95, 60, 30, kIdentity, {0, 0, 0}, 64, 32);
  std::string text = format_calibrations({c1, c2});
  auto parsed = parse_calibrations(text, "mem");
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].intrinsics == c1.intrinsics);
  CHECK(parsed[0].rotation == c1.rotation);
  CHECK(parsed[0].translation == c1.translation);
  CHECK(parsed[1].image_width == 64);
  // byte-identical rewrite
  CHECK(format_calibrations(parsed) == text);

  // lenient whitespace
  auto sloppy = parse_calibrations(
      "K  100 0 64   0 100 36 0 0 1\nR 1 0 0 0 1 0 0 0 1\nT  0 0   0\nSIZE 64 32\n", "mem");
  CHECK(sloppy.size() == 1);

  // strict on count
  CHECK_THROWS_AS(parse_calibrations("K 1 2 3\nR 1 0 0 0 1 0 0 0 1\nT 0 0 0\nSIZE 4 4\n", "mem"),
                  FormatError);
  CHECK_THROWS_AS(parse_calibrations("K 100 0 64 0 100 36 0 0 1\nT 0 0 0\nSIZE 4 4\n", "mem"),
                  FormatError);
  CHECK_THROWS_AS(parse_calibrations("", "mem"), FormatError);
}
