#include "mvtrack/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mvtrack {

namespace {

// look-at rotation with image y pointing downward in the world
std::array<double, 9> look_at_rotation(const std::array<double, 3>& eye,
                                       const std::array<double, 3>& target) {
  double f[3] = {target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]};
  double fn = std::sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2]);
  for (double& v : f) v /= fn;
  // x = normalize(f x up), up = +z
  double x[3] = {f[1] * 1.0 - f[2] * 0.0, f[2] * 0.0 - f[0] * 1.0, f[0] * 0.0 - f[1] * 0.0};
  double xn = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
  for (double& v : x) v /= xn;
  double y[3] = {f[1] * x[2] - f[2] * x[1], f[2] * x[0] - f[0] * x[2], f[0] * x[1] - f[1] * x[0]};
  return {x[0], x[1], x[2], y[0], y[1], y[2], f[0], f[1], f[2]};
}

}  // namespace

std::vector<CameraCalibration> ring_cameras(const SceneConfig& cfg) {
  std::vector<CameraCalibration> out;
  double cx = cfg.world_x / 2.0, cy = cfg.world_y / 2.0;
  double base = std::atan2(cfg.world_y, cfg.world_x);  // toward a corner
  double tilt = cfg.camera_tilt_deg * M_PI / 180.0;
  for (int i = 0; i < cfg.num_cameras; ++i) {
    double ang = base + 2.0 * M_PI * double(i) / double(cfg.num_cameras);
    std::array<double, 3> eye = {cx + cfg.camera_radius * std::cos(ang),
                                 cy + cfg.camera_radius * std::sin(ang), cfg.camera_height};
    // horizontal direction toward the center, pitched down by the tilt
    double hx = cx - eye[0], hy = cy - eye[1];
    double hn = std::sqrt(hx * hx + hy * hy);
    hx /= hn;
    hy /= hn;
    std::array<double, 3> target = {eye[0] + hx * std::cos(tilt), eye[1] + hy * std::cos(tilt),
                                    eye[2] - std::sin(tilt)};
    CameraCalibration c;
    c.rotation = look_at_rotation(eye, target);
    // T = -R * eye
    for (int r = 0; r < 3; ++r)
      c.translation[static_cast<size_t>(r)] =
          -(c.rotation[static_cast<size_t>(r * 3 + 0)] * eye[0] +
            c.rotation[static_cast<size_t>(r * 3 + 1)] * eye[1] +
            c.rotation[static_cast<size_t>(r * 3 + 2)] * eye[2]);
    c.intrinsics = {cfg.focal, 0, cfg.image_width / 2.0,
                    0, cfg.focal, cfg.image_height / 2.0,
                    0, 0, 1};
    c.image_width = cfg.image_width;
    c.image_height = cfg.image_height;
    c.validate();
    out.push_back(c);
  }
  return out;
}

std::array<float, 3> agent_color(int64_t id) {
  uint64_t h = splitmix64(static_cast<uint64_t>(id) + 0x51ed270b);
  auto chan = [&](int k) { return 0.35f + 0.6f * float((h >> (k * 16)) & 0xffff) / 65535.0f; };
  return {chan(0), chan(1), chan(2)};
}

Tensor render_view(const std::vector<AgentSnapshot>& agents, const CameraCalibration& calib,
                   const SceneConfig& cfg) {
  const int w = calib.image_width, h = calib.image_height;
  Tensor img({h, w, 3});
  std::fill(img.data().begin(), img.data().end(), 0.08f);

  struct Drawn {
    double depth;
    double u0, v0, u1, v1;  // foot and head pixels
    double radius_px;
    std::array<float, 3> color;
    int64_t id;
  };
  std::vector<Drawn> draw;
  for (const auto& a : agents) {
    Projection foot = try_project(calib, a.x, a.y, 0.0);
    Projection head = try_project(calib, a.x, a.y, cfg.agent_height);
    if (!foot.ok || !head.ok) continue;
    Drawn d;
    d.depth = foot.depth;
    d.u0 = foot.u;
    d.v0 = foot.v;
    d.u1 = head.u;
    d.v1 = head.v;
    d.radius_px = calib.intrinsics[0] * cfg.agent_radius / foot.depth;
    d.color = agent_color(a.id);
    d.id = a.id;
    draw.push_back(d);
  }
  // painter's algorithm: far first, near overwrites
  std::sort(draw.begin(), draw.end(), [](const Drawn& a, const Drawn& b) {
    if (a.depth != b.depth) return a.depth > b.depth;
    return a.id < b.id;
  });
  for (const auto& d : draw) {
    int x0 = std::max(0, int(std::floor(std::min(d.u0, d.u1) - d.radius_px)));
    int x1 = std::min(w - 1, int(std::ceil(std::max(d.u0, d.u1) + d.radius_px)));
    int y0 = std::max(0, int(std::floor(std::min(d.v0, d.v1) - d.radius_px)));
    int y1 = std::min(h - 1, int(std::ceil(std::max(d.v0, d.v1) + d.radius_px)));
    double sx = d.u1 - d.u0, sy = d.v1 - d.v0;
    double ss = sx * sx + sy * sy;
    for (int py = y0; py <= y1; ++py) {
      for (int px = x0; px <= x1; ++px) {
        // distance from the pixel center to the foot->head segment
        double t = 0.0;
        if (ss > 0) t = std::clamp(((px - d.u0) * sx + (py - d.v0) * sy) / ss, 0.0, 1.0);
        double dx = px - (d.u0 + t * sx), dy = py - (d.v0 + t * sy);
        if (dx * dx + dy * dy > d.radius_px * d.radius_px) continue;
        float* pix = img.data().data() + (int64_t(py) * w + px) * 3;
        pix[0] = d.color[0];
        pix[1] = d.color[1];
        pix[2] = d.color[2];
      }
    }
  }
  return img;
}

SimulatedSequence simulate_sequence(const SceneConfig& cfg) {
  cfg.validate();
  SimulatedSequence seq;
  seq.config = cfg;
  seq.calibs = ring_cameras(cfg);

  struct Agent {
    int64_t id;
    double x, y;
    double speed;
    std::vector<std::array<double, 2>> waypoints;
    size_t target = 0;
  };
  std::mt19937_64 rng(cfg.seed);
  const double margin = std::min({0.5, cfg.world_x / 4.0, cfg.world_y / 4.0});
  std::uniform_real_distribution<double> ux(margin, cfg.world_x - margin);
  std::uniform_real_distribution<double> uy(margin, cfg.world_y - margin);
  std::uniform_real_distribution<double> us(cfg.speed_min, cfg.speed_max);
  std::vector<Agent> agents;
  for (int i = 0; i < cfg.num_agents; ++i) {
    Agent a;
    a.id = i;
    a.x = ux(rng);
    a.y = uy(rng);
    a.speed = us(rng);
    for (int wp = 0; wp < cfg.waypoints; ++wp) a.waypoints.push_back({ux(rng), uy(rng)});
    agents.push_back(a);
  }

  for (int t = 0; t < cfg.frames; ++t) {
    SimulatedFrame frame;
    frame.ann.frame = t;
    std::vector<AgentSnapshot> snaps;
    for (const auto& a : agents) {
      snaps.push_back({a.id, a.x, a.y});
      PersonAnnotation pa;
      pa.id = a.id;
      pa.x_m = a.x;
      pa.y_m = a.y;
      for (size_t cam = 0; cam < seq.calibs.size(); ++cam) {
        const auto& c = seq.calibs[cam];
        PersonObservation obs;
        obs.cam = static_cast<int>(cam);
        Projection p = try_project(c, a.x, a.y, 0.0);
        if (p.ok) {
          obs.u = p.u;
          obs.v = p.v;
          obs.visible =
              p.u >= 0 && p.u <= c.image_width - 1 && p.v >= 0 && p.v <= c.image_height - 1;
        }
        pa.views.push_back(obs);
      }
      frame.ann.persons.push_back(pa);
    }
    for (const auto& c : seq.calibs) frame.images.push_back(render_view(snaps, c, cfg));
    seq.frames.push_back(std::move(frame));

    // advance the walkers
    for (auto& a : agents) {
      if (a.waypoints.empty()) continue;
      const auto& wp = a.waypoints[a.target];
      double dx = wp[0] - a.x, dy = wp[1] - a.y;
      double dist = std::sqrt(dx * dx + dy * dy);
      if (dist <= a.speed) {
        a.x = wp[0];
        a.y = wp[1];
        a.target = (a.target + 1) % a.waypoints.size();
      } else if (dist > 0) {
        a.x += a.speed * dx / dist;
        a.y += a.speed * dy / dist;
      }
      // reflect at the world bounds (waypoints are interior, so this is a
      // safety clamp for degenerate configs)
      if (a.x < 0) a.x = -a.x;
      if (a.y < 0) a.y = -a.y;
      if (a.x > cfg.world_x) a.x = 2 * cfg.world_x - a.x;
      if (a.y > cfg.world_y) a.y = 2 * cfg.world_y - a.y;
    }
  }
  return seq;
}

}  // namespace mvtrack
