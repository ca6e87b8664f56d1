#include "mvtrack/dataset_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mvtrack {

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& context) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed) ok = ok || it.key() == k;
    if (!ok) throw FormatError(context + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace

// --- images -----------------------------------------------------------------

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw ShapeMismatchError("write_ppm: [H x W x 3] expected");
  int64_t h = image.dim(0), w = image.dim(1);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + static_cast<size_t>(h * w * 3));
  for (float v : image.data()) {
    int q = static_cast<int>(std::lround(std::min(std::max(v, 0.0f), 1.0f) * 255.0f));
    out.push_back(static_cast<char>(q));
  }
  spit(path, out);
}

Tensor read_ppm(const std::string& path) {
  std::string raw = slurp(path);
  std::istringstream ss(raw);
  std::string magic;
  int64_t w = 0, h = 0;
  int maxval = 0;
  ss >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
    throw FormatError(path + ": not a maxval-255 binary PPM");
  ss.get();  // single whitespace after the header
  size_t offset = static_cast<size_t>(ss.tellg());
  if (raw.size() - offset != static_cast<size_t>(h * w * 3))
    throw FormatError(path + ": pixel payload truncated");
  Tensor img({h, w, 3});
  for (int64_t i = 0; i < h * w * 3; ++i)
    img.data()[static_cast<size_t>(i)] =
        float(static_cast<unsigned char>(raw[offset + static_cast<size_t>(i)])) / 255.0f;
  return img;
}

void write_pgm(const std::string& path, const Tensor& heatmap) {
  if (heatmap.rank() != 2) throw ShapeMismatchError("write_pgm: [H x W] expected");
  int64_t h = heatmap.dim(0), w = heatmap.dim(1);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (float v : heatmap.data()) {
    int q = static_cast<int>(std::lround(std::min(std::max(v, 0.0f), 1.0f) * 255.0f));
    out.push_back(static_cast<char>(q));
  }
  spit(path, out);
}

void write_f32_dump(const std::string& path, const Tensor& heatmap) {
  if (heatmap.rank() != 2) throw ShapeMismatchError("write_f32_dump: [H x W] expected");
  std::string out = std::to_string(heatmap.dim(0)) + " " + std::to_string(heatmap.dim(1)) + "\n";
  size_t base = out.size();
  out.resize(base + heatmap.data().size() * sizeof(float));
  std::memcpy(out.data() + base, heatmap.data().data(), heatmap.data().size() * sizeof(float));
  spit(path, out);
}

Tensor read_f32_dump(const std::string& path) {
  std::string raw = slurp(path);
  size_t nl = raw.find('\n');
  if (nl == std::string::npos) throw FormatError(path + ": missing header line");
  std::istringstream head(raw.substr(0, nl));
  int64_t h = 0, w = 0;
  if (!(head >> h >> w) || h <= 0 || w <= 0) throw FormatError(path + ": bad H W header");
  size_t want = static_cast<size_t>(h * w) * sizeof(float);
  if (raw.size() - nl - 1 != want) throw FormatError(path + ": payload size mismatch");
  Tensor t({h, w});
  std::memcpy(t.data().data(), raw.data() + nl + 1, want);
  return t;
}

// --- scene config -------------------------------------------------------------

std::string scene_config_to_json(const SceneConfig& cfg) {
  json j;
  j["world_x"] = cfg.world_x;
  j["world_y"] = cfg.world_y;
  j["num_cameras"] = cfg.num_cameras;
  j["camera_radius"] = cfg.camera_radius;
  j["camera_height"] = cfg.camera_height;
  j["camera_tilt_deg"] = cfg.camera_tilt_deg;
  j["num_agents"] = cfg.num_agents;
  j["speed_min"] = cfg.speed_min;
  j["speed_max"] = cfg.speed_max;
  j["waypoints"] = cfg.waypoints;
  j["frames"] = cfg.frames;
  j["image_width"] = cfg.image_width;
  j["image_height"] = cfg.image_height;
  j["focal"] = cfg.focal;
  j["seed"] = cfg.seed;
  j["agent_radius"] = cfg.agent_radius;
  j["agent_height"] = cfg.agent_height;
  return j.dump(2) + "\n";
}

SceneConfig scene_config_from_json(const std::string& text, const std::string& context) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(context + ": " + e.what());
  }
  SceneConfig cfg;
  reject_unknown_keys(j,
                      {"world_x", "world_y", "num_cameras", "camera_radius", "camera_height",
                       "camera_tilt_deg", "num_agents", "speed_min", "speed_max", "waypoints",
                       "frames", "image_width", "image_height", "focal", "seed", "agent_radius",
                       "agent_height"},
                      context);
  try {
    if (j.contains("world_x")) cfg.world_x = j["world_x"].get<double>();
    if (j.contains("world_y")) cfg.world_y = j["world_y"].get<double>();
    if (j.contains("num_cameras")) cfg.num_cameras = j["num_cameras"].get<int>();
    if (j.contains("camera_radius")) cfg.camera_radius = j["camera_radius"].get<double>();
    if (j.contains("camera_height")) cfg.camera_height = j["camera_height"].get<double>();
    if (j.contains("camera_tilt_deg")) cfg.camera_tilt_deg = j["camera_tilt_deg"].get<double>();
    if (j.contains("num_agents")) cfg.num_agents = j["num_agents"].get<int>();
    if (j.contains("speed_min")) cfg.speed_min = j["speed_min"].get<double>();
    if (j.contains("speed_max")) cfg.speed_max = j["speed_max"].get<double>();
    if (j.contains("waypoints")) cfg.waypoints = j["waypoints"].get<int>();
    if (j.contains("frames")) cfg.frames = j["frames"].get<int>();
    if (j.contains("image_width")) cfg.image_width = j["image_width"].get<int>();
    if (j.contains("image_height")) cfg.image_height = j["image_height"].get<int>();
    if (j.contains("focal")) cfg.focal = j["focal"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("agent_radius")) cfg.agent_radius = j["agent_radius"].get<double>();
    if (j.contains("agent_height")) cfg.agent_height = j["agent_height"].get<double>();
  } catch (const json::exception& e) {
    throw FormatError(context + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

// --- trajectories --------------------------------------------------------------

void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryPoint>& rows) {
  std::string out = "frame,track_id,x_m,y_m\n";
  for (const auto& r : rows) {
    out += std::to_string(r.frame) + "," + std::to_string(r.track_id) + "," + fmt_double(r.x_m) +
           "," + fmt_double(r.y_m) + "\n";
  }
  spit(path, out);
}

std::vector<TrajectoryPoint> read_trajectory_csv(const std::string& path) {
  std::string raw = slurp(path);
  std::istringstream ss(raw);
  std::string line;
  int line_no = 0;
  std::vector<TrajectoryPoint> rows;
  while (std::getline(ss, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "frame,track_id,x_m,y_m")
        throw FormatError(path + ":1: expected header frame,track_id,x_m,y_m");
      continue;
    }
    TrajectoryPoint p;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected 4 columns");
    try {
      size_t used = 0;
      p.frame = std::stoi(cells[0], &used);
      if (used != cells[0].size()) throw std::invalid_argument("frame");
      p.track_id = std::stoll(cells[1], &used);
      if (used != cells[1].size()) throw std::invalid_argument("track_id");
      p.x_m = std::stod(cells[2], &used);
      if (used != cells[2].size()) throw std::invalid_argument("x_m");
      p.y_m = std::stod(cells[3], &used);
      if (used != cells[3].size()) throw std::invalid_argument("y_m");
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": malformed row");
    }
    rows.push_back(p);
  }
  return rows;
}

// --- annotations -----------------------------------------------------------------

std::string format_annotations(const std::vector<AnnotationFrame>& frames) {
  std::string out = "frame,person_id,x_m,y_m,cam,u,v,visible\n";
  for (const auto& f : frames) {
    for (const auto& p : f.persons) {
      out += std::to_string(f.frame) + "," + std::to_string(p.id) + "," + fmt_double(p.x_m) +
             "," + fmt_double(p.y_m) + ",-1,0,0,1\n";
      for (const auto& v : p.views) {
        out += std::to_string(f.frame) + "," + std::to_string(p.id) + "," + fmt_double(p.x_m) +
               "," + fmt_double(p.y_m) + "," + std::to_string(v.cam) + "," + fmt_double(v.u) +
               "," + fmt_double(v.v) + "," + (v.visible ? "1" : "0") + "\n";
      }
    }
  }
  return out;
}

std::vector<AnnotationFrame> parse_annotations(const std::string& text,
                                               const std::string& context, int num_cameras) {
  std::istringstream ss(text);
  std::string line;
  int line_no = 0;
  std::vector<AnnotationFrame> frames;
  auto fail = [&](const std::string& why) {
    throw FormatError(context + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(ss, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "frame,person_id,x_m,y_m,cam,u,v,visible") fail("unexpected header");
      continue;
    }
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) fail("expected 8 columns");
    int frame, cam, visible;
    int64_t pid;
    double x, y, u, v;
    try {
      frame = std::stoi(cells[0]);
      pid = std::stoll(cells[1]);
      x = std::stod(cells[2]);
      y = std::stod(cells[3]);
      cam = std::stoi(cells[4]);
      u = std::stod(cells[5]);
      v = std::stod(cells[6]);
      visible = std::stoi(cells[7]);
    } catch (const std::exception&) {
      fail("malformed row");
      return {};
    }
    if (visible != 0 && visible != 1) fail("visible must be 0 or 1");
    if (frames.empty() || frames.back().frame != frame) {
      if (!frames.empty() && frame < frames.back().frame) fail("non-monotone frame index");
      AnnotationFrame f;
      f.frame = frame;
      frames.push_back(f);
    }
    auto& fr = frames.back();
    if (cam == -1) {
      PersonAnnotation p;
      p.id = pid;
      p.x_m = x;
      p.y_m = y;
      fr.persons.push_back(p);
    } else {
      if (cam < 0 || cam >= num_cameras) fail("camera index out of range");
      if (fr.persons.empty() || fr.persons.back().id != pid)
        fail("camera row without a preceding ground row for the same person");
      PersonObservation obs;
      obs.cam = cam;
      obs.u = u;
      obs.v = v;
      obs.visible = visible == 1;
      fr.persons.back().views.push_back(obs);
    }
  }
  return frames;
}

// --- datasets -----------------------------------------------------------------------

void write_dataset(const std::string& dir, const SimulatedSequence& seq) {
  fs::create_directories(dir);
  spit((fs::path(dir) / "scene.json").string(), scene_config_to_json(seq.config));
  save_calibrations((fs::path(dir) / "calib.txt").string(), seq.calibs);
  std::vector<AnnotationFrame> anns;
  for (size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& frame = seq.frames[t];
    anns.push_back(frame.ann);
    fs::path fdir = fs::path(dir) / "frames" / std::to_string(t);
    fs::create_directories(fdir);
    for (size_t cam = 0; cam < frame.images.size(); ++cam)
      write_ppm((fdir / ("cam" + std::to_string(cam) + ".ppm")).string(), frame.images[cam]);
  }
  spit((fs::path(dir) / "annotations.csv").string(), format_annotations(anns));
}

Dataset load_dataset(const std::string& dir) {
  Dataset data;
  data.config = scene_config_from_json(slurp((fs::path(dir) / "scene.json").string()),
                                       (fs::path(dir) / "scene.json").string());
  data.calibs = load_calibrations((fs::path(dir) / "calib.txt").string());
  if (static_cast<int>(data.calibs.size()) != data.config.num_cameras)
    throw FormatError(dir + ": calib.txt camera count differs from scene.json");
  auto anns =
      parse_annotations(slurp((fs::path(dir) / "annotations.csv").string()),
                        (fs::path(dir) / "annotations.csv").string(), data.config.num_cameras);
  // annotation frames must be exactly 0..frames-1
  if (static_cast<int>(anns.size()) != data.config.frames) {
    // empty scenes have no annotation rows at all
    if (!(anns.empty() && data.config.num_agents == 0))
      throw MissingFrameError(dir + ": annotations cover " + std::to_string(anns.size()) +
                              " frames, scene.json declares " +
                              std::to_string(data.config.frames));
  }
  for (int t = 0; t < data.config.frames; ++t) {
    LoadedFrame frame;
    if (t < static_cast<int>(anns.size())) {
      if (anns[static_cast<size_t>(t)].frame != t)
        throw MissingFrameError(dir + ": annotation gap at frame " + std::to_string(t));
      frame.ann = anns[static_cast<size_t>(t)];
    } else {
      frame.ann.frame = t;
    }
    fs::path fdir = fs::path(dir) / "frames" / std::to_string(t);
    for (int cam = 0; cam < data.config.num_cameras; ++cam) {
      fs::path img = fdir / ("cam" + std::to_string(cam) + ".ppm");
      if (!fs::exists(img))
        throw MissingFrameError(img.string() + ": missing camera image");
      frame.images.push_back(read_ppm(img.string()));
    }
    data.frames.push_back(std::move(frame));
  }
  return data;
}

std::vector<TrajectoryPoint> dataset_ground_truth(const Dataset& data, int frame_begin,
                                                  int frame_end) {
  std::vector<TrajectoryPoint> rows;
  for (const auto& frame : data.frames) {
    if (frame.ann.frame < frame_begin || frame.ann.frame >= frame_end) continue;
    for (const auto& p : frame.ann.persons)
      rows.push_back({frame.ann.frame, p.id, p.x_m, p.y_m});
  }
  return rows;
}

}  // namespace mvtrack
