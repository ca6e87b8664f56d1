#include "mvtrack/geometry.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace mvtrack {

namespace {

// One calibration block under construction.
struct Block {
  bool has_k = false, has_r = false, has_t = false, has_size = false;
  CameraCalibration calib;

  bool any() const { return has_k || has_r || has_t || has_size; }

  CameraCalibration finish(const std::string& ctx, int index) const {
    if (!(has_k && has_r && has_t && has_size))
      throw FormatError(ctx + ": camera block " + std::to_string(index) +
                        " is missing one of K/R/T/SIZE");
    calib.validate();
    return calib;
  }
};

std::vector<double> parse_numbers(std::istringstream& iss, size_t want, const std::string& ctx,
                                  int line_no, const std::string& tag) {
  std::vector<double> vals;
  double v;
  while (iss >> v) vals.push_back(v);
  std::string trailing;
  if (iss.clear(), iss >> trailing)
    throw FormatError(ctx + ":" + std::to_string(line_no) + ": non-numeric token in " + tag);
  if (vals.size() != want)
    throw FormatError(ctx + ":" + std::to_string(line_no) + ": " + tag + " expects " +
                      std::to_string(want) + " values, got " + std::to_string(vals.size()));
  return vals;
}

}  // namespace

std::vector<CameraCalibration> parse_calibrations(const std::string& text,
                                                  const std::string& context) {
  std::vector<CameraCalibration> out;
  Block block;
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  auto flush = [&]() {
    if (block.any()) {
      out.push_back(block.finish(context, static_cast<int>(out.size())));
      block = Block{};
    }
  };
  while (std::getline(stream, line)) {
    ++line_no;
    std::istringstream iss(line);
    std::string tag;
    if (!(iss >> tag)) {  // blank line separates camera blocks
      flush();
      continue;
    }
    if (tag == "K") {
      auto v = parse_numbers(iss, 9, context, line_no, "K");
      std::copy(v.begin(), v.end(), block.calib.intrinsics.begin());
      block.has_k = true;
    } else if (tag == "R") {
      auto v = parse_numbers(iss, 9, context, line_no, "R");
      std::copy(v.begin(), v.end(), block.calib.rotation.begin());
      block.has_r = true;
    } else if (tag == "T") {
      auto v = parse_numbers(iss, 3, context, line_no, "T");
      std::copy(v.begin(), v.end(), block.calib.translation.begin());
      block.has_t = true;
    } else if (tag == "SIZE") {
      auto v = parse_numbers(iss, 2, context, line_no, "SIZE");
      block.calib.image_width = static_cast<int>(v[0]);
      block.calib.image_height = static_cast<int>(v[1]);
      if (double(block.calib.image_width) != v[0] || double(block.calib.image_height) != v[1])
        throw FormatError(context + ":" + std::to_string(line_no) + ": SIZE must be integral");
      block.has_size = true;
    } else {
      throw FormatError(context + ":" + std::to_string(line_no) + ": unknown tag '" + tag + "'");
    }
  }
  flush();
  if (out.empty()) throw FormatError(context + ": no camera blocks found");
  return out;
}

std::vector<CameraCalibration> load_calibrations(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open calibration file");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_calibrations(ss.str(), path);
}

std::string format_calibrations(const std::vector<CameraCalibration>& calibs) {
  std::ostringstream out;
  char buf[64];
  auto put = [&](const double* vals, int n) {
    for (int i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof(buf), " %.17g", vals[i]);
      out << buf;
    }
    out << "\n";
  };
  for (size_t i = 0; i < calibs.size(); ++i) {
    if (i) out << "\n";
    const auto& c = calibs[i];
    out << "K";
    put(c.intrinsics.data(), 9);
    out << "R";
    put(c.rotation.data(), 9);
    out << "T";
    put(c.translation.data(), 3);
    out << "SIZE " << c.image_width << " " << c.image_height << "\n";
  }
  return out.str();
}

void save_calibrations(const std::string& path, const std::vector<CameraCalibration>& calibs) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open for writing");
  f << format_calibrations(calibs);
}

}  // namespace mvtrack
