#include "cloud_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace pprl {

PointCloud parse_cloud(const std::string& text, const std::string& origin) {
  PointCloud cloud;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool saw_colors = false;
  bool saw_plain = false;

  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);

    std::istringstream fields(line);
    double v[6];
    int count = 0;
    while (count < 6 && (fields >> v[count])) ++count;

    std::string trailing;
    if (fields >> trailing) {
      throw_parse_error(origin + ":" + std::to_string(line_no) +
                        ": too many fields on line");
    }
    if (count == 0) continue;  // blank or comment-only
    if (count != 3 && count != 6) {
      throw_parse_error(origin + ":" + std::to_string(line_no) +
                        ": expected `x y z` or `x y z r g b`");
    }

    cloud.positions.push_back({v[0], v[1], v[2]});
    if (count == 6) {
      saw_colors = true;
      if (!cloud.colors) cloud.colors.emplace();
      cloud.colors->push_back({v[3], v[4], v[5]});
    } else {
      saw_plain = true;
    }
    if (saw_colors && saw_plain) {
      throw_parse_error(origin + ":" + std::to_string(line_no) +
                        ": mixed colored and uncolored points");
    }
  }

  if (cloud.positions.empty()) {
    throw_parse_error(origin + ": no points in file");
  }
  cloud.validate();
  return cloud;
}

PointCloud load_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io_error("cannot open point-cloud file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_cloud(buf.str(), path);
}

std::string format_cloud(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 48);
  char line[192];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    if (cloud.has_colors()) {
      const Vec3& c = (*cloud.colors)[i];
      std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g %.17g %.17g\n",
                    p[0], p[1], p[2], c[0], c[1], c[2]);
    } else {
      std::snprintf(line, sizeof(line), "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
    }
    out += line;
  }
  return out;
}

void save_cloud(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io_error("cannot write point-cloud file: " + path);
  out << format_cloud(cloud);
  if (!out) throw_io_error("write failed: " + path);
}

}  // namespace pprl
