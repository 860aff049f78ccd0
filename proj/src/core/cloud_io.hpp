#pragma once

#include <string>

#include "geometry.hpp"

namespace pprl {

// ASCII point-cloud format: one point per line, `x y z [r g b]`, meters and
// [0,1] channels, `#` starts a comment. All data lines must agree on whether
// colors are present.
PointCloud load_cloud(const std::string& path);
PointCloud parse_cloud(const std::string& text, const std::string& origin);
void save_cloud(const PointCloud& cloud, const std::string& path);
std::string format_cloud(const PointCloud& cloud);

}  // namespace pprl
