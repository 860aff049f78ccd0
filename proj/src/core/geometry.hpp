#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace pprl {

using Vec3 = std::array<double, 3>;

inline Vec3 sub3(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

inline double squared_dist(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Variable-length set of 3D points with optional per-point RGB in [0,1].
struct PointCloud {
  std::vector<Vec3> positions;
  std::optional<std::vector<Vec3>> colors;

  std::size_t size() const { return positions.size(); }
  bool has_colors() const { return colors.has_value(); }

  // Enforces the structural invariants; rejects empty clouds.
  void validate() const;
};

// Output of centroid sampling + neighborhood grouping. Patch positions are
// stored relative to their centroid; colors stay absolute.
struct PatchSet {
  std::size_t patch_size = 0;  // k
  std::vector<Vec3> centroids;
  std::vector<std::vector<Vec3>> patches;           // n x k, centroid-relative
  std::vector<std::vector<Vec3>> patch_colors;      // n x k when colored
  std::vector<std::vector<std::size_t>> source_indices;  // n x k
  bool has_colors = false;

  std::size_t patch_count() const { return centroids.size(); }
};

enum class NormalizationMode { kStatic, kPerCloud, kNone };

struct NormalizationSpec {
  NormalizationMode mode = NormalizationMode::kNone;
  Vec3 center{0.0, 0.0, 0.0};  // static mode
  double scale = 1.0;          // static mode, > 0
};

// Farthest point sampling. The first index is drawn uniformly from the seed;
// each following index maximizes the minimum distance to the selected set,
// ties broken by lowest index.
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud,
                                               std::size_t n,
                                               std::uint64_t seed);

// k nearest neighbors of each centroid (the centroid itself included at
// distance zero). Ties broken by lowest index; patch points ordered by
// (distance, index).
PatchSet knn_group(const PointCloud& cloud,
                   const std::vector<std::size_t>& centroid_indices,
                   std::size_t k);

// Number of quantization bits per axis for Morton codes.
inline constexpr int kMortonBitsPerAxis = 10;

std::uint64_t morton_code(std::uint32_t qx, std::uint32_t qy, std::uint32_t qz);

// Permutation sorting centroids ascending by Morton code over their bounding
// box (x most significant within each bit triple). Stable.
std::vector<std::size_t> morton_rank(const std::vector<Vec3>& centroids);

// One output point per occupied voxel: the mean of the voxel's members,
// in first-occurrence order.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size);

PointCloud normalize(const PointCloud& cloud, const NormalizationSpec& spec);

struct CropBox {
  Vec3 min{0, 0, 0};
  Vec3 max{0, 0, 0};
};

struct TargetAppend {
  Vec3 target{0, 0, 0};
  double cube_side = 0.07;
  std::size_t count = 50;
  std::optional<Vec3> color;  // required when the cloud carries colors
};

struct PreprocessConfig {
  std::optional<CropBox> crop;
  std::optional<TargetAppend> append;
  std::optional<double> voxel_size;
  std::optional<std::size_t> max_points;  // random downsample w/o replacement
  NormalizationSpec normalization;
};

// Observation pipeline: crop -> append target points -> voxel downsample ->
// random downsample -> normalize. Consumes the caller's RNG stream.
PointCloud preprocess(const PointCloud& cloud, const PreprocessConfig& config,
                      Rng& rng);

}  // namespace pprl
