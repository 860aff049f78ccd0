#include "geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace pprl {

void PointCloud::validate() const {
  require(!positions.empty(), ErrorCode::degenerate_input,
          "point cloud is empty");
  if (colors) {
    require(colors->size() == positions.size(), ErrorCode::invalid_argument,
            "colors are not aligned with positions");
    for (const Vec3& c : *colors) {
      for (const double v : c) {
        require(v >= 0.0 && v <= 1.0, ErrorCode::invalid_argument,
                "color channel outside [0,1]");
      }
    }
  }
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud,
                                               std::size_t n,
                                               std::uint64_t seed) {
  const std::size_t m = cloud.size();
  require(n >= 1 && n <= m, ErrorCode::invalid_argument,
          "farthest_point_sample: need 1 <= n <= point count");

  Rng rng(seed);
  std::vector<std::size_t> selected;
  selected.reserve(n);

  std::size_t current = rng.index(m);
  selected.push_back(current);

  // min squared distance to the selected set; -1 marks selected points so the
  // argmax can never revisit them, even when duplicates put zeros elsewhere
  std::vector<double> min_d2(m, std::numeric_limits<double>::infinity());
  min_d2[current] = -1.0;

  while (selected.size() < n) {
    std::size_t best = m;
    double best_d2 = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      if (min_d2[i] >= 0.0) {
        const double d2 = squared_dist(cloud.positions[i], cloud.positions[current]);
        if (d2 < min_d2[i]) min_d2[i] = d2;
      }
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    current = best;
    min_d2[current] = -1.0;
    selected.push_back(current);
  }
  return selected;
}

PatchSet knn_group(const PointCloud& cloud,
                   const std::vector<std::size_t>& centroid_indices,
                   std::size_t k) {
  const std::size_t m = cloud.size();
  require(k >= 1, ErrorCode::invalid_argument, "knn_group: k must be >= 1");
  require(k <= m, ErrorCode::invalid_argument,
          "knn_group: k exceeds point count");
  for (const std::size_t ci : centroid_indices) {
    require(ci < m, ErrorCode::invalid_argument,
            "knn_group: centroid index out of range");
  }

  PatchSet out;
  out.patch_size = k;
  out.has_colors = cloud.has_colors();
  out.centroids.reserve(centroid_indices.size());
  out.patches.reserve(centroid_indices.size());
  out.source_indices.reserve(centroid_indices.size());

  std::vector<std::pair<double, std::size_t>> dist_idx(m);
  for (const std::size_t ci : centroid_indices) {
    const Vec3& c = cloud.positions[ci];
    for (std::size_t i = 0; i < m; ++i) {
      dist_idx[i] = {squared_dist(cloud.positions[i], c), i};
    }
    std::partial_sort(dist_idx.begin(), dist_idx.begin() + k, dist_idx.end());

    std::vector<Vec3> patch(k);
    std::vector<std::size_t> src(k);
    std::vector<Vec3> cols;
    if (out.has_colors) cols.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t pi = dist_idx[j].second;
      patch[j] = sub3(cloud.positions[pi], c);
      src[j] = pi;
      if (out.has_colors) cols[j] = (*cloud.colors)[pi];
    }
    out.centroids.push_back(c);
    out.patches.push_back(std::move(patch));
    out.source_indices.push_back(std::move(src));
    if (out.has_colors) out.patch_colors.push_back(std::move(cols));
  }
  return out;
}

std::uint64_t morton_code(std::uint32_t qx, std::uint32_t qy, std::uint32_t qz) {
  // Interleave with x most significant within each bit triple.
  std::uint64_t code = 0;
  for (int b = 0; b < kMortonBitsPerAxis; ++b) {
    code |= static_cast<std::uint64_t>((qx >> b) & 1u) << (3 * b + 2);
    code |= static_cast<std::uint64_t>((qy >> b) & 1u) << (3 * b + 1);
    code |= static_cast<std::uint64_t>((qz >> b) & 1u) << (3 * b);
  }
  return code;
}

std::vector<std::size_t> morton_rank(const std::vector<Vec3>& centroids) {
  require(!centroids.empty(), ErrorCode::invalid_argument,
          "morton_rank: no centroids");

  Vec3 lo = centroids[0];
  Vec3 hi = centroids[0];
  for (const Vec3& c : centroids) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], c[a]);
      hi[a] = std::max(hi[a], c[a]);
    }
  }

  const std::uint32_t max_q = (1u << kMortonBitsPerAxis) - 1;
  std::vector<std::uint64_t> codes(centroids.size());
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    std::uint32_t q[3];
    for (int a = 0; a < 3; ++a) {
      const double span = hi[a] - lo[a];
      if (span <= 0.0) {
        q[a] = 0;
      } else {
        const double t = (centroids[i][a] - lo[a]) / span;
        q[a] = std::min<std::uint32_t>(
            max_q, static_cast<std::uint32_t>(t * (max_q + 1)));
      }
    }
    codes[i] = morton_code(q[0], q[1], q[2]);
  }

  std::vector<std::size_t> order(centroids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return codes[a] < codes[b]; });
  return order;
}

namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const std::int64_t v : {k.x, k.y, k.z}) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 0x100000001b3ull;
    }
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size) {
  require(voxel_size > 0.0, ErrorCode::invalid_argument,
          "voxel_downsample: voxel_size must be positive");

  struct Bin {
    Vec3 pos_sum{0, 0, 0};
    Vec3 col_sum{0, 0, 0};
    std::size_t count = 0;
  };

  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> bin_of;
  std::vector<Bin> bins;  // first-occurrence order
  bin_of.reserve(cloud.size());

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    const VoxelKey key{static_cast<std::int64_t>(std::floor(p[0] / voxel_size)),
                       static_cast<std::int64_t>(std::floor(p[1] / voxel_size)),
                       static_cast<std::int64_t>(std::floor(p[2] / voxel_size))};
    auto [it, inserted] = bin_of.try_emplace(key, bins.size());
    if (inserted) bins.emplace_back();
    Bin& bin = bins[it->second];
    for (int a = 0; a < 3; ++a) bin.pos_sum[a] += p[a];
    if (cloud.has_colors()) {
      for (int a = 0; a < 3; ++a) bin.col_sum[a] += (*cloud.colors)[i][a];
    }
    bin.count += 1;
  }

  PointCloud out;
  out.positions.reserve(bins.size());
  if (cloud.has_colors()) out.colors.emplace();
  for (const Bin& bin : bins) {
    const double inv = 1.0 / static_cast<double>(bin.count);
    out.positions.push_back(
        {bin.pos_sum[0] * inv, bin.pos_sum[1] * inv, bin.pos_sum[2] * inv});
    if (cloud.has_colors()) {
      out.colors->push_back(
          {bin.col_sum[0] * inv, bin.col_sum[1] * inv, bin.col_sum[2] * inv});
    }
  }
  return out;
}

PointCloud normalize(const PointCloud& cloud, const NormalizationSpec& spec) {
  require(spec.scale > 0.0, ErrorCode::invalid_argument,
          "normalize: scale must be positive");
  cloud.validate();

  PointCloud out = cloud;
  switch (spec.mode) {
    case NormalizationMode::kNone:
      break;
    case NormalizationMode::kStatic: {
      const double inv = 1.0 / spec.scale;
      for (Vec3& p : out.positions) {
        for (int a = 0; a < 3; ++a) p[a] = (p[a] - spec.center[a]) * inv;
      }
      break;
    }
    case NormalizationMode::kPerCloud: {
      Vec3 mean{0, 0, 0};
      for (const Vec3& p : out.positions) {
        for (int a = 0; a < 3; ++a) mean[a] += p[a];
      }
      const double inv_m = 1.0 / static_cast<double>(out.size());
      for (int a = 0; a < 3; ++a) mean[a] *= inv_m;

      double max_abs = 0.0;
      for (Vec3& p : out.positions) {
        for (int a = 0; a < 3; ++a) {
          p[a] -= mean[a];
          max_abs = std::max(max_abs, std::abs(p[a]));
        }
      }
      require(max_abs > 0.0, ErrorCode::degenerate_input,
              "normalize: per-cloud mode on a degenerate cloud");
      const double inv = 1.0 / max_abs;
      for (Vec3& p : out.positions) {
        for (int a = 0; a < 3; ++a) p[a] *= inv;
      }
      break;
    }
  }
  return out;
}

PointCloud preprocess(const PointCloud& cloud, const PreprocessConfig& config,
                      Rng& rng) {
  cloud.validate();
  PointCloud work = cloud;

  if (config.crop) {
    const CropBox& box = *config.crop;
    for (int a = 0; a < 3; ++a) {
      require(box.min[a] <= box.max[a], ErrorCode::invalid_argument,
              "preprocess: malformed crop box");
    }
    PointCloud kept;
    if (work.has_colors()) kept.colors.emplace();
    for (std::size_t i = 0; i < work.size(); ++i) {
      const Vec3& p = work.positions[i];
      bool inside = true;
      for (int a = 0; a < 3; ++a) {
        inside = inside && p[a] >= box.min[a] && p[a] <= box.max[a];
      }
      if (inside) {
        kept.positions.push_back(p);
        if (work.has_colors()) kept.colors->push_back((*work.colors)[i]);
      }
    }
    require(!kept.positions.empty(), ErrorCode::degenerate_input,
            "preprocess: crop removed every point");
    work = std::move(kept);
  }

  if (config.append) {
    const TargetAppend& app = *config.append;
    require(app.cube_side > 0.0, ErrorCode::invalid_argument,
            "preprocess: append cube side must be positive");
    if (work.has_colors()) {
      require(app.color.has_value(), ErrorCode::invalid_argument,
              "preprocess: appended points need a color on colored clouds");
    }
    const double half = app.cube_side / 2.0;
    for (std::size_t i = 0; i < app.count; ++i) {
      Vec3 p;
      for (int a = 0; a < 3; ++a) {
        p[a] = app.target[a] + rng.uniform(-half, half);
      }
      work.positions.push_back(p);
      if (work.has_colors()) work.colors->push_back(*app.color);
    }
  }

  if (config.voxel_size) {
    work = voxel_downsample(work, *config.voxel_size);
  }

  if (config.max_points && work.size() > *config.max_points) {
    // partial Fisher-Yates: draw max_points distinct indices
    const std::size_t m = work.size();
    const std::size_t target = *config.max_points;
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = i;
    for (std::size_t i = 0; i < target; ++i) {
      const std::size_t j = i + rng.index(m - i);
      std::swap(idx[i], idx[j]);
    }
    PointCloud kept;
    kept.positions.reserve(target);
    if (work.has_colors()) {
      kept.colors.emplace();
      kept.colors->reserve(target);
    }
    for (std::size_t i = 0; i < target; ++i) {
      kept.positions.push_back(work.positions[idx[i]]);
      if (work.has_colors()) kept.colors->push_back((*work.colors)[idx[i]]);
    }
    work = std::move(kept);
  }

  return normalize(work, config.normalization);
}

}  // namespace pprl
