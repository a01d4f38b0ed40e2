#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "rio4d/kdtree.hpp"
#include "rio4d/types.hpp"
#include "rio4d/voxel.hpp"

namespace rio4d {

struct SubmapConfig {
  double voxel_size = 0.4;
  int max_points_per_voxel = 5;
  double prune_radius = 200.0;
  int prune_every = 100;  ///< scans between prunes
};

struct MapPoint {
  Vec3 position = Vec3::Zero();
  int keyframe = 0;
};

struct MapNeighbor {
  std::uint32_t id = 0;
  MapPoint point;
  double distance = 0.0;
};

struct LocalDistribution {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
};

/// Sample mean and population covariance (normalizer N).
inline LocalDistribution local_covariance(std::span<const Vec3> points)
{
  if (points.empty()) {
    throw std::invalid_argument("local_covariance: empty input");
  }
  LocalDistribution out;
  for (const auto& p : points) {
    out.mean += p;
  }
  out.mean /= static_cast<double>(points.size());
  for (const auto& p : points) {
    const Vec3 d = p - out.mean;
    out.cov.noalias() += d * d.transpose();
  }
  out.cov /= static_cast<double>(points.size());
  return out;
}

/// Global-frame point map with voxel-capped insertion and exact k-NN.
///
/// One writer at a time; concurrent readers are allowed between writes.
class Submap {
 public:
  explicit Submap(SubmapConfig cfg = {})
      : cfg_(cfg), mutex_(std::make_unique<std::shared_mutex>()), cache_mutex_(std::make_unique<std::mutex>())
  {
  }

  Submap(Submap&&) noexcept = default;
  Submap& operator=(Submap&&) noexcept = default;

  const SubmapConfig& config() const { return cfg_; }

  std::size_t size() const
  {
    std::shared_lock lock(*mutex_);
    return tree_.size();
  }

  bool empty() const { return size() == 0; }

  std::vector<MapNeighbor> knn(const Vec3& query, std::size_t k) const
  {
    std::shared_lock lock(*mutex_);
    const auto found = tree_.knn(query, k);
    std::vector<MapNeighbor> out;
    out.reserve(found.size());
    for (const auto& n : found) {
      out.push_back({n.id, points_[n.id], std::sqrt(n.squared_distance)});
    }
    return out;
  }

  /// Inserts global-frame points subject to the per-voxel cap.
  std::size_t insert_points(std::span<const Vec3> global_points, int keyframe = 0)
  {
    std::unique_lock lock(*mutex_);
    std::size_t inserted = 0;
    for (const auto& p : global_points) {
      if (!p.allFinite()) {
        continue;
      }
      const VoxelKey key = VoxelKey::of(p, cfg_.voxel_size);
      auto& cell = voxels_[key];
      if (static_cast<int>(cell.size()) >= cfg_.max_points_per_voxel) {
        continue;
      }
      const auto id = static_cast<std::uint32_t>(points_.size());
      cell.push_back(id);
      points_.push_back({p, keyframe});
      cov_cache_.emplace_back(Mat3::Zero());
      cov_valid_.push_back(0);
      tree_.insert(p, id);
      invalidate_around(key);
      ++inserted;
    }
    return inserted;
  }

  /// Transforms radar-frame points by `pose` (radar to global) and inserts them.
  std::size_t insert_scan(const RadarScan& scan, const RigidTransform& pose, int keyframe = 0)
  {
    std::vector<Vec3> global;
    global.reserve(scan.points.size());
    for (const auto& pt : scan.points) {
      global.push_back(pose * pt.position);
    }
    return insert_points(global, keyframe);
  }

  /// Removes points farther than `radius` from `center`.
  std::size_t prune(const Vec3& center, double radius)
  {
    if (!(radius > 0.0)) {
      throw std::invalid_argument("prune: radius must be positive");
    }
    std::unique_lock lock(*mutex_);
    const double r2 = radius * radius;
    const double voxel = cfg_.voxel_size;
    auto& voxels = voxels_;
    return tree_.remove_if([&](const Vec3& p, std::uint32_t id) {
      if ((p - center).squaredNorm() <= r2) {
        return false;
      }
      const auto it = voxels.find(VoxelKey::of(p, voxel));
      if (it != voxels.end()) {
        std::erase(it->second, id);
        if (it->second.empty()) {
          voxels.erase(it);
        }
      }
      return true;
    });
  }

  /// Covariance of the `k` stored points nearest to point `id` (itself
  /// included). Computed on first use and cached until a point lands in an
  /// adjacent voxel.
  Mat3 neighborhood_covariance(std::uint32_t id, std::size_t k) const
  {
    std::shared_lock lock(*mutex_);
    {
      std::lock_guard guard(*cache_mutex_);
      if (cov_valid_[id]) {
        return cov_cache_[id];
      }
    }
    const auto found = tree_.knn(points_[id].position, k);
    std::vector<Vec3> pts;
    pts.reserve(found.size());
    for (const auto& n : found) {
      pts.push_back(points_[n.id].position);
    }
    const Mat3 cov = pts.empty() ? Mat3::Zero() : local_covariance(pts).cov;
    std::lock_guard guard(*cache_mutex_);
    cov_cache_[id] = cov;
    cov_valid_[id] = 1;
    return cov;
  }

  /// Snapshot of all live points.
  std::vector<MapPoint> points() const
  {
    std::shared_lock lock(*mutex_);
    std::vector<MapPoint> out;
    out.reserve(tree_.size());
    tree_.for_each([&](const Vec3&, std::uint32_t id) { out.push_back(points_[id]); });
    return out;
  }

  /// Largest number of points held by any voxel.
  int max_voxel_occupancy() const
  {
    std::shared_lock lock(*mutex_);
    int m = 0;
    for (const auto& [key, ids] : voxels_) {
      m = std::max(m, static_cast<int>(ids.size()));
    }
    return m;
  }

 private:
  // Cached neighborhood covariances near a new point are stale.
  void invalidate_around(const VoxelKey& key)
  {
    std::lock_guard guard(*cache_mutex_);
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          const auto it = voxels_.find(key.offset(dx, dy, dz));
          if (it == voxels_.end()) {
            continue;
          }
          for (const auto id : it->second) {
            cov_valid_[id] = 0;
          }
        }
      }
    }
  }

  SubmapConfig cfg_;
  std::vector<MapPoint> points_;  // indexed by tree id; dead entries stay
  std::unordered_map<VoxelKey, std::vector<std::uint32_t>, VoxelKeyHash> voxels_;
  KdTree tree_;
  mutable std::vector<Mat3> cov_cache_;
  mutable std::vector<std::uint8_t> cov_valid_;
  std::unique_ptr<std::shared_mutex> mutex_;
  std::unique_ptr<std::mutex> cache_mutex_;
};

}  // namespace rio4d
