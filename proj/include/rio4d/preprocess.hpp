#pragma once

#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "rio4d/types.hpp"
#include "rio4d/voxel.hpp"

namespace rio4d {

struct RelaxationFilterParams {
  double neighbor_radius = 1.0;  ///< D_th, m
  int min_neighbors = 2;         ///< N_th
  double std_threshold = 0.5;    ///< sigma_th, m

  void validate() const
  {
    if (!(neighbor_radius > 0.0) || min_neighbors < 0 || !(std_threshold > 0.0)) {
      throw std::invalid_argument("relaxation filter: require D_th > 0, N_th >= 0, sigma_th > 0");
    }
  }
};

/// Point i of the scan survives iff, over its neighbors j != i with
/// |p_i - p_j| < D_th, the neighbor count exceeds N_th and the population
/// standard deviation of the neighbor distances is below sigma_th.
/// Neighborhoods are taken from the unfiltered scan; order is preserved.
inline std::vector<bool> relaxation_mask(const RadarScan& scan, const RelaxationFilterParams& params)
{
  params.validate();
  const auto n = scan.points.size();
  std::vector<bool> keep(n, false);
  if (n == 0) {
    return keep;
  }

  const double radius = params.neighbor_radius;
  std::unordered_map<VoxelKey, std::vector<std::size_t>, VoxelKeyHash> grid;
  grid.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    grid[VoxelKey::of(scan.points[i].position, radius)].push_back(i);
  }

  std::vector<double> distances;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& pi = scan.points[i].position;
    const VoxelKey center = VoxelKey::of(pi, radius);
    distances.clear();
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          const auto it = grid.find(center.offset(dx, dy, dz));
          if (it == grid.end()) {
            continue;
          }
          for (const auto j : it->second) {
            if (j == i) {
              continue;
            }
            const double d = (scan.points[j].position - pi).norm();
            if (d < radius) {
              distances.push_back(d);
            }
          }
        }
      }
    }
    const auto count = static_cast<int>(distances.size());
    if (count <= params.min_neighbors) {
      continue;
    }
    double mean = 0.0;
    for (const double d : distances) {
      mean += d;
    }
    mean /= count;
    double var = 0.0;
    for (const double d : distances) {
      var += (d - mean) * (d - mean);
    }
    keep[i] = std::sqrt(var / count) < params.std_threshold;
  }
  return keep;
}

inline RadarScan relaxation_filter(const RadarScan& scan, const RelaxationFilterParams& params)
{
  const auto keep = relaxation_mask(scan, params);
  RadarScan out;
  out.timestamp = scan.timestamp;
  out.points.reserve(scan.points.size());
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    if (keep[i]) {
      out.points.push_back(scan.points[i]);
    }
  }
  return out;
}

}  // namespace rio4d
