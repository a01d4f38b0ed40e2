#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>

#include "rio4d/manifold.hpp"

namespace rio4d {

/// Integer cell coordinate of a uniform grid.
struct VoxelKey {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;

  static VoxelKey of(const Vec3& p, double cell_size)
  {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_size)),
            static_cast<std::int64_t>(std::floor(p.y() / cell_size)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_size))};
  }

  VoxelKey offset(int dx, int dy, int dz) const { return {x + dx, y + dy, z + dz}; }
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept
  {
    // Teschner et al. spatial hash primes.
    const auto h = static_cast<std::uint64_t>(k.x) * 73856093ULL ^
                   static_cast<std::uint64_t>(k.y) * 19349663ULL ^
                   static_cast<std::uint64_t>(k.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

}  // namespace rio4d
