// Independent reference implementations shared by the unit tests and the
// acceptance runner: brute-force searches, central finite differences and
// random generators.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "rio4d/rio4d.hpp"

namespace rio4d::oracle {

inline Vec3 random_vec(std::mt19937_64& rng, double scale)
{
  std::normal_distribution<double> n(0.0, scale);
  return {n(rng), n(rng), n(rng)};
}

inline Mat3 random_rotation(std::mt19937_64& rng)
{
  Eigen::Quaterniond q(std::normal_distribution<double>()(rng), std::normal_distribution<double>()(rng),
                       std::normal_distribution<double>()(rng), std::normal_distribution<double>()(rng));
  return q.normalized().toRotationMatrix();
}

inline NavState random_state(std::mt19937_64& rng)
{
  NavState x;
  x.p = random_vec(rng, 10.0);
  x.v = random_vec(rng, 2.0);
  x.R = random_rotation(rng);
  x.ba = random_vec(rng, 0.05);
  x.bg = random_vec(rng, 0.01);
  x.R_ext = so3_exp(random_vec(rng, 0.3));
  x.l_ext = random_vec(rng, 0.3);
  x.g = Vec3(0.0, 0.0, -9.81) + random_vec(rng, 0.05);
  return x;
}

/// Central differences of f(x (+) d) (-) f(x), column by column.
template <int Rows, typename F, typename Diff>
Eigen::Matrix<double, Rows, kStateDim> numeric_jacobian(const NavState& x, F&& f, Diff&& diff, double h = 1e-6)
{
  Eigen::Matrix<double, Rows, kStateDim> J;
  for (int i = 0; i < kStateDim; ++i) {
    ErrorVector d = ErrorVector::Zero();
    d(i) = h;
    J.col(i) = diff(f(boxplus(x, d)), f(boxplus(x, -d))) / (2.0 * h);
  }
  return J;
}

/// max |A - B| / max(1, max |B|).
template <typename A, typename B>
double relative_error(const A& a, const B& b)
{
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

/// O(n^2) relaxation filter: neighbors j != i strictly within D_th, count
/// above N_th and population standard deviation of the distances below
/// sigma_th.
inline std::vector<bool> relaxation_mask_brute(const RadarScan& scan, const RelaxationFilterParams& p)
{
  const auto n = scan.points.size();
  std::vector<bool> keep(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        continue;
      }
      const double dist = (scan.points[j].position - scan.points[i].position).norm();
      if (dist < p.neighbor_radius) {
        d.push_back(dist);
      }
    }
    if (static_cast<int>(d.size()) <= p.min_neighbors) {
      continue;
    }
    // Two-pass mean / variance in sorted order.
    std::sort(d.begin(), d.end());
    double mean = 0.0;
    for (const double v : d) {
      mean += v;
    }
    mean /= static_cast<double>(d.size());
    double var = 0.0;
    for (const double v : d) {
      var += (v - mean) * (v - mean);
    }
    keep[i] = std::sqrt(var / static_cast<double>(d.size())) < p.std_threshold;
  }
  return keep;
}

struct BruteNeighbor {
  std::uint32_t id;
  double squared_distance;
};

/// O(n) k nearest neighbors of q among the live points, ascending.
inline std::vector<BruteNeighbor> knn_brute(const std::vector<Vec3>& pts, const std::vector<bool>& alive,
                                            const Vec3& q, std::size_t k)
{
  std::vector<BruteNeighbor> all;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (alive[i]) {
      all.push_back({static_cast<std::uint32_t>(i), (pts[i] - q).squaredNorm()});
    }
  }
  const auto m = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m), all.end(),
                    [](const BruteNeighbor& a, const BruteNeighbor& b) { return a.squared_distance < b.squared_distance; });
  all.resize(m);
  return all;
}

/// Static points on random bearings in front of the radar with Doppler
/// d . v (plus noise); the first `outliers` points get an offset of at
/// least `min_offset` with random sign.
inline RadarScan doppler_scan(std::mt19937_64& rng, const Vec3& v, std::size_t n, double sigma,
                              std::size_t outliers = 0, double min_offset = 1.0)
{
  std::uniform_real_distribution<double> az(-60.0 * kDeg2Rad, 60.0 * kDeg2Rad);
  std::uniform_real_distribution<double> el(-20.0 * kDeg2Rad, 20.0 * kDeg2Rad);
  std::uniform_real_distribution<double> range(2.0, 80.0);
  std::uniform_real_distribution<double> offset(min_offset, min_offset + 3.0);
  std::normal_distribution<double> noise(0.0, sigma);
  std::bernoulli_distribution sign(0.5);
  RadarScan scan;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = az(rng);
    const double e = el(rng);
    const Vec3 d(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e));
    RadarPoint p;
    p.position = range(rng) * d;
    p.doppler = d.dot(v) + noise(rng);
    if (i < outliers) {
      p.doppler += sign(rng) ? offset(rng) : -offset(rng);
    }
    scan.points.push_back(p);
  }
  return scan;
}

/// Unweighted least squares over all points (no robust weighting).
inline Vec3 plain_lsq_velocity(const RadarScan& scan)
{
  Mat3 A = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (const auto& p : scan.points) {
    const Vec3 d = p.position.normalized();
    A += d * d.transpose();
    b += p.doppler * d;
  }
  return A.ldlt().solve(b);
}

/// Box-shaped synthetic room: four walls, a floor and four pillars,
/// points on a jittered grid. Returns global points.
inline std::vector<Vec3> synthetic_room(std::mt19937_64& rng, double half = 15.0, double height = 4.0, double step = 0.5)
{
  std::uniform_real_distribution<double> jit(-0.1, 0.1);
  std::vector<Vec3> pts;
  for (double u = -half; u <= half; u += step) {
    for (double h = -1.0; h <= height - 1.0; h += step) {
      pts.emplace_back(u + jit(rng), -half, h + jit(rng));
      pts.emplace_back(u + jit(rng), half, h + jit(rng));
      pts.emplace_back(-half, u + jit(rng), h + jit(rng));
      pts.emplace_back(half, u + jit(rng), h + jit(rng));
    }
    for (double w = -half; w <= half; w += 2.0 * step) {
      pts.emplace_back(u + jit(rng), w + jit(rng), -1.0);
    }
  }
  for (const auto& [cx, cy] : {std::pair{5, 4}, std::pair{-6, 7}, std::pair{8, -9}, std::pair{-3, -5}}) {
    for (double h = -1.0; h <= height - 1.0; h += 0.25) {
      for (int k = 0; k < 8; ++k) {
        const double a = k * kPi / 4.0;
        pts.emplace_back(cx + 0.4 * std::cos(a), cy + 0.4 * std::sin(a), h);
      }
    }
  }
  return pts;
}

}  // namespace rio4d::oracle
