#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "rio4d/kdtree.hpp"
#include "rio4d/submap.hpp"
#include "rio4d/types.hpp"

namespace rio4d {

// ---------------------------------------------------------------------------
// Scan context
// ---------------------------------------------------------------------------

struct ScanContextConfig {
  int rings = 20;
  int sectors = 60;
  double max_range = 80.0;
  double height_offset = 0.0;  ///< added to z so that ground-level returns stay positive
};

/// Polar grid of per-bin maximum height. Empty bins hold 0.
struct ScanContextDescriptor {
  Eigen::MatrixXd cells;     ///< rings x sectors
  Eigen::VectorXd ring_key;  ///< fraction of occupied sectors per ring
};

inline ScanContextDescriptor make_descriptor(const RadarScan& scan, const ScanContextConfig& cfg = {})
{
  if (scan.empty()) {
    throw std::invalid_argument("make_descriptor: empty scan");
  }
  if (cfg.rings < 1 || cfg.sectors < 1 || !(cfg.max_range > 0.0)) {
    throw std::invalid_argument("make_descriptor: invalid grid");
  }
  ScanContextDescriptor d;
  d.cells = Eigen::MatrixXd::Zero(cfg.rings, cfg.sectors);
  Eigen::MatrixXi occupied = Eigen::MatrixXi::Zero(cfg.rings, cfg.sectors);
  for (const auto& pt : scan.points) {
    const double r = std::hypot(pt.position.x(), pt.position.y());
    if (r >= cfg.max_range) {
      continue;
    }
    const int ring = std::min(cfg.rings - 1, static_cast<int>(r / cfg.max_range * cfg.rings));
    const double az = std::atan2(pt.position.y(), pt.position.x()) + kPi;  // [0, 2 pi]
    const int sector = static_cast<int>(az / (2.0 * kPi) * cfg.sectors) % cfg.sectors;
    const double h = std::max(0.0, pt.position.z() + cfg.height_offset);
    d.cells(ring, sector) = std::max(d.cells(ring, sector), h);
    occupied(ring, sector) = 1;
  }
  d.ring_key = occupied.cast<double>().rowwise().sum() / static_cast<double>(cfg.sectors);
  return d;
}

/// Copy of `d` with column j moved to column (j + k) mod sectors.
inline ScanContextDescriptor shift_columns(const ScanContextDescriptor& d, int k)
{
  ScanContextDescriptor out = d;
  const int n = static_cast<int>(d.cells.cols());
  for (int j = 0; j < n; ++j) {
    out.cells.col(((j + k) % n + n) % n) = d.cells.col(j);
  }
  return out;
}

struct DescriptorMatch {
  double distance = 1.0;
  int shift = 0;  ///< b matches a with columns moved by `shift` sectors
};

/// Minimum over circular shifts k of the mean cosine distance between column
/// j of `a` and column j + k of `b`. Pairs with both columns empty are
/// skipped; a pair with exactly one empty column counts as distance 1, so a
/// shift that merely slides two narrow fields of view apart scores badly.
inline DescriptorMatch descriptor_distance(const ScanContextDescriptor& a, const ScanContextDescriptor& b)
{
  if (a.cells.rows() != b.cells.rows() || a.cells.cols() != b.cells.cols()) {
    throw std::invalid_argument("descriptor_distance: dimension mismatch");
  }
  const int n = static_cast<int>(a.cells.cols());
  const Eigen::VectorXd na = a.cells.colwise().norm();
  const Eigen::VectorXd nb = b.cells.colwise().norm();
  DescriptorMatch best;
  best.distance = std::numeric_limits<double>::infinity();
  for (int k = 0; k < n; ++k) {
    double sum = 0.0;
    int count = 0;
    for (int j = 0; j < n; ++j) {
      const int jb = (j + k) % n;
      const bool ea = na(j) <= 0.0;
      const bool eb = nb(jb) <= 0.0;
      if (ea && eb) {
        continue;
      }
      sum += (ea || eb) ? 1.0 : 1.0 - a.cells.col(j).dot(b.cells.col(jb)) / (na(j) * nb(jb));
      ++count;
    }
    const double dist = count > 0 ? sum / count : 1.0;
    if (dist < best.distance) {
      best = {dist, k};
    }
  }
  return best;
}

struct LoopDetectorConfig {
  double threshold = 0.35;
  int min_gap = 30;     ///< keyframes excluded around the query
  int shortlist = 10;   ///< ring-key nearest neighbors examined
};

struct KeyframeDescriptor {
  int id = 0;
  ScanContextDescriptor descriptor;
};

struct LoopCandidate {
  int id = 0;
  int shift = 0;
  double yaw = 0.0;  ///< rotation about z taking query-frame points into the candidate frame
  double distance = 0.0;
};

inline std::optional<LoopCandidate> detect_loop(int query_id, const ScanContextDescriptor& query,
                                                std::span<const KeyframeDescriptor> database,
                                                const LoopDetectorConfig& cfg = {})
{
  std::vector<std::pair<double, const KeyframeDescriptor*>> ranked;
  for (const auto& kf : database) {
    if (std::abs(kf.id - query_id) < cfg.min_gap) {
      continue;
    }
    ranked.emplace_back((kf.descriptor.ring_key - query.ring_key).squaredNorm(), &kf);
  }
  const auto keep = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(std::max(cfg.shortlist, 0)));
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end(),
                    [](const auto& x, const auto& y) { return x.first < y.first || (x.first == y.first && x.second->id < y.second->id); });

  std::optional<LoopCandidate> best;
  for (std::size_t i = 0; i < keep; ++i) {
    const auto m = descriptor_distance(query, ranked[i].second->descriptor);
    if (m.distance < cfg.threshold && (!best || m.distance < best->distance)) {
      const int n = static_cast<int>(query.cells.cols());
      double yaw = 2.0 * kPi * m.shift / n;
      if (yaw > kPi) {
        yaw -= 2.0 * kPi;
      }
      best = LoopCandidate{ranked[i].second->id, m.shift, yaw, m.distance};
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Generalized ICP
// ---------------------------------------------------------------------------

struct GicpConfig {
  int num_neighbors = 5;
  int max_iterations = 40;
  double tolerance = 1e-6;                 ///< increment norm for convergence
  double max_correspondence_distance = 5.0; ///< first stage gate, halved per stage
  double min_correspondence_distance = 1.0; ///< last stage gate
  double inlier_distance = 1.0;            ///< fitness threshold, m
  double plane_epsilon = 1e-3;             ///< smallest regularized eigenvalue
};

struct GicpResult {
  RigidTransform transform;        ///< maps source points onto the target
  Mat6 information = Mat6::Zero(); ///< Gauss-Newton Hessian in (rho, omega)
  double fitness = 0.0;            ///< fraction of source points within inlier_distance
  int iterations = 0;
};

/// Per-point covariances from k-neighborhoods, eigenvalues replaced by
/// (eps, 1, 1) in ascending order.
inline std::vector<Mat3> gicp_covariances(std::span<const Vec3> pts, const KdTree& tree, const GicpConfig& cfg)
{
  std::vector<Mat3> out(pts.size(), Mat3::Identity());
  std::vector<Vec3> nb;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    nb.clear();
    for (const auto& n : tree.knn(pts[i], static_cast<std::size_t>(cfg.num_neighbors))) {
      nb.push_back(pts[n.id]);
    }
    if (nb.size() < 3) {
      continue;
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(local_covariance(nb).cov);
    const Vec3 reg(cfg.plane_epsilon, 1.0, 1.0);
    out[i] = es.eigenvectors() * reg.asDiagonal() * es.eigenvectors().transpose();
  }
  return out;
}

inline KdTree build_tree(std::span<const Vec3> pts)
{
  KdTree tree;
  std::vector<std::uint32_t> ids(pts.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = static_cast<std::uint32_t>(i);
  }
  tree.build(std::vector<Vec3>(pts.begin(), pts.end()), ids);
  return tree;
}

/// Distribution-to-distribution registration of `source` onto `target`.
/// Coarse to fine: the correspondence gate starts at
/// max_correspondence_distance and halves (down to the minimum) each time a
/// stage converges. Throws NotConverged when a stage is still above
/// tolerance after max_iterations or too few correspondences exist.
inline GicpResult relative_pose_gicp(std::span<const Vec3> source, std::span<const Vec3> target,
                                     const RigidTransform& init, const GicpConfig& cfg = {})
{
  if (source.empty() || target.empty()) {
    throw std::invalid_argument("relative_pose_gicp: empty input");
  }
  if (!(cfg.min_correspondence_distance > 0.0) || cfg.min_correspondence_distance > cfg.max_correspondence_distance) {
    throw std::invalid_argument("relative_pose_gicp: require 0 < min <= max correspondence distance");
  }
  const KdTree src_tree = build_tree(source);
  const KdTree tgt_tree = build_tree(target);
  const auto cov_a = gicp_covariances(source, src_tree, cfg);
  const auto cov_b = gicp_covariances(target, tgt_tree, cfg);

  GicpResult res;
  res.transform = init;
  // One Gauss-Newton stage with a fixed correspondence gate. Nearest
  // neighbor flips can trap the iterate in a small limit cycle; when the
  // cost stops improving for three iterations the stage ends at its best
  // iterate.
  auto run_stage = [&](double gate) {
    const double max_d2 = gate * gate;
    double best_cost = std::numeric_limits<double>::infinity();
    RigidTransform best = res.transform;
    Mat6 best_info = res.information;
    int stalled = 0;
    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
      const Mat3& R = res.transform.rotation;
      Mat6 H = Mat6::Zero();
      Vec6 g = Vec6::Zero();
      double cost = 0.0;
      int matches = 0;
      for (std::size_t i = 0; i < source.size(); ++i) {
        const Vec3 q = res.transform * source[i];
        const auto nn = tgt_tree.knn(q, 1);
        if (nn.empty() || nn[0].squared_distance > max_d2) {
          continue;
        }
        const Vec3 d = target[nn[0].id] - q;
        const Mat3 omega = (cov_b[nn[0].id] + R * cov_a[i] * R.transpose()).inverse();
        Eigen::Matrix<double, 3, 6> J;
        J.leftCols<3>() = -R;
        J.rightCols<3>() = R * skew(source[i]);
        H.noalias() += J.transpose() * omega * J;
        g.noalias() += J.transpose() * omega * d;
        cost += d.dot(omega * d);
        ++matches;
      }
      if (matches < 6) {
        throw NotConverged("gicp: too few correspondences");
      }
      cost /= matches;
      if (cost < best_cost * (1.0 - 1e-9)) {
        best_cost = cost;
        best = res.transform;
        best_info = H;
        stalled = 0;
      } else if (++stalled >= 3) {
        res.transform = best;
        res.information = best_info;
        return;
      }
      const Vec6 delta = -H.ldlt().solve(g);
      res.transform = retract(res.transform, delta);
      res.transform.rotation = normalize_rotation(res.transform.rotation);
      res.information = H;
      ++res.iterations;
      if (!delta.allFinite()) {
        throw NotConverged("gicp: non-finite increment");
      }
      if (delta.norm() < cfg.tolerance) {
        return;
      }
    }
    throw NotConverged("gicp: increment above tolerance after max iterations");
  };
  double gate = cfg.max_correspondence_distance;
  while (gate > cfg.min_correspondence_distance) {
    run_stage(gate);
    gate *= 0.5;
  }
  run_stage(cfg.min_correspondence_distance);

  const double in2 = cfg.inlier_distance * cfg.inlier_distance;
  int inliers = 0;
  for (const auto& p : source) {
    const auto nn = tgt_tree.knn(res.transform * p, 1);
    if (!nn.empty() && nn[0].squared_distance < in2) {
      ++inliers;
    }
  }
  res.fitness = static_cast<double>(inliers) / static_cast<double>(source.size());
  return res;
}

inline GicpResult relative_pose_gicp(const RadarScan& source, const RadarScan& target, const RigidTransform& init,
                                     const GicpConfig& cfg = {})
{
  std::vector<Vec3> a;
  std::vector<Vec3> b;
  for (const auto& p : source.points) {
    a.push_back(p.position);
  }
  for (const auto& p : target.points) {
    b.push_back(p.position);
  }
  return relative_pose_gicp(a, b, init, cfg);
}

// ---------------------------------------------------------------------------
// Pose graph
// ---------------------------------------------------------------------------

/// Constraint T_from^-1 T_to = measurement.
struct PoseGraphEdge {
  int from = 0;
  int to = 0;
  RigidTransform measurement;
  Mat6 information = Mat6::Identity();  ///< over (translation, rotation) residual
  bool is_loop = false;
};

class PoseGraph {
 public:
  int add_node(const RigidTransform& pose)
  {
    nodes_.push_back(pose);
    return static_cast<int>(nodes_.size()) - 1;
  }

  void add_edge(const PoseGraphEdge& e)
  {
    const int n = static_cast<int>(nodes_.size());
    if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n || e.from == e.to) {
      throw std::invalid_argument("pose graph: edge references unknown node");
    }
    if (!(e.information - e.information.transpose()).isZero(1e-9 * (1.0 + e.information.norm()))) {
      throw std::invalid_argument("pose graph: information matrix not symmetric");
    }
    edges_.push_back(e);
  }

  const std::vector<RigidTransform>& nodes() const { return nodes_; }
  const std::vector<PoseGraphEdge>& edges() const { return edges_; }
  void set_pose(int id, const RigidTransform& pose) { nodes_.at(static_cast<std::size_t>(id)) = pose; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<RigidTransform> nodes_;
  std::vector<PoseGraphEdge> edges_;
};

/// Residual of one edge: translation Z_R^T (R_a^T (t_b - t_a) - Z_t) and
/// rotation log(Z_R^T R_a^T R_b).
inline Vec6 edge_residual(const RigidTransform& a, const RigidTransform& b, const RigidTransform& z)
{
  Vec6 e;
  e.head<3>() = z.rotation.transpose() * (a.rotation.transpose() * (b.translation - a.translation) - z.translation);
  e.tail<3>() = so3_log(z.rotation.transpose() * a.rotation.transpose() * b.rotation);
  return e;
}

/// Jacobians of edge_residual w.r.t. retract increments of a and b.
inline std::pair<Mat6, Mat6> edge_jacobians(const RigidTransform& a, const RigidTransform& b, const RigidTransform& z)
{
  const Vec3 er = so3_log(z.rotation.transpose() * a.rotation.transpose() * b.rotation);
  const Mat3 Jinv = right_jacobian_inv(er);
  const Mat3 ZRt = z.rotation.transpose();
  Mat6 Ja = Mat6::Zero();
  Mat6 Jb = Mat6::Zero();
  Ja.block<3, 3>(0, 0) = -ZRt;
  Ja.block<3, 3>(0, 3) = ZRt * skew(a.rotation.transpose() * (b.translation - a.translation));
  Ja.block<3, 3>(3, 3) = -Jinv * b.rotation.transpose() * a.rotation;
  Jb.block<3, 3>(0, 0) = ZRt * a.rotation.transpose() * b.rotation;
  Jb.block<3, 3>(3, 3) = Jinv;
  return {Ja, Jb};
}

inline double pose_graph_cost(const std::vector<RigidTransform>& poses, const std::vector<PoseGraphEdge>& edges)
{
  double cost = 0.0;
  for (const auto& e : edges) {
    const Vec6 r = edge_residual(poses[static_cast<std::size_t>(e.from)], poses[static_cast<std::size_t>(e.to)],
                                 e.measurement);
    cost += r.dot(e.information * r);
  }
  return cost;
}

struct PoseGraphConfig {
  int max_iterations = 50;
  double tolerance = 1e-6;
};

struct PoseGraphResult {
  std::vector<RigidTransform> poses;
  bool converged = false;
  int iterations = 0;
  std::vector<double> cost_history;  ///< initial cost, then one entry per accepted step
};

/// Gauss-Newton with Levenberg damping as fallback. Node 0 is held fixed.
inline PoseGraphResult optimize_pose_graph(const PoseGraph& graph, const PoseGraphConfig& cfg = {})
{
  PoseGraphResult res;
  res.poses = graph.nodes();
  const int n = static_cast<int>(res.poses.size());
  double cost = pose_graph_cost(res.poses, graph.edges());
  res.cost_history.push_back(cost);
  if (n <= 1 || graph.edges().empty()) {
    res.converged = true;
    return res;
  }
  const int dim = 6 * (n - 1);
  double lambda = 0.0;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
    for (const auto& e : graph.edges()) {
      const auto& a = res.poses[static_cast<std::size_t>(e.from)];
      const auto& b = res.poses[static_cast<std::size_t>(e.to)];
      const Vec6 r = edge_residual(a, b, e.measurement);
      const auto [Ja, Jb] = edge_jacobians(a, b, e.measurement);
      const int ia = 6 * (e.from - 1);
      const int ib = 6 * (e.to - 1);
      const std::array<std::pair<int, const Mat6*>, 2> blocks{{{ia, &Ja}, {ib, &Jb}}};
      for (const auto& [i, Ji] : blocks) {
        if (i < 0) {
          continue;
        }
        g.segment<6>(i) += Ji->transpose() * e.information * r;
        for (const auto& [j, Jj] : blocks) {
          if (j < 0) {
            continue;
          }
          const Mat6 Hij = Ji->transpose() * e.information * *Jj;
          for (int u = 0; u < 6; ++u) {
            for (int v = 0; v < 6; ++v) {
              trip.emplace_back(i + u, j + v, Hij(u, v));
            }
          }
        }
      }
    }
    Eigen::SparseMatrix<double> H(dim, dim);
    H.setFromTriplets(trip.begin(), trip.end());
    const Eigen::VectorXd diag = H.diagonal();

    bool accepted = false;
    Eigen::VectorXd delta;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      Eigen::SparseMatrix<double> A = H;
      for (int k = 0; k < dim; ++k) {
        A.coeffRef(k, k) += lambda * diag(k) + 1e-12;
      }
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
      if (solver.info() != Eigen::Success) {
        lambda = lambda == 0.0 ? 1e-4 : lambda * 10.0;
        continue;
      }
      delta = -solver.solve(g);
      std::vector<RigidTransform> trial = res.poses;
      for (int k = 1; k < n; ++k) {
        trial[static_cast<std::size_t>(k)] = retract(trial[static_cast<std::size_t>(k)], delta.segment<6>(6 * (k - 1)));
      }
      const double trial_cost = pose_graph_cost(trial, graph.edges());
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        res.poses = std::move(trial);
        cost = trial_cost;
        accepted = true;
        lambda = lambda < 1e-8 ? 0.0 : lambda / 10.0;
      } else {
        lambda = lambda == 0.0 ? 1e-4 : lambda * 10.0;
      }
    }
    res.iterations = iter + 1;
    if (!accepted) {
      res.converged = true;  // no descent direction left
      break;
    }
    res.cost_history.push_back(cost);
    if (delta.norm() < cfg.tolerance) {
      res.converged = true;
      break;
    }
  }
  for (auto& p : res.poses) {
    p.rotation = normalize_rotation(p.rotation);
  }
  return res;
}

}  // namespace rio4d
