#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <vector>

#include "rio4d/manifold.hpp"

namespace rio4d {

/// Incremental 3D k-d tree.
///
/// Points are appended with a caller-chosen id. Subtrees are rebuilt in place
/// when one child holds more than `balance_factor` of the subtree (scapegoat
/// rule); removals only mark nodes, and the whole tree is rebuilt once more
/// than `max_deleted_fraction` of the nodes are dead.
class KdTree {
 public:
  struct Neighbor {
    std::uint32_t id = 0;
    double squared_distance = 0.0;
  };

  explicit KdTree(double balance_factor = 0.7, double max_deleted_fraction = 0.5)
      : alpha_(balance_factor), max_deleted_fraction_(max_deleted_fraction)
  {
  }

  std::size_t size() const { return nodes_.size() - free_.size() - deleted_; }
  bool empty() const { return size() == 0; }
  std::size_t rebuild_count() const { return rebuilds_; }

  void clear()
  {
    nodes_.clear();
    free_.clear();
    root_ = kNull;
    deleted_ = 0;
  }

  /// Bulk build from scratch.
  void build(const std::vector<Vec3>& points, const std::vector<std::uint32_t>& ids)
  {
    clear();
    std::vector<std::int32_t> slots;
    slots.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      slots.push_back(allocate(points[i], ids[i]));
    }
    root_ = build_range(slots, 0, static_cast<std::int32_t>(slots.size()));
  }

  void insert(const Vec3& p, std::uint32_t id)
  {
    const std::int32_t slot = allocate(p, id);
    if (root_ == kNull) {
      root_ = slot;
      nodes_[slot].axis = 0;
      return;
    }

    path_.clear();
    std::int32_t cur = root_;
    while (true) {
      path_.push_back(cur);
      Node& n = nodes_[cur];
      ++n.size;
      std::int32_t& child = p[n.axis] < n.point[n.axis] ? n.left : n.right;
      if (child == kNull) {
        child = slot;
        nodes_[slot].axis = static_cast<std::uint8_t>((n.axis + 1) % 3);
        break;
      }
      cur = child;
    }

    // Rebuild the highest unbalanced ancestor.
    for (std::size_t i = 0; i < path_.size(); ++i) {
      const std::int32_t idx = path_[i];
      const Node& n = nodes_[idx];
      if (n.size < kMinRebuildSize) {
        break;
      }
      const auto heavy = std::max(subtree_size(n.left), subtree_size(n.right));
      if (heavy > alpha_ * n.size) {
        const std::int32_t parent = i == 0 ? kNull : path_[i - 1];
        rebuild_subtree(idx, parent);
        break;
      }
    }
  }

  /// Marks every live point matching `pred(point, id)` as removed; returns
  /// the number removed.
  std::size_t remove_if(const std::function<bool(const Vec3&, std::uint32_t)>& pred)
  {
    std::size_t removed = 0;
    for (auto& n : nodes_) {
      if (n.in_use && !n.deleted && pred(n.point, n.id)) {
        n.deleted = true;
        ++removed;
      }
    }
    deleted_ += removed;
    const auto total = nodes_.size() - free_.size();
    if (total > 0 && static_cast<double>(deleted_) > max_deleted_fraction_ * static_cast<double>(total)) {
      rebuild_all();
    }
    return removed;
  }

  /// k nearest live points, ascending by distance.
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const
  {
    std::vector<Neighbor> heap;
    if (k == 0 || root_ == kNull) {
      return heap;
    }
    heap.reserve(k + 1);
    search(root_, query, k, heap);
    std::sort_heap(heap.begin(), heap.end(), closer);
    return heap;
  }

  /// All live points within `radius` of `query` (unordered).
  std::vector<Neighbor> radius_search(const Vec3& query, double radius) const
  {
    std::vector<Neighbor> out;
    if (root_ != kNull) {
      radius_search(root_, query, radius * radius, out);
    }
    return out;
  }

  /// Number of nodes on the longest root-to-leaf path.
  int depth() const { return depth(root_); }

  /// Visits every live point.
  template <typename F>
  void for_each(F&& f) const
  {
    for (const auto& n : nodes_) {
      if (n.in_use && !n.deleted) {
        f(n.point, n.id);
      }
    }
  }

 private:
  static constexpr std::int32_t kNull = -1;
  static constexpr std::int32_t kMinRebuildSize = 16;

  struct Node {
    Vec3 point = Vec3::Zero();
    std::uint32_t id = 0;
    std::int32_t left = kNull;
    std::int32_t right = kNull;
    std::int32_t size = 1;  // nodes in subtree, dead ones included
    std::uint8_t axis = 0;
    bool deleted = false;
    bool in_use = true;
  };

  static bool closer(const Neighbor& a, const Neighbor& b)
  {
    return a.squared_distance < b.squared_distance;
  }

  std::int32_t subtree_size(std::int32_t idx) const { return idx == kNull ? 0 : nodes_[idx].size; }

  std::int32_t allocate(const Vec3& p, std::uint32_t id)
  {
    Node n;
    n.point = p;
    n.id = id;
    if (!free_.empty()) {
      const std::int32_t slot = free_.back();
      free_.pop_back();
      nodes_[slot] = n;
      return slot;
    }
    nodes_.push_back(n);
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  void collect(std::int32_t idx, std::vector<std::int32_t>& live)
  {
    if (idx == kNull) {
      return;
    }
    collect(nodes_[idx].left, live);
    collect(nodes_[idx].right, live);
    Node& n = nodes_[idx];
    if (n.deleted) {
      n.in_use = false;
      free_.push_back(idx);
      --deleted_;
    } else {
      live.push_back(idx);
    }
  }

  std::int32_t build_range(std::vector<std::int32_t>& slots, std::int32_t lo, std::int32_t hi)
  {
    if (lo >= hi) {
      return kNull;
    }
    // Split on the axis of largest spread.
    Vec3 mn = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 mx = -mn;
    for (std::int32_t i = lo; i < hi; ++i) {
      mn = mn.cwiseMin(nodes_[slots[i]].point);
      mx = mx.cwiseMax(nodes_[slots[i]].point);
    }
    int axis = 0;
    (mx - mn).maxCoeff(&axis);
    const std::int32_t mid = lo + (hi - lo) / 2;
    std::nth_element(slots.begin() + lo, slots.begin() + mid, slots.begin() + hi,
                     [&](std::int32_t a, std::int32_t b) { return nodes_[a].point[axis] < nodes_[b].point[axis]; });
    // Left holds coordinates <= split, right >= split, matching the
    // insertion rule (p < split -> left).
    const std::int32_t m = mid;
    const std::int32_t root = slots[m];
    Node& n = nodes_[root];
    n.axis = static_cast<std::uint8_t>(axis);
    n.left = build_range(slots, lo, m);
    n.right = build_range(slots, m + 1, hi);
    nodes_[root].size = 1 + subtree_size(nodes_[root].left) + subtree_size(nodes_[root].right);
    return root;
  }

  void rebuild_subtree(std::int32_t idx, std::int32_t parent)
  {
    std::vector<std::int32_t> live;
    const std::int32_t old_size = nodes_[idx].size;
    collect(idx, live);
    const std::int32_t new_root = build_range(live, 0, static_cast<std::int32_t>(live.size()));
    const std::int32_t shrink = old_size - static_cast<std::int32_t>(live.size());
    if (parent == kNull) {
      root_ = new_root;
    } else {
      Node& p = nodes_[parent];
      (p.left == idx ? p.left : p.right) = new_root;
      // Ancestors lost the dead nodes dropped by the rebuild.
      if (shrink > 0) {
        for (const auto a : path_) {
          if (a == idx) {
            break;
          }
          nodes_[a].size -= shrink;
        }
      }
    }
    ++rebuilds_;
  }

  void rebuild_all()
  {
    path_.clear();
    if (root_ != kNull) {
      rebuild_subtree(root_, kNull);
    }
  }

  void search(std::int32_t idx, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap) const
  {
    const Node& n = nodes_[idx];
    if (!n.deleted) {
      const double d2 = (n.point - q).squaredNorm();
      if (heap.size() < k) {
        heap.push_back({n.id, d2});
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (d2 < heap.front().squared_distance) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = {n.id, d2};
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    const double diff = q[n.axis] - n.point[n.axis];
    const std::int32_t near = diff < 0.0 ? n.left : n.right;
    const std::int32_t far = diff < 0.0 ? n.right : n.left;
    if (near != kNull) {
      search(near, q, k, heap);
    }
    if (far != kNull && (heap.size() < k || diff * diff < heap.front().squared_distance)) {
      search(far, q, k, heap);
    }
  }

  void radius_search(std::int32_t idx, const Vec3& q, double r2, std::vector<Neighbor>& out) const
  {
    const Node& n = nodes_[idx];
    if (!n.deleted) {
      const double d2 = (n.point - q).squaredNorm();
      if (d2 <= r2) {
        out.push_back({n.id, d2});
      }
    }
    const double diff = q[n.axis] - n.point[n.axis];
    const std::int32_t near = diff < 0.0 ? n.left : n.right;
    const std::int32_t far = diff < 0.0 ? n.right : n.left;
    if (near != kNull) {
      radius_search(near, q, r2, out);
    }
    if (far != kNull && diff * diff <= r2) {
      radius_search(far, q, r2, out);
    }
  }

  int depth(std::int32_t idx) const
  {
    if (idx == kNull) {
      return 0;
    }
    return 1 + std::max(depth(nodes_[idx].left), depth(nodes_[idx].right));
  }

  std::vector<Node> nodes_;
  std::vector<std::int32_t> free_;
  std::vector<std::int32_t> path_;
  std::int32_t root_ = kNull;
  std::size_t deleted_ = 0;
  std::size_t rebuilds_ = 0;
  double alpha_;
  double max_deleted_fraction_;
};

}  // namespace rio4d
