#include "handlift/skeleton.hpp"

#include <Eigen/Dense>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

namespace handlift {

SkeletonGraph SkeletonGraph::from_parents(std::vector<std::string> names,
                                          std::vector<std::optional<std::size_t>> parents) {
  if (names.size() != parents.size() || names.empty()) {
    throw std::invalid_argument("skeleton: names and parents must be nonempty and of equal length");
  }
  const std::size_t n = names.size();
  SkeletonGraph g;
  g.names_ = std::move(names);
  g.parents_ = std::move(parents);
  g.adjacency_.assign(n, {});

  std::size_t roots = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto& p = g.parents_[j];
    if (!p) {
      g.root_ = j;
      ++roots;
      continue;
    }
    if (*p >= n || *p == j) throw std::invalid_argument("skeleton: invalid parent index for joint " + std::to_string(j));
    g.edges_.push_back({*p, j});
    g.adjacency_[*p].push_back(j);
    g.adjacency_[j].push_back(*p);
  }
  if (roots != 1) throw std::invalid_argument("skeleton: expected exactly one root");

  // n - 1 edges plus connectivity from the root means a tree.
  std::vector<bool> seen(n, false);
  std::queue<std::size_t> queue;
  queue.push(g.root_);
  seen[g.root_] = true;
  std::size_t reached = 1;
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop();
    for (auto v : g.adjacency_[u]) {
      if (!seen[v]) {
        seen[v] = true;
        ++reached;
        queue.push(v);
      }
    }
  }
  if (reached != n) throw std::invalid_argument("skeleton: parent links contain a cycle or are disconnected");
  for (auto& row : g.adjacency_) std::sort(row.begin(), row.end());
  return g;
}

bool SkeletonGraph::adjacent(std::size_t a, std::size_t b) const {
  const auto& row = adjacency_.at(a);
  return std::binary_search(row.begin(), row.end(), b);
}

SkeletonGraph build_hand_skeleton() {
  static const char* kFingers = "TIMRP";
  std::vector<std::string> names(kJointCount);
  std::vector<std::optional<std::size_t>> parents(kJointCount);
  names[kWrist] = "W";
  parents[kWrist] = std::nullopt;
  for (std::size_t f = 0; f < 5; ++f) {
    const std::string finger(1, kFingers[f]);
    const std::size_t mcp = 1 + f;
    const std::size_t pip = 6 + 3 * f;
    names[mcp] = finger + "1";
    names[pip] = finger + "2";
    names[pip + 1] = finger + "3";
    names[pip + 2] = finger + "4";
    parents[mcp] = kWrist;
    parents[pip] = mcp;
    parents[pip + 1] = pip;
    parents[pip + 2] = pip + 1;
  }
  return SkeletonGraph::from_parents(std::move(names), std::move(parents));
}

AdjacencyMatrix raw_adjacency(const SkeletonGraph& g) {
  const auto n = g.joint_count();
  AdjacencyMatrix a{n, AdjacencyKind::raw, std::vector<double>(n * n, 0.0)};
  for (const auto& e : g.edges()) {
    a(e.parent, e.child) = 1.0;
    a(e.child, e.parent) = 1.0;
  }
  return a;
}

std::vector<double> self_loop_degrees(const SkeletonGraph& g) {
  std::vector<double> d(g.joint_count());
  for (std::size_t j = 0; j < d.size(); ++j) d[j] = static_cast<double>(g.degree(j) + 1);
  return d;
}

AdjacencyMatrix normalized_adjacency(const SkeletonGraph& g) {
  const auto n = g.joint_count();
  const auto d = self_loop_degrees(g);
  AdjacencyMatrix a{n, AdjacencyKind::normalized_1hop, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) a(i, i) = 1.0 / d[i];
  for (const auto& e : g.edges()) {
    const double w = 1.0 / std::sqrt(d[e.parent] * d[e.child]);
    a(e.parent, e.child) = w;
    a(e.child, e.parent) = w;
  }
  return a;
}

AdjacencyMatrix multihop_adjacency(const SkeletonGraph& g) {
  auto a = normalized_adjacency(g);
  const auto n = static_cast<Eigen::Index>(a.size);
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<RowMatrix> m(a.values.data(), n, n);
  RowMatrix squared = m * m;
  // Â is symmetric; the product may differ from its transpose in the last ulp.
  squared = (0.5 * (squared + squared.transpose())).eval();
  m += squared;
  a.kind = AdjacencyKind::normalized_multihop;
  return a;
}

AdjacencyMatrix skeleton_mask(const SkeletonGraph& g) {
  auto a = raw_adjacency(g);
  for (std::size_t i = 0; i < a.size; ++i) a(i, i) = 1.0;
  a.kind = AdjacencyKind::skeleton_mask;
  return a;
}

HopDistanceTable hop_distances(const SkeletonGraph& g) {
  const auto n = g.joint_count();
  HopDistanceTable t{n, std::vector<int>(n * n, -1), {}};
  for (std::size_t s = 0; s < n; ++s) {
    std::queue<std::size_t> queue;
    t.dist[s * n + s] = 0;
    queue.push(s);
    while (!queue.empty()) {
      const auto u = queue.front();
      queue.pop();
      for (auto v : g.neighbors(u)) {
        if (t.dist[s * n + v] < 0) {
          t.dist[s * n + v] = t.dist[s * n + u] + 1;
          queue.push(v);
        }
      }
    }
  }
  const auto r = g.root();
  t.wrist_dist.assign(t.dist.begin() + static_cast<std::ptrdiff_t>(r * n),
                      t.dist.begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
  return t;
}

std::string skeleton_to_json(const SkeletonGraph& g) {
  nlohmann::json j;
  j["joint_count"] = g.joint_count();
  j["joint_names"] = g.joint_names();
  auto edges = nlohmann::json::array();
  for (const auto& e : g.edges()) edges.push_back({e.parent, e.child});
  j["edges"] = edges;
  auto parents = nlohmann::json::array();
  for (const auto& p : g.parents()) parents.push_back(p ? nlohmann::json(*p) : nlohmann::json(nullptr));
  j["parents"] = parents;
  return j.dump(2);
}

}  // namespace handlift
