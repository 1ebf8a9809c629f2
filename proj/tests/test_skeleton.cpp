#include "doctest.h"

#include "handlift/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>

using namespace handlift;

namespace {

constexpr int kInf = 1 << 20;

// Floyd-Warshall over the edge list, independent of the library's BFS.
std::vector<int> floyd_warshall(const SkeletonGraph& g) {
  const std::size_t n = g.joint_count();
  std::vector<int> d(n * n, kInf);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 0;
  for (const auto& e : g.edges()) d[e.parent * n + e.child] = d[e.child * n + e.parent] = 1;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] = std::min(d[i * n + j], d[i * n + k] + d[k * n + j]);
  return d;
}

// Â from its entrywise definition.
std::vector<double> normalized_oracle(const SkeletonGraph& g) {
  const std::size_t n = g.joint_count();
  std::vector<double> deg(n, 1.0);
  for (const auto& e : g.edges()) {
    deg[e.parent] += 1.0;
    deg[e.child] += 1.0;
  }
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0 / deg[i];
  for (const auto& e : g.edges()) {
    a[e.parent * n + e.child] = a[e.child * n + e.parent] = 1.0 / std::sqrt(deg[e.parent] * deg[e.child]);
  }
  return a;
}

SkeletonGraph path2() { return SkeletonGraph::from_parents({"a", "b"}, {std::nullopt, 0}); }

}  // namespace

TEST_CASE("hand tree structure") {
  const auto g = build_hand_skeleton();
  CHECK(g.joint_count() == 21);
  CHECK(g.edges().size() == 20);
  CHECK(g.root() == kWrist);
  CHECK(!g.parent(kWrist).has_value());
  for (std::size_t mcp = 1; mcp <= 5; ++mcp) CHECK(g.parent(mcp) == kWrist);
  CHECK(g.degree(kWrist) == 5);
  CHECK(g.joint_names().front() == "W");
  CHECK(g.joint_names()[8] == "T4");

  // Connected: every joint reachable from the wrist.
  std::vector<bool> seen(21, false);
  std::deque<std::size_t> q{kWrist};
  seen[kWrist] = true;
  while (!q.empty()) {
    const auto u = q.front();
    q.pop_front();
    for (auto v : g.neighbors(u))
      if (!seen[v]) {
        seen[v] = true;
        q.push_back(v);
      }
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));

  CHECK_THROWS_AS(SkeletonGraph::from_parents({"a", "b"}, {std::nullopt, std::nullopt}), std::invalid_argument);
  CHECK_THROWS_AS(SkeletonGraph::from_parents({"a", "b", "c"}, {std::nullopt, 2, 1}), std::invalid_argument);
  CHECK_THROWS_AS(SkeletonGraph::from_parents({"a", "b"}, {std::nullopt, 5}), std::invalid_argument);
}

TEST_CASE("hop distances agree with Floyd-Warshall") {
  const auto g = build_hand_skeleton();
  const auto hops = hop_distances(g);
  const auto fw = floyd_warshall(g);
  for (std::size_t i = 0; i < 21 * 21; ++i) CHECK(hops.dist[i] == fw[i]);
  for (std::size_t tip : kFingertips) CHECK(hops.wrist_dist[tip] == 4);
  CHECK(hops(8, 20) == 8);
  CHECK(hops(0, 0) == 0);
  CHECK(*std::max_element(hops.dist.begin(), hops.dist.end()) == 8);
  std::map<int, int> histogram;
  for (int d : hops.wrist_dist) ++histogram[d];
  CHECK(histogram == std::map<int, int>{{0, 1}, {1, 5}, {2, 5}, {3, 5}, {4, 5}});
  for (std::size_t i = 0; i < 21; ++i)
    for (std::size_t j = 0; j < 21; ++j) {
      CHECK(hops(i, j) == hops(j, i));
      for (std::size_t k = 0; k < 21; ++k) CHECK(hops(i, j) <= hops(i, k) + hops(k, j));
    }
}

TEST_CASE("normalized adjacency") {
  const auto p = normalized_adjacency(path2());
  CHECK(p.values == std::vector<double>{0.5, 0.5, 0.5, 0.5});
  const auto single = normalized_adjacency(SkeletonGraph::from_parents({"a"}, {std::nullopt}));
  CHECK(single.values == std::vector<double>{1.0});

  const auto g = build_hand_skeleton();
  const auto a = normalized_adjacency(g);
  const auto oracle = normalized_oracle(g);
  const auto deg = self_loop_degrees(g);
  for (std::size_t i = 0; i < 21 * 21; ++i) CHECK(a.values[i] == doctest::Approx(oracle[i]).epsilon(1e-15));
  for (std::size_t i = 0; i < 21; ++i) {
    CHECK(a(i, i) > 0.0);
    // D^{1/2} 1 is an eigenvector with eigenvalue 1.
    double av = 0.0, row = 0.0;
    for (std::size_t j = 0; j < 21; ++j) {
      av += a(i, j) * std::sqrt(deg[j]);
      row += a(i, j) * std::sqrt(deg[j] / deg[i]);
    }
    CHECK(std::abs(av - std::sqrt(deg[i])) < 1e-10);
    CHECK(std::abs(row - 1.0) < 1e-12);
  }
}

TEST_CASE("multi-hop adjacency") {
  // Two nodes: Â is all 1/2, Â² is all 1/4 + 1/4 = 1/2, so Â + Â² is all 1.
  const auto p = multihop_adjacency(path2());
  CHECK(p.values == std::vector<double>{1.0, 1.0, 1.0, 1.0});

  const auto g = build_hand_skeleton();
  const auto a = normalized_adjacency(g);
  const auto m = multihop_adjacency(g);
  const auto hops = hop_distances(g);
  for (std::size_t i = 0; i < 21; ++i)
    for (std::size_t j = 0; j < 21; ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < 21; ++k) sq += a(i, k) * a(k, j);
      CHECK(m(i, j) == doctest::Approx(a(i, j) + sq).epsilon(1e-14));
      CHECK((m(i, j) > 0.0) == (hops(i, j) <= 2));
    }
  for (std::size_t finger = 0; finger < 5; ++finger) {
    const std::size_t pip = 6 + 3 * finger;
    CHECK(m(kWrist, pip) > 0.0);
    CHECK(m(kWrist, kFingertips[finger]) == 0.0);
  }
}

TEST_CASE("raw adjacency and skeleton mask") {
  const auto g = build_hand_skeleton();
  const auto raw = raw_adjacency(g);
  const auto mask = skeleton_mask(g);
  const auto a = normalized_adjacency(g);
  const auto m = multihop_adjacency(g);
  double popcount = 0.0;
  for (std::size_t i = 0; i < 21; ++i) {
    CHECK(raw(i, i) == 0.0);
    for (std::size_t j = 0; j < 21; ++j) {
      CHECK((raw(i, j) == 0.0 || raw(i, j) == 1.0));
      CHECK((raw(i, j) == 1.0) == g.adjacent(i, j));
      CHECK(mask(i, j) == ((i == j || g.adjacent(i, j)) ? 1.0 : 0.0));
      if (mask(i, j) != 0.0) CHECK(a(i, j) > 0.0);
      for (const auto* mat : {&raw, &mask, &a, &m}) CHECK((*mat)(i, j) == (*mat)(j, i));
      popcount += mask(i, j);
    }
  }
  CHECK(popcount == 61.0);
  std::size_t wrist_row = 0;
  for (std::size_t j = 0; j < 21; ++j) wrist_row += mask(kWrist, j) != 0.0;
  CHECK(wrist_row == 6);
  CHECK(raw.kind == AdjacencyKind::raw);
  CHECK(mask.kind == AdjacencyKind::skeleton_mask);
}

TEST_CASE("json export") {
  const auto json = skeleton_to_json(build_hand_skeleton());
  CHECK(json.find("\"joint_count\": 21") != std::string::npos);
  CHECK(json.find("\"T4\"") != std::string::npos);
}
