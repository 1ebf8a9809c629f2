#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace handlift {

inline constexpr std::size_t kJointCount = 21;
inline constexpr std::size_t kWrist = 0;

// Joint order follows the FPHA annotation files:
//   0        wrist
//   1..5     thumb/index/middle/ring/pinky MCP
//   6..20    per finger PIP, DIP, TIP (thumb first)
inline constexpr std::array<std::size_t, 5> kFingertips = {8, 11, 14, 17, 20};

struct SkeletonEdge {
  std::size_t parent;
  std::size_t child;
};

// Rooted tree over a small joint set. Immutable after construction.
class SkeletonGraph {
 public:
  // parents[root] must be nullopt; every other entry names its parent.
  // Throws std::invalid_argument unless the parents describe a single rooted
  // tree.
  static SkeletonGraph from_parents(std::vector<std::string> names,
                                    std::vector<std::optional<std::size_t>> parents);

  std::size_t joint_count() const { return names_.size(); }
  const std::vector<SkeletonEdge>& edges() const { return edges_; }
  const std::vector<std::string>& joint_names() const { return names_; }
  const std::vector<std::optional<std::size_t>>& parents() const { return parents_; }
  std::optional<std::size_t> parent(std::size_t joint) const { return parents_.at(joint); }
  std::size_t root() const { return root_; }

  const std::vector<std::size_t>& neighbors(std::size_t joint) const { return adjacency_.at(joint); }
  std::size_t degree(std::size_t joint) const { return adjacency_.at(joint).size(); }
  bool adjacent(std::size_t a, std::size_t b) const;

 private:
  std::vector<std::string> names_;
  std::vector<std::optional<std::size_t>> parents_;
  std::vector<SkeletonEdge> edges_;
  std::vector<std::vector<std::size_t>> adjacency_;
  std::size_t root_ = 0;
};

// The canonical 21-joint hand.
SkeletonGraph build_hand_skeleton();

enum class AdjacencyKind { raw, normalized_1hop, normalized_multihop, skeleton_mask };

// Dense symmetric J x J matrix, row-major.
struct AdjacencyMatrix {
  std::size_t size = 0;
  AdjacencyKind kind = AdjacencyKind::raw;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * size + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * size + j]; }
};

struct HopDistanceTable {
  std::size_t size = 0;
  std::vector<int> dist;        // J x J, row-major
  std::vector<int> wrist_dist;  // row of the root

  int operator()(std::size_t i, std::size_t j) const { return dist[i * size + j]; }
};

AdjacencyMatrix raw_adjacency(const SkeletonGraph& g);

// D^{-1/2} (A + I) D^{-1/2}, with D the degree matrix of A + I.
AdjacencyMatrix normalized_adjacency(const SkeletonGraph& g);

// Â + Â², not renormalized.
AdjacencyMatrix multihop_adjacency(const SkeletonGraph& g);

// 1 on skeleton edges (both directions) and on the diagonal, 0 elsewhere.
AdjacencyMatrix skeleton_mask(const SkeletonGraph& g);

// Degrees of A + I.
std::vector<double> self_loop_degrees(const SkeletonGraph& g);

HopDistanceTable hop_distances(const SkeletonGraph& g);

// {"joint_count":..,"joint_names":[..],"edges":[[p,c],..],"parents":[..]}
std::string skeleton_to_json(const SkeletonGraph& g);

}  // namespace handlift
