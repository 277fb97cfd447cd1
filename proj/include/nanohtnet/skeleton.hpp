#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "nanohtnet/tensor.hpp"

namespace nht {

// Kinematic topology of the 17-joint human skeleton plus the structural
// metadata the pose model needs: per-joint articulation degree (how many
// rotational degrees of freedom accumulate along the chain ending at the
// joint), the four limbs in proximal-to-distal order, and left/right
// mirror pairs for horizontal flips.
struct SkeletonTopology {
  int joints = 0;
  std::vector<std::string> names;
  std::vector<std::pair<int, int>> edges;        // parent, child
  std::vector<int> ldof;                         // 0..3 per joint
  std::vector<std::array<int, 3>> limbs;         // proximal -> distal joints
  std::vector<std::string> limb_names;
  std::vector<std::pair<int, int>> flip_pairs;   // left, right
};

// Standard 17-joint layout: pelvis=0, right leg 1-3, left leg 4-6,
// spine/thorax/neck/head 7-10, left arm 11-13, right arm 14-16.
const SkeletonTopology& h36m17();

// Joint row indices consumed by the limb-feature sub-module, limb-major:
// per limb the [mid, end] joints (articulation degree 2 and 3) -> 8 rows.
std::vector<int64_t> limb_rows_deg23(const SkeletonTopology& topo);
// Per limb the [root, mid, end] joints (degree 1, 2, 3) -> 12 rows.
std::vector<int64_t> limb_rows_deg123(const SkeletonTopology& topo);
// Per limb the end joint (degree 3) -> 4 rows.
std::vector<int64_t> limb_rows_deg3(const SkeletonTopology& topo);
// Per limb the [mid, end] joints, same as limb_rows_deg23.
std::vector<int64_t> limb_rows_deg2(const SkeletonTopology& topo);

// Symmetrically normalized adjacency with self-loops:
// D^{-1/2} (A + I) D^{-1/2}, where D is the degree matrix of A + I.
// Accepts any undirected edge list over n nodes.
Tensor<double> normalized_adjacency(int64_t n, const std::vector<std::pair<int, int>>& edges);

// Normalized adjacency of the path graph 0-1-2-...-n-1 (consecutive
// temporal tokens).
Tensor<double> path_adjacency(int64_t n);

// Mirrors a pose about the vertical axis: negates x and swaps left/right
// joints. Works for [* x J x 2] and [* x J x 3] layouts.
template <class S>
Tensor<S> horizontal_flip(const Tensor<S>& pose, const SkeletonTopology& topo);

// Machine-readable topology dump (names, edges, ldof, limbs, flip pairs).
std::string topology_json(const SkeletonTopology& topo);

}  // namespace nht
