#include "nanohtnet/skeleton.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

namespace nht {

const SkeletonTopology& h36m17() {
  static const SkeletonTopology topo = [] {
    SkeletonTopology t;
    t.joints = 17;
    t.names = {"pelvis",     "r_hip",      "r_knee",  "r_ankle", "l_hip",  "l_knee",
               "l_ankle",    "spine",      "thorax",  "neck",    "head",   "l_shoulder",
               "l_elbow",    "l_wrist",    "r_shoulder", "r_elbow", "r_wrist"};
    t.edges = {{0, 1}, {1, 2},  {2, 3},  {0, 4},  {4, 5},  {5, 6},  {0, 7},  {7, 8},
               {8, 9}, {9, 10}, {8, 11}, {11, 12}, {12, 13}, {8, 14}, {14, 15}, {15, 16}};
    //           pelvis r.hip r.knee r.ankle l.hip l.knee l.ankle spine thorax neck head
    t.ldof =    {0,     1,    2,     3,      1,    2,     3,      0,    0,     0,   0,
    //           l.shoulder l.elbow l.wrist r.shoulder r.elbow r.wrist
                 1,         2,      3,      1,         2,      3};
    t.limbs = {{1, 2, 3}, {4, 5, 6}, {11, 12, 13}, {14, 15, 16}};
    t.limb_names = {"right_leg", "left_leg", "left_arm", "right_arm"};
    t.flip_pairs = {{4, 1}, {5, 2}, {6, 3}, {11, 14}, {12, 15}, {13, 16}};
    return t;
  }();
  return topo;
}

std::vector<int64_t> limb_rows_deg23(const SkeletonTopology& topo) {
  std::vector<int64_t> rows;
  for (const auto& limb : topo.limbs) {
    rows.push_back(limb[1]);
    rows.push_back(limb[2]);
  }
  return rows;
}

std::vector<int64_t> limb_rows_deg123(const SkeletonTopology& topo) {
  std::vector<int64_t> rows;
  for (const auto& limb : topo.limbs)
    for (int j : limb) rows.push_back(j);
  return rows;
}

std::vector<int64_t> limb_rows_deg3(const SkeletonTopology& topo) {
  std::vector<int64_t> rows;
  for (const auto& limb : topo.limbs) rows.push_back(limb[2]);
  return rows;
}

std::vector<int64_t> limb_rows_deg2(const SkeletonTopology& topo) {
  return limb_rows_deg23(topo);
}

Tensor<double> normalized_adjacency(int64_t n, const std::vector<std::pair<int, int>>& edges) {
  if (n <= 0) throw ContractError("normalized_adjacency: need at least one node");
  Tensor<double> a({n, n});
  std::set<std::pair<int, int>> seen;
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n)
      throw ContractError("normalized_adjacency: edge endpoint out of range");
    if (u == v) throw ContractError("normalized_adjacency: self-loop in edge list");
    auto key = std::minmax(u, v);
    if (!seen.insert({key.first, key.second}).second)
      throw ContractError("normalized_adjacency: duplicate edge");
    a[u * n + v] = 1.0;
    a[v * n + u] = 1.0;
  }
  // Self-loops, then symmetric normalization by the loop-augmented degrees.
  for (int64_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
  std::vector<double> inv_sqrt_deg(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double deg = 0;
    for (int64_t j = 0; j < n; ++j) deg += a[i * n + j];
    inv_sqrt_deg[static_cast<size_t>(i)] = 1.0 / std::sqrt(deg);
  }
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      a[i * n + j] *= inv_sqrt_deg[static_cast<size_t>(i)] * inv_sqrt_deg[static_cast<size_t>(j)];
  return a;
}

Tensor<double> path_adjacency(int64_t n) {
  std::vector<std::pair<int, int>> edges;
  for (int64_t i = 0; i + 1 < n; ++i)
    edges.emplace_back(static_cast<int>(i), static_cast<int>(i + 1));
  return normalized_adjacency(n, edges);
}

template <class S>
Tensor<S> horizontal_flip(const Tensor<S>& pose, const SkeletonTopology& topo) {
  const int64_t d = pose.last_extent();
  if (d != 2 && d != 3) throw DimError("horizontal_flip: last extent must be 2 or 3");
  const int64_t j = topo.joints;
  if (pose.numel() % (j * d) != 0)
    throw DimError("horizontal_flip: pose is not a multiple of J x d");
  const int64_t frames = pose.numel() / (j * d);
  Tensor<S> out(pose.shape());
  std::vector<int64_t> perm(static_cast<size_t>(j));
  for (int64_t i = 0; i < j; ++i) perm[static_cast<size_t>(i)] = i;
  for (auto [l, r] : topo.flip_pairs) {
    perm[static_cast<size_t>(l)] = r;
    perm[static_cast<size_t>(r)] = l;
  }
  for (int64_t f = 0; f < frames; ++f)
    for (int64_t jj = 0; jj < j; ++jj) {
      const int64_t src = perm[static_cast<size_t>(jj)];
      for (int64_t c = 0; c < d; ++c) {
        S v = pose[(f * j + src) * d + c];
        out[(f * j + jj) * d + c] = (c == 0) ? -v : v;
      }
    }
  return out;
}

std::string topology_json(const SkeletonTopology& topo) {
  nlohmann::json j;
  j["joints"] = topo.joints;
  j["names"] = topo.names;
  j["edges"] = nlohmann::json::array();
  for (auto [u, v] : topo.edges) j["edges"].push_back({u, v});
  j["ldof"] = topo.ldof;
  j["limbs"] = nlohmann::json::array();
  for (size_t i = 0; i < topo.limbs.size(); ++i)
    j["limbs"].push_back({{"name", topo.limb_names[i]},
                          {"joints", {topo.limbs[i][0], topo.limbs[i][1], topo.limbs[i][2]}}});
  j["flip_pairs"] = nlohmann::json::array();
  for (auto [l, r] : topo.flip_pairs) j["flip_pairs"].push_back({l, r});
  return j.dump(2);
}

template Tensor<float> horizontal_flip(const Tensor<float>&, const SkeletonTopology&);
template Tensor<double> horizontal_flip(const Tensor<double>&, const SkeletonTopology&);

}  // namespace nht
