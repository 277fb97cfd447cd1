#include <doctest.h>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "nanohtnet/mixers.hpp"
#include "nanohtnet/skeleton.hpp"
#include "nanohtnet/tensor.hpp"

using namespace nht;

namespace {

Tensord rand_tensor(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensord t(std::move(shape));
  fill_uniform(t, lo, hi, seed, 11);
  return t;
}

double max_abs_diff(const Tensord& a, const Tensord& b) {
  REQUIRE(a.same_shape(b));
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool bitwise_equal(const Tensord& a, const Tensord& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <class P>
std::vector<std::pair<std::string, Tensord*>> collect(P& params, bool spatial) {
  std::vector<std::pair<std::string, Tensord*>> out;
  auto grab = [&out](const std::string& name, Tensord& t) { out.emplace_back(name, &t); };
  if constexpr (std::is_same_v<P, SpatialMixerParams<double>>) {
    (void)spatial;
    visit_spatial_mixer(params, "m", grab);
  } else {
    (void)spatial;
    visit_temporal_mixer(params, "m", grab);
  }
  return out;
}

template <class P>
void zero_params(P& params) {
  for (auto& [name, t] : collect(params, true))
    for (int64_t i = 0; i < t->numel(); ++i) (*t)[i] = 0.0;
}

// Restores layer-norm gains to 1 after zero_params, matching construction.
template <class P>
void unit_gains(P& params) {
  for (auto& [name, t] : collect(params, true))
    if (name.size() >= 5 && name.substr(name.size() - 5) == ".ln.g")
      for (int64_t i = 0; i < t->numel(); ++i) (*t)[i] = 1.0;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Re-derives one limb branch (strided conv -> GELU -> residual channel MLP)
// on an explicit row block using only public ops; row-independent stages make
// this valid per limb.
Tensord branch_oracle(const Tensord& rows, const LimbBranchParams<double>& p, int64_t stride) {
  Tensord f = gelu(add_row(conv1d_strided(rows, p.conv_w, stride), p.conv_b));
  Tensord h = layer_norm(f, p.ln.gamma, p.ln.beta);
  Tensord refined = add_row(
      matmul(gelu(add_row(matmul(h, p.mlp.w1), p.mlp.b1)), p.mlp.w2), p.mlp.b2);
  return add(f, refined);
}

}  // namespace

TEST_CASE("graph block with zero weights is the identity") {
  const Tensord adj = cast_tensor<double>(path_adjacency(5));
  const Tensord x = rand_tensor({5, 4}, 31);
  GcnBlockParams<double> p{Tensord({4, 4}), Tensord({4, 4})};
  CHECK(bitwise_equal(gcn_residual_forward(x, adj, p), x));
}

TEST_CASE("graph block matches a hand computation on the identity graph") {
  // With adj = I the block reduces to y = x + gelu(x w1) w2.
  Tensord eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  const Tensord x = rand_tensor({3, 2}, 32);
  GcnBlockParams<double> p{rand_tensor({2, 2}, 33), rand_tensor({2, 2}, 34)};
  const Tensord y = gcn_residual_forward(x, eye, p);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 2; ++j) {
      double h0 = gelu_ref(x.at2(i, 0) * p.w1.at2(0, 0) + x.at2(i, 1) * p.w1.at2(1, 0));
      double h1 = gelu_ref(x.at2(i, 0) * p.w1.at2(0, 1) + x.at2(i, 1) * p.w1.at2(1, 1));
      double want = x.at2(i, j) + h0 * p.w2.at2(0, j) + h1 * p.w2.at2(1, j);
      CHECK(y.at2(i, j) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("graph block propagates exactly one hop per matmul") {
  // On the path graph, a token's update only sees neighbours <= 2 hops away
  // (two adjacency multiplications); token 0 must ignore a change at token 4.
  const Tensord adj = cast_tensor<double>(path_adjacency(6));
  GcnBlockParams<double> p{rand_tensor({3, 3}, 35), rand_tensor({3, 3}, 36)};
  Tensord x = rand_tensor({6, 3}, 37);
  const Tensord y0 = gcn_residual_forward(x, adj, p);
  for (int64_t c = 0; c < 3; ++c) x.at2(5, c) += 1.0;
  const Tensord y1 = gcn_residual_forward(x, adj, p);
  for (int64_t c = 0; c < 3; ++c) {
    CHECK(y1.at2(0, c) == y0.at2(0, c));  // 5 hops away: unreachable
    CHECK(y1.at2(3, c) != y0.at2(3, c));  // 2 hops away: reachable
  }
}

TEST_CASE("limb stage with zero parameters is the identity") {
  const SkeletonTopology& topo = h36m17();
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 5, "m");
  zero_params(sp);
  const Tensord x = rand_tensor({17, 6}, 40);
  CHECK(bitwise_equal(ipc_forward(x, topo, sp.ipc), x));
}

TEST_CASE("limb stage leaves low-articulation rows bit-identical") {
  const SkeletonTopology& topo = h36m17();
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 6, "m");
  const Tensord x = rand_tensor({17, 6}, 41);
  const Tensord y = ipc_forward(x, topo, sp.ipc);
  std::vector<bool> touched(17, false);
  for (int64_t r : limb_rows_deg23(topo)) touched[static_cast<size_t>(r)] = true;
  int untouched = 0;
  for (int64_t r = 0; r < 17; ++r) {
    if (touched[static_cast<size_t>(r)]) continue;
    ++untouched;
    for (int64_t c = 0; c < 6; ++c) CHECK(y.at2(r, c) == x.at2(r, c));
  }
  CHECK(untouched == 9);  // pelvis, spine chain (5) and the four limb roots
}

TEST_CASE("limb stage row placement follows the per-limb oracle") {
  const SkeletonTopology& topo = h36m17();
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 7, "m");
  const Tensord x = rand_tensor({17, 6}, 42);
  const Tensord y = ipc_forward(x, topo, sp.ipc);
  for (size_t li = 0; li < topo.limbs.size(); ++li) {
    const auto [root, mid, end] = topo.limbs[li];
    const Tensord f1 = branch_oracle(gather_rows(x, {mid, end}), sp.ipc.distal, 2);
    const Tensord f2 = branch_oracle(gather_rows(x, {root, mid, end}), sp.ipc.whole, 3);
    REQUIRE(f1.rows() == 1);
    REQUIRE(f2.rows() == 1);
    for (int64_t c = 0; c < 6; ++c) {
      // end row: input + distal feature + whole-limb feature
      CHECK(y.at2(end, c) ==
            doctest::Approx(x.at2(end, c) + f1.at2(0, c) + f2.at2(0, c)).epsilon(1e-12));
      // mid row: input + whole-limb feature only
      CHECK(y.at2(mid, c) == doctest::Approx(x.at2(mid, c) + f2.at2(0, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("limb stage rejects a mismatched token count") {
  const SkeletonTopology& topo = h36m17();
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 8, "m");
  CHECK_THROWS_AS(ipc_forward(rand_tensor({5, 6}, 43), topo, sp.ipc), DimError);
}

TEST_CASE("attention with zero weights is the identity") {
  AttnParams<double> p;
  p.wq = Tensord({6, 6});
  p.wk = Tensord({6, 6});
  p.wv = Tensord({6, 6});
  p.wo = Tensord({6, 6});
  p.ln = {Tensord::full({6}, 1.0), Tensord({6})};
  const Tensord x = rand_tensor({4, 6}, 50);
  CHECK(bitwise_equal(attention_forward(x, 2, p), x));
}

TEST_CASE("attention over a single token has weight exactly one") {
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 9, "m");
  const Tensord x = rand_tensor({1, 6}, 51);
  Tensord maps;
  const Tensord y = attention_forward<double>(x, 2, sp.gbi, nullptr, &maps);
  REQUIRE(maps.shape() == Shape{2, 1, 1});
  CHECK(maps[0] == 1.0);
  CHECK(maps[1] == 1.0);
  // With weight one the value rows pass through: y = x + LN(x wv wo).
  const Tensord want =
      add(x, layer_norm(matmul(matmul(x, sp.gbi.wv), sp.gbi.wo), sp.gbi.ln.gamma, sp.gbi.ln.beta));
  CHECK(bitwise_equal(y, want));
}

TEST_CASE("attention maps are row-stochastic and scaled by the full split width") {
  const int64_t n = 7, c = 6, heads = 2, d = c / heads;
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(3 * c, 2, 10, "m");
  const Tensord x = rand_tensor({n, c}, 52);
  Tensord maps;
  attention_forward<double>(x, heads, sp.gbi, nullptr, &maps);
  REQUIRE(maps.shape() == Shape{heads, n, n});

  const Tensord q = matmul(x, sp.gbi.wq);
  const Tensord k = matmul(x, sp.gbi.wk);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(c));  // not per-head d
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t i = 0; i < n; ++i) {
      std::vector<double> row(static_cast<size_t>(n));
      double denom = 0;
      for (int64_t j = 0; j < n; ++j) {
        double s = 0;
        for (int64_t e = 0; e < d; ++e) s += q.at2(i, h * d + e) * k.at2(j, h * d + e);
        row[static_cast<size_t>(j)] = std::exp(s * inv_scale);
        denom += row[static_cast<size_t>(j)];
      }
      double sum = 0;
      for (int64_t j = 0; j < n; ++j) {
        const double got = maps[(h * n + i) * n + j];
        CHECK(got == doctest::Approx(row[static_cast<size_t>(j)] / denom).epsilon(1e-12));
        CHECK(got >= 0.0);
        sum += got;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention rejects a head count that does not divide the width") {
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 11, "m");
  CHECK_THROWS_AS(attention_forward(rand_tensor({3, 6}, 53), 4, sp.gbi), ContractError);
}

TEST_CASE("aggregate with zero parameters is the identity") {
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 12, "m");
  zero_params(sp);
  const Tensord z = rand_tensor({17, 18}, 54);
  CHECK(bitwise_equal(aggregate_forward(z, sp.agg), z));
}

TEST_CASE("zero-parameter spatial mixer reduces to the progressive sums") {
  const SkeletonTopology& topo = h36m17();
  const Tensord adj = cast_tensor<double>(normalized_adjacency(topo.joints, topo.edges));
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 13, "m");
  zero_params(sp);
  unit_gains(sp);
  const Tensord x = rand_tensor({17, 18}, 55);
  const Tensord y = spatial_mixer_forward(x, adj, topo, 2, sp);
  const Tensord x1 = slice_cols(x, 0, 6), x2 = slice_cols(x, 6, 12), x3 = slice_cols(x, 12, 18);
  CHECK(bitwise_equal(slice_cols(y, 0, 6), x1));
  CHECK(bitwise_equal(slice_cols(y, 6, 12), add(x2, x1)));
  CHECK(bitwise_equal(slice_cols(y, 12, 18), add(x3, add(x2, x1))));
}

TEST_CASE("first third of the spatial mixer is exactly the graph-block output") {
  const SkeletonTopology& topo = h36m17();
  const Tensord adj = cast_tensor<double>(normalized_adjacency(topo.joints, topo.edges));
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 14, "m");
  const Tensord x = rand_tensor({17, 18}, 56);
  const Tensord y_ljc = gcn_residual_forward(slice_cols(x, 0, 6), adj, sp.ljc);
  // Silence the later stages so the aggregate passes the concat through.
  SpatialMixerParams<double> quiet = sp;
  zero_params(quiet);
  unit_gains(quiet);
  quiet.ljc = sp.ljc;
  const Tensord y = spatial_mixer_forward(x, adj, topo, 2, quiet);
  CHECK(bitwise_equal(slice_cols(y, 0, 6), y_ljc));
}

TEST_CASE("disabling the limb stage equals zeroing its parameters") {
  const SkeletonTopology& topo = h36m17();
  const Tensord adj = cast_tensor<double>(normalized_adjacency(topo.joints, topo.edges));
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 15, "m");
  const Tensord x = rand_tensor({17, 18}, 57);
  const Tensord off = spatial_mixer_forward(x, adj, topo, 2, sp, /*ipc_enabled=*/false);
  SpatialMixerParams<double> zp = sp;
  for (auto* branch : {&zp.ipc.distal, &zp.ipc.whole}) {
    for (Tensord* t : {&branch->conv_w, &branch->conv_b, &branch->mlp.w1, &branch->mlp.b1,
                       &branch->mlp.w2, &branch->mlp.b2})
      for (int64_t i = 0; i < t->numel(); ++i) (*t)[i] = 0.0;
  }
  const Tensord on = spatial_mixer_forward(x, adj, topo, 2, zp, /*ipc_enabled=*/true);
  CHECK(bitwise_equal(off, on));
}

TEST_CASE("spatial mixer equals its straight-line composition") {
  const SkeletonTopology& topo = h36m17();
  const Tensord adj = cast_tensor<double>(normalized_adjacency(topo.joints, topo.edges));
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 16, "m");
  const Tensord x = rand_tensor({17, 18}, 58);
  const Tensord y = spatial_mixer_forward(x, adj, topo, 2, sp);

  const Tensord x1 = slice_cols(x, 0, 6), x2 = slice_cols(x, 6, 12), x3 = slice_cols(x, 12, 18);
  const Tensord y1 = gcn_residual_forward(x1, adj, sp.ljc);
  const Tensord y2 = ipc_forward(add(x2, y1), topo, sp.ipc);
  const Tensord y3 = attention_forward(add(x3, y2), 2, sp.gbi);
  const Tensord want = aggregate_forward(concat_cols(std::vector<Tensord>{y1, y2, y3}), sp.agg);
  CHECK(bitwise_equal(y, want));
}

TEST_CASE("zero-parameter temporal mixer reduces to the progressive sums") {
  const Tensord adj = cast_tensor<double>(path_adjacency(4));
  TemporalMixerParams<double> tp = make_temporal_mixer<double>(12, 2, 17, "m");
  zero_params(tp);
  unit_gains(tp);
  const Tensord x = rand_tensor({4, 12}, 59);
  const Tensord y = temporal_mixer_forward(x, adj, 2, tp);
  const Tensord x1 = slice_cols(x, 0, 6), x2 = slice_cols(x, 6, 12);
  CHECK(bitwise_equal(slice_cols(y, 0, 6), x1));
  CHECK(bitwise_equal(slice_cols(y, 6, 12), add(x2, x1)));
}

TEST_CASE("temporal mixer equals its straight-line composition") {
  const Tensord adj = cast_tensor<double>(path_adjacency(5));
  TemporalMixerParams<double> tp = make_temporal_mixer<double>(12, 3, 18, "m");
  const Tensord x = rand_tensor({5, 12}, 60);
  const Tensord y = temporal_mixer_forward(x, adj, 3, tp);
  const Tensord x1 = slice_cols(x, 0, 6), x2 = slice_cols(x, 6, 12);
  const Tensord y1 = gcn_residual_forward(x1, adj, tp.ime);
  const Tensord y2 = attention_forward(add(x2, y1), 3, tp.gcp);
  const Tensord want = aggregate_forward(concat_cols(std::vector<Tensord>{y1, y2}), tp.agg);
  CHECK(bitwise_equal(y, want));
}

TEST_CASE("mixer constructors validate the width splits") {
  CHECK_THROWS_AS(make_spatial_mixer<double>(16, 2, 0, "m"), ContractError);
  CHECK_THROWS_AS(make_spatial_mixer<double>(18, 4, 0, "m"), ContractError);
  CHECK_THROWS_AS(make_temporal_mixer<double>(9, 2, 0, "m"), ContractError);
  CHECK_THROWS_AS(make_temporal_mixer<double>(12, 4, 0, "m"), ContractError);
}

TEST_CASE("mixer construction is seed-deterministic and prefix-sensitive") {
  SpatialMixerParams<double> a = make_spatial_mixer<double>(18, 2, 77, "smix.0");
  SpatialMixerParams<double> b = make_spatial_mixer<double>(18, 2, 77, "smix.0");
  SpatialMixerParams<double> c = make_spatial_mixer<double>(18, 2, 77, "smix.1");
  auto va = collect(a, true), vb = collect(b, true), vc = collect(c, true);
  REQUIRE(va.size() == vb.size());
  bool any_differs = false;
  for (size_t i = 0; i < va.size(); ++i) {
    CHECK(bitwise_equal(*va[i].second, *vb[i].second));
    if (!bitwise_equal(*va[i].second, *vc[i].second)) any_differs = true;
  }
  CHECK(any_differs);
}

TEST_CASE("spatial mixer gradients match finite differences for every tensor") {
  const SkeletonTopology& topo = h36m17();
  const Tensord adj = cast_tensor<double>(normalized_adjacency(topo.joints, topo.edges));
  SpatialMixerParams<double> sp = make_spatial_mixer<double>(18, 2, 20, "m");
  const Tensord x = rand_tensor({17, 18}, 61, -0.5, 0.5);
  const Tensord dir = rand_tensor({17, 18}, 62);

  auto entries = collect(sp, true);
  REQUIRE(entries.size() == 30);
  for (auto& [name, slot] : entries) {
    const Tensord saved = *slot;
    ScalarFn<double> f = [&, slot = slot](const Tensord& theta, Tape<double>* tape) {
      *slot = theta;
      Tensord y = spatial_mixer_forward(x, adj, topo, 2, sp, true, tape);
      return sum_all(mul(y, dir, tape), tape);
    };
    const double err = grad_check<double>(f, saved, 1e-5);
    INFO("tensor ", name);
    CHECK(err < 1e-6);
    *slot = saved;
  }
}

TEST_CASE("temporal mixer gradients match finite differences for every tensor") {
  const Tensord adj = cast_tensor<double>(path_adjacency(5));
  TemporalMixerParams<double> tp = make_temporal_mixer<double>(12, 2, 21, "m");
  const Tensord x = rand_tensor({5, 12}, 63, -0.5, 0.5);
  const Tensord dir = rand_tensor({5, 12}, 64);

  auto entries = collect(tp, false);
  REQUIRE(entries.size() == 14);
  for (auto& [name, slot] : entries) {
    const Tensord saved = *slot;
    ScalarFn<double> f = [&, slot = slot](const Tensord& theta, Tape<double>* tape) {
      *slot = theta;
      Tensord y = temporal_mixer_forward(x, adj, 2, tp, tape);
      return sum_all(mul(y, dir, tape), tape);
    };
    const double err = grad_check<double>(f, saved, 1e-5);
    INFO("tensor ", name);
    CHECK(err < 1e-6);
    *slot = saved;
  }
}
