#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <numeric>

#include "oracles.hpp"
#include "pcet/errors.hpp"
#include "pcet/heads.hpp"
#include "pcet/model.hpp"

using namespace pcet;
using namespace pcet::heads;
using ad::Tensor;

namespace {

CandidateSet make_candidates(const std::vector<double>& offsets, const std::vector<double>& logits) {
  const std::size_t n = logits.size();
  return {Tensor::constant({n, 4}, offsets), Tensor::constant({n, 1}, logits), Tensor::zeros({n, 1})};
}

ArpModule identity_arp(nn::ParameterStore& store) {
  Rng rng(0);
  auto arp = ArpModule::create(store, "arp", rng);
  arp.set_identity();
  return arp;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

}  // namespace

TEST_CASE("candidate head shapes and zero weights") {
  Rng rng(1);
  nn::ParameterStore store;
  const auto head = CandidateHead::create(store, "h", 8, rng);
  nn::FeatureSet f{Tensor::constant({5, 8}, oracle::random_values(40, rng)), std::vector<Vec3>(5)};
  auto c = predict_candidates(f, head, nullptr);
  CHECK(c.offsets.shape() == ad::Shape{5, 4});
  CHECK(c.score_logits.shape() == ad::Shape{5, 1});
  CHECK(c.distance_logits.shape() == ad::Shape{5, 1});
  CHECK(head.offsets.layers.size() == 3);

  for (auto* p : store.all()) std::fill(p->value.begin(), p->value.end(), 0.0);
  c = predict_candidates(f, head, nullptr);
  for (const Tensor* t : {&c.offsets, &c.score_logits, &c.distance_logits})
    for (double v : t->values()) CHECK(v == 0.0);

  // Anchored offsets add the seed coordinates.
  std::vector<Vec3> seeds{{1, 2, 3}, {4, 5, 6}, {0, 0, 0}, {-1, 0, 1}, {2, 2, 2}};
  const Tensor anchors = coords_tensor(seeds);
  c = predict_candidates(f, head, nullptr, &anchors);
  CHECK(row_offsets(c, 1) == std::array<double, 4>{4, 5, 6, 0});
}

TEST_CASE("arp identity-MLP algebra") {
  nn::ParameterStore store;
  const auto arp = identity_arp(store);

  // N = 3 hand case.
  auto r = arp_aggregate(make_candidates({1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0}, {0, std::log(2.0), std::log(4.0)}), arp, nullptr);
  CHECK(std::abs(r.weights.values()[0] - 1.0 / 7) <= 1e-12);
  CHECK(std::abs(r.weights.values()[1] - 2.0 / 7) <= 1e-12);
  CHECK(std::abs(r.weights.values()[2] - 4.0 / 7) <= 1e-12);
  CHECK(std::abs(r.refined.values()[0] - 17.0 / 7) <= 1e-12);

  // Equal logits: exact mean.
  Rng rng(2);
  const auto off = oracle::random_values(20, rng);
  r = arp_aggregate(make_candidates(off, {0.3, 0.3, 0.3, 0.3, 0.3}), arp, nullptr);
  for (std::size_t d = 0; d < 4; ++d) {
    double mean = 0;
    for (std::size_t i = 0; i < 5; ++i) mean += off[i * 4 + d] / 5;
    CHECK(std::abs(r.refined.values()[d] - mean) <= 1e-12);
  }

  // Saturated softmax.
  r = arp_aggregate(make_candidates(off, {0, 0, 50, 0, 0}), arp, nullptr);
  for (std::size_t d = 0; d < 4; ++d) CHECK(std::abs(r.refined.values()[d] - off[8 + d]) <= 1e-9);

  // Shift invariance of the identity MLP.
  const std::vector<double> logits{0.1, -2, 1.5, 0.7, 0.2};
  auto shifted = logits;
  for (double& v : shifted) v += 3.25;
  CHECK(max_abs_diff(arp_aggregate(make_candidates(off, logits), arp, nullptr).weights,
                     arp_aggregate(make_candidates(off, shifted), arp, nullptr).weights) <= 1e-12);

  CHECK_THROWS_AS(arp_aggregate(CandidateSet{}, arp, nullptr), std::invalid_argument);
}

TEST_CASE("arp with a random MLP: normalization, convexity, permutation") {
  Rng rng(3);
  nn::ParameterStore store;
  const auto arp = ArpModule::create(store, "arp", rng);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + rng.index(10);
    const auto off = oracle::random_values(n * 4, rng);
    const CandidateSet c{Tensor::constant({n, 4}, off), Tensor::constant({n, 1}, oracle::random_values(n, rng, 3)),
                         Tensor::constant({n, 1}, oracle::random_values(n, rng, 3))};
    const auto r = arp_aggregate(c, arp, nullptr);
    const auto w = r.weights.values();
    CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) <= 1e-9);
    for (double x : w) CHECK(x >= 0.0);
    for (std::size_t d = 0; d < 4; ++d) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t i = 0; i < n; ++i) {
        lo = std::min(lo, off[i * 4 + d]);
        hi = std::max(hi, off[i * 4 + d]);
      }
      CHECK(r.refined.values()[d] >= lo - 1e-12);
      CHECK(r.refined.values()[d] <= hi + 1e-12);
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::reverse(perm.begin(), perm.end());
    const CandidateSet cp{ad::gather_rows(c.offsets, perm), ad::gather_rows(c.score_logits, perm),
                          ad::gather_rows(c.distance_logits, perm)};
    const auto rp = arp_aggregate(cp, arp, nullptr);
    CHECK(max_abs_diff(rp.refined, r.refined) <= 1e-12);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(rp.weights.values()[i] - w[perm[i]]) <= 1e-15);
  }
}

TEST_CASE("decode_box and top1") {
  const Box3D ref({1, 2, 3}, {4, 2, 1.5}, 0.5);
  const auto same = decode_box(ref, {0, 0, 0, 0});
  CHECK(same.center() == ref.center());
  CHECK(same.yaw() == ref.yaw());
  CHECK(same.size() == ref.size());
  CHECK(decode_box(ref, {1, 0, 0, 0}).center() == Vec3{2, 2, 3});
  CHECK(decode_box(ref, {0, 0, 0, 2 * std::numbers::pi}).yaw() == doctest::Approx(0.5).epsilon(1e-14));

  const auto c = make_candidates(std::vector<double>(16, 0.0), {0.1, 2.0, 2.0, -1});
  CHECK(top1_index(c) == 1);
}

TEST_CASE("arp can beat the top-scoring candidate") {
  nn::ParameterStore store;
  const auto arp = identity_arp(store);
  const Box3D ref({0, 0, 0}, {4, 2, 1.5}, 0.0);
  const Box3D& truth = ref;
  // Shift d along the 4 m axis gives IoU (4 - d) / (4 + d).
  const double d_top = 4 * 0.7 / 1.3, d_mix = 4.0 / 3.0;
  const double b = (d_mix - 0.6 * d_top) / 0.4;
  const auto c = make_candidates({d_top, 0, 0, 0, b, 0, 0, 0}, {std::log(0.6), std::log(0.4)});
  const auto top = decode_box(ref, row_offsets(c, top1_index(c)));
  const auto mixed = decode_box(ref, to_array(arp_aggregate(c, arp, nullptr).refined));
  CHECK(iou3d(top, truth) == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(iou3d(mixed, truth) == doctest::Approx(0.5).epsilon(1e-9));

  // A dominant score reduces ARP to top-1.
  const auto one_hot = make_candidates({d_top, 0, 0, 0, b, 0, 0, 0}, {60.0, 0.0});
  const auto r = to_array(arp_aggregate(one_hot, arp, nullptr).refined);
  const auto t = row_offsets(one_hot, top1_index(one_hot));
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(r[i] - t[i]) < 1e-12);
}

TEST_CASE("build_dfr matches its composition") {
  Rng rng(4);
  nn::ParameterStore store;
  const std::size_t C = 6, M = 4, N = 5;
  const auto dfr = DfrModule::create(store, "dfr", C, rng);
  CHECK(dfr.width() == C + 4);
  nn::FeatureSet templ{Tensor::constant({M, C}, oracle::random_values(M * C, rng)), {}};
  for (std::size_t i = 0; i < M; ++i) templ.coords.push_back({rng.normal(), rng.normal(), rng.normal()});
  nn::FeatureSet corr{Tensor::constant({N, C}, oracle::random_values(N * C, rng)), std::vector<Vec3>(N)};
  const Tensor w = ad::row_softmax(Tensor::constant({1, N}, oracle::random_values(N, rng)));
  const Tensor coarse = Tensor::constant({1, 4}, {0.3, -0.2, 0.1, 0.05});

  std::vector<double> fr(N * C), rc(N * (C + 4)), tc(M * (C + 4), 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < C; ++c) rc[i * (C + 4) + c] = corr.features.at(i, c) * w.values()[i];
    for (std::size_t c = 0; c < 4; ++c) rc[i * (C + 4) + C + c] = coarse.values()[c];
  }
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t c = 0; c < C; ++c) tc[i * (C + 4) + c] = templ.features.at(i, c);
    tc[i * (C + 4) + C] = templ.coords[i].x;
    tc[i * (C + 4) + C + 1] = templ.coords[i].y;
    tc[i * (C + 4) + C + 2] = templ.coords[i].z;
  }
  const Tensor rc_t = dfr.refine.forward(nullptr, Tensor::constant({N, C + 4}, rc));
  const Tensor expect = nn::offset_attention(Tensor::constant({M, C + 4}, tc), rc_t, rc_t, dfr.attention, nullptr);
  const auto dev = build_dfr(templ, corr, w, coarse, dfr, nullptr);
  CHECK(dev.rows() == M);
  CHECK(dev.coords == templ.coords);
  CHECK(max_abs_diff(dev.features, expect) <= 1e-12);

  // One-hot weights leave exactly one non-zero weighted row.
  const Tensor hot = Tensor::constant({1, N}, {0, 0, 1, 0, 0});
  const Tensor weighted = ad::mul_col(corr.features, hot);
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < N; ++i) {
    bool any = false;
    for (std::size_t c = 0; c < C; ++c) any = any || weighted.at(i, c) != 0.0;
    nonzero += any;
  }
  CHECK(nonzero == 1);
  CHECK(build_dfr(templ, corr, hot, coarse, dfr, nullptr).rows() == M);
}

TEST_CASE("tkt loss") {
  const Tensor dev = Tensor::constant({2, 3}, {1, 2, 3, 0, 0, 0});
  const Tensor src = Tensor::constant({2, 3}, {3, 2, 1, 0, 1, 0});
  const double e = std::exp(1.0);
  const double row0 = 2 * (std::exp(3.0) - e) / (e + e * e + std::exp(3.0));
  const double row1 = std::log((2 + e) / 3) - 1.0 / 3;
  CHECK(std::abs(tkt_loss(dev, src).item() - (row0 + row1) / 2) <= 1e-12);
  CHECK(tkt_loss(dev, dev).item() == 0.0);
  // Softmax is shift invariant per row, so shifted rows still match.
  CHECK(std::abs(tkt_loss(dev, ad::scale(ad::add(dev, Tensor::constant({2, 3}, {5, 5, 5, -1, -1, -1})), 1.0)).item()) < 1e-15);

  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const auto a = oracle::random_values(12, rng);
    auto b = a;
    b[rng.index(12)] += (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(1e-3, 1.0);
    CHECK(tkt_loss(Tensor::constant({3, 4}, a), Tensor::constant({3, 4}, b)).item() > 0.0);
  }
  CHECK_THROWS_AS(tkt_loss(dev, Tensor::zeros({3, 2})), ShapeError);

  // Gradients reach the destination only.
  ad::Graph g;
  const Tensor d = g.variable({2, 3}, {1, 2, 3, 0, 0, 0});
  const Tensor s = g.variable({2, 3}, {3, 2, 1, 0, 1, 0});
  g.backward(tkt_loss(d, s));
  for (double v : s.grad()) CHECK(v == 0.0);
  double total = 0;
  for (double v : d.grad()) total += std::abs(v);
  CHECK(total > 0.0);
}

TEST_CASE("tkt source shape, determinism and rigid-copy oracle") {
  PcetModel model(oracle::tiny_model(), 7);
  const auto& cfg = model.config();
  const std::size_t half = cfg.merged_half();
  Rng rng(6);
  const Box3D prev_box({0.5, -0.3, 0}, {4, 2, 1.5}, 0.1), cur_box({1.2, 0.2, 0.05}, {4, 2, 1.5}, 0.35);
  PointCloud cur_crop, prev;
  for (std::size_t i = 0; i < half; ++i) {
    const Vec3 local{rng.uniform(-1.9, 1.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.7, 0.7)};
    cur_crop.points.push_back(rotate_z(local, cur_box.yaw()) + cur_box.center());
    prev.points.push_back(rotate_z(local, prev_box.yaw()) + prev_box.center());
  }
  const auto merged = build_merged_template(prev, prev_box, cur_crop, cur_box, rng, half);
  PointCloud twice = cur_crop;
  twice.points.insert(twice.points.end(), cur_crop.points.begin(), cur_crop.points.end());

  const auto a = tkt_source(merged.cloud, model.source, nullptr);
  const auto b = tkt_source(twice, model.source, nullptr);
  CHECK(a.features.shape() == ad::Shape{cfg.backbone.template_rows(), model.channels() + 4});
  CHECK(max_abs_diff(a.features, b.features) <= 1e-6);
  CHECK(max_abs_diff(a.features, tkt_source(merged.cloud, model.source, nullptr).features) == 0.0);

  Rng r1(3), r2(3);
  CHECK(max_abs_diff(tkt_source(merged.cloud, model.source, nullptr, &r1).features,
                     tkt_source(merged.cloud, model.source, nullptr, &r2).features) == 0.0);
}

TEST_CASE("refine_predict with zero heads returns the coarse box") {
  Rng rng(7);
  nn::ParameterStore store;
  const auto head = CandidateHead::create(store, "h", 6, rng);
  const auto arp = ArpModule::create(store, "arp", rng);
  for (auto* p : store.with_prefix("h.")) std::fill(p->value.begin(), p->value.end(), 0.0);
  nn::FeatureSet dev{Tensor::constant({5, 6}, oracle::random_values(30, rng)), std::vector<Vec3>(5)};
  const Box3D coarse({3, 1, 0}, {4, 2, 1.5}, -0.4);
  const auto p = refine_predict(dev, head, arp, coarse, nullptr);
  CHECK(p.box.center() == coarse.center());
  CHECK(p.box.yaw() == coarse.yaw());
  CHECK(p.box.volume() > 0);
}
