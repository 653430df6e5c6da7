#include "pcet/heads.hpp"

#include "pcet/errors.hpp"

namespace pcet::heads {

CandidateHead CandidateHead::create(nn::ParameterStore& store, const std::string& name,
                                    std::size_t channels, Rng& rng) {
  CandidateHead h;
  h.offsets = nn::Mlp::create(store, name + ".offsets", channels, {channels, channels, 4}, rng);
  h.score = nn::Mlp::create(store, name + ".score", channels, {channels, channels, 1}, rng);
  h.distance = nn::Mlp::create(store, name + ".distance", channels, {channels, channels, 1}, rng);
  return h;
}

CandidateSet predict_candidates(const FeatureSet& f, const CandidateHead& head, Graph* g,
                                const Tensor* anchors) {
  CandidateSet c;
  c.offsets = head.offsets.forward(g, f.features);
  if (anchors != nullptr) {
    const std::size_t n = c.offsets.rows();
    if (anchors->rank() != 2 || anchors->rows() != n || anchors->cols() != 3) {
      throw ShapeError("predict_candidates: anchors " + ad::to_string(anchors->shape()) +
                       " do not match offsets " + ad::to_string(c.offsets.shape()));
    }
    c.offsets = ad::add(c.offsets, ad::concat({*anchors, Tensor::zeros({n, 1})}, 1));
  }
  c.score_logits = head.score.forward(g, f.features);
  c.distance_logits = head.distance.forward(g, f.features);
  return c;
}

ArpModule ArpModule::create(nn::ParameterStore& store, const std::string& name, Rng& rng) {
  return {nn::Mlp::create(store, name, 1, {kHidden, 1}, rng)};
}

void ArpModule::set_identity() {
  // relu(x) - relu(-x) == x
  auto& l0 = mlp.layers.at(0);
  auto& l1 = mlp.layers.at(1);
  std::fill(l0.weight->value.begin(), l0.weight->value.end(), 0.0);
  std::fill(l0.bias->value.begin(), l0.bias->value.end(), 0.0);
  std::fill(l1.weight->value.begin(), l1.weight->value.end(), 0.0);
  std::fill(l1.bias->value.begin(), l1.bias->value.end(), 0.0);
  l0.weight->value[0] = 1.0;
  l0.weight->value[1] = -1.0;
  l1.weight->value[0] = 1.0;
  l1.weight->value[1] = -1.0;
}

ArpResult arp_aggregate(const CandidateSet& c, const ArpModule& arp, Graph* g) {
  if (!c.offsets.defined() || c.rows() == 0) throw std::invalid_argument("arp_aggregate: no candidates");
  const Tensor logits = ad::add(c.score_logits, c.distance_logits);
  const Tensor u = arp.mlp.forward(g, logits);
  ArpResult r;
  r.weights = ad::row_softmax(ad::transpose(u));
  r.refined = ad::matmul(r.weights, c.offsets);
  return r;
}

std::size_t top1_index(const CandidateSet& c) {
  const auto s = c.score_logits.values();
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] > s[best]) best = i;
  return best;
}

std::array<double, 4> row_offsets(const CandidateSet& c, std::size_t row) {
  const auto v = c.offsets.values();
  return {v[row * 4], v[row * 4 + 1], v[row * 4 + 2], v[row * 4 + 3]};
}

std::array<double, 4> to_array(const Tensor& r) {
  if (r.numel() != 4) throw ShapeError("to_array: expected 4 values, got " + ad::to_string(r.shape()));
  const auto v = r.values();
  return {v[0], v[1], v[2], v[3]};
}

Box3D decode_box(const Box3D& reference, const std::array<double, 4>& r) {
  return {reference.center() + Vec3{r[0], r[1], r[2]}, reference.size(), reference.yaw() + r[3]};
}

DfrModule DfrModule::create(nn::ParameterStore& store, const std::string& name, std::size_t channels,
                            Rng& rng) {
  const std::size_t width = channels + 4;
  DfrModule d;
  d.refine = nn::Mlp::create(store, name + ".mlp", width, {width, width}, rng);
  d.attention = nn::AttentionBlock::create(store, name + ".attn", width, rng);
  return d;
}

FeatureSet build_dfr(const FeatureSet& templ, const FeatureSet& corr, const Tensor& arp_weights,
                     const Tensor& coarse, const DfrModule& dfr, Graph* g) {
  const std::size_t n = corr.rows();
  const std::size_t m = templ.rows();
  const Tensor weighted = ad::mul_col(corr.features, arp_weights);
  const Tensor rc = dfr.refine.forward(g, ad::concat({weighted, ad::broadcast_rows(coarse, n)}, 1));

  std::vector<double> xyz0(m * 4, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    xyz0[i * 4 + 0] = templ.coords[i].x;
    xyz0[i * 4 + 1] = templ.coords[i].y;
    xyz0[i * 4 + 2] = templ.coords[i].z;
  }
  const Tensor tc = ad::concat({templ.features, Tensor::constant({m, 4}, std::move(xyz0))}, 1);
  if (tc.cols() != rc.cols()) {
    throw ShapeError("build_dfr: template side " + ad::to_string(tc.shape()) + " vs relational side " +
                     ad::to_string(rc.shape()));
  }
  return {nn::offset_attention(tc, rc, rc, dfr.attention, g), templ.coords};
}

FeatureSet tkt_source(const PointCloud& merged, const SourceBranch& source, Graph* g, Rng* rng) {
  FeatureSet f = source.backbone->encode(merged, nn::Role::Template, g, rng);
  f.features = ad::relu(source.projection.forward(g, f.features));
  return f;
}

Tensor tkt_loss(const Tensor& dev, const Tensor& src) {
  if (dev.shape() != src.shape()) {
    throw ShapeError("tkt_loss: destination " + ad::to_string(dev.shape()) + " vs source " +
                     ad::to_string(src.shape()));
  }
  return ad::kl_rows(ad::row_softmax(dev), ad::row_softmax(ad::detach(src)));
}

Tensor tkt_loss(const FeatureSet& dev, const FeatureSet& src) { return tkt_loss(dev.features, src.features); }

Prediction refine_predict(const FeatureSet& dev, const CandidateHead& head, const ArpModule& arp,
                          const Box3D& coarse_box, Graph* g) {
  CandidateSet c = predict_candidates(dev, head, g);
  ArpResult a = arp_aggregate(c, arp, g);
  const auto r = to_array(a.refined);
  return {r, decode_box(coarse_box, r), std::move(c), std::move(a)};
}

}  // namespace pcet::heads
