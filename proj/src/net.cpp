#include "pcet/net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcet/errors.hpp"

namespace pcet::nn {

Parameter& ParameterStore::create(std::string name, ad::Shape shape, std::vector<double> values) {
  if (ad::numel(shape) != values.size()) throw ShapeError("ParameterStore: bad init for " + name);
  for (const auto& p : params_)
    if (p.name == name) throw std::invalid_argument("ParameterStore: duplicate parameter " + name);
  params_.push_back(Parameter{std::move(name), std::move(shape), std::move(values), {}, false});
  return params_.back();
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<Parameter*> ParameterStore::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p.name.starts_with(prefix)) out.push_back(&p);
  return out;
}

Tensor bind(Graph* g, Parameter& p) {
  return g != nullptr ? g->param(p) : Tensor::constant(p.shape, p.value);
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      Rng& rng, double gain) {
  // Glorot-uniform weights, zero bias.
  const double a = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-a, a);
  Linear l;
  l.weight = &store.create(name + ".weight", {in, out}, std::move(w));
  l.bias = &store.create(name + ".bias", {out}, std::vector<double>(out, 0.0));
  return l;
}

Tensor Linear::forward(Graph* g, const Tensor& x) const {
  return ad::add_row(ad::matmul(x, bind(g, *weight)), bind(g, *bias));
}

Mlp Mlp::create(ParameterStore& store, const std::string& name, std::size_t in,
                const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.empty()) throw ConfigError("Mlp " + name + ": no layers");
  Mlp m;
  std::size_t prev = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    m.layers.push_back(Linear::create(store, name + "." + std::to_string(i), prev, widths[i], rng));
    prev = widths[i];
  }
  return m;
}

Tensor Mlp::forward(Graph* g, const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(g, h);
    if (i + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

FeatureSet points_only(const PointCloud& cloud) {
  return {Tensor::zeros({cloud.size(), 0}), cloud.points};
}

void BackboneConfig::validate() const {
  if (stages.empty()) throw ConfigError("backbone: at least one set-abstraction stage required");
  std::size_t t_prev = template_points, s_prev = search_points;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    if (st.template_seeds == 0 || st.template_seeds >= t_prev || st.search_seeds == 0 ||
        st.search_seeds >= s_prev) {
      throw ConfigError("backbone: stage " + std::to_string(i) + " must strictly reduce seed counts");
    }
    if (st.widths.empty() || st.neighbors == 0) {
      throw ConfigError("backbone: stage " + std::to_string(i) + " needs widths and neighbors");
    }
    t_prev = st.template_seeds;
    s_prev = st.search_seeds;
  }
}

BackboneConfig BackboneConfig::desk() {
  BackboneConfig c;
  c.template_points = 512;
  c.search_points = 1024;
  c.stages = {{128, 256, 16, {16, 32}}, {64, 128, 16, {32, 32}}};
  return c;
}

BackboneConfig BackboneConfig::paper() {
  BackboneConfig c;
  c.template_points = 512;
  c.search_points = 1024;
  c.stages = {{256, 512, 32, {64, 64, 128}},
              {128, 256, 32, {128, 128, 256}},
              {64, 128, 32, {256, 256, 256}}};
  return c;
}

std::vector<std::size_t> knn(std::span<const Vec3> points, const Vec3& query, std::size_t k) {
  k = std::min(k, points.size());
  std::vector<std::pair<double, std::size_t>> d(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d[i] = {squared_distance(points[i], query), i};
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = d[i].second;
  return out;
}

FeatureSet set_abstraction(const FeatureSet& in, const SetAbstraction& stage, std::size_t seeds,
                           Graph* g, Rng* rng) {
  const std::size_t n = in.rows();
  if (seeds == 0 || seeds > n) {
    throw std::invalid_argument("set_abstraction: seed count " + std::to_string(seeds) +
                                " exceeds input rows " + std::to_string(n));
  }
  const std::size_t start = rng != nullptr ? rng->index(n) : 0;
  const auto seed_idx = fps(in.coords, seeds, start);
  const std::size_t k = std::min(stage.neighbors, n);

  std::vector<std::size_t> group(seeds * k);
  std::vector<double> rel(seeds * k * 3);
  FeatureSet out;
  out.coords.reserve(seeds);
  for (std::size_t s = 0; s < seeds; ++s) {
    const Vec3 c = in.coords[seed_idx[s]];
    out.coords.push_back(c);
    const auto nb = knn(in.coords, c, k);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t r = s * k + j;
      group[r] = nb[j];
      const Vec3 d = in.coords[nb[j]] - c;
      rel[r * 3 + 0] = d.x;
      rel[r * 3 + 1] = d.y;
      rel[r * 3 + 2] = d.z;
    }
  }
  Tensor grouped = Tensor::constant({seeds * k, 3}, std::move(rel));
  if (in.features.defined() && in.features.cols() > 0) {
    grouped = ad::concat({grouped, ad::gather_rows(in.features, group)}, 1);
  }
  out.features = ad::max_pool_rows(stage.mlp.forward(g, grouped), k);
  return out;
}

Backbone::Backbone(ParameterStore& store, const std::string& name, BackboneConfig cfg, Rng& rng)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::size_t in = 0;
  for (std::size_t i = 0; i < cfg_.stages.size(); ++i) {
    const auto& st = cfg_.stages[i];
    SetAbstraction sa;
    sa.neighbors = st.neighbors;
    sa.mlp = Mlp::create(store, name + ".sa" + std::to_string(i), in + 3, st.widths, rng);
    stages_.push_back(std::move(sa));
    in = st.widths.back();
  }
}

FeatureSet Backbone::encode(const PointCloud& cloud, Role role, Graph* g, Rng* rng) const {
  ++calls_;
  FeatureSet f = points_only(cloud);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const auto& st = cfg_.stages[i];
    const std::size_t seeds = role == Role::Template ? st.template_seeds : st.search_seeds;
    f = set_abstraction(f, stages_[i], seeds, g, rng);
  }
  return f;
}

std::pair<FeatureSet, FeatureSet> extract_features(const PointCloud& template_cloud,
                                                   const PointCloud& search_cloud,
                                                   const Backbone& backbone, Graph* g, Rng* rng) {
  auto ft = backbone.encode(template_cloud, Role::Template, g, rng);
  auto fs = backbone.encode(search_cloud, Role::Search, g, rng);
  return {std::move(ft), std::move(fs)};
}

AttentionBlock AttentionBlock::create(ParameterStore& store, const std::string& name,
                                      std::size_t channels, Rng& rng) {
  AttentionBlock b;
  auto square = [&](const std::string& n) -> Parameter& {
    const double a = std::sqrt(3.0 / static_cast<double>(channels));
    std::vector<double> w(channels * channels);
    for (double& v : w) v = rng.uniform(-a, a);
    return store.create(name + "." + n, {channels, channels}, std::move(w));
  };
  b.wq = &square("wq");
  b.wk = &square("wk");
  b.wv = &square("wv");
  b.phi = Linear::create(store, name + ".phi", channels, channels, rng);
  return b;
}

Tensor attention_weights(const Tensor& q_in, const Tensor& k_in, const AttentionBlock& block, Graph* g) {
  if (q_in.cols() != block.channels() || k_in.cols() != block.channels()) {
    throw ShapeError("attention_weights: inputs " + ad::to_string(q_in.shape()) + " and " +
                     ad::to_string(k_in.shape()) + " do not match block width " +
                     std::to_string(block.channels()));
  }
  const Tensor q = ad::row_l2_normalize(ad::matmul(q_in, bind(g, *block.wq)));
  const Tensor k = ad::row_l2_normalize(ad::matmul(k_in, bind(g, *block.wk)));
  return ad::matmul(q, ad::transpose(k));
}

Tensor offset_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                        const AttentionBlock& block, Graph* g) {
  const Tensor a = ad::row_softmax(attention_weights(q_in, k_in, block, g));
  const Tensor v = ad::matmul(v_in, bind(g, *block.wv));
  const Tensor offset = ad::sub(q_in, ad::matmul(a, v));
  return ad::relu(block.phi.forward(g, offset));
}

FeatureSet self_augment(const FeatureSet& f, const AttentionBlock& block, Graph* g) {
  return {offset_attention(f.features, f.features, f.features, block, g), f.coords};
}

FeatureSet cross_match(const FeatureSet& search, const FeatureSet& templ, const AttentionBlock& block,
                       Graph* g) {
  return {offset_attention(search.features, templ.features, templ.features, block, g), search.coords};
}

}  // namespace pcet::nn
