#pragma once

// Finite-difference gradient cases: every differentiable tensor op, the
// network blocks, the three training losses, and full forward paths on a
// tiny model. Each case returns its worst relative error for one seed.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pcet/heads.hpp"
#include "pcet/model.hpp"
#include "pcet/net.hpp"
#include "pcet/sim.hpp"
#include "pcet/train.hpp"

namespace oracle {

struct GradCase {
  std::string name;
  std::function<double(std::uint64_t)> run;
};

namespace detail {

namespace ad = pcet::ad;
namespace nn = pcet::nn;
namespace heads = pcet::heads;

// Contracts any output with fixed random weights so every element matters.
inline Tensor project(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed ^ 0xABCDEFULL);
  return ad::sum(ad::mul(out, Tensor::constant(out.shape(), random_values(out.numel(), rng))));
}

inline Input rand_input(Shape shape, Rng& rng, double scale = 1.0) {
  return {shape, random_values(ad::numel(shape), rng, scale)};
}

// Values bounded away from zero (relu kinks).
inline Input off_kink(Shape shape, Rng& rng) {
  auto in = rand_input(shape, rng);
  for (double& v : in.values) v = v >= 0 ? v + 0.05 : v - 0.05;
  return in;
}

using Unary = std::function<Tensor(const Tensor&)>;
using Binary = std::function<Tensor(const Tensor&, const Tensor&)>;

inline GradCase unary(std::string name, Shape shape, Unary op, bool avoid_kink = false) {
  return {name, [=](std::uint64_t seed) {
            Rng rng(seed);
            const Input a = avoid_kink ? off_kink(shape, rng) : rand_input(shape, rng);
            return check_inputs([&](Graph&, const std::vector<Tensor>& x) { return project(op(x[0]), seed); }, {a});
          }};
}

inline GradCase binary(std::string name, Shape sa, Shape sb, Binary op) {
  return {name, [=](std::uint64_t seed) {
            Rng rng(seed);
            const Input a = rand_input(sa, rng), b = rand_input(sb, rng);
            return check_inputs([&](Graph&, const std::vector<Tensor>& x) { return project(op(x[0], x[1]), seed); },
                                {a, b});
          }};
}

inline heads::CandidateSet candidates(const std::vector<Tensor>& x) { return {x[0], x[1], x[2]}; }

inline pcet::train::Targets random_targets(std::size_t n, Rng& rng) {
  pcet::train::Targets t;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = i == 0 || rng.uniform() < 0.4;
    t.cls.push_back(pos ? 1.0 : 0.0);
    if (pos) t.positives.push_back(i);
  }
  t.reg = {rng.normal(), rng.normal(), rng.normal(), rng.normal(0, 0.3)};
  return t;
}

inline std::vector<Input> candidate_inputs(std::size_t n, Rng& rng) {
  return {rand_input({n, 4}, rng), rand_input({n, 1}, rng), rand_input({n, 1}, rng)};
}

inline nn::FeatureSet random_features(std::size_t rows, std::size_t channels, Rng& rng) {
  nn::FeatureSet f;
  f.features = Tensor::constant({rows, channels}, random_values(rows * channels, rng));
  for (std::size_t i = 0; i < rows; ++i) f.coords.push_back({rng.normal(), rng.normal(), rng.normal()});
  return f;
}

// Short synthetic sequence and a training sample from it.
struct Scene {
  pcet::LabeledSequence seq;
  pcet::train::Sample sample() const { return {&seq, 2, seq.boxes[1]}; }
};

inline Scene scene(std::uint64_t seed) {
  auto cfg = pcet::sim::category_preset("car");
  cfg.frames = 3;
  cfg.seed = seed;
  return {pcet::sim::generate_sequence(cfg)};
}

}  // namespace detail

inline std::vector<GradCase> gradient_cases() {
  using namespace detail;
  std::vector<GradCase> cases;
  const Shape m34{3, 4};

  cases.push_back(binary("add", m34, m34, ad::add));
  cases.push_back(binary("sub", m34, m34, ad::sub));
  cases.push_back(binary("mul", m34, m34, ad::mul));
  cases.push_back(unary("scale", m34, [](const Tensor& a) { return ad::scale(a, -1.7); }));
  cases.push_back(binary("add_row", m34, {4}, ad::add_row));
  cases.push_back(binary("mul_col", m34, {3}, ad::mul_col));
  cases.push_back(binary("matmul", {3, 5}, {5, 2}, ad::matmul));
  cases.push_back(unary("transpose", m34, ad::transpose));
  cases.push_back(binary("concat_rows", m34, {2, 4}, [](const Tensor& a, const Tensor& b) { return ad::concat({a, b}, 0); }));
  cases.push_back(binary("concat_cols", m34, {3, 2}, [](const Tensor& a, const Tensor& b) { return ad::concat({a, b}, 1); }));
  cases.push_back(unary("reshape", m34, [](const Tensor& a) { return ad::reshape(a, {2, 6}); }));
  cases.push_back(unary("gather_rows", m34, [](const Tensor& a) {
    const std::vector<std::size_t> idx{2, 0, 2, 1};
    return ad::gather_rows(a, idx);
  }));
  cases.push_back(unary("broadcast_rows", {1, 4}, [](const Tensor& a) { return ad::broadcast_rows(a, 3); }));
  cases.push_back(unary("relu", m34, ad::relu, true));
  cases.push_back(unary("row_l2_normalize", m34, [](const Tensor& a) { return ad::row_l2_normalize(a); }));
  cases.push_back(unary("row_softmax", m34, ad::row_softmax));
  cases.push_back(unary("max_pool_rows", {8, 3}, [](const Tensor& a) { return ad::max_pool_rows(a, 4); }));
  cases.push_back(unary("sum", m34, ad::sum));
  cases.push_back(unary("mean", m34, ad::mean));
  cases.push_back({"bce_with_logits", [](std::uint64_t seed) {
                     Rng rng(seed);
                     std::vector<double> t(12);
                     for (double& v : t) v = rng.uniform();
                     const Tensor target = Tensor::constant({3, 4}, t);
                     return check_inputs([&](Graph&, const std::vector<Tensor>& x) { return ad::bce_with_logits(x[0], target); },
                                         {rand_input({3, 4}, rng, 2.0)});
                   }});
  cases.push_back(binary("mse", m34, m34, [](const Tensor& a, const Tensor& b) { return ad::mse(a, b); }));
  cases.push_back(binary("kl_rows", m34, m34, [](const Tensor& a, const Tensor& b) {
    return ad::kl_rows(ad::row_softmax(a), ad::row_softmax(b));
  }));

  // ---- network blocks (inputs and parameters) --------------------------

  cases.push_back({"attention_weights", [](std::uint64_t seed) {
                     Rng rng(seed);
                     nn::ParameterStore store;
                     const auto block = nn::AttentionBlock::create(store, "a", 6, rng);
                     spread_biases(store.all(), rng);
                     const Input q = rand_input({4, 6}, rng), k = rand_input({5, 6}, rng);
                     double e = check_inputs(
                         [&](Graph& g, const std::vector<Tensor>& x) { return project(nn::attention_weights(x[0], x[1], block, &g), seed); },
                         {q, k});
                     const Tensor qc = Tensor::constant(q.shape, q.values), kc = Tensor::constant(k.shape, k.values);
                     return std::max(e, check_params([&](Graph* g) { return project(nn::attention_weights(qc, kc, block, g), seed); },
                                                     store.all(), rng));
                   }});
  cases.push_back({"offset_attention", [](std::uint64_t seed) {
                     Rng rng(seed);
                     nn::ParameterStore store;
                     const auto block = nn::AttentionBlock::create(store, "a", 6, rng);
                     spread_biases(store.all(), rng);
                     const Input q = rand_input({4, 6}, rng), k = rand_input({5, 6}, rng), v = rand_input({5, 6}, rng);
                     double e = check_inputs(
                         [&](Graph& g, const std::vector<Tensor>& x) {
                           return project(nn::offset_attention(x[0], x[1], x[2], block, &g), seed);
                         },
                         {q, k, v});
                     const Tensor qc = Tensor::constant(q.shape, q.values), kc = Tensor::constant(k.shape, k.values),
                                  vc = Tensor::constant(v.shape, v.values);
                     return std::max(e, check_params([&](Graph* g) { return project(nn::offset_attention(qc, kc, vc, block, g), seed); },
                                                     store.all(), rng));
                   }});
  cases.push_back({"set_abstraction", [](std::uint64_t seed) {
                     Rng rng(seed);
                     nn::ParameterStore store;
                     const nn::SetAbstraction sa{6, nn::Mlp::create(store, "sa", 3 + 4, {8, 8}, rng)};
                     spread_biases(store.all(), rng);
                     nn::FeatureSet in = random_features(24, 4, rng);
                     const Input feat{{24, 4}, std::vector<double>(in.features.values().begin(), in.features.values().end())};
                     double e = check_inputs(
                         [&](Graph& g, const std::vector<Tensor>& x) {
                           nn::FeatureSet f{x[0], in.coords};
                           return project(nn::set_abstraction(f, sa, 8, &g).features, seed);
                         },
                         {feat});
                     return std::max(e, check_params([&](Graph* g) { return project(nn::set_abstraction(in, sa, 8, g).features, seed); },
                                                     store.all(), rng));
                   }});
  cases.push_back({"predict_candidates", [](std::uint64_t seed) {
                     Rng rng(seed);
                     nn::ParameterStore store;
                     const auto head = heads::CandidateHead::create(store, "h", 6, rng);
                     spread_biases(store.all(), rng);
                     const auto f = random_features(5, 6, rng);
                     const Tensor anchors = pcet::coords_tensor(f.coords);
                     return check_params(
                         [&](Graph* g) {
                           const auto c = heads::predict_candidates(f, head, g, &anchors);
                           return ad::add(ad::add(project(c.offsets, seed), project(c.score_logits, seed + 1)),
                                          project(c.distance_logits, seed + 2));
                         },
                         store.all(), rng);
                   }});
  cases.push_back({"arp_aggregate", [](std::uint64_t seed) {
                     Rng rng(seed);
                     nn::ParameterStore store;
                     const auto arp = heads::ArpModule::create(store, "arp", rng);
                     spread_biases(store.all(), rng);
                     const auto in = candidate_inputs(6, rng);
                     double e = check_inputs(
                         [&](Graph& g, const std::vector<Tensor>& x) {
                           const auto r = heads::arp_aggregate(candidates(x), arp, &g);
                           return ad::add(project(r.refined, seed), project(r.weights, seed + 1));
                         },
                         in);
                     const heads::CandidateSet c{Tensor::constant(in[0].shape, in[0].values), Tensor::constant(in[1].shape, in[1].values),
                                                 Tensor::constant(in[2].shape, in[2].values)};
                     return std::max(e, check_params([&](Graph* g) { return project(heads::arp_aggregate(c, arp, g).refined, seed); },
                                                     store.all(), rng));
                   }});
  cases.push_back({"build_dfr", [](std::uint64_t seed) {
                     Rng rng(seed);
                     nn::ParameterStore store;
                     const auto dfr = heads::DfrModule::create(store, "dfr", 6, rng);
                     spread_biases(store.all(), rng);
                     const auto templ = random_features(4, 6, rng), corr = random_features(5, 6, rng);
                     Input w = rand_input({1, 5}, rng);
                     const Input coarse = rand_input({1, 4}, rng);
                     double e = check_inputs(
                         [&](Graph& g, const std::vector<Tensor>& x) {
                           const nn::FeatureSet t{x[0], templ.coords}, c{x[1], corr.coords};
                           return project(heads::build_dfr(t, c, ad::row_softmax(x[2]), x[3], dfr, &g).features, seed);
                         },
                         {{{4, 6}, {templ.features.values().begin(), templ.features.values().end()}},
                          {{5, 6}, {corr.features.values().begin(), corr.features.values().end()}},
                          w,
                          coarse});
                     const Tensor wc = ad::row_softmax(Tensor::constant(w.shape, w.values));
                     const Tensor cc = Tensor::constant(coarse.shape, coarse.values);
                     return std::max(e, check_params([&](Graph* g) { return project(heads::build_dfr(templ, corr, wc, cc, dfr, g).features, seed); },
                                                     store.all(), rng));
                   }});
  cases.push_back({"tkt_loss", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const Input dev = rand_input({4, 6}, rng);
                     const Tensor src = Tensor::constant({4, 6}, random_values(24, rng));
                     return check_inputs([&](Graph&, const std::vector<Tensor>& x) { return heads::tkt_loss(x[0], src); }, {dev});
                   }});

  // ---- training losses --------------------------------------------------

  cases.push_back({"loss_coarse", [](std::uint64_t seed) {
                     Rng rng(seed);
                     nn::ParameterStore store;
                     const auto arp = heads::ArpModule::create(store, "arp", rng);
                     spread_biases(store.all(), rng);
                     const auto t = random_targets(6, rng);
                     return check_inputs(
                         [&](Graph& g, const std::vector<Tensor>& x) {
                           const auto c = candidates(x);
                           return pcet::train::loss_coarse(c, heads::arp_aggregate(c, arp, &g), t).total;
                         },
                         candidate_inputs(6, rng));
                   }});
  cases.push_back({"loss_source", [](std::uint64_t seed) {
                     Rng rng(seed);
                     nn::ParameterStore store;
                     const auto arp = heads::ArpModule::create(store, "arp", rng);
                     spread_biases(store.all(), rng);
                     const auto t = random_targets(6, rng);
                     return check_inputs(
                         [&](Graph& g, const std::vector<Tensor>& x) {
                           const auto c = candidates(x);
                           return pcet::train::loss_source(c, heads::arp_aggregate(c, arp, &g), t, 0.1).total;
                         },
                         candidate_inputs(6, rng));
                   }});
  cases.push_back({"loss_refine", [](std::uint64_t seed) {
                     Rng rng(seed);
                     nn::ParameterStore store;
                     const auto arp = heads::ArpModule::create(store, "arp", rng);
                     spread_biases(store.all(), rng);
                     const auto t = random_targets(6, rng);
                     auto in = candidate_inputs(6, rng);
                     in.push_back(rand_input({6, 5}, rng));
                     const Tensor src = Tensor::constant({6, 5}, random_values(30, rng));
                     return check_inputs(
                         [&](Graph& g, const std::vector<Tensor>& x) {
                           const auto c = candidates(x);
                           return pcet::train::loss_refine(c, heads::arp_aggregate(c, arp, &g), t, x[3], src, 0.05, 1.0).total;
                         },
                         in);
                   }});

  // ---- full forward paths on a tiny model -------------------------------

  auto full = [](int stage, std::vector<std::string> prefixes) {
    return [stage, prefixes](std::uint64_t seed) {
      pcet::PcetModel model(tiny_model(), seed);
      const auto sc = scene(seed);
      pcet::TrainConfig cfg;
      Rng rng(seed);
      spread_biases(model.parameters(), rng);
      return check_params(
          [&](Graph* g) {
            Rng r(seed + 17);
            return pcet::train::sample_loss(stage, model, sc.sample(), cfg, g, r).total;
          },
          model.parameters(prefixes), rng);
    };
  };
  cases.push_back({"coarse_path", full(1, {"backbone.", "augment.", "match.", "coarse."})});
  cases.push_back({"source_path", full(2, {"source."})});
  // Stage-1 parameters move the coarse box, which feeds non-differentiable
  // crops and targets; the refine path is checked over its own parameters.
  cases.push_back({"refine_path", full(3, {"dfr.", "refine."})});
  return cases;
}

}  // namespace oracle
