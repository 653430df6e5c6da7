#pragma once

#include <atomic>
#include <deque>
#include <string>
#include <vector>

#include "pcet/cloud.hpp"
#include "pcet/geom.hpp"
#include "pcet/tensor.hpp"

namespace pcet::nn {

using ad::Graph;
using ad::Parameter;
using ad::Tensor;

/// Owns parameters at stable addresses; names are hierarchical ("backbone.sa0.mlp.1.weight").
class ParameterStore {
 public:
  Parameter& create(std::string name, ad::Shape shape, std::vector<double> values);
  std::vector<Parameter*> all();
  std::vector<Parameter*> with_prefix(const std::string& prefix);
  std::size_t count() const { return params_.size(); }

 private:
  std::deque<Parameter> params_;
};

/// Parameter as a graph leaf, or as a constant when `g` is null (inference).
Tensor bind(Graph* g, Parameter& p);

/// y = x W + b with W stored [in, out].
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                       Rng& rng, double gain = 1.0);
  std::size_t in() const { return weight->shape[0]; }
  std::size_t out() const { return weight->shape[1]; }
  Tensor forward(Graph* g, const Tensor& x) const;
};

/// Stack of Linear layers with relu between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  static Mlp create(ParameterStore& store, const std::string& name, std::size_t in,
                    const std::vector<std::size_t>& widths, Rng& rng);
  std::size_t out() const { return layers.back().out(); }
  Tensor forward(Graph* g, const Tensor& x) const;
};

/// K feature rows paired with their K seed coordinates.
struct FeatureSet {
  Tensor features;
  std::vector<Vec3> coords;

  std::size_t rows() const { return coords.size(); }
};

/// Featureless set over raw points (first set abstraction input).
FeatureSet points_only(const PointCloud& cloud);

struct StageConfig {
  std::size_t template_seeds = 0;
  std::size_t search_seeds = 0;
  std::size_t neighbors = 16;
  std::vector<std::size_t> widths;
};

struct BackboneConfig {
  std::size_t template_points = 512;
  std::size_t search_points = 1024;
  std::vector<StageConfig> stages;

  std::size_t channels() const { return stages.back().widths.back(); }
  std::size_t template_rows() const { return stages.back().template_seeds; }
  std::size_t search_rows() const { return stages.back().search_seeds; }
  /// Throws ConfigError unless seed counts strictly decrease and fit the inputs.
  void validate() const;

  /// Two stages, M=64, N=128, C=32, k=16.
  static BackboneConfig desk();
  /// Three stages at full scale.
  static BackboneConfig paper();
};

enum class Role { Template, Search };

/// Indices of the k nearest points to `query` (squared distance, ties to lower index).
std::vector<std::size_t> knn(std::span<const Vec3> points, const Vec3& query, std::size_t k);

struct SetAbstraction {
  std::size_t neighbors = 16;
  Mlp mlp;
};

/// FPS seeds, k-nearest grouping, per-point MLP on [re-centered xyz | feature],
/// max-pool over each group. `rng` picks the FPS start point (training);
/// without it FPS starts at index 0.
FeatureSet set_abstraction(const FeatureSet& in, const SetAbstraction& stage, std::size_t seeds,
                           Graph* g, Rng* rng = nullptr);

/// Shared point encoder (a stack of set abstractions). Counts its invocations.
class Backbone {
 public:
  Backbone(ParameterStore& store, const std::string& name, BackboneConfig cfg, Rng& rng);
  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  const BackboneConfig& config() const { return cfg_; }
  const std::vector<SetAbstraction>& stages() const { return stages_; }

  FeatureSet encode(const PointCloud& cloud, Role role, Graph* g, Rng* rng = nullptr) const;

  std::uint64_t invocations() const { return calls_.load(); }
  void reset_invocations() { calls_ = 0; }

 private:
  BackboneConfig cfg_;
  std::vector<SetAbstraction> stages_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

/// Runs the shared backbone on both inputs (each resampled beforehand to the
/// configured counts). Returns (template features, search features).
std::pair<FeatureSet, FeatureSet> extract_features(const PointCloud& template_cloud,
                                                   const PointCloud& search_cloud,
                                                   const Backbone& backbone, Graph* g,
                                                   Rng* rng = nullptr);

/// Single-head offset attention: projections W_q, W_k, W_v and output map phi (linear + relu).
struct AttentionBlock {
  Parameter* wq = nullptr;
  Parameter* wk = nullptr;
  Parameter* wv = nullptr;
  Linear phi;

  static AttentionBlock create(ParameterStore& store, const std::string& name, std::size_t channels,
                               Rng& rng);
  std::size_t channels() const { return wq->shape[0]; }
};

/// Cosine weights between projected query rows and projected key rows, [Kq, Kk].
Tensor attention_weights(const Tensor& q_in, const Tensor& k_in, const AttentionBlock& block, Graph* g);

/// phi(Q - softmax(W) (V W_v)), shaped like `q_in`.
Tensor offset_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                        const AttentionBlock& block, Graph* g);

FeatureSet self_augment(const FeatureSet& f, const AttentionBlock& block, Graph* g);

/// Queries from the search set, keys and values from the template. Keeps the search coordinates.
FeatureSet cross_match(const FeatureSet& search, const FeatureSet& templ, const AttentionBlock& block,
                       Graph* g);

}  // namespace pcet::nn
