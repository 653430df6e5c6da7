#pragma once

#include <array>
#include <optional>

#include "pcet/net.hpp"

namespace pcet::heads {

using ad::Graph;
using ad::Tensor;
using nn::FeatureSet;

/// Per-row box candidates. `offsets` is [N,4] (dx, dy, dz meters, dtheta
/// radians); both logit tensors are [N,1].
struct CandidateSet {
  Tensor offsets;
  Tensor score_logits;
  Tensor distance_logits;

  std::size_t rows() const { return offsets.rows(); }
};

/// Three parallel 3-layer MLPs: offsets (4), score logit (1), distance logit (1).
struct CandidateHead {
  nn::Mlp offsets;
  nn::Mlp score;
  nn::Mlp distance;

  static CandidateHead create(nn::ParameterStore& store, const std::string& name, std::size_t channels,
                              Rng& rng);
};

/// Runs the head on every row. When `anchors` ([N,3]) is given, each row's
/// xyz offset is anchored at its seed: offset = anchor + head output.
CandidateSet predict_candidates(const FeatureSet& f, const CandidateHead& head, Graph* g,
                                const Tensor* anchors = nullptr);

/// Scalar-to-scalar MLP applied to (score + distance) before the softmax.
struct ArpModule {
  nn::Mlp mlp;

  static constexpr std::size_t kHidden = 16;
  static ArpModule create(nn::ParameterStore& store, const std::string& name, Rng& rng);
  /// Overwrites the weights so the MLP computes exactly x -> x.
  void set_identity();
};

struct ArpResult {
  Tensor weights;  ///< [1,N], non-negative, sums to 1
  Tensor refined;  ///< [1,4] convex combination of candidate offsets
};

/// Softmax over MLP(score + distance) across rows, then the weighted sum of offsets.
ArpResult arp_aggregate(const CandidateSet& c, const ArpModule& arp, Graph* g);

/// Candidate with the highest score logit (first on ties).
std::size_t top1_index(const CandidateSet& c);
std::array<double, 4> row_offsets(const CandidateSet& c, std::size_t row);
std::array<double, 4> to_array(const Tensor& r);

/// Shifts the reference center by R[0..2] and its yaw by R[3]; size is kept.
Box3D decode_box(const Box3D& reference, const std::array<double, 4>& r);

/// Destination feature reconstruction: a small MLP over [ARP-weighted
/// correlation rows | coarse result] and an offset-attention block with
/// template-side queries [template features | x y z 0].
struct DfrModule {
  nn::Mlp refine;
  nn::AttentionBlock attention;

  static DfrModule create(nn::ParameterStore& store, const std::string& name, std::size_t channels,
                          Rng& rng);
  std::size_t width() const { return attention.channels(); }
};

/// Returns F_Dev with the template's rows and coordinates. `arp_weights` are
/// the coarse ARP weights ([1,N]) and `coarse` the [1,4] coarse result.
FeatureSet build_dfr(const FeatureSet& templ, const FeatureSet& corr, const Tensor& arp_weights,
                     const Tensor& coarse, const DfrModule& dfr, Graph* g);

/// Source branch: a separately trained backbone of the same architecture, a
/// projection to the destination width, and its own prediction head.
struct SourceBranch {
  std::unique_ptr<nn::Backbone> backbone;
  nn::Linear projection;
  CandidateHead head;
  ArpModule arp;
};

/// Encodes the merged template (512 points) into features shaped like F_Dev.
FeatureSet tkt_source(const PointCloud& merged, const SourceBranch& source, Graph* g,
                      Rng* rng = nullptr);

/// Mean over rows of KL(softmax(dev_row) || softmax(src_row)); the source side is detached.
Tensor tkt_loss(const FeatureSet& dev, const FeatureSet& src);
Tensor tkt_loss(const Tensor& dev, const Tensor& src);

struct Prediction {
  std::array<double, 4> refined{};
  Box3D box;
  CandidateSet candidates;
  ArpResult arp;
};

/// Candidates on F_Dev, ARP aggregation, decoded against the coarse box.
Prediction refine_predict(const FeatureSet& dev, const CandidateHead& head, const ArpModule& arp,
                          const Box3D& coarse_box, Graph* g);

}  // namespace pcet::heads
