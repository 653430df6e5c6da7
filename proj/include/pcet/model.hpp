#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pcet/config.hpp"
#include "pcet/heads.hpp"
#include "pcet/metrics.hpp"

namespace pcet {

using ad::Graph;
using ad::Tensor;
using nn::FeatureSet;

/// All trainable modules. Parameter names are grouped by prefix:
/// backbone. augment. match. coarse. (stage 1), source. (stage 2), dfr. refine. (stage 3).
class PcetModel {
  // Declared first: modules hold pointers into the store.
  nn::ParameterStore store_;
  ModelConfig cfg_;

 public:
  PcetModel(ModelConfig cfg, std::uint64_t seed);
  PcetModel(const PcetModel&) = delete;
  PcetModel& operator=(const PcetModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore& store() { return store_; }
  std::size_t channels() const { return cfg_.backbone.channels(); }

  /// Parameters whose name starts with any of `prefixes`.
  std::vector<ad::Parameter*> parameters(const std::vector<std::string>& prefixes);
  std::vector<ad::Parameter*> parameters() { return store_.all(); }

  /// Backbone invocations over the shared and source backbones.
  std::uint64_t backbone_calls() const;
  void reset_backbone_calls();

  std::unique_ptr<nn::Backbone> backbone;
  nn::AttentionBlock augment;
  nn::AttentionBlock match;
  heads::CandidateHead coarse_head;
  heads::ArpModule coarse_arp;
  heads::SourceBranch source;
  heads::DfrModule dfr;
  heads::CandidateHead refine_head;
  heads::ArpModule refine_arp;
};

/// Network inputs for one frame. Point coordinates are relative to the
/// reference center (translation only, world axes).
struct FrameInput {
  Box3D reference;
  PointCloud templ;   ///< previous frame, cropped by the enlarged reference box
  PointCloud search;  ///< current frame, cropped by the expanded reference box
};

FrameInput prepare_frame(const PointCloud& prev, const PointCloud& cur, const Box3D& reference,
                         const ModelConfig& cfg, Rng& rng);

/// `cloud` shifted so that `origin` becomes (0, 0, 0).
PointCloud relative_to(const PointCloud& cloud, const Vec3& origin);
/// Seed coordinates as an [N,3] constant.
Tensor coords_tensor(const std::vector<Vec3>& coords);

struct CoarseOutput {
  FeatureSet templ;  ///< self-augmented template features
  FeatureSet corr;   ///< cross-matched search features
  heads::CandidateSet candidates;
  heads::ArpResult arp;
  Box3D box;       ///< ARP decoding against the reference
  Box3D top1_box;  ///< highest-score candidate
};

CoarseOutput forward_coarse(const PcetModel& m, const FrameInput& in, Graph* g, Rng* rng = nullptr);

/// DFR + refine head, decoded against the coarse box.
struct RefineOutput {
  FeatureSet dev;
  heads::Prediction prediction;
};

RefineOutput forward_refine(const PcetModel& m, const CoarseOutput& coarse, Graph* g);

/// Merged cloud (previous crop aligned onto the coarse box + current crop),
/// relative to the coarse center.
PointCloud merged_input(const PointCloud& prev, const Box3D& prev_box, const PointCloud& cur,
                        const Box3D& coarse_box, const ModelConfig& cfg, Rng& rng);

struct SourceOutput {
  FeatureSet features;  ///< F_Src, shaped like F_Dev
  heads::CandidateSet candidates;
  heads::ArpResult arp;
  Box3D box;  ///< decoded against the coarse box
};

SourceOutput forward_source(const PcetModel& m, const PointCloud& merged, const Box3D& coarse_box, Graph* g,
                            Rng* rng = nullptr);

enum class TrackMode {
  CoarseArp,  ///< single stage, ARP decoding (baseline)
  CoarseTop1,  ///< single stage, highest-score candidate
  Pcet,       ///< coarse + DFR + refine
  CropMerge,  ///< coarse + merged cloud + second backbone pass
};

TrackMode parse_mode(const std::string& name);
const char* to_string(TrackMode mode);

/// One scored candidate of the last coarse stage, decoded to a world box.
struct CandidateBox {
  double score = 0.0;  ///< sigmoid of the score logit
  Box3D box;
};

class PcetTracker final : public metrics::Tracker {
 public:
  PcetTracker(const PcetModel& model, TrackMode mode, std::uint64_t seed);

  void init(const PointCloud& first, const Box3D& box) override;
  Box3D track(const PointCloud& frame) override;

  /// Coarse candidates of the most recent `track` call.
  const std::vector<CandidateBox>& last_candidates() const { return last_; }
  void keep_candidates(bool on) { keep_ = on; }

 private:
  const PcetModel& model_;
  TrackMode mode_;
  Rng rng_;
  PointCloud prev_;
  std::optional<Box3D> box_;
  bool keep_ = false;
  std::vector<CandidateBox> last_;
};

metrics::TrackerFactory tracker_factory(const PcetModel& model, TrackMode mode, std::uint64_t seed);

}  // namespace pcet
