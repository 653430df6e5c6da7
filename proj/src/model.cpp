#include "pcet/model.hpp"

#include <algorithm>
#include <cmath>

#include "pcet/errors.hpp"

namespace pcet {

PcetModel::PcetModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t c = cfg_.backbone.channels();
  backbone = std::make_unique<nn::Backbone>(store_, "backbone", cfg_.backbone, rng);
  augment = nn::AttentionBlock::create(store_, "augment", c, rng);
  match = nn::AttentionBlock::create(store_, "match", c, rng);
  coarse_head = heads::CandidateHead::create(store_, "coarse.head", c, rng);
  coarse_arp = heads::ArpModule::create(store_, "coarse.arp", rng);
  source.backbone = std::make_unique<nn::Backbone>(store_, "source.backbone", cfg_.backbone, rng);
  source.projection = nn::Linear::create(store_, "source.projection", c, c + 4, rng);
  source.head = heads::CandidateHead::create(store_, "source.head", c + 4, rng);
  source.arp = heads::ArpModule::create(store_, "source.arp", rng);
  dfr = heads::DfrModule::create(store_, "dfr", c, rng);
  refine_head = heads::CandidateHead::create(store_, "refine.head", c + 4, rng);
  refine_arp = heads::ArpModule::create(store_, "refine.arp", rng);
  // Refinement starts as the identity on the coarse box.
  auto& last = refine_head.offsets.layers.back();
  std::fill(last.weight->value.begin(), last.weight->value.end(), 0.0);
}

std::vector<ad::Parameter*> PcetModel::parameters(const std::vector<std::string>& prefixes) {
  std::vector<ad::Parameter*> out;
  for (auto* p : store_.all()) {
    for (const auto& pre : prefixes) {
      if (p->name.starts_with(pre)) {
        out.push_back(p);
        break;
      }
    }
  }
  return out;
}

std::uint64_t PcetModel::backbone_calls() const {
  return backbone->invocations() + source.backbone->invocations();
}

void PcetModel::reset_backbone_calls() {
  backbone->reset_invocations();
  source.backbone->reset_invocations();
}

PointCloud relative_to(const PointCloud& cloud, const Vec3& origin) {
  PointCloud out = cloud;
  for (auto& p : out.points) p = p - origin;
  return out;
}

Tensor coords_tensor(const std::vector<Vec3>& coords) {
  std::vector<double> v(coords.size() * 3);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    v[i * 3] = coords[i].x;
    v[i * 3 + 1] = coords[i].y;
    v[i * 3 + 2] = coords[i].z;
  }
  return Tensor::constant({coords.size(), 3}, std::move(v));
}

FrameInput prepare_frame(const PointCloud& prev, const PointCloud& cur, const Box3D& reference,
                         const ModelConfig& cfg, Rng& rng) {
  const auto& bb = cfg.backbone;
  auto t = crop_and_fix(prev, expand_search_region(reference, cfg.template_scale), bb.template_points, rng);
  auto s = crop_and_fix(cur, expand_search_region(reference, cfg.search_scale), bb.search_points, rng);
  return {reference, relative_to(t.cloud, reference.center()), relative_to(s.cloud, reference.center())};
}

CoarseOutput forward_coarse(const PcetModel& m, const FrameInput& in, Graph* g, Rng* rng) {
  auto [ft, fs] = nn::extract_features(in.templ, in.search, *m.backbone, g, rng);
  ft = nn::self_augment(ft, m.augment, g);
  fs = nn::self_augment(fs, m.augment, g);
  FeatureSet corr = nn::cross_match(fs, ft, m.match, g);
  const Tensor anchors = coords_tensor(corr.coords);
  heads::CandidateSet cand = heads::predict_candidates(corr, m.coarse_head, g, &anchors);
  heads::ArpResult arp = heads::arp_aggregate(cand, m.coarse_arp, g);
  const Box3D box = heads::decode_box(in.reference, heads::to_array(arp.refined));
  const Box3D top1 = heads::decode_box(in.reference, heads::row_offsets(cand, heads::top1_index(cand)));
  return {std::move(ft), std::move(corr), std::move(cand), std::move(arp), box, top1};
}

RefineOutput forward_refine(const PcetModel& m, const CoarseOutput& coarse, Graph* g) {
  FeatureSet dev = heads::build_dfr(coarse.templ, coarse.corr, coarse.arp.weights, coarse.arp.refined, m.dfr, g);
  heads::Prediction p = heads::refine_predict(dev, m.refine_head, m.refine_arp, coarse.box, g);
  return {std::move(dev), std::move(p)};
}

PointCloud merged_input(const PointCloud& prev, const Box3D& prev_box, const PointCloud& cur,
                        const Box3D& coarse_box, const ModelConfig& cfg, Rng& rng) {
  auto merged = build_merged_template(prev, expand_search_region(prev_box, cfg.template_scale), cur,
                                      expand_search_region(coarse_box, cfg.template_scale), rng,
                                      cfg.merged_half());
  return relative_to(merged.cloud, coarse_box.center());
}

SourceOutput forward_source(const PcetModel& m, const PointCloud& merged, const Box3D& coarse_box, Graph* g,
                            Rng* rng) {
  FeatureSet f = heads::tkt_source(merged, m.source, g, rng);
  const Tensor anchors = coords_tensor(f.coords);
  heads::CandidateSet cand = heads::predict_candidates(f, m.source.head, g, &anchors);
  heads::ArpResult arp = heads::arp_aggregate(cand, m.source.arp, g);
  const Box3D box = heads::decode_box(coarse_box, heads::to_array(arp.refined));
  return {std::move(f), std::move(cand), std::move(arp), box};
}

TrackMode parse_mode(const std::string& name) {
  if (name == "coarse" || name == "baseline") return TrackMode::CoarseArp;
  if (name == "top1") return TrackMode::CoarseTop1;
  if (name == "pcet") return TrackMode::Pcet;
  if (name == "crop-merge") return TrackMode::CropMerge;
  throw ConfigError("unknown tracker mode '" + name + "' (coarse, top1, pcet, crop-merge)");
}

const char* to_string(TrackMode mode) {
  switch (mode) {
    case TrackMode::CoarseArp: return "coarse";
    case TrackMode::CoarseTop1: return "top1";
    case TrackMode::Pcet: return "pcet";
    case TrackMode::CropMerge: return "crop-merge";
  }
  return "?";
}

PcetTracker::PcetTracker(const PcetModel& model, TrackMode mode, std::uint64_t seed)
    : model_(model), mode_(mode), rng_(seed) {}

void PcetTracker::init(const PointCloud& first, const Box3D& box) {
  prev_ = first;
  box_ = box;
  last_.clear();
}

Box3D PcetTracker::track(const PointCloud& frame) {
  if (!box_) throw std::logic_error("PcetTracker::track before init");
  const auto& cfg = model_.config();
  const FrameInput in = prepare_frame(prev_, frame, *box_, cfg, rng_);
  const CoarseOutput coarse = forward_coarse(model_, in, nullptr);

  if (keep_) {
    last_.clear();
    const auto s = coarse.candidates.score_logits.values();
    for (std::size_t i = 0; i < coarse.candidates.rows(); ++i) {
      last_.push_back({1.0 / (1.0 + std::exp(-s[i])),
                       heads::decode_box(in.reference, heads::row_offsets(coarse.candidates, i))});
    }
  }

  Box3D next = coarse.box;
  switch (mode_) {
    case TrackMode::CoarseArp: break;
    case TrackMode::CoarseTop1: next = coarse.top1_box; break;
    case TrackMode::Pcet: next = forward_refine(model_, coarse, nullptr).prediction.box; break;
    case TrackMode::CropMerge: {
      const PointCloud merged = merged_input(prev_, *box_, frame, coarse.box, cfg, rng_);
      next = forward_source(model_, merged, coarse.box, nullptr).box;
      break;
    }
  }
  prev_ = frame;
  box_ = next;
  return next;
}

metrics::TrackerFactory tracker_factory(const PcetModel& model, TrackMode mode, std::uint64_t seed) {
  return [&model, mode, seed]() -> std::unique_ptr<metrics::Tracker> {
    return std::make_unique<PcetTracker>(model, mode, seed);
  };
}

}  // namespace pcet
