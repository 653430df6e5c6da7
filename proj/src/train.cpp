#include "pcet/train.hpp"

#include <cmath>
#include <fstream>

#include "pcet/errors.hpp"

namespace pcet::train {

namespace fs = std::filesystem;

Tensor Targets::cls_tensor() const { return Tensor::constant({cls.size(), 1}, cls); }

std::array<double, 4> regression_target(const Box3D& gt, const Box3D& reference) {
  const Vec3 d = gt.center() - reference.center();
  return {d.x, d.y, d.z, angle_diff(gt.yaw(), reference.yaw())};
}

Targets assign_targets(std::span<const Vec3> seeds, const Box3D& gt, const Box3D& reference) {
  Targets t;
  t.cls.resize(seeds.size(), 0.0);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (point_in_box(seeds[i] + reference.center(), gt)) {
      t.cls[i] = 1.0;
      t.positives.push_back(i);
    }
  }
  t.reg = regression_target(gt, reference);
  return t;
}

namespace {

Tensor zero_scalar() { return Tensor::scalar(0.0); }

// Regression against the shared target: positive candidate rows plus the ARP result.
Tensor regression_term(const heads::CandidateSet& c, const heads::ArpResult& arp, const Targets& t) {
  if (t.positives.empty()) return zero_scalar();
  const std::vector<double> row(t.reg.begin(), t.reg.end());
  const Tensor target = Tensor::constant({1, 4}, row);
  const Tensor rows = ad::gather_rows(c.offsets, t.positives);
  return ad::add(ad::mse(rows, ad::broadcast_rows(target, t.positives.size())), ad::mse(arp.refined, target));
}

LossParts compose(const heads::CandidateSet& c, const heads::ArpResult& arp, const Targets& t, double lambda_reg,
                  const Tensor* kl, double lambda_kl) {
  if (t.cls.size() != c.rows()) {
    throw ShapeError("loss: " + std::to_string(t.cls.size()) + " targets for " + std::to_string(c.rows()) +
                     " candidates");
  }
  const Tensor cls = ad::bce_with_logits(c.score_logits, t.cls_tensor());
  const Tensor reg = regression_term(c, arp, t);
  LossParts out;
  out.total = ad::add(cls, ad::scale(reg, lambda_reg));
  out.cls = cls.item();
  out.reg = reg.item();
  if (kl != nullptr) {
    out.total = ad::add(out.total, ad::scale(*kl, lambda_kl));
    out.kl = kl->item();
  }
  return out;
}

}  // namespace

LossParts loss_coarse(const heads::CandidateSet& c, const heads::ArpResult& arp, const Targets& t) {
  return compose(c, arp, t, 1.0, nullptr, 0.0);
}

LossParts loss_source(const heads::CandidateSet& c, const heads::ArpResult& arp, const Targets& t,
                      double lambda1) {
  return compose(c, arp, t, lambda1, nullptr, 0.0);
}

LossParts loss_refine(const heads::CandidateSet& c, const heads::ArpResult& arp, const Targets& t,
                      const Tensor& dev, const Tensor& src, double lambda2, double lambda3) {
  const Tensor kl = heads::tkt_loss(dev, src);
  return compose(c, arp, t, lambda2, &kl, lambda3);
}

double learning_rate(double base, std::size_t epoch, std::size_t step_epochs) {
  if (step_epochs == 0) throw ConfigError("learning_rate: step must be positive");
  return base * std::ldexp(1.0, -static_cast<int>(epoch / step_epochs));
}

std::vector<std::string> stage_prefixes(int stage, bool finetune_backbone) {
  const std::vector<std::string> first{"backbone.", "augment.", "match.", "coarse."};
  switch (stage) {
    case 1: return first;
    case 2: return {"source."};
    case 3: {
      std::vector<std::string> p{"dfr.", "refine."};
      if (finetune_backbone) p.insert(p.end(), first.begin(), first.end());
      return p;
    }
    default: throw ConfigError("training stage must be 1, 2 or 3, got " + std::to_string(stage));
  }
}

Sample draw_sample(std::span<const LabeledSequence> data, const TrainConfig& cfg, Rng& rng) {
  std::size_t usable = 0;
  for (const auto& s : data) usable += s.size() >= 2 ? 1 : 0;
  if (usable == 0) throw ConfigError("training data has no sequence with 2 or more frames");
  const LabeledSequence* seq = nullptr;
  do {
    seq = &data[rng.index(data.size())];
  } while (seq->size() < 2);
  const std::size_t t = 1 + rng.index(seq->size() - 1);
  const Box3D& prev = seq->boxes[t - 1];
  const double sigma = cfg.center_jitter * 0.5 * (prev.size().x + prev.size().y);
  const Vec3 jitter{rng.normal(0.0, sigma), rng.normal(0.0, sigma), rng.normal(0.0, sigma * 0.25)};
  const double yaw = prev.yaw() + rng.normal(0.0, cfg.yaw_jitter);
  return {seq, t, Box3D(prev.center() + jitter, prev.size(), yaw)};
}

LossParts sample_loss(int stage, const PcetModel& model, const Sample& s, const TrainConfig& cfg, Graph* g,
                      Rng& rng) {
  const auto& mcfg = model.config();
  const PointCloud& prev = s.sequence->frames[s.frame - 1];
  const PointCloud& cur = s.sequence->frames[s.frame];
  const Box3D& gt = s.sequence->boxes[s.frame];
  const FrameInput in = prepare_frame(prev, cur, s.reference, mcfg, rng);

  switch (stage) {
    case 1: {
      const CoarseOutput co = forward_coarse(model, in, g, &rng);
      return loss_coarse(co.candidates, co.arp, assign_targets(co.corr.coords, gt, s.reference));
    }
    case 2: {
      const CoarseOutput co = forward_coarse(model, in, nullptr);
      const PointCloud merged = merged_input(prev, s.reference, cur, co.box, mcfg, rng);
      const SourceOutput so = forward_source(model, merged, co.box, g, &rng);
      return loss_source(so.candidates, so.arp, assign_targets(so.features.coords, gt, co.box),
                         cfg.weights.lambda1);
    }
    case 3: {
      const CoarseOutput co = forward_coarse(model, in, g, &rng);
      const PointCloud merged = merged_input(prev, s.reference, cur, co.box, mcfg, rng);
      const SourceOutput so = forward_source(model, merged, co.box, nullptr);
      const RefineOutput ro = forward_refine(model, co, g);
      // Refine rows are template seeds: positives lie on the previous target.
      Targets t = assign_targets(co.templ.coords, s.sequence->boxes[s.frame - 1], s.reference);
      t.reg = regression_target(gt, co.box);
      LossParts lp = loss_refine(ro.prediction.candidates, ro.prediction.arp, t, ro.dev.features,
                                 so.features.features, cfg.weights.lambda2, cfg.weights.lambda3);
      if (cfg.finetune_backbone && cfg.stage3_coarse_weight > 0) {
        const LossParts lc = loss_coarse(co.candidates, co.arp, assign_targets(co.corr.coords, gt, s.reference));
        lp.total = ad::add(lp.total, ad::scale(lc.total, cfg.stage3_coarse_weight));
      }
      return lp;
    }
    default: throw ConfigError("training stage must be 1, 2 or 3, got " + std::to_string(stage));
  }
}

std::vector<LossRecord> run_stage(int stage, PcetModel& model, std::span<const LabeledSequence> data,
                                  const TrainConfig& cfg, std::uint64_t seed, std::size_t iterations,
                                  const std::function<void(const LossRecord&)>& on_iteration) {
  cfg.validate();
  auto group = model.parameters(stage_prefixes(stage, cfg.finetune_backbone));
  auto all = model.parameters();
  for (auto* p : all) p->frozen = true;
  for (auto* p : group) p->frozen = false;
  struct Unfreeze {
    std::vector<ad::Parameter*>& ps;
    ~Unfreeze() {
      for (auto* p : ps) p->frozen = false;
    }
  } unfreeze{all};

  ad::Adam adam(group);
  Rng rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(stage)));
  const double base_lr = cfg.lr[stage - 1];
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch);
  std::vector<LossRecord> curve;
  curve.reserve(iterations);

  for (std::size_t it = 0; it < iterations; ++it) {
    Graph g;
    LossRecord rec{it, stage, 0.0, 0.0, 0.0, 0.0};
    Tensor total;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const Sample s = draw_sample(data, cfg, rng);
      const LossParts lp = sample_loss(stage, model, s, cfg, &g, rng);
      const Tensor part = ad::scale(lp.total, inv_batch);
      total = b == 0 ? part : ad::add(total, part);
      rec.cls += lp.cls * inv_batch;
      rec.reg += lp.reg * inv_batch;
      rec.kl += lp.kl * inv_batch;
    }
    rec.loss = total.item();
    adam.zero_grad();
    if (total.recorded()) g.backward(total);
    adam.step(learning_rate(base_lr, it / cfg.iters_per_epoch, cfg.lr_step_epochs));
    curve.push_back(rec);
    if (on_iteration) on_iteration(rec);
  }
  return curve;
}

fs::path checkpoint_path(const fs::path& dir, int stage) {
  return dir / ("stage" + std::to_string(stage) + ".ckpt");
}

void load_model(PcetModel& model, const fs::path& checkpoint) {
  const auto params = model.parameters();
  ad::restore(params, ad::load_checkpoint(checkpoint.string()), true);
}

void write_loss_csv(const fs::path& path, std::span<const LossRecord> curve, const std::string& provenance) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path.string());
  if (!provenance.empty()) f << "# " << provenance << '\n';
  f << "iteration,stage,loss,cls,reg,kl\n";
  f.precision(10);
  for (const auto& r : curve)
    f << r.iteration << ',' << r.stage << ',' << r.loss << ',' << r.cls << ',' << r.reg << ',' << r.kl << '\n';
}

std::vector<LossRecord> train_stage(int stage, PcetModel& model, std::span<const LabeledSequence> data,
                                    const RunConfig& cfg, const fs::path& dir) {
  if (stage < 1 || stage > 3) throw ConfigError("training stage must be 1, 2 or 3, got " + std::to_string(stage));
  if (stage > 1) {
    const fs::path prior = checkpoint_path(dir, stage - 1);
    if (!fs::exists(prior)) {
      throw ConfigError("stage " + std::to_string(stage) + " needs the stage " + std::to_string(stage - 1) +
                        " checkpoint " + prior.string() + "; run that stage first");
    }
    load_model(model, prior);
  }
  fs::create_directories(dir);
  const auto curve = run_stage(stage, model, data, cfg.train, cfg.seed, cfg.train.iterations[stage - 1]);
  const std::string prov = "config=" + cfg.digest() + " seed=" + std::to_string(cfg.seed);
  write_loss_csv(dir / ("loss_stage" + std::to_string(stage) + ".csv"), curve, prov);
  const std::string meta = "stage=" + std::to_string(stage) + "\nconfig=" + cfg.digest() +
                           "\nseed=" + std::to_string(cfg.seed) +
                           "\niterations=" + std::to_string(curve.size()) + "\n";
  const auto params = model.parameters();
  ad::save_checkpoint(checkpoint_path(dir, stage).string(), ad::snapshot(params, meta));
  return curve;
}

}  // namespace pcet::train
