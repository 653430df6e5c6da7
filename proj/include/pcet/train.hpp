#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pcet/model.hpp"

namespace pcet::train {

/// Per-row classification labels and the shared regression target.
struct Targets {
  std::vector<double> cls;               ///< 1 for seeds inside the GT box
  std::array<double, 4> reg{};           ///< (gt.center - reference.center, wrap(gt.yaw - reference.yaw))
  std::vector<std::size_t> positives;    ///< rows with cls == 1

  Tensor cls_tensor() const;
};

/// `seeds` are relative to `reference.center()` (the network frame).
Targets assign_targets(std::span<const Vec3> seeds, const Box3D& gt, const Box3D& reference);
std::array<double, 4> regression_target(const Box3D& gt, const Box3D& reference);

/// `total` is differentiable; the other fields are the unweighted term values.
struct LossParts {
  Tensor total;
  double cls = 0.0;
  double reg = 0.0;
  double kl = 0.0;
};

/// Classification: mean BCE over all rows. Regression: MSE of the positive
/// rows' offsets plus MSE of the ARP result, both against the target; zero
/// when there are no positives.
LossParts loss_coarse(const heads::CandidateSet& c, const heads::ArpResult& arp, const Targets& t);
LossParts loss_source(const heads::CandidateSet& c, const heads::ArpResult& arp, const Targets& t,
                      double lambda1);
LossParts loss_refine(const heads::CandidateSet& c, const heads::ArpResult& arp, const Targets& t,
                      const Tensor& dev, const Tensor& src, double lambda2, double lambda3);

/// base * 0.5^floor(epoch / step_epochs)
double learning_rate(double base, std::size_t epoch, std::size_t step_epochs);

/// Parameter-name prefixes optimized in `stage` (1, 2 or 3).
std::vector<std::string> stage_prefixes(int stage, bool finetune_backbone);

/// One training example: frame t of a sequence, tracked from a jittered copy
/// of the previous ground truth.
struct Sample {
  const LabeledSequence* sequence = nullptr;
  std::size_t frame = 0;
  Box3D reference;
};

Sample draw_sample(std::span<const LabeledSequence> data, const TrainConfig& cfg, Rng& rng);

/// Forward pass and loss of `stage` for one sample.
LossParts sample_loss(int stage, const PcetModel& model, const Sample& s, const TrainConfig& cfg, Graph* g,
                      Rng& rng);

struct LossRecord {
  std::size_t iteration = 0;
  int stage = 0;
  double loss = 0.0, cls = 0.0, reg = 0.0, kl = 0.0;
};

/// Adam on the stage's parameter group; everything else is frozen for the
/// duration. Deterministic in `seed`.
std::vector<LossRecord> run_stage(int stage, PcetModel& model, std::span<const LabeledSequence> data,
                                  const TrainConfig& cfg, std::uint64_t seed, std::size_t iterations,
                                  const std::function<void(const LossRecord&)>& on_iteration = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int stage);

/// Loads every parameter of `model` from a checkpoint file.
void load_model(PcetModel& model, const std::filesystem::path& checkpoint);

/// Restores the previous stage's checkpoint from `dir` (ConfigError when
/// missing), trains, then writes `stageN.ckpt` and `loss_stageN.csv`.
std::vector<LossRecord> train_stage(int stage, PcetModel& model, std::span<const LabeledSequence> data,
                                    const RunConfig& cfg, const std::filesystem::path& dir);

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> curve,
                    const std::string& provenance);

}  // namespace pcet::train
