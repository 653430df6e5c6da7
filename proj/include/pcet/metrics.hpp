#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcet/sequence.hpp"

namespace pcet::metrics {

struct FrameResult {
  double overlap = 0.0;  ///< 3D IoU against ground truth, in [0, 1]
  double error = 0.0;    ///< center distance in meters
};

FrameResult evaluate_frame(const Box3D& predicted, const Box3D& truth);

/// Area under r(t) = fraction with overlap > t over t in [0, 1], in percent.
/// Closed form: 100 * mean(overlap).
double success_auc(std::span<const double> overlaps);

/// Area under p(t) = fraction with error < t over t in [0, 2] m, normalized, in
/// percent. Closed form: 100 * mean((2 - min(error, 2)) / 2).
double precision_auc(std::span<const double> errors);

/// One-pass tracker interface. `track` only ever sees the current frame.
class Tracker {
 public:
  virtual ~Tracker() = default;
  virtual void init(const PointCloud& first, const Box3D& box) = 0;
  virtual Box3D track(const PointCloud& frame) = 0;
};

using TrackerFactory = std::function<std::unique_ptr<Tracker>()>;

/// Repeats the previous box forever.
class KeepBoxTracker final : public Tracker {
 public:
  void init(const PointCloud&, const Box3D& box) override { box_ = box; }
  Box3D track(const PointCloud&) override { return box_.value(); }

 private:
  std::optional<Box3D> box_;
};

struct SequenceTrace {
  std::string name;
  std::string category;
  std::vector<Box3D> predictions;  ///< frames 1..T-1
  std::vector<FrameResult> frames;
};

struct Score {
  std::string category;
  double success = 0.0;
  double precision = 0.0;
  std::size_t frames = 0;
};

struct OpeReport {
  std::vector<SequenceTrace> traces;
  std::vector<Score> categories;  ///< sorted by name
  Score mean;                     ///< frame-weighted over all sequences
  std::vector<std::string> warnings;
};

/// Initializes a fresh tracker per sequence with the first GT box and runs it
/// forward once. Sequences shorter than 2 frames are skipped with a warning.
OpeReport run_ope(const TrackerFactory& factory, std::span<const LabeledSequence> sequences);

/// Aggregates already-computed traces.
OpeReport summarize(std::vector<SequenceTrace> traces);

}  // namespace pcet::metrics
