#include "pcet/metrics.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace pcet::metrics {

FrameResult evaluate_frame(const Box3D& predicted, const Box3D& truth) {
  return {iou3d(predicted, truth), center_distance(predicted, truth)};
}

double success_auc(std::span<const double> overlaps) {
  if (overlaps.empty()) throw std::invalid_argument("success_auc: empty input");
  double s = 0.0;
  for (double o : overlaps) s += std::clamp(o, 0.0, 1.0);
  return 100.0 * s / static_cast<double>(overlaps.size());
}

double precision_auc(std::span<const double> errors) {
  if (errors.empty()) throw std::invalid_argument("precision_auc: empty input");
  double s = 0.0;
  for (double e : errors) s += (2.0 - std::min(std::max(e, 0.0), 2.0)) / 2.0;
  return 100.0 * s / static_cast<double>(errors.size());
}

namespace {

Score score_of(const std::string& name, std::span<const FrameResult> frames) {
  std::vector<double> o, e;
  for (const auto& f : frames) {
    o.push_back(f.overlap);
    e.push_back(f.error);
  }
  if (frames.empty()) return {name, 0.0, 0.0, 0};
  return {name, success_auc(o), precision_auc(e), frames.size()};
}

}  // namespace

OpeReport summarize(std::vector<SequenceTrace> traces) {
  OpeReport report;
  std::map<std::string, std::vector<FrameResult>> by_cat;
  std::vector<FrameResult> all;
  for (const auto& t : traces) {
    auto& bucket = by_cat[t.category];
    bucket.insert(bucket.end(), t.frames.begin(), t.frames.end());
    all.insert(all.end(), t.frames.begin(), t.frames.end());
  }
  for (const auto& [cat, frames] : by_cat) report.categories.push_back(score_of(cat, frames));
  report.mean = score_of("mean", all);
  report.traces = std::move(traces);
  return report;
}

OpeReport run_ope(const TrackerFactory& factory, std::span<const LabeledSequence> sequences) {
  std::vector<SequenceTrace> traces;
  std::vector<std::string> warnings;
  for (const auto& seq : sequences) {
    if (seq.size() < 2 || seq.boxes.size() != seq.size()) {
      warnings.push_back("skipped sequence '" + seq.name + "': fewer than 2 frames");
      continue;
    }
    auto tracker = factory();
    tracker->init(seq.frames[0], seq.boxes[0]);
    SequenceTrace trace{seq.name, seq.category, {}, {}};
    for (std::size_t t = 1; t < seq.size(); ++t) {
      const Box3D pred = tracker->track(seq.frames[t]);
      trace.predictions.push_back(pred);
      trace.frames.push_back(evaluate_frame(pred, seq.boxes[t]));
    }
    traces.push_back(std::move(trace));
  }
  OpeReport report = summarize(std::move(traces));
  report.warnings = std::move(warnings);
  return report;
}

}  // namespace pcet::metrics
