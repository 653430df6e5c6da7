#include "pcet/analysis.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "pcet/errors.hpp"

namespace pcet::analysis {

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

metrics::OpeReport run_ope_parallel(const metrics::TrackerFactory& factory,
                                    std::span<const LabeledSequence> sequences, std::size_t jobs) {
  std::vector<metrics::OpeReport> parts(sequences.size());
  parallel_for(sequences.size(), jobs,
               [&](std::size_t i) { parts[i] = metrics::run_ope(factory, sequences.subspan(i, 1)); });
  std::vector<metrics::SequenceTrace> traces;
  std::vector<std::string> warnings;
  for (auto& p : parts) {
    for (auto& t : p.traces) traces.push_back(std::move(t));
    for (auto& w : p.warnings) warnings.push_back(std::move(w));
  }
  auto report = metrics::summarize(std::move(traces));
  report.warnings = std::move(warnings);
  return report;
}

ArpComparison compare_arp(const PcetModel& model, std::span<const LabeledSequence> sequences, std::uint64_t seed) {
  std::vector<metrics::SequenceTrace> arp_traces, top1_traces;
  ArpComparison out;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) continue;
    PcetTracker arp(model, TrackMode::CoarseArp, seed);
    PcetTracker top1(model, TrackMode::CoarseTop1, seed);
    arp.keep_candidates(true);
    arp.init(seq.frames[0], seq.boxes[0]);
    top1.init(seq.frames[0], seq.boxes[0]);
    metrics::SequenceTrace ta{seq.name, seq.category, {}, {}}, tt{seq.name, seq.category, {}, {}};
    for (std::size_t t = 1; t < seq.size(); ++t) {
      const Box3D pa = arp.track(seq.frames[t]);
      const Box3D pt = top1.track(seq.frames[t]);
      ta.predictions.push_back(pa);
      ta.frames.push_back(metrics::evaluate_frame(pa, seq.boxes[t]));
      tt.predictions.push_back(pt);
      tt.frames.push_back(metrics::evaluate_frame(pt, seq.boxes[t]));
      const auto& cands = arp.last_candidates();
      for (std::size_t i = 0; i < cands.size(); ++i)
        out.scatter.push_back({seq.name, t, i, cands[i].score, iou3d(cands[i].box, seq.boxes[t])});
    }
    arp_traces.push_back(std::move(ta));
    top1_traces.push_back(std::move(tt));
  }
  out.arp = metrics::summarize(std::move(arp_traces));
  out.top1 = metrics::summarize(std::move(top1_traces));
  return out;
}

namespace {

struct Accumulator {
  std::vector<double> ms;
  std::uint64_t calls = 0;

  VariantTiming finish(const std::string& name) const {
    VariantTiming v;
    v.name = name;
    v.frames = ms.size();
    if (ms.empty()) return v;
    double s = 0.0;
    for (double x : ms) s += x;
    v.mean_ms = s / static_cast<double>(ms.size());
    double var = 0.0;
    for (double x : ms) var += (x - v.mean_ms) * (x - v.mean_ms);
    v.std_ms = std::sqrt(var / static_cast<double>(ms.size()));
    v.backbone_calls_per_frame = static_cast<double>(calls) / static_cast<double>(ms.size());
    return v;
  }
};

}  // namespace

BenchReport run_bench(const PcetModel& model, std::span<const LabeledSequence> sequences, std::size_t frames,
                      std::size_t warmup, std::uint64_t seed) {
  struct Pair {
    const LabeledSequence* seq;
    std::size_t t;
  };
  std::vector<Pair> pairs;
  for (const auto& s : sequences)
    for (std::size_t t = 1; t < s.size(); ++t) pairs.push_back({&s, t});
  if (pairs.empty()) throw ConfigError("bench: no frame pairs available");

  const auto& cfg = model.config();
  using clock = std::chrono::steady_clock;
  Accumulator acc[3];

  // Each variant gets its own identically seeded generator so resampling matches.
  auto run = [&](int variant, const Pair& p, std::uint64_t frame_seed, bool record) {
    Rng rng(frame_seed);
    const PointCloud& prev = p.seq->frames[p.t - 1];
    const PointCloud& cur = p.seq->frames[p.t];
    const Box3D& ref = p.seq->boxes[p.t - 1];
    const std::uint64_t calls_before = model.backbone_calls();
    const auto start = clock::now();
    const FrameInput in = prepare_frame(prev, cur, ref, cfg, rng);
    const CoarseOutput coarse = forward_coarse(model, in, nullptr);
    Box3D out = coarse.box;
    if (variant == 1) {
      out = forward_refine(model, coarse, nullptr).prediction.box;
    } else if (variant == 2) {
      const PointCloud merged = merged_input(prev, ref, cur, coarse.box, cfg, rng);
      out = forward_source(model, merged, coarse.box, nullptr).box;
    }
    const double ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    if (!std::isfinite(out.center().x)) throw NumericError("bench: non-finite prediction");
    if (record) {
      acc[variant].ms.push_back(ms);
      acc[variant].calls += model.backbone_calls() - calls_before;
    }
  };

  for (std::size_t i = 0; i < warmup + frames; ++i) {
    const Pair& p = pairs[i % pairs.size()];
    const std::uint64_t fs = derive_seed(seed, i);
    // Rotate the order so no variant always runs first on a frame.
    for (int k = 0; k < 3; ++k) run(static_cast<int>((i + static_cast<std::size_t>(k)) % 3), p, fs, i >= warmup);
  }

  BenchReport r;
  r.baseline = acc[0].finish("baseline");
  r.pcet = acc[1].finish("pcet");
  r.crop_merge = acc[2].finish("crop-merge");
  r.pcet_added_ms = r.pcet.mean_ms - r.baseline.mean_ms;
  r.crop_merge_added_ms = r.crop_merge.mean_ms - r.baseline.mean_ms;
  r.added_ratio = r.crop_merge_added_ms > 0 ? r.pcet_added_ms / r.crop_merge_added_ms : INFINITY;
  r.counts_ok = r.baseline.backbone_calls_per_frame == 2.0 && r.pcet.backbone_calls_per_frame == 2.0 &&
                r.crop_merge.backbone_calls_per_frame == 3.0;
  return r;
}

}  // namespace pcet::analysis
