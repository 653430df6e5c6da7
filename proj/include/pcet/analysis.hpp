#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pcet/model.hpp"

namespace pcet::analysis {

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. Results must be
/// written by index so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

/// OPE over `sequences` with sequences distributed across `jobs` threads.
metrics::OpeReport run_ope_parallel(const metrics::TrackerFactory& factory,
                                    std::span<const LabeledSequence> sequences, std::size_t jobs);

struct ScatterRow {
  std::string sequence;
  std::size_t frame = 0;
  std::size_t candidate = 0;
  double score = 0.0;  ///< sigmoid of the score logit
  double iou = 0.0;    ///< candidate box vs ground truth
};

struct ArpComparison {
  metrics::OpeReport arp;
  metrics::OpeReport top1;
  /// Every coarse candidate of every evaluated frame along the ARP trajectory.
  std::vector<ScatterRow> scatter;
};

ArpComparison compare_arp(const PcetModel& model, std::span<const LabeledSequence> sequences, std::uint64_t seed);

struct VariantTiming {
  std::string name;
  std::size_t frames = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double backbone_calls_per_frame = 0.0;
};

struct BenchReport {
  VariantTiming baseline;    ///< coarse only
  VariantTiming pcet;        ///< coarse + DFR + refine
  VariantTiming crop_merge;  ///< coarse + merged cloud + second backbone pass + head
  double pcet_added_ms = 0.0;
  double crop_merge_added_ms = 0.0;
  double added_ratio = 0.0;  ///< pcet_added_ms / crop_merge_added_ms
  bool counts_ok = false;    ///< backbone calls per frame are exactly 2 / 2 / 3
};

/// Times the three inference variants on the same frames, interleaved, from
/// ground-truth references. Single-threaded.
BenchReport run_bench(const PcetModel& model, std::span<const LabeledSequence> sequences, std::size_t frames,
                      std::size_t warmup, std::uint64_t seed);

}  // namespace pcet::analysis
