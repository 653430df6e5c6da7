#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcet/analysis.hpp"
#include "pcet/errors.hpp"
#include "pcet/ingest.hpp"
#include "pcet/provenance.hpp"
#include "pcet/sim.hpp"
#include "pcet/train.hpp"

namespace pcet::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string preset = "desk";
  std::string data;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
};

void add_common(CLI::App* cmd, Common& c, bool needs_data) {
  cmd->add_option("--config", c.config, "key = value config file applied after the preset");
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_option("--preset", c.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  if (needs_data) {
    cmd->add_option("--data", c.data,
                    std::string("dataset root (generated or KITTI layout); defaults to $") + kDataRootEnv);
  }
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = preset_config(c.preset);
  if (!c.config.empty()) apply_config_file(cfg, c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw ConfigError("cannot create output directory " + out);
  return out;
}

fs::path data_root(const Common& c) {
  if (!c.data.empty()) return c.data;
  if (const char* env = std::getenv(kDataRootEnv); env != nullptr && *env != '\0') return env;
  throw ConfigError(std::string("no dataset: pass --data or set ") + kDataRootEnv);
}

json provenance(const RunConfig& cfg, const std::string& command) {
  return {{"command", command},
          {"preset", cfg.preset},
          {"config_digest", cfg.digest()},
          {"seed", cfg.seed},
          {"version", "0.1.0"}};
}

std::string provenance_line(const RunConfig& cfg, const std::string& command) {
  return "pcet " + command + " config=" + cfg.digest() + " seed=" + std::to_string(cfg.seed) +
         " preset=" + cfg.preset;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json box_json(const Box3D& b) {
  return {{"center", {b.center().x, b.center().y, b.center().z}},
          {"size", {b.size().x, b.size().y, b.size().z}},
          {"yaw", b.yaw()}};
}

json score_json(const metrics::Score& s) {
  return {{"category", s.category}, {"success", s.success}, {"precision", s.precision}, {"frames", s.frames}};
}

json report_json(const metrics::OpeReport& r) {
  json cats = json::array();
  for (const auto& s : r.categories) cats.push_back(score_json(s));
  return {{"mean", score_json(r.mean)}, {"categories", cats}, {"warnings", r.warnings}};
}

void write_ope_csv(const fs::path& path, const metrics::OpeReport& r, const std::string& prov) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << "# " << prov << '\n' << "category,success,precision,frames\n";
  f.precision(10);
  for (const auto& s : r.categories) f << s.category << ',' << s.success << ',' << s.precision << ',' << s.frames << '\n';
  f << "mean," << r.mean.success << ',' << r.mean.precision << ',' << r.mean.frames << '\n';
}

std::string kitti_type(std::string c) {
  if (!c.empty()) c[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(c[0])));
  return c;
}

/// Generated datasets have train/ and eval/ subdirectories; a KITTI root is
/// split by scene id ("eval" maps to the test scenes).
std::vector<LabeledSequence> load_data(const fs::path& root, const std::string& split, const RunConfig& cfg) {
  if (fs::is_directory(root / "label_02")) {
    const ingest::Split want = split == "train" ? ingest::Split::Train
                               : split == "val" ? ingest::Split::Val
                                                : ingest::Split::Test;
    std::vector<int> scenes;
    for (const auto& e : fs::directory_iterator(root / "label_02")) {
      if (e.path().extension() != ".txt") continue;
      try {
        const int id = std::stoi(e.path().stem().string());
        if (ingest::split_of(id) == want) scenes.push_back(id);
      } catch (const std::exception&) {
        // not a scene file
      }
    }
    std::sort(scenes.begin(), scenes.end());
    std::vector<std::string> cats;
    for (const auto& c : cfg.data.categories) cats.push_back(kitti_type(c));
    std::vector<LabeledSequence> out;
    for (int s : scenes)
      for (auto& seq : ingest::load_kitti_scene(root, s, cats)) out.push_back(std::move(seq));
    return out;
  }
  if (fs::is_directory(root / split)) return ingest::load_dataset(root / split);
  return ingest::load_dataset(root);
}

std::unique_ptr<PcetModel> load_model(const RunConfig& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
  auto model = std::make_unique<PcetModel>(cfg.model, cfg.seed);
  train::load_model(*model, checkpoint);
  return model;
}

// ---- commands ----------------------------------------------------------

int cmd_gen(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path out = prepare_out(c.out);
  json digests;
  for (const std::string split : {"train", "eval"}) {
    sim::DatasetConfig dc;
    dc.sequences = split == "train" ? cfg.data.sequences : cfg.data.eval_sequences;
    dc.frames = cfg.data.frames;
    dc.occlusion = cfg.data.occlusion;
    dc.categories = cfg.data.categories;
    dc.seed = derive_seed(cfg.seed, split == "train" ? 1 : 2);
    std::vector<LabeledSequence> seqs(dc.sequences);
    analysis::parallel_for(dc.sequences, c.jobs,
                           [&](std::size_t i) { seqs[i] = sim::generate_sequence(sim::scene_config(dc, i)); });
    fs::remove_all(out / split);
    ingest::save_dataset(out / split, seqs, provenance_line(cfg, "gen"));
    digests[split] = directory_digest(out / split);
    std::cout << split << ": " << seqs.size() << " sequences, digest " << digests[split].get<std::string>()
              << '\n';
  }
  write_json(out / "manifest.json", {{"provenance", provenance(cfg, "gen")}, {"digests", digests}});
  std::ofstream(out / "config.txt") << cfg.to_text();
  return 0;
}

int cmd_train(const Common& c, const std::string& stage) {
  const RunConfig cfg = resolve(c);
  std::vector<int> stages;
  if (stage == "all") stages = {1, 2, 3};
  else if (stage == "1" || stage == "2" || stage == "3") stages = {std::stoi(stage)};
  else throw ConfigError("--stage must be 1, 2, 3 or all");
  const auto data = load_data(data_root(c), "train", cfg);
  if (data.empty()) throw ConfigError("no training sequences found");
  const fs::path out = prepare_out(c.out);
  std::ofstream(out / "config.txt") << cfg.to_text();
  PcetModel model(cfg.model, cfg.seed);
  for (int s : stages) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto curve = train::train_stage(s, model, data, cfg, out);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "stage " << s << ": " << curve.size() << " iterations in " << secs << " s";
    if (!curve.empty()) std::cout << ", loss " << curve.front().loss << " -> " << curve.back().loss;
    std::cout << ", checkpoint " << train::checkpoint_path(out, s).string() << '\n';
  }
  return 0;
}

int cmd_track(const Common& c, const std::string& checkpoint, const std::string& mode_name) {
  const RunConfig cfg = resolve(c);
  const TrackMode mode = parse_mode(mode_name);
  auto model = load_model(cfg, checkpoint);
  const auto data = load_data(data_root(c), "eval", cfg);
  const fs::path out = prepare_out(c.out);
  const auto report = analysis::run_ope_parallel(tracker_factory(*model, mode, cfg.seed), data, c.jobs);
  fs::create_directories(out / "tracks");
  for (const auto& tr : report.traces) {
    json frames = json::array();
    for (std::size_t i = 0; i < tr.predictions.size(); ++i) {
      frames.push_back({{"index", i + 1},
                        {"box", box_json(tr.predictions[i])},
                        {"overlap", tr.frames[i].overlap},
                        {"error", tr.frames[i].error}});
    }
    write_json(out / "tracks" / (tr.name + ".json"), {{"provenance", provenance(cfg, "track")},
                                                      {"sequence", tr.name},
                                                      {"category", tr.category},
                                                      {"mode", to_string(mode)},
                                                      {"frames", frames}});
  }
  write_json(out / "track_metrics.json",
             {{"provenance", provenance(cfg, "track")}, {"mode", to_string(mode)}, {"ope", report_json(report)}});
  std::cout << to_string(mode) << ": success " << report.mean.success << ", precision " << report.mean.precision
            << " over " << report.mean.frames << " frames\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::vector<std::string>& modes) {
  const RunConfig cfg = resolve(c);
  const auto data = load_data(data_root(c), "eval", cfg);
  const fs::path out = prepare_out(c.out);
  std::unique_ptr<PcetModel> model;
  json all = json::object();
  for (const auto& name : modes) {
    metrics::OpeReport report;
    if (name == "oracle") {
      std::vector<metrics::SequenceTrace> traces;
      for (const auto& s : data) {
        if (s.size() < 2) continue;
        metrics::SequenceTrace t{s.name, s.category, {}, {}};
        for (std::size_t i = 1; i < s.size(); ++i) {
          t.predictions.push_back(s.boxes[i]);
          t.frames.push_back(metrics::evaluate_frame(s.boxes[i], s.boxes[i]));
        }
        traces.push_back(std::move(t));
      }
      report = metrics::summarize(std::move(traces));
    } else if (name == "keep") {
      report = analysis::run_ope_parallel([] { return std::make_unique<metrics::KeepBoxTracker>(); }, data, c.jobs);
    } else {
      const TrackMode mode = parse_mode(name);
      if (!model) model = load_model(cfg, checkpoint);
      report = analysis::run_ope_parallel(tracker_factory(*model, mode, cfg.seed), data, c.jobs);
    }
    all[name] = report_json(report);
    write_ope_csv(out / ("ope_" + name + ".csv"), report, provenance_line(cfg, "eval"));
    std::cout << name << ": success " << report.mean.success << ", precision " << report.mean.precision << '\n';
  }
  write_json(out / "ope.json", {{"provenance", provenance(cfg, "eval")}, {"modes", all}});
  return 0;
}

int cmd_compare_arp(const Common& c, const std::string& checkpoint) {
  const RunConfig cfg = resolve(c);
  auto model = load_model(cfg, checkpoint);
  const auto data = load_data(data_root(c), "eval", cfg);
  const fs::path out = prepare_out(c.out);
  const auto cmp = analysis::compare_arp(*model, data, cfg.seed);
  write_json(out / "arp_compare.json", {{"provenance", provenance(cfg, "compare-arp")},
                                        {"arp", report_json(cmp.arp)},
                                        {"top1", report_json(cmp.top1)},
                                        {"scatter_rows", cmp.scatter.size()}});
  std::ofstream f(out / "arp_scatter.csv", std::ios::trunc);
  if (!f) throw ConfigError("cannot write arp_scatter.csv");
  f << "# " << provenance_line(cfg, "compare-arp") << '\n' << "sequence,frame,candidate,score,iou\n";
  f.precision(10);
  for (const auto& r : cmp.scatter)
    f << r.sequence << ',' << r.frame << ',' << r.candidate << ',' << r.score << ',' << r.iou << '\n';
  std::cout << "arp: success " << cmp.arp.mean.success << ", precision " << cmp.arp.mean.precision << '\n'
            << "top1: success " << cmp.top1.mean.success << ", precision " << cmp.top1.mean.precision << '\n';
  return 0;
}

json timing_json(const analysis::VariantTiming& v) {
  return {{"name", v.name},
          {"frames", v.frames},
          {"mean_ms", v.mean_ms},
          {"std_ms", v.std_ms},
          {"backbone_calls_per_frame", v.backbone_calls_per_frame}};
}

int cmd_bench(const Common& c, const std::string& checkpoint, bool untrained) {
  const RunConfig cfg = resolve(c);
  std::unique_ptr<PcetModel> model;
  if (untrained) model = std::make_unique<PcetModel>(cfg.model, cfg.seed);
  else model = load_model(cfg, checkpoint);
  std::vector<LabeledSequence> data;
  if (!c.data.empty() || std::getenv(kDataRootEnv) != nullptr) {
    data = load_data(data_root(c), "eval", cfg);
  } else {
    sim::DatasetConfig dc;
    dc.sequences = 20;
    dc.frames = cfg.data.frames;
    dc.occlusion = cfg.data.occlusion;
    dc.categories = cfg.data.categories;
    dc.seed = derive_seed(cfg.seed, 3);
    data = sim::generate_dataset(dc);
  }
  const fs::path out = prepare_out(c.out);
  const auto r = analysis::run_bench(*model, data, cfg.bench.frames, cfg.bench.warmup, cfg.seed);
  write_json(out / "bench.json", {{"provenance", provenance(cfg, "bench")},
                                  {"variants", {timing_json(r.baseline), timing_json(r.pcet), timing_json(r.crop_merge)}},
                                  {"pcet_added_ms", r.pcet_added_ms},
                                  {"crop_merge_added_ms", r.crop_merge_added_ms},
                                  {"added_ratio", r.added_ratio},
                                  {"backbone_counts_ok", r.counts_ok}});
  for (const auto* v : {&r.baseline, &r.pcet, &r.crop_merge}) {
    std::cout << v->name << ": " << v->mean_ms << " +- " << v->std_ms << " ms, " << v->backbone_calls_per_frame
              << " backbone calls/frame\n";
  }
  std::cout << "added latency: pcet " << r.pcet_added_ms << " ms, crop-merge " << r.crop_merge_added_ms
            << " ms (ratio " << r.added_ratio << ")\n";
  if (!r.counts_ok) throw std::logic_error("backbone invocation counts differ from 2 / 2 / 3");
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"pcet: point-cloud single-object tracker (offset attention, ARP, TKT)"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint, stage = "all", mode = "pcet", modes = "keep,coarse,top1,pcet,crop-merge";
  bool untrained = false;

  auto* gen = app.add_subcommand("gen", "generate the synthetic train/eval datasets");
  add_common(gen, common, false);
  gen->add_option("--jobs", common.jobs, "worker threads");

  auto* tr = app.add_subcommand("train", "run training stages (1 -> 2 -> 3)");
  add_common(tr, common, true);
  tr->add_option("--stage", stage, "1, 2, 3 or all");

  auto* tk = app.add_subcommand("track", "track every eval sequence and write per-frame boxes");
  add_common(tk, common, true);
  tk->add_option("--checkpoint", checkpoint, "model checkpoint");
  tk->add_option("--mode", mode, "coarse, top1, pcet or crop-merge");
  tk->add_option("--jobs", common.jobs, "worker threads");

  auto* ev = app.add_subcommand("eval", "one-pass evaluation of several trackers");
  add_common(ev, common, true);
  ev->add_option("--checkpoint", checkpoint, "model checkpoint");
  ev->add_option("--modes", modes, "comma list of oracle, keep, coarse, top1, pcet, crop-merge");
  ev->add_option("--jobs", common.jobs, "worker threads");

  auto* ca = app.add_subcommand("compare-arp", "ARP vs top-1 decoding, plus score/IoU scatter data");
  add_common(ca, common, true);
  ca->add_option("--checkpoint", checkpoint, "model checkpoint");

  auto* bn = app.add_subcommand("bench", "latency and backbone-invocation structure of the variants");
  add_common(bn, common, true);
  bn->add_option("--checkpoint", checkpoint, "model checkpoint");
  bn->add_flag("--untrained", untrained, "time freshly initialized weights instead of a checkpoint");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(common);
    if (*tr) return cmd_train(common, stage);
    if (*tk) return cmd_track(common, checkpoint, mode);
    if (*ev) {
      std::vector<std::string> list;
      std::stringstream ss(modes);
      for (std::string m; std::getline(ss, m, ',');)
        if (!m.empty()) list.push_back(m);
      return cmd_eval(common, checkpoint, list);
    }
    if (*ca) return cmd_compare_arp(common, checkpoint);
    if (*bn) return cmd_bench(common, checkpoint, untrained);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return ConfigError::kExitCode;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return FormatError::kExitCode;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return NumericError::kExitCode;
  } catch (const std::logic_error& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return FormatError::kExitCode;
  }
  return 2;
}

}  // namespace pcet::cli
