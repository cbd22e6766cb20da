#pragma once

#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "naptune/app/config.hpp"
#include "naptune/encoder/checkpoint.hpp"
#include "naptune/eval/harness.hpp"
#include "naptune/eval/report.hpp"
#include "naptune/signal/dataset.hpp"
#include "naptune/simclr/simclr.hpp"
#include "naptune/synth/synth.hpp"
#include "naptune/tune/train.hpp"

namespace naptune {

namespace fs = std::filesystem;

struct CommandContext {
  RunConfig config;
  std::size_t jobs = 1;
  std::ostream* log = nullptr;

  fs::path out() const { return fs::path(config.out); }

  template <class... Args>
  void note(const Args&... args) const {
    if (!log) return;
    (*log << ... << args) << '\n';
  }
};

namespace detail {

inline void echo_config(const CommandContext& ctx, const std::string& command) {
  ojson j;
  j["command"] = command;
  j["config"] = to_json(ctx.config);
  write_text(ctx.out() / "config.resolved.json", j.dump(2) + "\n");
}

inline Dataset load_dataset(const RunConfig& c) {
  if (c.dataset.empty()) throw ConfigError("dataset: a dataset directory is required for this command");
  return read_dataset(c.dataset);
}

inline std::optional<EncoderWeights<float>> load_pretrained(const RunConfig& c, bool required,
                                                            const std::string& why) {
  if (c.pretrained.empty()) {
    if (required) throw ConfigError("pretrained: a pre-trained checkpoint is required for " + why);
    return std::nullopt;
  }
  const auto ck = read_checkpoint(c.pretrained);
  return load_encoder(ck, c.encoder, "backbone.");
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

}  // namespace detail

/// gen-data: writes <out>/dataset.
inline fs::path cmd_gen_data(const CommandContext& ctx) {
  auto g = ctx.config.generator;
  g.seed = ctx.config.seed;
  const auto dir = ctx.out() / "dataset";
  const auto ds = gen_dataset(g);
  write_dataset(dir, ds);
  detail::echo_config(ctx, "gen-data");
  ctx.note("gen-data: ", ds.records.size(), " records from ", g.n_subjects, " subjects -> ", dir.string());
  return dir;
}

/// pretrain: SimCLR on the dataset windows; writes <out>/checkpoint and
/// <out>/pretrain_metrics.csv.
inline fs::path cmd_pretrain(const CommandContext& ctx) {
  const auto& c = ctx.config;
  const auto ds = detail::load_dataset(c);
  std::vector<std::vector<float>> windows;
  windows.reserve(ds.records.size());
  for (const auto& r : ds.records) windows.push_back(r.window.samples);
  auto pc = c.pretrain;
  pc.seed = c.seed;
  pc.augment.seed = c.seed;
  auto res = pretrain(windows, c.encoder, pc, [&](const PretrainStep& s) {
    if (s.step % 50 == 0) ctx.note("pretrain: step ", s.step, " lr=", detail::fmt(s.lr), " loss=", detail::fmt(s.loss));
  });
  auto ck = pretrained_checkpoint(res);
  ck.config["encoder"] = encoder_config_json(c.encoder);
  ck.config["pretrain"] = to_json(c)["pretrain"];
  const auto dir = ctx.out() / "checkpoint";
  write_checkpoint(dir, ck);
  std::string csv = "step,lr,loss\n";
  for (const auto& s : res.curve) {
    csv += std::to_string(s.step) + "," + ReportTable::number(s.lr) + "," + ReportTable::number(s.loss) + "\n";
  }
  write_text(ctx.out() / "pretrain_metrics.csv", csv);
  detail::echo_config(ctx, "pretrain");
  ctx.note("pretrain: ", res.curve.size(), " steps -> ", dir.string());
  return dir;
}

/// tune: trains on every record of the dataset; writes <out>/model and
/// <out>/tune_metrics.csv.
inline fs::path cmd_tune(const CommandContext& ctx) {
  const auto& c = ctx.config;
  const auto ds = detail::load_dataset(c);
  auto tc = c.tune;
  tc.seed = c.seed;
  const auto pretrained = detail::load_pretrained(c, tc.needs_pretrained(),
                                                  "tune mode " + std::string(tune_mode_name(tc.mode)));
  auto res = tune(ds.records, c.encoder, tc, pretrained, [&](const TuneStep& s) {
    if (s.step % 50 == 0) {
      ctx.note("tune: epoch ", s.epoch, " step ", s.step, " lr=", detail::fmt(s.lr), " loss=", detail::fmt(s.loss));
    }
  });
  auto ck = model_checkpoint(res.model);
  if (tc.backbone_frozen() && pretrained) {
    Checkpoint before;
    auto copy = pretrained->clone();
    append_encoder(before, copy, "backbone.", "backbone", true);
    if (checkpoint_bytes(before, "backbone") != checkpoint_bytes(ck, "backbone")) {
      throw ContractError("tune: frozen backbone changed during training");
    }
  }
  ck.config["encoder"] = encoder_config_json(c.encoder);
  ck.config["tune"] = tune_config_json(tc);
  const auto dir = ctx.out() / "model";
  write_checkpoint(dir, ck);
  std::string csv = "step,epoch,lr,loss\n";
  for (const auto& s : res.curve) {
    csv += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," + ReportTable::number(s.lr) + "," +
           ReportTable::number(s.loss) + "\n";
  }
  write_text(ctx.out() / "tune_metrics.csv", csv);
  detail::echo_config(ctx, "tune");
  ctx.note("tune: mode ", tune_mode_name(tc.mode), ", ", res.model.params.trainable_count(), " trainable of ",
           res.model.params.total_count(), " -> ", dir.string());
  return dir;
}

namespace detail {

// The tune section to evaluate: the one stored in `model` when given,
// otherwise the run config's.
inline TuneConfig resolve_tune_config(const RunConfig& c) {
  if (c.model.empty()) return c.tune;
  const auto ck = read_checkpoint(c.model);
  if (ck.kind != "tuned" || !ck.config.contains("tune")) {
    throw ConfigError("model: " + c.model + " is not a tuned checkpoint");
  }
  ojson j;
  j["tune"] = ck.config["tune"];
  return parse_run_config(j).tune;
}

inline ExperimentSpec experiment_spec(const CommandContext& ctx, const TuneConfig& tc) {
  const auto& c = ctx.config;
  ExperimentSpec spec;
  spec.encoder = c.encoder;
  spec.tune = tc;
  spec.folds = c.eval.folds;
  spec.seed = c.seed;
  spec.threshold = c.eval.threshold;
  spec.jobs = ctx.jobs;
  return spec;
}

inline ojson sleep_section(const CrossValResult& cv) {
  ojson j;
  j["measures"] = std::vector<std::string>(kSleepMeasureNames.begin(), kSleepMeasureNames.end());
  auto folds = ojson::array();
  for (const auto& f : cv.folds) folds.push_back({{"fold", f.fold}, {"mean", f.sleep_norm.mean}, {"std", f.sleep_norm.stddev}});
  j["fold_normalization"] = folds;
  return j;
}

inline void write_report(const CommandContext& ctx, const ojson& report, const ReportTable& table) {
  write_text(ctx.out() / "report.json", report.dump(2) + "\n");
  write_text(ctx.out() / "report.csv", table.str());
}

}  // namespace detail

/// eval: cross-subject k-fold evaluation of one mode; writes report.json and
/// report.csv. Sleep-using modes also get "sleep" and "ablation" sections.
inline ojson cmd_eval(const CommandContext& ctx) {
  const auto& c = ctx.config;
  const auto ds = detail::load_dataset(c);
  const auto tc = detail::resolve_tune_config(c);
  auto spec = detail::experiment_spec(ctx, tc);
  spec.pretrained = detail::load_pretrained(c, tc.needs_pretrained(), "tune mode " + std::string(tune_mode_name(tc.mode)));
  spec.keep_models = tc.uses_sleep();
  const auto cv = cross_validate(ds, spec);
  ojson report;
  report["command"] = "eval";
  report["dataset_records"] = ds.records.size();
  report["folds_k"] = spec.folds;
  report["cross_validation"] = cross_validation_json(cv);
  report["per_label_f1"] = metrics_json(cv.aggregate)["per_label_f1"];
  ReportTable table;
  add_cross_validation_rows(table, cv);
  if (tc.uses_sleep()) {
    report["sleep"] = detail::sleep_section(cv);
    const auto ab = ablate_all_measures(ds, cv, spec.folds, spec.seed, spec.threshold);
    report["ablation"] = ablation_json(ab);
    add_ablation_rows(table, std::string(tune_mode_name(tc.mode)), ab);
  }
  detail::write_report(ctx, report, table);
  detail::echo_config(ctx, "eval");
  ctx.note("eval: ", tune_mode_name(tc.mode), " weighted F1 ", detail::fmt(cv.aggregate.weighted_f1), ", accuracy ",
           detail::fmt(cv.aggregate.mean_accuracy));
  return report;
}

/// ablate: test-time masking of each of the 9 sleep measures.
inline ojson cmd_ablate(const CommandContext& ctx) {
  const auto& c = ctx.config;
  const auto tc = detail::resolve_tune_config(c);
  if (!tc.uses_sleep()) {
    throw ConfigError("tune.mode: ablation needs a mode that uses sleep measures, got " +
                      std::string(tune_mode_name(tc.mode)));
  }
  const auto ds = detail::load_dataset(c);
  auto spec = detail::experiment_spec(ctx, tc);
  spec.pretrained = detail::load_pretrained(c, tc.needs_pretrained(), "tune mode " + std::string(tune_mode_name(tc.mode)));
  spec.keep_models = true;
  const auto cv = cross_validate(ds, spec);
  const auto ab = ablate_all_measures(ds, cv, spec.folds, spec.seed, spec.threshold);
  ojson report;
  report["command"] = "ablate";
  report["mode"] = std::string(tune_mode_name(tc.mode));
  report["seed"] = spec.seed;
  report["ablation"] = ablation_json(ab);
  report["sleep"] = detail::sleep_section(cv);
  ReportTable table;
  const std::string mode(tune_mode_name(tc.mode));
  table.add_metrics(mode, "mean", 1.0, "", ab.baseline);
  add_ablation_rows(table, mode, ab);
  detail::write_report(ctx, report, table);
  detail::echo_config(ctx, "ablate");
  for (std::size_t i = 0; i < kSleepMeasureCount; ++i) {
    ctx.note("ablate: ", kSleepMeasureNames[i], " dF1=", detail::fmt(ab.masked[i].weighted_f1 - ab.baseline.weighted_f1));
  }
  return report;
}

/// sweep: cross-validation per (mode, training fraction, seed).
inline ojson cmd_sweep(const CommandContext& ctx) {
  const auto& c = ctx.config;
  const auto ds = detail::load_dataset(c);
  bool need_pretrained = false;
  for (auto m : c.eval.modes) {
    TuneConfig t;
    t.mode = m;
    need_pretrained = need_pretrained || t.needs_pretrained();
  }
  const auto pretrained = detail::load_pretrained(c, need_pretrained, "the sweep modes");
  const auto seeds = c.eval.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : c.eval.seeds;
  ojson cells = ojson::array();
  ReportTable table;
  ojson summary = ojson::array();
  for (auto mode : c.eval.modes) {
    double full_f1 = 0.0;
    bool have_full = false;
    std::vector<std::pair<double, double>> per_fraction;
    for (double f : c.eval.fractions) {
      double mean_f1 = 0.0;
      for (auto seed : seeds) {
        auto tc = c.tune;
        tc.mode = mode;
        auto spec = detail::experiment_spec(ctx, tc);
        spec.seed = seed;
        spec.fraction = f;
        spec.pretrained = pretrained;
        const auto cv = cross_validate(ds, spec);
        cells.push_back(cross_validation_json(cv));
        const std::string prefix = "seed=" + std::to_string(seed) + "/";
        for (const auto& fr : cv.folds) {
          table.add_metrics(std::string(tune_mode_name(mode)), prefix + "fold=" + std::to_string(fr.fold), f, "",
                            fr.metrics);
        }
        table.add_metrics(std::string(tune_mode_name(mode)), prefix + "mean", f, "", cv.aggregate);
        mean_f1 += cv.aggregate.weighted_f1 / static_cast<double>(seeds.size());
        ctx.note("sweep: ", tune_mode_name(mode), " fraction ", f, " seed ", seed, " F1 ",
                 detail::fmt(cv.aggregate.weighted_f1));
      }
      table.add(std::string(tune_mode_name(mode)), "mean", f, "", "weighted_f1_seed_mean", mean_f1);
      per_fraction.emplace_back(f, mean_f1);
      if (f == 1.0) {
        full_f1 = mean_f1;
        have_full = true;
      }
    }
    for (const auto& [f, v] : per_fraction) {
      ojson s{{"mode", std::string(tune_mode_name(mode))}, {"fraction", f}, {"weighted_f1", v}};
      if (have_full) s["drop_from_full"] = full_f1 - v;
      summary.push_back(s);
    }
  }
  ojson report;
  report["command"] = "sweep";
  report["seeds"] = seeds;
  report["fractions"] = c.eval.fractions;
  report["summary"] = summary;
  report["cells"] = cells;
  detail::write_report(ctx, report, table);
  detail::echo_config(ctx, "sweep");
  return report;
}

struct InspectSummary {
  std::size_t total = 0;
  std::size_t trainable = 0;
  double trainable_fraction = 0.0;
  std::string text;
};

/// Human-readable checkpoint summary: names, shapes, sections, frozen flags,
/// parameter counts.
inline InspectSummary cmd_inspect(const fs::path& dir) {
  const auto ck = read_checkpoint(dir);
  InspectSummary s;
  std::ostringstream os;
  os << "checkpoint: " << dir.string() << "\n";
  os << "kind: " << ck.kind;
  if (!ck.mode.empty()) os << "  mode: " << ck.mode;
  os << "\n";
  std::size_t width = 4;
  for (const auto& t : ck.tensors) width = std::max(width, t.name.size());
  for (const auto& t : ck.tensors) {
    s.total += t.tensor.numel();
    if (!t.frozen) s.trainable += t.tensor.numel();
    os << "  " << std::left << std::setw(static_cast<int>(width)) << t.name << "  " << std::setw(14)
       << shape_str(t.tensor.shape()) << "  " << std::setw(10) << t.section << "  "
       << (t.frozen ? "frozen" : "trainable") << "\n";
  }
  s.trainable_fraction = s.total ? static_cast<double>(s.trainable) / static_cast<double>(s.total) : 0.0;
  os << "tensors: " << ck.tensors.size() << "\n";
  os << "total parameters: " << s.total << "\n";
  os << "trainable parameters: " << s.trainable << "\n";
  os << "trainable fraction: " << std::fixed << std::setprecision(4) << 100.0 * s.trainable_fraction << "%\n";
  os << "content hash: fnv1a64:" << checkpoint_hash(ck) << "\n";
  s.text = os.str();
  return s;
}

}  // namespace naptune
