#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "naptune/core/error.hpp"
#include "naptune/encoder/encoder.hpp"
#include "naptune/simclr/simclr.hpp"
#include "naptune/synth/synth.hpp"
#include "naptune/tune/model.hpp"

namespace naptune {

using ojson = nlohmann::ordered_json;

struct EvalConfig {
  std::size_t folds = 3;
  std::vector<double> fractions{0.25, 0.5, 0.75, 1.0};
  std::vector<TuneMode> modes{TuneMode::NapTune, TuneMode::Scratch};
  std::vector<std::uint64_t> seeds;  // sweep seeds; empty means the run seed
  double threshold = 0.5;
};

/// Everything a command may need. Paths are resolved relative to the working
/// directory; empty means "not given".
struct RunConfig {
  std::string dataset;
  std::string pretrained;
  std::string model;
  std::string out = "out";
  std::uint64_t seed = 0;
  GeneratorConfig generator;
  EncoderConfig encoder;
  PretrainConfig pretrain;
  TuneConfig tune;
  EvalConfig eval;
};

namespace detail {

// Reads one JSON object, remembering which keys were consumed so unknown keys
// can be reported. All problems go to a shared error list.
class ObjectReader {
 public:
  ObjectReader(const ojson& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) {
      errors_.push_back((path_.empty() ? std::string("config") : path_) + ": expected a JSON object");
      ok_ = false;
    }
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  void get(const std::string& key, T& out) {
    const ojson* v = find(key);
    if (!v) return;
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!v->is_number_unsigned()) {
        errors_.push_back(key_path(key) + ": expected a non-negative integer");
        return;
      }
    }
    try {
      out = v->get<T>();
    } catch (const nlohmann::json::exception&) {
      errors_.push_back(key_path(key) + ": wrong type (got " + std::string(v->type_name()) + ")");
    }
  }

  template <class T, class Parse>
  void get_enum(const std::string& key, T& out, Parse parse) {
    const ojson* v = find(key);
    if (!v) return;
    if (!v->is_string()) {
      errors_.push_back(key_path(key) + ": expected a string");
      return;
    }
    try {
      out = parse(v->get<std::string>());
    } catch (const Error& e) {
      errors_.push_back(key_path(key) + ": " + e.what());
    }
  }

  void child(const std::string& key, const std::function<void(ObjectReader&)>& fn) {
    const ojson* v = find(key);
    if (!v) return;
    ObjectReader r(*v, key_path(key), errors_);
    if (r.ok_) {
      fn(r);
      r.finish();
    }
  }

  const ojson* find(const std::string& key) {
    if (!ok_) return nullptr;
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void error(const std::string& key, const std::string& msg) { errors_.push_back(key_path(key) + ": " + msg); }

  void finish() {
    if (!ok_) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) errors_.push_back(key_path(it.key()) + ": unknown key");
    }
  }

 private:
  const ojson& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
  bool ok_ = true;
};

template <class F>
void check(std::vector<std::string>& errors, F&& validate) {
  try {
    validate();
  } catch (const Error& e) {
    errors.push_back(e.what());
  }
}

inline void read_label_array(ObjectReader& r, const std::string& key, std::array<double, kMoodCount>& out) {
  const ojson* v = r.find(key);
  if (!v) return;
  if (!v->is_object()) {
    r.error(key, "expected an object keyed by mood label");
    return;
  }
  std::array<double, kMoodCount> vals{};
  for (auto it = v->begin(); it != v->end(); ++it) {
    std::size_t j = kMoodCount;
    for (std::size_t k = 0; k < kMoodCount; ++k)
      if (kMoodNames[k] == it.key()) j = k;
    if (j == kMoodCount) {
      r.error(key, "unknown mood label '" + it.key() + "'");
    } else if (!it->is_number()) {
      r.error(key, "value for '" + it.key() + "' must be a number");
    } else {
      vals[j] = it->get<double>();
    }
  }
  out = vals;
}

inline void read_sleep_weights(ObjectReader& r, SleepWeightMatrix& out) {
  const ojson* v = r.find("sleep_weights");
  if (!v) return;
  if (!v->is_object()) {
    r.error("sleep_weights", "expected {label: {measure: weight}}");
    return;
  }
  SleepWeightMatrix w{};
  for (auto it = v->begin(); it != v->end(); ++it) {
    std::size_t j = kMoodCount;
    for (std::size_t k = 0; k < kMoodCount; ++k)
      if (kMoodNames[k] == it.key()) j = k;
    if (j == kMoodCount || !it->is_object()) {
      r.error("sleep_weights", "entry '" + it.key() + "' must be a known mood label mapping to an object");
      continue;
    }
    for (auto m = it->begin(); m != it->end(); ++m) {
      try {
        w[j][sleep_measure_index(m.key())] = m->get<double>();
      } catch (const std::exception& e) {
        r.error("sleep_weights", it.key() + "." + m.key() + ": " + e.what());
      }
    }
  }
  out = w;
}

template <class T>
ojson labeled(const std::array<T, kMoodCount>& a) {
  ojson o = ojson::object();
  for (std::size_t j = 0; j < kMoodCount; ++j) o[std::string(kMoodNames[j])] = a[j];
  return o;
}

}  // namespace detail

/// Parses a run configuration. Unknown keys and invalid values are collected
/// and reported together in one ConfigError.
inline RunConfig parse_run_config(const ojson& j) {
  std::vector<std::string> errors;
  RunConfig c;
  detail::ObjectReader root(j, "", errors);
  root.get("dataset", c.dataset);
  root.get("pretrained", c.pretrained);
  root.get("model", c.model);
  root.get("out", c.out);
  root.get("seed", c.seed);
  root.child("generator", [&](detail::ObjectReader& r) {
    auto& g = c.generator;
    r.get("n_subjects", g.n_subjects);
    r.get("windows_per_subject", g.windows_per_subject);
    r.get("nights_per_subject", g.nights_per_subject);
    r.get_enum("modality", g.modality, parse_modality);
    r.get("noise", g.noise);
    r.get("subject_share", g.subject_share);
    std::string uninformative;
    r.get("uninformative_measure", uninformative);
    if (!uninformative.empty()) {
      try {
        g.uninformative_measure = sleep_measure_index(uninformative);
      } catch (const Error& e) {
        r.error("uninformative_measure", e.what());
      }
    }
    detail::read_sleep_weights(r, g.sleep_weights);
    detail::read_label_array(r, "signal_weights", g.signal_weights);
    detail::read_label_array(r, "label_bias", g.label_bias);
  });
  root.child("encoder", [&](detail::ObjectReader& r) {
    r.child("conv", [&](detail::ObjectReader& cr) {
      auto& cv = c.encoder.conv;
      cr.get("omega_blocks", cv.omega_blocks);
      cr.get("k_long", cv.k_long);
      cr.get("s_long", cv.s_long);
      cr.get("k_short", cv.k_short);
      cr.get("s_short", cv.s_short);
      cr.get("channels", cv.channels);
      cr.get("linear_dim", cv.linear_dim);
      cr.get("dropout", cv.dropout);
      cr.get("groupnorm_groups", cv.groupnorm_groups);
    });
    r.child("transformer", [&](detail::ObjectReader& tr) {
      auto& t = c.encoder.transformer;
      tr.get("layers", t.layers);
      tr.get("dim", t.dim);
      tr.get("heads", t.heads);
      tr.get("ff_dim", t.ff_dim);
      tr.get("dropout", t.dropout);
    });
  });
  root.child("pretrain", [&](detail::ObjectReader& r) {
    auto& p = c.pretrain;
    r.get("temperature", p.temperature);
    r.get("projection_dim", p.projection_dim);
    r.get("batch_size", p.batch_size);
    r.get("epochs", p.epochs);
    r.get("lr", p.lr);
    r.get("warmup_fraction", p.warmup_fraction);
    r.get("weight_decay", p.weight_decay);
    r.get("cosine_similarity", p.cosine_similarity);
    r.child("augment", [&](detail::ObjectReader& ar) {
      auto& a = p.augment;
      ar.get("segments_r", a.segments_r);
      ar.get("warp_sigma_pct", a.warp_sigma_pct);
      ar.get("snr_db_range", a.snr_db_range);
      ar.get("scale_range", a.scale_range);
    });
  });
  root.child("tune", [&](detail::ObjectReader& r) {
    auto& t = c.tune;
    r.get_enum("mode", t.mode, parse_tune_mode);
    r.get("epochs", t.epochs);
    r.get("base_lr", t.base_lr);
    r.get("warmup_fraction", t.warmup_fraction);
    r.get("batch_size", t.batch_size);
    r.get("weight_decay", t.weight_decay);
    r.get("prompt_tokens", t.prompt_tokens);
    r.get_enum("prompt_mode", t.prompt_mode, parse_prompt_mode);
    r.get("pool_exclude_prompts", t.pool_exclude_prompts);
    r.get("prompt_init_std", t.prompt_init_std);
    r.get("sleep_hidden", t.sleep_hidden);
    r.get("head_dropout", t.head_dropout);
  });
  root.child("eval", [&](detail::ObjectReader& r) {
    auto& e = c.eval;
    r.get("folds", e.folds);
    r.get("fractions", e.fractions);
    r.get("seeds", e.seeds);
    r.get("threshold", e.threshold);
    const ojson* modes = r.find("modes");
    if (modes) {
      if (!modes->is_array()) {
        r.error("modes", "expected an array of mode names");
      } else {
        e.modes.clear();
        for (const auto& m : *modes) {
          try {
            e.modes.push_back(parse_tune_mode(m.get<std::string>()));
          } catch (const std::exception& ex) {
            r.error("modes", ex.what());
          }
        }
      }
    }
  });
  root.finish();

  detail::check(errors, [&] { c.generator.validate(); });
  detail::check(errors, [&] { c.encoder.validate(); });
  detail::check(errors, [&] { c.pretrain.validate(); });
  detail::check(errors, [&] { c.tune.validate(); });
  if (c.eval.folds < 2) errors.push_back("eval.folds must be >= 2");
  for (double f : c.eval.fractions)
    if (!(f > 0.0 && f <= 1.0)) errors.push_back("eval.fractions values must lie in (0, 1]");
  if (!(c.eval.threshold >= 0.0)) errors.push_back("eval.threshold must be >= 0");

  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " config problem(s): ";
    for (std::size_t i = 0; i < errors.size(); ++i) msg += (i ? "; " : "") + errors[i];
    throw ConfigError(msg);
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

inline ojson encoder_config_json(const EncoderConfig& e) {
  ojson j;
  j["conv"] = {{"omega_blocks", e.conv.omega_blocks}, {"k_long", e.conv.k_long},
               {"s_long", e.conv.s_long},             {"k_short", e.conv.k_short},
               {"s_short", e.conv.s_short},           {"channels", e.conv.channels},
               {"linear_dim", e.conv.linear_dim},     {"dropout", e.conv.dropout},
               {"groupnorm_groups", e.conv.groupnorm_groups}};
  j["transformer"] = {{"layers", e.transformer.layers},
                      {"dim", e.transformer.dim},
                      {"heads", e.transformer.heads},
                      {"ff_dim", e.transformer.ff_dim},
                      {"dropout", e.transformer.dropout}};
  return j;
}

inline ojson tune_config_json(const TuneConfig& t) {
  return {{"mode", std::string(tune_mode_name(t.mode))},
          {"epochs", t.epochs},
          {"base_lr", t.base_lr},
          {"warmup_fraction", t.warmup_fraction},
          {"batch_size", t.batch_size},
          {"weight_decay", t.weight_decay},
          {"prompt_tokens", t.prompt_tokens},
          {"prompt_mode", std::string(prompt_mode_name(t.prompt_mode))},
          {"pool_exclude_prompts", t.pool_exclude_prompts},
          {"prompt_init_std", t.prompt_init_std},
          {"sleep_hidden", t.sleep_hidden},
          {"head_dropout", t.head_dropout}};
}

/// Fully resolved configuration, in the same shape parse_run_config accepts.
inline ojson to_json(const RunConfig& c) {
  ojson j;
  j["dataset"] = c.dataset;
  j["pretrained"] = c.pretrained;
  j["model"] = c.model;
  j["out"] = c.out;
  j["seed"] = c.seed;
  const auto& g = c.generator;
  ojson sw = ojson::object();
  for (std::size_t k = 0; k < kMoodCount; ++k) {
    ojson row = ojson::object();
    for (std::size_t i = 0; i < kSleepMeasureCount; ++i)
      if (g.sleep_weights[k][i] != 0.0) row[std::string(kSleepMeasureNames[i])] = g.sleep_weights[k][i];
    sw[std::string(kMoodNames[k])] = row;
  }
  j["generator"] = {{"n_subjects", g.n_subjects},
                    {"windows_per_subject", g.windows_per_subject},
                    {"nights_per_subject", g.nights_per_subject},
                    {"modality", std::string(modality_name(g.modality))},
                    {"noise", g.noise},
                    {"subject_share", g.subject_share},
                    {"uninformative_measure", std::string(kSleepMeasureNames[g.uninformative_measure])},
                    {"sleep_weights", sw},
                    {"signal_weights", detail::labeled(g.signal_weights)},
                    {"label_bias", detail::labeled(g.label_bias)}};
  j["encoder"] = encoder_config_json(c.encoder);
  const auto& p = c.pretrain;
  j["pretrain"] = {{"temperature", p.temperature},
                   {"projection_dim", p.projection_dim},
                   {"batch_size", p.batch_size},
                   {"epochs", p.epochs},
                   {"lr", p.lr},
                   {"warmup_fraction", p.warmup_fraction},
                   {"weight_decay", p.weight_decay},
                   {"cosine_similarity", p.cosine_similarity},
                   {"augment",
                    {{"segments_r", p.augment.segments_r},
                     {"warp_sigma_pct", p.augment.warp_sigma_pct},
                     {"snr_db_range", p.augment.snr_db_range},
                     {"scale_range", p.augment.scale_range}}}};
  j["tune"] = tune_config_json(c.tune);
  ojson modes = ojson::array();
  for (auto m : c.eval.modes) modes.push_back(std::string(tune_mode_name(m)));
  j["eval"] = {{"folds", c.eval.folds},
               {"fractions", c.eval.fractions},
               {"modes", modes},
               {"seeds", c.eval.seeds},
               {"threshold", c.eval.threshold}};
  return j;
}

}  // namespace naptune
