#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "naptune/signal/prep.hpp"
#include "naptune/tune/sleep.hpp"

namespace naptune {

/// One encoder input with the subject-night's sleep and mood.
struct DatasetRecord {
  TimeSeriesWindow window;
  SleepMeasures sleep;
  MoodLabels mood{};
};

struct Dataset {
  Modality modality = Modality::PPG;
  double sampling_rate_hz = 64.0;
  double window_seconds = kWindowSeconds;
  std::vector<DatasetRecord> records;

  /// Subject ids in first-appearance order.
  std::vector<std::string> subject_ids() const {
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (const auto& r : records)
      if (seen.insert(r.window.subject_id).second) ids.push_back(r.window.subject_id);
    return ids;
  }
};

namespace detail {

inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_number(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline nlohmann::ordered_json sleep_to_json(const SleepMeasures& s) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < kSleepMeasureCount; ++i) {
    const std::string key(kSleepMeasureNames[i]);
    if (s.missing[i]) {
      j[key] = nullptr;
    } else {
      j[key] = s.values[i];
    }
  }
  return j;
}

inline SleepMeasures sleep_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw IoError(where + ": 'sleep' must be an object");
  SleepMeasures s;
  for (std::size_t i = 0; i < kSleepMeasureCount; ++i) {
    const std::string key(kSleepMeasureNames[i]);
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
      s.missing.set(i);
      s.values[i] = 0.0;
    } else if (it->is_number()) {
      s.values[i] = it->get<double>();
    } else {
      throw IoError(where + ": sleep measure '" + key + "' must be a number or null");
    }
  }
  return s;
}

}  // namespace detail

/// One JSON line. Samples use the shortest round-trip float representation.
inline std::string record_to_json_line(const DatasetRecord& r) {
  std::string line = "{\"subject_id\":";
  line += nlohmann::json(r.window.subject_id).dump();
  line += ",\"modality\":\"" + std::string(modality_name(r.window.modality)) + "\"";
  line += ",\"fs\":" + detail::format_number(r.window.sampling_rate_hz);
  line += ",\"window_index\":" + std::to_string(r.window.window_index);
  line += ",\"samples\":[";
  for (std::size_t i = 0; i < r.window.samples.size(); ++i) {
    if (i) line += ',';
    line += detail::format_number(r.window.samples[i]);
  }
  line += "],\"sleep\":" + detail::sleep_to_json(r.sleep).dump();
  line += ",\"mood\":[";
  for (std::size_t j = 0; j < kMoodCount; ++j) {
    if (j) line += ',';
    line += std::to_string(r.mood[j]);
  }
  line += "]}";
  return line;
}

inline DatasetRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  for (const char* key : {"subject_id", "modality", "fs", "samples", "sleep", "mood"}) {
    if (!j.contains(key)) throw IoError(where + ": missing field '" + key + "'");
  }
  DatasetRecord r;
  r.window.subject_id = j.at("subject_id").get<std::string>();
  r.window.modality = parse_modality(j.at("modality").get<std::string>());
  r.window.sampling_rate_hz = j.at("fs").get<double>();
  r.window.window_index = j.value("window_index", std::size_t{0});
  const auto& samples = j.at("samples");
  if (!samples.is_array()) throw IoError(where + ": 'samples' must be an array");
  r.window.samples.reserve(samples.size());
  for (const auto& v : samples) r.window.samples.push_back(static_cast<float>(v.get<double>()));
  r.sleep = detail::sleep_from_json(j.at("sleep"), where);
  const auto& mood = j.at("mood");
  if (!mood.is_array() || mood.size() != kMoodCount) throw IoError(where + ": 'mood' must hold 7 entries");
  for (std::size_t k = 0; k < kMoodCount; ++k) {
    const double v = mood[k].get<double>();
    if (v != 0.0 && v != 1.0) throw IoError(where + ": mood values must be 0 or 1");
    r.mood[k] = static_cast<int>(v);
  }
  return r;
}

inline std::string subject_file_name(const std::string& subject_id) { return subject_id + ".jsonl"; }

/// Writes `manifest.json` plus one JSON-lines file per subject.
inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  const auto ids = ds.subject_ids();
  std::map<std::string, std::size_t> counts;
  for (const auto& r : ds.records) ++counts[r.window.subject_id];

  nlohmann::ordered_json manifest;
  manifest["format"] = "naptune-dataset";
  manifest["version"] = 1;
  manifest["modality"] = std::string(modality_name(ds.modality));
  manifest["sampling_rate_hz"] = ds.sampling_rate_hz;
  manifest["native_rate_hz"] = native_rate_hz(ds.modality);
  manifest["window_seconds"] = ds.window_seconds;
  manifest["label_names"] = std::vector<std::string>(kMoodNames.begin(), kMoodNames.end());
  manifest["sleep_measure_names"] = std::vector<std::string>(kSleepMeasureNames.begin(), kSleepMeasureNames.end());
  auto subjects = nlohmann::ordered_json::array();
  for (const auto& id : ids) {
    subjects.push_back({{"id", id}, {"file", subject_file_name(id)}, {"records", counts[id]}});
  }
  manifest["subjects"] = subjects;

  const auto manifest_path = dir / "manifest.json";
  std::ofstream mf(manifest_path, std::ios::binary);
  if (!mf) throw IoError("cannot write " + manifest_path.string());
  mf << manifest.dump(2) << '\n';

  for (const auto& id : ids) {
    const auto path = dir / subject_file_name(id);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& r : ds.records)
      if (r.window.subject_id == id) out << record_to_json_line(r) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
  }
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) throw IoError("cannot open dataset manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.modality = parse_modality(manifest.at("modality").get<std::string>());
    ds.sampling_rate_hz = manifest.at("sampling_rate_hz").get<double>();
    ds.window_seconds = manifest.value("window_seconds", kWindowSeconds);
    for (const auto& s : manifest.at("subjects")) {
      const std::string id = s.at("id").get<std::string>();
      const std::string file = s.value("file", subject_file_name(id));
      const auto path = dir / file;
      std::ifstream in(path, std::ios::binary);
      if (!in) throw IoError("cannot open subject file " + path.string());
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
          throw IoError(where + ": " + e.what());
        }
        auto rec = record_from_json(j, where);
        if (rec.window.subject_id != id) throw IoError(where + ": record subject does not match manifest entry " + id);
        ds.records.push_back(std::move(rec));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace naptune
