#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "naptune/core/error.hpp"
#include "naptune/encoder/encoder.hpp"
#include "naptune/tensor/tensor.hpp"

namespace naptune {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct CheckpointTensor {
  std::string name;     // full dotted path, e.g. "backbone.layers.0.attn.wq"
  std::string section;  // backbone | projector | prompts | sleep_proj | head
  Tensor tensor;
  bool frozen = false;
};

/// In-memory form of a checkpoint directory (`manifest.json` + `weights.bin`).
struct Checkpoint {
  std::string kind;  // "pretrained" or "tuned"
  std::string mode;  // tune mode for tuned checkpoints, empty otherwise
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const Tensor& get(const std::string& name) const {
    const auto* t = find(name);
    if (!t) throw IoError("checkpoint has no tensor named '" + name + "'");
    return t->tensor;
  }
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Concatenated little-endian f32 payload of the tensors in `section`
/// (all tensors when `section` is empty), in checkpoint order.
inline std::vector<char> checkpoint_bytes(const Checkpoint& ck, const std::string& section = "") {
  std::vector<char> out;
  for (const auto& t : ck.tensors) {
    if (!section.empty() && t.section != section) continue;
    const auto d = t.tensor.data();
    const auto* p = reinterpret_cast<const char*>(d.data());
    out.insert(out.end(), p, p + d.size() * sizeof(float));
  }
  return out;
}

inline std::string checkpoint_hash(const Checkpoint& ck, const std::string& section = "") {
  const auto bytes = checkpoint_bytes(ck, section);
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

inline void write_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  nlohmann::ordered_json manifest;
  manifest["format"] = "naptune-checkpoint";
  manifest["version"] = 1;
  manifest["kind"] = ck.kind;
  if (!ck.mode.empty()) manifest["mode"] = ck.mode;
  auto list = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& t : ck.tensors) {
    const std::size_t len = t.tensor.numel() * sizeof(float);
    nlohmann::ordered_json e;
    e["name"] = t.name;
    e["section"] = t.section;
    e["shape"] = t.tensor.shape();
    e["dtype"] = "f32";
    e["offset"] = offset;
    e["length"] = len;
    e["frozen"] = t.frozen;
    list.push_back(std::move(e));
    offset += len;
  }
  manifest["tensors"] = std::move(list);
  manifest["config"] = ck.config;
  for (auto it = ck.extra.begin(); it != ck.extra.end(); ++it) manifest[it.key()] = it.value();

  const auto bytes = checkpoint_bytes(ck);
  manifest["content_hash"] = "fnv1a64:" + hex64(fnv1a64(bytes.data(), bytes.size()));

  const auto wpath = dir / "weights.bin";
  std::ofstream wf(wpath, std::ios::binary);
  if (!wf) throw IoError("cannot write " + wpath.string());
  wf.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!wf) throw IoError("write failed for " + wpath.string());

  const auto mpath = dir / "manifest.json";
  std::ofstream mf(mpath, std::ios::binary);
  if (!mf) throw IoError("cannot write " + mpath.string());
  mf << manifest.dump(2) << '\n';
}

inline Checkpoint read_checkpoint(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  std::ifstream mf(mpath, std::ios::binary);
  if (!mf) throw IoError("cannot open checkpoint manifest " + mpath.string());
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(mpath.string() + ": " + e.what());
  }
  const auto wpath = dir / "weights.bin";
  std::ifstream wf(wpath, std::ios::binary);
  if (!wf) throw IoError("cannot open checkpoint weights " + wpath.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(wf)), std::istreambuf_iterator<char>());

  Checkpoint ck;
  try {
    ck.kind = manifest.at("kind").get<std::string>();
    ck.mode = manifest.value("mode", std::string{});
    ck.config = manifest.value("config", nlohmann::ordered_json::object());
    for (auto it = manifest.begin(); it != manifest.end(); ++it) {
      static const std::vector<std::string> known = {"format", "version", "kind", "mode",
                                                     "tensors", "config", "content_hash"};
      if (std::find(known.begin(), known.end(), it.key()) == known.end()) ck.extra[it.key()] = it.value();
    }
    for (const auto& e : manifest.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      if (e.at("dtype").get<std::string>() != "f32") throw IoError(name + ": unsupported dtype");
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto length = e.at("length").get<std::size_t>();
      if (length != shape_numel(shape) * sizeof(float) || offset + length > bytes.size()) {
        throw IoError(wpath.string() + ": tensor '" + name + "' lies outside the weights file");
      }
      std::vector<float> data(shape_numel(shape));
      std::memcpy(data.data(), bytes.data() + offset, length);
      ck.tensors.push_back({name, e.at("section").get<std::string>(), Tensor(shape, std::move(data)),
                            e.value("frozen", false)});
    }
    const auto expected = manifest.at("content_hash").get<std::string>();
    const auto actual = "fnv1a64:" + hex64(fnv1a64(bytes.data(), bytes.size()));
    if (expected != actual) throw IoError(dir.string() + ": content hash mismatch (" + expected + " vs " + actual + ")");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(mpath.string() + ": " + e.what());
  }
  return ck;
}

/// Appends encoder tensors as `<prefix><name>`.
inline void append_encoder(Checkpoint& ck, EncoderWeights<float>& w, const std::string& prefix,
                           const std::string& section, bool frozen) {
  w.visit([&](const std::string& name, Tensor& t) { ck.tensors.push_back({prefix + name, section, t.detach(), frozen}); });
}

/// Copies `<prefix><name>` tensors from the checkpoint into freshly allocated
/// encoder weights shaped by `cfg`.
inline EncoderWeights<float> load_encoder(const Checkpoint& ck, const EncoderConfig& cfg, const std::string& prefix) {
  Rng dummy(0);
  auto w = EncoderWeights<float>::init(cfg, dummy);
  w.visit([&](const std::string& name, Tensor& t) {
    const auto& src = ck.get(prefix + name);
    if (src.shape() != t.shape()) {
      throw DimensionError("checkpoint tensor " + prefix + name + " has shape " + shape_str(src.shape()) +
                           " but the config expects " + shape_str(t.shape()));
    }
    t = Tensor(src.shape(), std::vector<float>(src.data().begin(), src.data().end()));
  });
  return w;
}

}  // namespace naptune
