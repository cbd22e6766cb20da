#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "naptune/naptune.hpp"

using namespace naptune;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

ojson mini_config() { return ojson::parse(slurp(fs::path(NAPTUNE_SOURCE_DIR) / "configs" / "mini.json")); }

struct Run {
  int status = 0;
  std::string out, err;
};

Run cli(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + NAPTUNE_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                          err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

// Every file under a directory, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return files;
}

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("naptune_app_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("config parser lists every problem at once") {
  auto j = mini_config();
  j["bogus"] = 1;
  j["tune"]["epochz"] = 3;
  j["tune"]["mode"] = "linear_probe";
  j["encoder"]["transformer"]["heads"] = 3;
  j["pretrain"]["batch_size"] = -4;
  try {
    parse_run_config(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bogus") != std::string::npos);
    CHECK(msg.find("tune.epochz") != std::string::npos);
    CHECK(msg.find("linear_probe") != std::string::npos);
    CHECK(msg.find("heads") != std::string::npos);
    CHECK(msg.find("pretrain.batch_size") != std::string::npos);
  }
  const auto c = parse_run_config(mini_config());
  CHECK(c.seed == 7);
  CHECK(c.encoder.transformer.dim == 16);
  CHECK(c.eval.modes == std::vector<TuneMode>{TuneMode::NapTune, TuneMode::Scratch});
  // Defaults survive when a section is absent.
  const auto d = parse_run_config(ojson::object());
  CHECK(d.tune.prompt_tokens == 4);
  CHECK(d.pretrain.temperature == 0.1);
  // The echoed config parses back to the same thing.
  CHECK(to_json(parse_run_config(to_json(c))) == to_json(c));
}

TEST_CASE("cli pipeline on the mini config") {
  const auto dir = scratch_dir("pipeline");
  const auto config = fs::path(NAPTUNE_SOURCE_DIR) / "configs" / "mini.json";
  const std::string base = "--config \"" + config.string() + "\"";

  auto r = cli("gen-data " + base + " --out \"" + (dir / "gen").string() + "\"", dir);
  REQUIRE(r.status == 0);
  const auto dataset = dir / "gen" / "dataset";
  CHECK(fs::exists(dataset / "manifest.json"));
  CHECK(fs::exists(dir / "gen" / "config.resolved.json"));

  auto j = mini_config();
  j["dataset"] = dataset.string();
  write(dir / "pre.json", j.dump());
  r = cli("pretrain --config \"" + (dir / "pre.json").string() + "\" --out \"" + (dir / "pre").string() + "\"", dir);
  REQUIRE(r.status == 0);
  const auto pretrained = dir / "pre" / "checkpoint";
  CHECK(read_checkpoint(pretrained).kind == "pretrained");
  CHECK(slurp(dir / "pre" / "pretrain_metrics.csv").starts_with("step,lr,loss\n"));

  const auto dataset_before = tree(dataset);
  const auto pretrained_before = tree(pretrained);

  j["pretrained"] = pretrained.string();
  write(dir / "tune.json", j.dump());
  r = cli("tune --config \"" + (dir / "tune.json").string() + "\" --out \"" + (dir / "tune").string() + "\"", dir);
  REQUIRE(r.status == 0);
  CHECK(slurp(dir / "tune" / "tune_metrics.csv").starts_with("step,epoch,lr,loss\n"));

  r = cli("inspect \"" + (dir / "tune" / "model").string() + "\"", dir);
  REQUIRE(r.status == 0);
  CHECK(r.out.find("backbone.") != std::string::npos);
  CHECK(r.out.find("frozen") != std::string::npos);
  CHECK(r.out.find("prompts.layer2") != std::string::npos);
  const auto summary = cmd_inspect(dir / "tune" / "model");
  CHECK(summary.trainable < summary.total);
  CHECK(summary.trainable_fraction == static_cast<double>(summary.trainable) / static_cast<double>(summary.total));

  r = cli("eval --config \"" + (dir / "tune.json").string() + "\" --out \"" + (dir / "eval").string() + "\"", dir);
  REQUIRE(r.status == 0);
  const auto report = ojson::parse(slurp(dir / "eval" / "report.json"));
  CHECK(report["command"] == "eval");
  CHECK(report.contains("sleep"));
  CHECK(report.contains("ablation"));
  CHECK(report["per_label_f1"].size() == 7);
  CHECK(fs::exists(dir / "eval" / "report.csv"));

  // Same config and seed, fresh directory: identical report bytes.
  r = cli("eval --config \"" + (dir / "tune.json").string() + "\" --out \"" + (dir / "eval2").string() + "\"", dir);
  REQUIRE(r.status == 0);
  CHECK(slurp(dir / "eval" / "report.json") == slurp(dir / "eval2" / "report.json"));
  CHECK(slurp(dir / "eval" / "report.csv") == slurp(dir / "eval2" / "report.csv"));

  // A different seed changes the run.
  r = cli("eval --config \"" + (dir / "tune.json").string() + "\" --seed 8 --out \"" + (dir / "eval3").string() + "\"",
          dir);
  REQUIRE(r.status == 0);
  CHECK(ojson::parse(slurp(dir / "eval3" / "config.resolved.json"))["config"]["seed"] == 8);

  // Unimodal: tune, then evaluate the tuned model's mode.
  auto u = j;
  u["tune"]["mode"] = "unimodal";
  write(dir / "uni.json", u.dump());
  r = cli("tune --config \"" + (dir / "uni.json").string() + "\" --out \"" + (dir / "uni").string() + "\"", dir);
  REQUIRE(r.status == 0);
  u["model"] = (dir / "uni" / "model").string();
  u["tune"].erase("mode");
  write(dir / "uni_eval.json", u.dump());
  r = cli("eval --config \"" + (dir / "uni_eval.json").string() + "\" --out \"" + (dir / "uni_eval").string() + "\"",
          dir);
  REQUIRE(r.status == 0);
  const auto uni = ojson::parse(slurp(dir / "uni_eval" / "report.json"));
  CHECK_FALSE(uni.contains("sleep"));
  CHECK_FALSE(uni.contains("ablation"));
  r = cli("ablate --config \"" + (dir / "uni_eval.json").string() + "\" --out \"" + (dir / "x").string() + "\"", dir);
  CHECK(r.status != 0);
  CHECK(r.err.starts_with("error: kind=config_error message=\""));

  // Sweep over the configured modes and fractions.
  r = cli("sweep --config \"" + (dir / "tune.json").string() + "\" --jobs 2 --out \"" + (dir / "sweep").string() + "\"",
          dir);
  REQUIRE(r.status == 0);
  const auto sweep = ojson::parse(slurp(dir / "sweep" / "report.json"));
  CHECK(sweep["summary"].size() == 4);

  // Inputs were only read.
  CHECK(tree(dataset) == dataset_before);
  CHECK(tree(pretrained) == pretrained_before);
  fs::remove_all(dir);
}

TEST_CASE("cli errors are single machine-parsable lines") {
  const auto dir = scratch_dir("errors");
  auto check_error = [](const Run& r, const std::string& kind) {
    CHECK(r.status != 0);
    CHECK(r.err.starts_with("error: kind=" + kind + " message=\""));
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  };
  check_error(cli("frobnicate", dir), "usage_error");
  check_error(cli("eval --config \"" + (dir / "missing.json").string() + "\"", dir), "io_error");
  write(dir / "bad.json", R"({"tune": {"epochs": -1, "bogus": true}, "eval": {"folds": 1}})");
  const auto r = cli("tune --config \"" + (dir / "bad.json").string() + "\"", dir);
  check_error(r, "config_error");
  CHECK(r.err.find("tune.bogus") != std::string::npos);
  CHECK(r.err.find("eval.folds") != std::string::npos);
  write(dir / "nodata.json", R"({"tune": {"mode": "scratch"}})");
  check_error(cli("eval --config \"" + (dir / "nodata.json").string() + "\" --out \"" + (dir / "o").string() + "\"", dir),
              "config_error");
  check_error(cli("inspect \"" + (dir / "nowhere").string() + "\"", dir), "io_error");
  fs::remove_all(dir);
}
