// naptune: command-line driver for data generation, pre-training, tuning and
// evaluation. Every subcommand writes under --out (or the config's "out").

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "naptune/naptune.hpp"

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out;
}

int fail(const std::string& kind, const std::string& message) {
  std::cerr << "error: kind=" << kind << " message=\"" << escape(message) << "\"\n";
  return 1;
}

struct Flags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string checkpoint;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run config");
  cmd->add_option("--out", f.out, "output directory (overrides the config)");
  cmd->add_option("--seed", f.seed, "seed (overrides the config)");
  cmd->add_option("--jobs", f.jobs, "parallel folds / sweep cells")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"naptune: sleep-aware mood prediction from wearable signals"};
  app.require_subcommand(1);
  Flags f;
  const char* names[] = {"gen-data", "pretrain", "tune", "eval", "ablate", "sweep"};
  for (const char* n : names) add_common(app.add_subcommand(n, std::string("run ") + n), f);
  auto* inspect = app.add_subcommand("inspect", "summarize a checkpoint directory");
  inspect->add_option("checkpoint", f.checkpoint, "checkpoint directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage_error", e.what());
  }

  try {
    if (inspect->parsed()) {
      std::cout << naptune::cmd_inspect(f.checkpoint).text;
      return 0;
    }
    auto* cmd = app.get_subcommands().front();
    naptune::CommandContext ctx;
    if (!f.config.empty()) ctx.config = naptune::load_run_config(f.config);
    if (!f.out.empty()) ctx.config.out = f.out;
    if (cmd->count("--seed")) ctx.config.seed = f.seed;
    ctx.jobs = f.jobs;
    ctx.log = &std::clog;

    const std::string name = cmd->get_name();
    if (name == "gen-data") {
      naptune::cmd_gen_data(ctx);
    } else if (name == "pretrain") {
      naptune::cmd_pretrain(ctx);
    } else if (name == "tune") {
      naptune::cmd_tune(ctx);
    } else if (name == "eval") {
      naptune::cmd_eval(ctx);
    } else if (name == "ablate") {
      naptune::cmd_ablate(ctx);
    } else if (name == "sweep") {
      naptune::cmd_sweep(ctx);
    }
    return 0;
  } catch (const naptune::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal_error", e.what());
  }
}
