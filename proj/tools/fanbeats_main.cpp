// Copyright 2026 The fanbeats Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// fanbeats command-line driver. Talks to the library only through fanbeats.h.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fanbeats.h"

namespace {

struct Options {
  std::string profile = "paper";
  std::string config;
  std::vector<std::string> sets;
  std::size_t seeds = 0;
  std::string out;
  bool export_features = false;
  std::vector<std::string> checkpoints;
  std::string axis;
  std::string values;
  bool quiet = false;
  bool print_config = false;
};

int report_failure(fb_status s) {
  std::fprintf(stderr, "fanbeats: %s error: %s\n", fb_status_name(s), fb_last_error());
  return fb_exit_code(s);
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "TOML run configuration");
  cmd->add_option("--set", o.sets, "Override a setting, key=value (repeatable)");
  cmd->add_option("--profile", o.profile, "Defaults to start from")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seeds", o.seeds, "Use seeds 0..N-1")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_flag("--quiet", o.quiet, "No progress on stderr");
  cmd->add_flag("--print-config", o.print_config, "Print the resolved config and exit");
}

int run(const std::string& command, const Options& o) {
  fb_config* cfg = nullptr;
  fb_status s = fb_config_new(o.profile.c_str(), &cfg);
  if (s != FB_OK) return report_failure(s);
  auto done = [&](fb_status st) {
    fb_config_free(cfg);
    return st == FB_OK ? 0 : report_failure(st);
  };
  if (!o.config.empty() && (s = fb_config_load(cfg, o.config.c_str())) != FB_OK) return done(s);
  for (const std::string& kv : o.sets)
    if ((s = fb_config_set(cfg, kv.c_str())) != FB_OK) return done(s);
  if (o.seeds > 0) {
    std::string list = "run.seeds=[";
    for (std::size_t i = 0; i < o.seeds; ++i) list += (i ? "," : "") + std::to_string(i);
    if ((s = fb_config_set(cfg, (list + "]").c_str())) != FB_OK) return done(s);
  }
  if (o.print_config) {
    const char* text = nullptr;
    if ((s = fb_config_text(cfg, &text)) != FB_OK) return done(s);
    std::fputs(text, stdout);
    return done(FB_OK);
  }
  const std::string out = o.out.empty() ? "fanbeats_out/" + command : o.out;
  const int verbose = o.quiet ? 0 : 1;
  fb_report* report = nullptr;
  if (command == "train") {
    s = fb_run_train(cfg, out.c_str(), verbose, &report);
  } else if (command == "eval") {
    std::vector<const char*> paths;
    for (const std::string& p : o.checkpoints) paths.push_back(p.c_str());
    s = fb_run_eval(cfg, paths.data(), paths.size(), out.c_str(), o.export_features ? 1 : 0,
                    verbose, &report);
  } else {
    s = fb_run_ablate(cfg, o.axis.c_str(), o.values.empty() ? nullptr : o.values.c_str(),
                      out.c_str(), verbose, &report);
  }
  if (s == FB_OK) {
    std::fputs(fb_report_text(report), stdout);
    std::printf("outputs in %s\n", out.c_str());
    if (fb_report_failed(report) > 0)
      std::printf("%zu grid cells failed (see ablation.txt)\n", fb_report_failed(report));
  }
  fb_report_free(report);
  return done(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-aligned N-BEATS: train, evaluate and ablate domain-generalizing forecasters"};
  app.set_version_flag("--version", fb_version());
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Train every configured scenario and seed");
  add_common(train, o);

  auto* eval = app.add_subcommand("eval", "Score checkpoints on their target domains");
  add_common(eval, o);
  eval->add_option("--checkpoint", o.checkpoints, "Checkpoint file (repeatable)")->required();
  eval->add_flag("--export-features", o.export_features, "Also write normalized tap CSVs");

  auto* ablate = app.add_subcommand("ablate", "Train and score a grid over one setting");
  add_common(ablate, o);
  ablate->add_option("--axis", o.axis, "Setting to vary")
      ->required()
      ->check(CLI::IsMember({"divergence", "epsilon", "normalizer", "lambda", "granularity"}));
  ablate->add_option("--values", o.values, "Comma-separated grid (default: the axis grid)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string command = train->parsed() ? "train" : eval->parsed() ? "eval" : "ablate";
  return run(command, o);
}
