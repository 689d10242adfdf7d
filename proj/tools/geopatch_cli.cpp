// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Talks to the library only through the C API.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "geopatch/geopatch.h"
#include "json.hpp"

namespace {

using nlohmann::json;

constexpr int kExitUsage = 1;

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t jobs = 1;
  bool force = false;
  bool quiet = false;
};

void quiet_log(const char*, void*) {}

json base_options(const Globals& g, const CLI::App& app) {
  json o{{"out", g.out}, {"force", g.force}, {"jobs", g.jobs}};
  if (app.count("--seed")) o["seed"] = g.seed;
  if (!g.config.empty()) {
    std::ifstream in(g.config);
    if (!in) throw std::runtime_error("cannot read config file " + g.config);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      o["config"] = json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw std::runtime_error("config file " + g.config + " is not valid JSON: " + e.what());
    }
  }
  return o;
}

int run(gp_status (*stage)(const char*, char**), const json& options) {
  char* summary = nullptr;
  const gp_status status = stage(options.dump().c_str(), &summary);
  if (status != GP_OK) {
    std::fprintf(stderr, "error: %s\n", gp_last_error());
    return static_cast<int>(status);
  }
  std::printf("%s\n", summary);
  gp_string_free(summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geopatch: physically constrained adversarial patches on overhead image sequences"};
  app.set_version_flag("--version", std::string(gp_version()));
  app.require_subcommand(1);

  Globals g;
  app.add_option("--config", g.config, "JSON config file with synth/model/train/attack/filter sections");
  app.add_option("--seed", g.seed, "Master seed (overrides config seeds)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--jobs", g.jobs, "Parallel attack tasks")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Replace a non-empty output directory");
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress logging");

  auto* synth = app.add_subcommand("synth-data", "Generate the synthetic revisit benchmark");
  synth->fallthrough();

  std::string data;
  auto* train = app.add_subcommand("train", "Train the stand-in classifier");
  train->fallthrough();
  train->add_option("--data", data, "Dataset root")->required();

  std::string model, manifest, split = "val", experiment_id;
  std::vector<std::string> targets;
  std::size_t per_class = 0;
  bool dump = false;
  auto* attack = app.add_subcommand("attack", "Optimize patches over (sequence, target) pairs");
  attack->fallthrough();
  attack->add_option("--model", model, "Model checkpoint")->required();
  attack->add_option("--data", data, "Dataset root")->required();
  attack->add_option("--manifest", manifest, "JSON list of {scene, target} pairs");
  attack->add_option("--split", split, "Scenes to attack: val, train or all");
  attack->add_option("--targets", targets, "Target classes (names or labels)");
  attack->add_option("--sequences-per-class", per_class, "Limit sequences per class (0 = all)");
  attack->add_option("--experiment-id", experiment_id, "Experiment id for reports");
  attack->add_flag("--dump-composites", dump, "Write composite PPMs and edge PBMs");

  std::string attacks;
  auto* evaluate = app.add_subcommand("evaluate", "Re-evaluate the patches of an attack run");
  evaluate->fallthrough();
  evaluate->add_option("--attacks", attacks, "Attack run directory")->required();
  evaluate->add_option("--model", model, "Model checkpoint (default: the one the run used)");
  evaluate->add_option("--data", data, "Dataset root (default: the one the run used)");

  std::vector<std::string> results;
  bool allow_mixed = false;
  auto* report = app.add_subcommand("report", "Aggregate attack runs into CSV and JSON reports");
  report->fallthrough();
  report->add_option("--results", results, "Attack or evaluate run directory (repeatable)")->required();
  report->add_flag("--allow-mixed", allow_mixed, "Allow differing configs within one run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (g.quiet) gp_set_log_callback(quiet_log, nullptr);
  json options;
  try {
    options = base_options(g, app);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }

  if (synth->parsed()) return run(gp_run_synth_data, options);
  if (train->parsed()) {
    options["data"] = data;
    return run(gp_run_train, options);
  }
  if (attack->parsed()) {
    options["model"] = model;
    options["data"] = data;
    options["split"] = split;
    options["dump_composites"] = dump;
    options["sequences_per_class"] = per_class;
    if (!manifest.empty()) options["manifest"] = manifest;
    if (!experiment_id.empty()) options["experiment_id"] = experiment_id;
    if (!targets.empty()) {
      json list = json::array();
      for (const auto& t : targets) {
        const bool numeric = !t.empty() && t.find_first_not_of("0123456789") == std::string::npos;
        list.push_back(numeric ? json(std::stoi(t)) : json(t));
      }
      options["targets"] = list;
    }
    return run(gp_run_attack, options);
  }
  if (evaluate->parsed()) {
    options["attacks"] = attacks;
    if (!model.empty()) options["model"] = model;
    if (!data.empty()) options["data"] = data;
    return run(gp_run_evaluate, options);
  }
  options["results"] = results;
  options["allow_mixed"] = allow_mixed;
  return run(gp_run_report, options);
}
