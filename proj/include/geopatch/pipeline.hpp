// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "geopatch/attack.hpp"
#include "geopatch/evaluation.hpp"
#include "json.hpp"

namespace geopatch {

// Pipeline stages driven by JSON option objects. Common keys: "out" (dir),
// "force" (bool), "seed" (u64, overrides the config seeds), "jobs" and
// "config" (an object with optional sections "synth", "model", "train",
// "attack", "filter"). Each stage returns a small JSON summary.

using LogFn = std::function<void(const std::string&)>;

nlohmann::json run_synth_data(const nlohmann::json& options, const LogFn& log = {});
/// Extra keys: "data".
nlohmann::json run_train(const nlohmann::json& options, const LogFn& log = {});
/// Extra keys: "model", "data", "manifest" (path, optional), "split"
/// (default "val"), "targets" (names or labels), "sequences_per_class" (0 =
/// all), "experiment_id", "dump_composites".
nlohmann::json run_attack(const nlohmann::json& options, const LogFn& log = {});
/// Re-evaluates an attack run's patches. Extra keys: "model", "data", "attacks".
nlohmann::json run_evaluate(const nlohmann::json& options, const LogFn& log = {});
/// Extra keys: "results" (list of run dirs), "allow_mixed".
nlohmann::json run_report(const nlohmann::json& options, const LogFn& log = {});

/// Seed of one (sequence, target) attack under a master seed.
std::uint64_t pair_seed(std::uint64_t master, const std::string& scene_id, int target);

/// Results of every completed pair in an attack or evaluate run directory.
std::vector<AttackResult> load_run_results(const std::filesystem::path& run_dir);

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Rethrows the
/// exception of the lowest failing index after all tasks finish.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace geopatch
