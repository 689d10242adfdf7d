// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geopatch/classifier.hpp"
#include "geopatch/geodata.hpp"
#include "geopatch/patch.hpp"
#include "json.hpp"

namespace geopatch {

struct AttackConfig;

struct FrameRecord {
  std::size_t frame_index = 0;
  std::string frame_name;
  /// Visible to the optimizer (one of the leading frames_attacked frames).
  bool attacked = false;
  bool evaluable = true;
  std::string warning;
  int pre_prediction = -1;
  int post_prediction = -1;
  std::size_t pixel_count = 0;
  /// Cross-entropy of the post-attack prediction against the attack label.
  double loss = 0.0;
  double label_probability = 0.0;
};

void to_json(nlohmann::json& j, const FrameRecord& r);
void from_json(const nlohmann::json& j, FrameRecord& r);

struct AttackResult {
  std::string scene_id;
  int true_label = 0;
  /// -1 for non-targeted attacks.
  int target_label = -1;
  std::vector<FrameRecord> frames;
  std::string patch_file;
  nlohmann::json config;
  std::uint64_t seed = 0;

  bool targeted() const { return target_label >= 0; }
  bool success(const FrameRecord& r) const {
    return targeted() ? r.post_prediction == target_label : r.post_prediction != true_label;
  }
  bool error(const FrameRecord& r) const { return r.post_prediction != true_label; }
};

void to_json(nlohmann::json& j, const AttackResult& r);
void from_json(const nlohmann::json& j, AttackResult& r);

/// Renders the patch at every frame's GSD, overlays it at the chip center
/// (no jitter) and records predictions before and after. Frames whose
/// render fails are marked unevaluable.
AttackResult evaluate_attack(const Model& model, const SceneSequence& seq, const PhysicalPatch& patch,
                             const AttackConfig& config);

enum class Scope { all_frames, held_out };
std::string to_string(Scope scope);
Scope scope_from_string(const std::string& text);

struct Rates {
  double success_rate = 0.0;
  double error_rate = 0.0;
  std::size_t count = 0;
};

struct HistogramBin {
  std::size_t lower = 0;  // pixel_count bin [lower, lower + width)
  std::size_t success = 0;
  std::size_t failure = 0;
};

inline constexpr std::size_t kHistogramBinWidth = 100;

struct ExperimentSummary {
  std::size_t n = 0;
  double element_size_m = 0.0;
  std::size_t frames_attacked = 0;
  bool targeted = true;
};

struct EvalReport {
  std::string experiment_id;
  Scope scope = Scope::all_frames;
  ExperimentSummary experiment;
  Rates frame_rates;
  /// Per attack: success/error when a strict majority of in-scope frames is.
  Rates sequence_rates;
  /// True classes ordered by decreasing mean manipulated pixel count.
  std::vector<int> row_order;
  /// matrix[true][target]: targeted success rate, NaN when no records.
  std::vector<std::vector<double>> class_matrix;
  std::vector<std::vector<std::size_t>> class_counts;
  std::vector<HistogramBin> histogram;
  double mean_pixels_success = 0.0;
  double mean_pixels_failure = 0.0;
  std::size_t records_total = 0;    // all frame records, any scope
  std::size_t unevaluable = 0;
};

void to_json(nlohmann::json& j, const EvalReport& r);

/// Aggregates per-frame records in scope. Results must share one experiment
/// configuration unless `allow_mixed`.
EvalReport aggregate(const std::vector<AttackResult>& results, Scope scope, const std::string& experiment_id,
                     std::size_t class_count, bool allow_mixed = false);

struct ReportRow {
  std::string exp_id;
  std::string scope;
  std::size_t n = 0;
  double element_size_m = 0.0;
  std::size_t frames_attacked = 0;
  double success_rate = 0.0;
  double error_rate = 0.0;
  double seq_success_rate = 0.0;
  double seq_error_rate = 0.0;
  std::size_t frames_evaluated = 0;
};

std::string report_csv(const std::vector<EvalReport>& reports);
std::vector<ReportRow> parse_report_csv(const std::string& text);
std::string histogram_csv(const std::vector<EvalReport>& reports);

}  // namespace geopatch
