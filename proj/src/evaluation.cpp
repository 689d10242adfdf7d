// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "geopatch/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "geopatch/attack.hpp"
#include "geopatch/error.hpp"

namespace geopatch {

void to_json(nlohmann::json& j, const FrameRecord& r) {
  j = nlohmann::json{{"frame_index", r.frame_index},
                     {"frame_name", r.frame_name},
                     {"attacked", r.attacked},
                     {"evaluable", r.evaluable},
                     {"pre_prediction", r.pre_prediction},
                     {"post_prediction", r.post_prediction},
                     {"pixel_count", r.pixel_count},
                     {"loss", r.loss},
                     {"label_probability", r.label_probability}};
  if (!r.warning.empty()) j["warning"] = r.warning;
}

void from_json(const nlohmann::json& j, FrameRecord& r) {
  r.frame_index = j.at("frame_index").get<std::size_t>();
  r.frame_name = j.value("frame_name", std::string{});
  r.attacked = j.at("attacked").get<bool>();
  r.evaluable = j.value("evaluable", true);
  r.warning = j.value("warning", std::string{});
  r.pre_prediction = j.at("pre_prediction").get<int>();
  r.post_prediction = j.at("post_prediction").get<int>();
  r.pixel_count = j.at("pixel_count").get<std::size_t>();
  r.loss = j.value("loss", 0.0);
  r.label_probability = j.value("label_probability", 0.0);
}

void to_json(nlohmann::json& j, const AttackResult& r) {
  j = nlohmann::json{{"format", "geopatch-attack-result"},
                     {"scene_id", r.scene_id},
                     {"true_label", r.true_label},
                     {"target_label", r.target_label},
                     {"frames", r.frames},
                     {"patch_file", r.patch_file},
                     {"config", r.config},
                     {"seed", r.seed}};
}

void from_json(const nlohmann::json& j, AttackResult& r) {
  if (j.value("format", std::string{}) != "geopatch-attack-result") {
    throw DataError("not an attack result (format field missing or wrong)");
  }
  r.scene_id = j.at("scene_id").get<std::string>();
  r.true_label = j.at("true_label").get<int>();
  r.target_label = j.at("target_label").get<int>();
  r.frames = j.at("frames").get<std::vector<FrameRecord>>();
  r.patch_file = j.value("patch_file", std::string{});
  r.config = j.value("config", nlohmann::json::object());
  r.seed = j.value("seed", std::uint64_t{0});
}

AttackResult evaluate_attack(const Model& model, const SceneSequence& seq, const PhysicalPatch& patch,
                             const AttackConfig& config) {
  AttackResult result;
  result.scene_id = seq.scene_id;
  result.true_label = seq.true_label;
  result.target_label = config.targeted ? config.target_label : -1;
  result.config = config;
  result.seed = config.seed;
  const int label = config.attack_label(seq.true_label);

  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto& chip = seq.frames[f];
    FrameRecord rec;
    rec.frame_index = f;
    rec.frame_name = chip.name;
    rec.attacked = f < config.frames_attacked;
    rec.pre_prediction = model.predict(chip.pixels).label;
    try {
      const auto raster = render(patch, chip.metadata.gsd_m_per_px);
      const auto composite = overlay(chip.pixels, raster, Placement::centered(chip.size(), raster.dim(0)));
      rec.pixel_count = composite.footprint.count();
      const auto post = model.predict(composite.image);
      rec.post_prediction = post.label;
      rec.label_probability = post.probabilities.at(static_cast<std::size_t>(label));
      rec.loss = -std::log(std::max(rec.label_probability, std::numeric_limits<double>::min()));
    } catch (const NumericError& e) {
      rec.evaluable = false;
      rec.warning = e.what();
    } catch (const DataError& e) {
      rec.evaluable = false;
      rec.warning = e.what();
    }
    result.frames.push_back(std::move(rec));
  }
  return result;
}

std::string to_string(Scope scope) { return scope == Scope::all_frames ? "all_frames" : "held_out"; }

Scope scope_from_string(const std::string& text) {
  if (text == "all_frames") return Scope::all_frames;
  if (text == "held_out") return Scope::held_out;
  throw UsageError("unknown evaluation scope '" + text + "' (expected all_frames or held_out)");
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

// Config fields that define an experiment; the target and seed vary within one.
nlohmann::json experiment_signature(const nlohmann::json& config) {
  auto sig = config;
  if (sig.is_object()) {
    sig.erase("target_label");
    sig.erase("seed");
    sig.erase("experiment_id");
  }
  return sig;
}

bool in_scope(const FrameRecord& r, Scope scope) {
  return r.evaluable && (scope == Scope::all_frames || !r.attacked);
}

}  // namespace

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json matrix = nlohmann::json::array();
  for (std::size_t t = 0; t < r.class_matrix.size(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (double v : r.class_matrix[t]) row.push_back(number_or_null(v));
    matrix.push_back(row);
  }
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& b : r.histogram) {
    hist.push_back({{"lower", b.lower}, {"upper", b.lower + kHistogramBinWidth}, {"success", b.success},
                    {"failure", b.failure}});
  }
  j = nlohmann::json{
      {"experiment_id", r.experiment_id},
      {"scope", to_string(r.scope)},
      {"experiment",
       {{"n", r.experiment.n},
        {"element_size_m", r.experiment.element_size_m},
        {"frames_attacked", r.experiment.frames_attacked},
        {"targeted", r.experiment.targeted}}},
      {"per_frame",
       {{"success_rate", r.frame_rates.success_rate},
        {"error_rate", r.frame_rates.error_rate},
        {"count", r.frame_rates.count}}},
      {"per_sequence_majority",
       {{"success_rate", r.sequence_rates.success_rate},
        {"error_rate", r.sequence_rates.error_rate},
        {"count", r.sequence_rates.count}}},
      {"row_order", r.row_order},
      {"class_matrix", matrix},
      {"class_counts", r.class_counts},
      {"pixel_histogram", hist},
      {"mean_pixels_success", number_or_null(r.mean_pixels_success)},
      {"mean_pixels_failure", number_or_null(r.mean_pixels_failure)},
      {"records_total", r.records_total},
      {"unevaluable", r.unevaluable}};
}

EvalReport aggregate(const std::vector<AttackResult>& results, Scope scope, const std::string& experiment_id,
                     std::size_t class_count, bool allow_mixed) {
  if (results.empty()) throw UsageError("aggregate: no attack results");
  if (class_count < 2) throw UsageError("aggregate: class_count must be >= 2");
  const auto signature = experiment_signature(results.front().config);
  for (const auto& r : results) {
    if (!allow_mixed && experiment_signature(r.config) != signature) {
      throw UsageError("aggregate: results mix experiment configurations (" + r.scene_id +
                       " differs); pass --allow-mixed to combine them");
    }
  }

  EvalReport rep;
  rep.experiment_id = experiment_id;
  rep.scope = scope;
  AttackConfig first;
  if (results.front().config.is_object()) first = results.front().config.get<AttackConfig>();
  rep.experiment = {first.n, first.element_size_m, first.frames_attacked, first.targeted};

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<std::size_t>> hits(class_count, std::vector<std::size_t>(class_count, 0));
  rep.class_counts.assign(class_count, std::vector<std::size_t>(class_count, 0));
  std::vector<double> pixel_sum(class_count, 0.0);
  std::vector<std::size_t> pixel_n(class_count, 0);
  std::size_t succ = 0, err = 0, frames = 0, seq_succ = 0, seq_err = 0, seqs = 0;
  double px_succ = 0.0, px_fail = 0.0;
  std::size_t n_succ = 0, n_fail = 0;

  for (const auto& r : results) {
    if (r.true_label < 0 || static_cast<std::size_t>(r.true_label) >= class_count ||
        r.target_label >= static_cast<int>(class_count)) {
      throw DataError("aggregate: labels of " + r.scene_id + " outside the class range");
    }
    std::size_t local = 0, local_succ = 0, local_err = 0;
    for (const auto& rec : r.frames) {
      ++rep.records_total;
      if (!rec.evaluable) {
        ++rep.unevaluable;
        continue;
      }
      if (!in_scope(rec, scope)) continue;
      const bool s = r.success(rec), e = r.error(rec);
      ++local;
      local_succ += s;
      local_err += e;
      const auto t = static_cast<std::size_t>(r.true_label);
      pixel_sum[t] += static_cast<double>(rec.pixel_count);
      ++pixel_n[t];
      if (r.targeted()) {
        const auto g = static_cast<std::size_t>(r.target_label);
        ++rep.class_counts[t][g];
        hits[t][g] += s;
      }
      const std::size_t bin = rec.pixel_count / kHistogramBinWidth;
      if (rep.histogram.size() <= bin) {
        const auto old = rep.histogram.size();
        rep.histogram.resize(bin + 1);
        for (auto b = old; b <= bin; ++b) rep.histogram[b].lower = b * kHistogramBinWidth;
      }
      if (s) {
        ++rep.histogram[bin].success;
        px_succ += static_cast<double>(rec.pixel_count);
        ++n_succ;
      } else {
        ++rep.histogram[bin].failure;
        px_fail += static_cast<double>(rec.pixel_count);
        ++n_fail;
      }
    }
    frames += local;
    succ += local_succ;
    err += local_err;
    if (local > 0) {
      ++seqs;
      seq_succ += 2 * local_succ > local;
      seq_err += 2 * local_err > local;
    }
  }

  const auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  rep.frame_rates = {ratio(succ, frames), ratio(err, frames), frames};
  rep.sequence_rates = {ratio(seq_succ, seqs), ratio(seq_err, seqs), seqs};
  rep.mean_pixels_success = n_succ ? px_succ / static_cast<double>(n_succ) : nan;
  rep.mean_pixels_failure = n_fail ? px_fail / static_cast<double>(n_fail) : nan;

  rep.class_matrix.assign(class_count, std::vector<double>(class_count, nan));
  for (std::size_t t = 0; t < class_count; ++t) {
    for (std::size_t g = 0; g < class_count; ++g) {
      if (rep.class_counts[t][g]) rep.class_matrix[t][g] = ratio(hits[t][g], rep.class_counts[t][g]);
    }
  }
  std::vector<double> mean_pixels(class_count, 0.0);
  for (std::size_t t = 0; t < class_count; ++t) {
    if (pixel_n[t]) {
      rep.row_order.push_back(static_cast<int>(t));
      mean_pixels[t] = pixel_sum[t] / static_cast<double>(pixel_n[t]);
    }
  }
  std::stable_sort(rep.row_order.begin(), rep.row_order.end(),
                   [&](int a, int b) { return mean_pixels[static_cast<std::size_t>(a)] > mean_pixels[static_cast<std::size_t>(b)]; });
  return rep;
}

namespace {

constexpr const char* kReportHeader =
    "exp_id,scope,n,element_size_m,frames_attacked,success_rate,error_rate,seq_success_rate,seq_error_rate,"
    "frames_evaluated";

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void check_id(const std::string& id) {
  if (id.find_first_of(",\"\n\r") != std::string::npos) {
    throw UsageError("experiment id '" + id + "' must not contain commas, quotes or newlines");
  }
}

}  // namespace

std::string report_csv(const std::vector<EvalReport>& reports) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : reports) {
    check_id(r.experiment_id);
    out += r.experiment_id + "," + to_string(r.scope) + "," + std::to_string(r.experiment.n) + "," +
           fixed6(r.experiment.element_size_m) + "," + std::to_string(r.experiment.frames_attacked) + "," +
           fixed6(r.frame_rates.success_rate) + "," + fixed6(r.frame_rates.error_rate) + "," +
           fixed6(r.sequence_rates.success_rate) + "," + fixed6(r.sequence_rates.error_rate) + "," +
           std::to_string(r.frame_rates.count) + "\n";
  }
  return out;
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) throw DataError("report csv: unexpected header");
  std::vector<ReportRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw DataError("report csv line " + std::to_string(line_no) + ": expected 10 fields");
    try {
      ReportRow row;
      row.exp_id = cells[0];
      row.scope = cells[1];
      row.n = std::stoul(cells[2]);
      row.element_size_m = std::stod(cells[3]);
      row.frames_attacked = std::stoul(cells[4]);
      row.success_rate = std::stod(cells[5]);
      row.error_rate = std::stod(cells[6]);
      row.seq_success_rate = std::stod(cells[7]);
      row.seq_error_rate = std::stod(cells[8]);
      row.frames_evaluated = std::stoul(cells[9]);
      rows.push_back(std::move(row));
    } catch (const std::logic_error&) {
      throw DataError("report csv line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

std::string histogram_csv(const std::vector<EvalReport>& reports) {
  std::string out = "exp_id,scope,bin_lower,bin_upper,success,failure\n";
  for (const auto& r : reports) {
    check_id(r.experiment_id);
    for (const auto& b : r.histogram) {
      out += r.experiment_id + "," + to_string(r.scope) + "," + std::to_string(b.lower) + "," +
             std::to_string(b.lower + kHistogramBinWidth) + "," + std::to_string(b.success) + "," +
             std::to_string(b.failure) + "\n";
    }
  }
  return out;
}

}  // namespace geopatch
