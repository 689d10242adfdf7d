// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "geopatch/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "geopatch/error.hpp"
#include "geopatch/io.hpp"
#include "geopatch/random.hpp"
#include "geopatch/scene_synth.hpp"

namespace geopatch {

namespace fs = std::filesystem;
using nlohmann::json;
using io::read_json;
using io::write_json;

namespace {

constexpr const char* kRunSummary = "attack_summary.json";

void reject_unknown(const json& o, std::initializer_list<const char*> extra, const std::string& stage) {
  if (!o.is_object()) throw UsageError(stage + ": options must be a JSON object");
  std::set<std::string> allowed = {"out", "force", "seed", "jobs", "config"};
  for (const char* k : extra) allowed.insert(k);
  for (const auto& [key, value] : o.items()) {
    if (!allowed.count(key)) throw UsageError(stage + ": unknown option '" + key + "'");
  }
}

fs::path path_option(const json& o, const char* key, const std::string& stage) {
  if (!o.contains(key) || !o.at(key).is_string() || o.at(key).get<std::string>().empty()) {
    throw UsageError(stage + ": missing required option '" + key + "'");
  }
  return o.at(key).get<std::string>();
}

json section(const json& o, const char* name) {
  if (!o.contains("config")) return json::object();
  const auto& cfg = o.at("config");
  if (!cfg.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    static const std::set<std::string> known = {"synth", "model", "train", "attack", "filter"};
    if (!known.count(key)) throw UsageError("config: unknown section '" + key + "'");
  }
  if (!cfg.contains(name)) return json::object();
  if (!cfg.at(name).is_object()) throw UsageError(std::string("config section '") + name + "' must be an object");
  return cfg.at(name);
}

std::optional<std::uint64_t> seed_option(const json& o) {
  if (!o.contains("seed") || o.at("seed").is_null()) return std::nullopt;
  if (!o.at("seed").is_number_unsigned() && !o.at("seed").is_number_integer()) {
    throw UsageError("seed must be a nonnegative integer");
  }
  return o.at("seed").get<std::uint64_t>();
}

std::size_t jobs_option(const json& o) {
  const auto jobs = o.value("jobs", std::size_t{1});
  return std::max<std::size_t>(jobs, 1);
}

void prepare_out(const fs::path& out, bool force) {
  if (fs::exists(out) && !fs::is_directory(out)) throw UsageError(out.string() + " exists and is not a directory");
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw UsageError(out.string() + " exists and is not empty (use --force to overwrite)");
    fs::remove_all(out);
  }
  fs::create_directories(out);
}

// Serializes log lines from worker threads.
class Logger {
 public:
  explicit Logger(const LogFn& fn) : fn_(fn) {}
  void operator()(const std::string& line) {
    if (!fn_) return;
    std::lock_guard lock(mutex_);
    fn_(line);
  }

 private:
  const LogFn& fn_;
  std::mutex mutex_;
};

// Keys a section may hold: whatever T serializes, plus `extra`.
template <typename T>
T parse_section(const json& j, const std::string& what, std::initializer_list<const char*> extra = {}) {
  const json defaults = T{};
  for (const auto& [key, value] : j.items()) {
    const bool listed = std::any_of(extra.begin(), extra.end(), [&](const char* e) { return key == e; });
    if (!defaults.contains(key) && !listed) throw UsageError(what + ": unknown key '" + key + "'");
  }
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw UsageError(what + ": " + e.what());
  }
}

int resolve_label(const json& v, const std::vector<std::string>& names) {
  if (v.is_number_integer()) {
    const int label = v.get<int>();
    if (label < 0 || static_cast<std::size_t>(label) >= names.size()) {
      throw UsageError("label " + std::to_string(label) + " outside the dataset's classes");
    }
    return label;
  }
  if (v.is_string()) {
    const auto it = std::find(names.begin(), names.end(), v.get<std::string>());
    if (it == names.end()) throw UsageError("unknown class name '" + v.get<std::string>() + "'");
    return static_cast<int>(it - names.begin());
  }
  throw UsageError("labels must be class names or integers");
}

std::vector<std::string> split_scenes(const DatasetIndex& idx, const std::string& split) {
  if (split == "val") return idx.val;
  if (split == "train") return idx.train;
  if (split == "all") {
    auto all = idx.train;
    all.insert(all.end(), idx.val.begin(), idx.val.end());
    return all;
  }
  throw UsageError("split must be val, train or all");
}

std::string pair_dir_name(const std::string& scene_id, int target, const std::vector<std::string>& names) {
  return scene_id + "__" + (target >= 0 ? names.at(static_cast<std::size_t>(target)) : std::string("untargeted"));
}

void dump_composites(const fs::path& dir, const SceneSequence& seq, const PhysicalPatch& patch,
                     const AttackConfig& cfg) {
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto& chip = seq.frames[f];
    try {
      const auto raster = render(patch, chip.metadata.gsd_m_per_px);
      const auto comp = overlay(chip.pixels, raster, Placement::centered(chip.size(), raster.dim(0)));
      write_ppm(dir / (chip.name + ".ppm"), comp.image);
    } catch (const NumericError&) {
      continue;
    }
    if (f < cfg.frames_attacked) {
      const auto edges = canny(chip.pixels, cfg.canny);
      write_pbm(dir / (chip.name + "_edges.pbm"), edges.mask, edges.width, edges.height);
    }
  }
}

struct PairTask {
  std::string scene_id;
  int target = -1;
  std::size_t sequence = 0;  // index into the loaded sequences
  std::string status = "pending";
  std::string reason;
  std::string dir;
};

const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
      return "usage";
    case ErrorKind::data:
      return "data";
    default:
      return "numeric";
  }
}

json run_summary(const std::string& source, const std::string& experiment_id, const fs::path& data,
                 const fs::path& model, const std::string& split, const DatasetIndex& idx, const AttackConfig& base,
                 const FilterRules& rules, const std::vector<PairTask>& tasks, const json& rejected) {
  json pairs = json::array();
  for (const auto& t : tasks) {
    json p{{"scene_id", t.scene_id}, {"target", t.target}, {"status", t.status}};
    if (!t.reason.empty()) p["reason"] = t.reason;
    if (t.status == "ok") p["result"] = t.dir + "/result.json";
    pairs.push_back(p);
  }
  return json{{"format", "geopatch-attack-run"},
              {"source", source},
              {"experiment_id", experiment_id},
              {"data", data.string()},
              {"model", model.string()},
              {"split", split},
              {"class_names", idx.class_names},
              {"config", base},
              {"filter", rules},
              {"pairs", pairs},
              {"rejected_sequences", rejected}};
}

}  // namespace

std::uint64_t pair_seed(std::uint64_t master, const std::string& scene_id, int target) {
  return derive_seed(master, {fnv1a64(scene_id), static_cast<std::uint64_t>(static_cast<std::int64_t>(target))});
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(jobs, 1), count);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

json run_synth_data(const json& options, const LogFn& log_fn) {
  reject_unknown(options, {}, "synth-data");
  Logger log(log_fn);
  auto config = parse_section<SynthConfig>(section(options, "synth"), "synth config");
  if (const auto seed = seed_option(options)) config.seed = *seed;
  const auto out = path_option(options, "out", "synth-data");
  const auto idx = generate_dataset(config, out, options.value("force", false));
  log("synth-data: wrote " + std::to_string(idx.train.size()) + " train and " + std::to_string(idx.val.size()) +
      " val sequences to " + out.string());
  return json{{"train", idx.train.size()}, {"val", idx.val.size()}, {"out", out.string()}};
}

json run_train(const json& options, const LogFn& log_fn) {
  reject_unknown(options, {"data"}, "train");
  Logger log(log_fn);
  const auto data = path_option(options, "data", "train");
  const auto out = path_option(options, "out", "train");
  const auto idx = load_dataset_index(data);

  const auto model_section = section(options, "model");
  auto mc = parse_section<ModelConfig>(model_section, "model config");
  if (!model_section.contains("input_size")) mc.input_size = idx.image_size;
  if (!model_section.contains("class_count")) mc.class_count = idx.class_names.size();
  if (mc.input_size != idx.image_size || mc.class_count != idx.class_names.size()) {
    throw UsageError("train: model input_size/class_count do not match the dataset (" +
                     std::to_string(idx.image_size) + " px, " + std::to_string(idx.class_names.size()) + " classes)");
  }
  auto to = parse_section<TrainOptions>(section(options, "train"), "train config");
  if (const auto seed = seed_option(options)) {
    mc.seed = *seed;
    to.seed = *seed;
  }
  prepare_out(out, options.value("force", false));

  const auto train_set = load_labeled_frames(idx, idx.train);
  const auto val_set = load_labeled_frames(idx, idx.val);
  log("train: " + std::to_string(train_set.size()) + " train / " + std::to_string(val_set.size()) + " val chips");
  Model model(mc);
  const auto training = train(model, train_set, val_set, to, [&](const EpochStats& s) {
    char line[160];
    std::snprintf(line, sizeof line, "train: epoch %zu loss %.5f acc %.4f val %.4f (%.1fs)", s.epoch, s.train_loss,
                  s.train_accuracy, s.val_accuracy.value_or(-1.0), s.seconds);
    log(line);
  });
  save_checkpoint(model, out / "model.ckpt");
  write_json(out / "training_log.json", training);
  const double val = training.epochs.empty() ? 0.0 : training.epochs.back().val_accuracy.value_or(0.0);
  return json{{"checkpoint", (out / "model.ckpt").string()},
              {"val_accuracy", val},
              {"param_count", model.parameter_count()}};
}

json run_attack(const json& options, const LogFn& log_fn) {
  reject_unknown(options,
                 {"model", "data", "manifest", "split", "targets", "sequences_per_class", "experiment_id",
                  "dump_composites"},
                 "attack");
  Logger log(log_fn);
  const auto model_path = path_option(options, "model", "attack");
  const auto data = path_option(options, "data", "attack");
  const auto out = path_option(options, "out", "attack");
  const auto model = load_checkpoint(model_path);
  const auto idx = load_dataset_index(data);
  if (model.config().class_count != idx.class_names.size()) {
    throw UsageError("attack: model has " + std::to_string(model.config().class_count) + " classes, dataset has " +
                     std::to_string(idx.class_names.size()));
  }

  const auto attack_section = section(options, "attack");
  auto base = parse_section<AttackConfig>(attack_section, "attack config", {"targets"});
  const auto rules = parse_section<FilterRules>(section(options, "filter"), "filter config");
  if (const auto seed = seed_option(options)) base.seed = *seed;
  std::string experiment_id = options.value("experiment_id", base.experiment_id);
  if (experiment_id.empty()) experiment_id = out.filename().string();
  base.experiment_id = experiment_id;
  const std::string split = options.value("split", std::string("val"));
  const auto scene_dirs = split_scenes(idx, split);

  std::map<std::string, std::string> dir_of;  // scene id -> dir relative to root
  for (const auto& d : scene_dirs) dir_of[fs::path(d).filename().string()] = d;

  // (scene, target) pairs in a fixed order.
  std::vector<std::pair<std::string, int>> wanted;
  if (options.contains("manifest") && !options.at("manifest").is_null()) {
    const auto manifest = read_json(options.at("manifest").get<std::string>());
    const auto& list = manifest.is_array() ? manifest : manifest.at("pairs");
    for (const auto& p : list) {
      const auto scene = p.at("scene").get<std::string>();
      if (!dir_of.count(scene)) throw DataError("manifest: scene '" + scene + "' not in the " + split + " split");
      const int target = base.targeted ? resolve_label(p.at("target"), idx.class_names) : -1;
      wanted.emplace_back(scene, target);
    }
  } else {
    std::vector<int> targets;
    json target_list = options.contains("targets") ? options.at("targets") : attack_section.value("targets", json());
    if (target_list.is_null()) {
      for (const char* name : {"crop_field", "hospital", "office_building", "park"}) {
        const auto it = std::find(idx.class_names.begin(), idx.class_names.end(), name);
        if (it != idx.class_names.end()) targets.push_back(static_cast<int>(it - idx.class_names.begin()));
      }
      if (targets.empty()) {
        for (int t = 0; t < static_cast<int>(std::min<std::size_t>(4, idx.class_names.size())); ++t) targets.push_back(t);
      }
    } else {
      for (const auto& t : target_list) targets.push_back(resolve_label(t, idx.class_names));
    }
    const auto per_class = options.value("sequences_per_class", std::size_t{0});
    std::map<std::string, std::size_t> taken;
    for (const auto& d : scene_dirs) {
      const auto scene = fs::path(d).filename().string();
      const auto cls = scene.substr(0, scene.find_last_of('_'));
      if (per_class && taken[cls]++ >= per_class) continue;
      if (!base.targeted) {
        wanted.emplace_back(scene, -1);
        continue;
      }
      for (int t : targets) wanted.emplace_back(scene, t);
    }
  }
  if (wanted.empty()) throw UsageError("attack: no (sequence, target) pairs selected");

  // Load and filter each scene once.
  std::vector<SceneSequence> sequences;
  std::map<std::string, std::size_t> seq_index;
  std::map<std::string, std::string> rejected_reason;
  json rejected = json::array();
  for (const auto& [scene, target] : wanted) {
    if (seq_index.count(scene) || rejected_reason.count(scene)) continue;
    auto outcome = filter_admissible(load_sequence(idx.root / dir_of.at(scene)), &model, rules);
    for (const auto& d : outcome.dropped) log("attack: " + scene + ": dropped " + d);
    if (!outcome.accepted()) {
      rejected_reason[scene] = outcome.rejection;
      rejected.push_back({{"scene_id", scene}, {"reason", outcome.rejection}});
      log("attack: " + scene + ": rejected (" + outcome.rejection + ")");
      continue;
    }
    seq_index[scene] = sequences.size();
    sequences.push_back(std::move(*outcome.sequence));
  }

  std::vector<PairTask> tasks;
  std::vector<std::size_t> runnable;
  for (const auto& [scene, target] : wanted) {
    PairTask task;
    task.scene_id = scene;
    task.target = target;
    if (rejected_reason.count(scene)) {
      task.status = "skipped";
      task.reason = "sequence rejected: " + rejected_reason.at(scene);
    } else {
      task.sequence = seq_index.at(scene);
      if (target >= 0 && target == sequences[task.sequence].true_label) {
        task.status = "skipped";
        task.reason = "target equals true label";
        log("attack: skipped " + scene + " -> " + idx.class_names.at(static_cast<std::size_t>(target)) +
            " (target equals true label)");
      } else {
        task.dir = "pairs/" + pair_dir_name(scene, target, idx.class_names);
        runnable.push_back(tasks.size());
      }
    }
    tasks.push_back(std::move(task));
  }

  prepare_out(out, options.value("force", false));
  const bool dump = options.value("dump_composites", false);
  std::vector<std::exception_ptr> failures(tasks.size());
  parallel_for(runnable.size(), jobs_option(options), [&](std::size_t r) {
    auto& task = tasks[runnable[r]];
    const auto& seq = sequences[task.sequence];
    AttackConfig cfg = base;
    cfg.target_label = task.target;
    cfg.seed = pair_seed(base.seed, task.scene_id, task.target);
    const auto started = std::chrono::steady_clock::now();
    try {
      auto run = attack_sequence(model, seq, cfg);
      const fs::path dir = out / task.dir;
      save_patch(run.patch, dir / "patch.gpp");
      run.result.patch_file = "patch.gpp";
      write_json(dir / "result.json", run.result);
      if (dump) dump_composites(dir / "composites", seq, run.patch, cfg);
      std::size_t hits = 0;
      for (const auto& rec : run.result.frames) hits += run.result.success(rec);
      task.status = "ok";
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      char line[256];
      std::snprintf(line, sizeof line, "attack: %s success %zu/%zu frames, objective %.4f -> %.4f (%.1fs)",
                    task.dir.c_str(), hits, run.result.frames.size(),
                    run.objective_history.empty() ? 0.0 : run.objective_history.front(),
                    run.objective_history.empty() ? 0.0 : run.objective_history.back(), secs);
      log(line);
    } catch (const Error& e) {
      task.status = "failed";
      task.reason = std::string(kind_name(e.kind())) + ": " + e.what();
      failures[runnable[r]] = std::current_exception();
      log("attack: " + task.scene_id + " failed: " + e.what());
    }
  });

  write_json(out / kRunSummary,
             run_summary("attack", experiment_id, data, model_path, split, idx, base, rules, tasks, rejected));
  std::size_t ok = 0, skipped = 0, failed = 0;
  for (const auto& t : tasks) {
    ok += t.status == "ok";
    skipped += t.status == "skipped";
    failed += t.status == "failed";
  }
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return json{{"experiment_id", experiment_id}, {"ok", ok}, {"skipped", skipped}, {"failed", failed}};
}

std::vector<AttackResult> load_run_results(const fs::path& run_dir) {
  const auto summary = read_json(run_dir / kRunSummary);
  if (summary.value("format", std::string{}) != "geopatch-attack-run") {
    throw DataError((run_dir / kRunSummary).string() + ": not an attack run summary");
  }
  std::vector<AttackResult> results;
  for (const auto& p : summary.at("pairs")) {
    if (p.at("status") != "ok") continue;
    const auto path = run_dir / p.at("result").get<std::string>();
    try {
      results.push_back(read_json(path).get<AttackResult>());
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return results;
}

json run_evaluate(const json& options, const LogFn& log_fn) {
  reject_unknown(options, {"model", "data", "attacks"}, "evaluate");
  Logger log(log_fn);
  const auto attacks = path_option(options, "attacks", "evaluate");
  const auto out = path_option(options, "out", "evaluate");
  const auto summary = read_json(attacks / kRunSummary);
  if (summary.value("format", std::string{}) != "geopatch-attack-run") {
    throw DataError((attacks / kRunSummary).string() + ": not an attack run summary");
  }
  const fs::path model_path =
      options.contains("model") ? path_option(options, "model", "evaluate") : fs::path(summary.at("model").get<std::string>());
  const fs::path data =
      options.contains("data") ? path_option(options, "data", "evaluate") : fs::path(summary.at("data").get<std::string>());
  const auto model = load_checkpoint(model_path);
  const auto idx = load_dataset_index(data);
  std::map<std::string, std::string> dir_of;
  for (const auto& list : {idx.train, idx.val}) {
    for (const auto& d : list) dir_of[fs::path(d).filename().string()] = d;
  }

  const auto base = summary.at("config").get<AttackConfig>();
  const auto rules = summary.at("filter").get<FilterRules>();
  std::vector<PairTask> tasks;
  for (const auto& p : summary.at("pairs")) {
    PairTask t;
    t.scene_id = p.at("scene_id").get<std::string>();
    t.target = p.at("target").get<int>();
    t.status = p.at("status").get<std::string>();
    t.reason = p.value("reason", std::string{});
    if (t.status == "ok") t.dir = fs::path(p.at("result").get<std::string>()).parent_path().string();
    tasks.push_back(std::move(t));
  }
  prepare_out(out, options.value("force", false));

  std::vector<std::size_t> runnable;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].status == "ok") runnable.push_back(i);
  }
  parallel_for(runnable.size(), jobs_option(options), [&](std::size_t r) {
    auto& task = tasks[runnable[r]];
    const auto previous = read_json(attacks / task.dir / "result.json").get<AttackResult>();
    const auto patch = load_patch(attacks / task.dir / previous.patch_file);
    if (!dir_of.count(task.scene_id)) throw DataError("evaluate: scene " + task.scene_id + " not in dataset");
    const auto full = load_sequence(idx.root / dir_of.at(task.scene_id));
    SceneSequence seq{full.scene_id, full.true_label, {}};
    for (const auto& rec : previous.frames) {
      const auto it = std::find_if(full.frames.begin(), full.frames.end(),
                                   [&](const ImageChip& c) { return c.name == rec.frame_name; });
      if (it == full.frames.end()) throw DataError("evaluate: frame " + rec.frame_name + " missing in " + task.scene_id);
      seq.frames.push_back(*it);
    }
    auto result = evaluate_attack(model, seq, patch, previous.config.get<AttackConfig>());
    result.patch_file = "patch.gpp";
    save_patch(patch, out / task.dir / "patch.gpp");
    write_json(out / task.dir / "result.json", result);
    log("evaluate: " + task.dir);
  });
  const std::string experiment_id = summary.value("experiment_id", out.filename().string());
  write_json(out / kRunSummary, run_summary("evaluate", experiment_id, data, model_path,
                                            summary.value("split", std::string("val")), idx, base, rules, tasks,
                                            summary.value("rejected_sequences", json::array())));
  return json{{"experiment_id", experiment_id}, {"evaluated", runnable.size()}};
}

json run_report(const json& options, const LogFn& log_fn) {
  reject_unknown(options, {"results", "allow_mixed"}, "report");
  Logger log(log_fn);
  const auto out = path_option(options, "out", "report");
  if (!options.contains("results") || !options.at("results").is_array() || options.at("results").empty()) {
    throw UsageError("report: need at least one results directory");
  }
  const bool allow_mixed = options.value("allow_mixed", false);

  std::vector<EvalReport> reports;
  std::vector<std::string> class_names;
  std::set<std::string> ids;
  for (const auto& entry : options.at("results")) {
    const fs::path dir = entry.get<std::string>();
    if (fs::exists(out) && fs::exists(dir) && fs::equivalent(dir, out)) {
      throw UsageError("report: --out must differ from the results directories");
    }
    const auto summary = read_json(dir / kRunSummary);
    const auto names = summary.at("class_names").get<std::vector<std::string>>();
    if (class_names.empty()) class_names = names;
    if (names != class_names) throw UsageError("report: results use different class sets");
    const std::string id = summary.value("experiment_id", dir.filename().string());
    if (!ids.insert(id).second) throw UsageError("report: duplicate experiment id '" + id + "'");
    const auto results = load_run_results(dir);
    if (results.empty()) throw DataError("report: " + dir.string() + " holds no completed attacks");
    for (const auto scope : {Scope::all_frames, Scope::held_out}) {
      reports.push_back(aggregate(results, scope, id, class_names.size(), allow_mixed));
    }
    log("report: " + id + " (" + std::to_string(results.size()) + " attacks)");
  }

  prepare_out(out, options.value("force", false));
  io::write_file_atomic(out / "report.csv", report_csv(reports));
  io::write_file_atomic(out / "histogram.csv", histogram_csv(reports));
  write_json(out / "report.json", json{{"format", "geopatch-report"}, {"class_names", class_names}, {"reports", reports}});
  return json{{"reports", reports.size()}, {"csv", (out / "report.csv").string()}};
}

}  // namespace geopatch
