// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "geopatch/geopatch.h"

#include <cstdio>
#include <cstring>
#include <mutex>
#include <new>
#include <string>

#include "geopatch/attack.hpp"
#include "geopatch/error.hpp"
#include "geopatch/pipeline.hpp"

struct gp_model {
  geopatch::Model model;
};
struct gp_sequence {
  geopatch::SceneSequence seq;
};
struct gp_patch {
  geopatch::PhysicalPatch patch;
};

namespace {

thread_local std::string last_error;

std::mutex log_mutex;
gp_log_fn log_fn = nullptr;
void* log_user = nullptr;

void emit_log(const std::string& line) {
  std::lock_guard lock(log_mutex);
  if (log_fn) {
    log_fn(line.c_str(), log_user);
  } else {
    std::fprintf(stderr, "%s\n", line.c_str());
  }
}

template <typename F>
gp_status guarded(F&& f) {
  last_error.clear();
  try {
    f();
    return GP_OK;
  } catch (const geopatch::Error& e) {
    last_error = e.what();
    return static_cast<gp_status>(e.kind());
  } catch (const nlohmann::json::exception& e) {
    last_error = std::string("invalid JSON: ") + e.what();
    return GP_ERR_USAGE;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return GP_ERR_NUMERIC;
  } catch (const std::exception& e) {
    last_error = e.what();
    return GP_ERR_DATA;
  }
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool cond, const char* what) {
  if (!cond) throw geopatch::UsageError(what);
}

nlohmann::json parse_json(const char* text, const char* what) {
  require(text != nullptr, what);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw geopatch::UsageError(std::string(what) + ": " + e.what());
  }
}

geopatch::TensorF image_from(const geopatch::Model& m, const float* pixels, std::size_t count) {
  require(pixels != nullptr, "pixels must not be NULL");
  const auto shape = m.input_shape();
  if (count != geopatch::shape_size(shape)) {
    throw geopatch::ShapeError("expected " + std::to_string(geopatch::shape_size(shape)) + " pixel values, got " +
                               std::to_string(count));
  }
  return geopatch::TensorF(shape, std::vector<float>(pixels, pixels + count));
}

using Runner = nlohmann::json (*)(const nlohmann::json&, const geopatch::LogFn&);

gp_status run_stage(Runner runner, const char* options_json, char** summary_json) {
  return guarded([&] {
    const auto options = parse_json(options_json, "options");
    const auto summary = runner(options, emit_log);
    if (summary_json) *summary_json = dup_string(summary.dump());
  });
}

}  // namespace

extern "C" {

const char* gp_version(void) { return "0.1.0"; }
const char* gp_last_error(void) { return last_error.c_str(); }
void gp_string_free(char* s) { std::free(s); }

void gp_set_log_callback(gp_log_fn fn, void* user) {
  std::lock_guard lock(log_mutex);
  log_fn = fn;
  log_user = user;
}

gp_status gp_model_create(const char* config_json, gp_model** out) {
  return guarded([&] {
    require(out != nullptr, "out must not be NULL");
    const auto cfg = config_json ? parse_json(config_json, "model config") : nlohmann::json::object();
    *out = new gp_model{geopatch::Model(cfg.get<geopatch::ModelConfig>())};
  });
}

gp_status gp_model_load(const char* path, gp_model** out) {
  return guarded([&] {
    require(path && out, "path and out must not be NULL");
    *out = new gp_model{geopatch::load_checkpoint(path)};
  });
}

gp_status gp_model_save(const gp_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "model and path must not be NULL");
    geopatch::save_checkpoint(model->model, path);
  });
}

void gp_model_free(gp_model* model) { delete model; }

gp_status gp_model_info(const gp_model* model, char** json_out) {
  return guarded([&] {
    require(model && json_out, "model and json_out must not be NULL");
    const nlohmann::json info{{"config", model->model.config()}, {"param_count", model->model.parameter_count()}};
    *json_out = dup_string(info.dump());
  });
}

gp_status gp_model_predict(const gp_model* model, const float* pixels, size_t count, int* label, double* probs,
                           size_t probs_count) {
  return guarded([&] {
    require(model && label, "model and label must not be NULL");
    const auto pred = model->model.predict(image_from(model->model, pixels, count));
    *label = pred.label;
    if (probs) {
      require(probs_count == pred.probabilities.size(), "probs_count must equal the class count");
      std::copy(pred.probabilities.begin(), pred.probabilities.end(), probs);
    }
  });
}

gp_status gp_model_loss_and_input_grad(const gp_model* model, const float* pixels, size_t count, int label,
                                       double* loss, float* grad_out) {
  return guarded([&] {
    require(model && loss, "model and loss must not be NULL");
    const auto g = model->model.loss_and_input_grad<float>(image_from(model->model, pixels, count), label);
    *loss = g.loss;
    if (grad_out) std::copy(g.gradient.storage().begin(), g.gradient.storage().end(), grad_out);
  });
}

gp_status gp_sequence_load(const char* dir, gp_sequence** out) {
  return guarded([&] {
    require(dir && out, "dir and out must not be NULL");
    *out = new gp_sequence{geopatch::load_sequence(dir)};
  });
}

void gp_sequence_free(gp_sequence* seq) { delete seq; }

gp_status gp_sequence_info(const gp_sequence* seq, char** json_out) {
  return guarded([&] {
    require(seq && json_out, "seq and json_out must not be NULL");
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : seq->seq.frames) {
      frames.push_back({{"name", f.name}, {"size", f.size()}, {"metadata", f.metadata}});
    }
    const nlohmann::json info{{"scene_id", seq->seq.scene_id}, {"true_label", seq->seq.true_label}, {"frames", frames}};
    *json_out = dup_string(info.dump());
  });
}

gp_status gp_sequence_frame_pixels(const gp_sequence* seq, size_t frame, float* out, size_t count) {
  return guarded([&] {
    require(seq && out, "seq and out must not be NULL");
    require(frame < seq->seq.frames.size(), "frame index out of range");
    const auto& px = seq->seq.frames[frame].pixels.storage();
    require(count == px.size(), "count must equal S*S*3 for the frame");
    std::copy(px.begin(), px.end(), out);
  });
}

gp_status gp_patch_create(size_t n, double element_size_m, float fill, gp_patch** out) {
  return guarded([&] {
    require(out != nullptr, "out must not be NULL");
    require(n > 0 && element_size_m > 0.0, "patch needs n > 0 and element_size_m > 0");
    require(fill >= 0.0f && fill <= 1.0f, "fill must lie in [0, 1]");
    *out = new gp_patch{geopatch::PhysicalPatch(n, element_size_m, fill)};
  });
}

gp_status gp_patch_load(const char* path, gp_patch** out) {
  return guarded([&] {
    require(path && out, "path and out must not be NULL");
    *out = new gp_patch{geopatch::load_patch(path)};
  });
}

gp_status gp_patch_save(const gp_patch* patch, const char* path) {
  return guarded([&] {
    require(patch && path, "patch and path must not be NULL");
    geopatch::save_patch(patch->patch, path);
  });
}

void gp_patch_free(gp_patch* patch) { delete patch; }

gp_status gp_patch_info(const gp_patch* patch, char** json_out) {
  return guarded([&] {
    require(patch && json_out, "patch and json_out must not be NULL");
    const nlohmann::json info{{"n", patch->patch.n},
                              {"element_size_m", patch->patch.element_size_m},
                              {"side_m", patch->patch.side_m()}};
    *json_out = dup_string(info.dump());
  });
}

gp_status gp_patch_pixel_count(const gp_patch* patch, double gsd_m_per_px, size_t chip_size, size_t* out) {
  return guarded([&] {
    require(patch && out, "patch and out must not be NULL");
    *out = geopatch::pixel_count(patch->patch, gsd_m_per_px, chip_size);
  });
}

gp_status gp_attack_sequence(const gp_model* model, const gp_sequence* seq, const char* config_json,
                             gp_patch** patch_out, char** result_json) {
  return guarded([&] {
    require(model && seq && patch_out, "model, seq and patch_out must not be NULL");
    const auto cfg = parse_json(config_json, "attack config").get<geopatch::AttackConfig>();
    auto run = geopatch::attack_sequence(model->model, seq->seq, cfg);
    if (result_json) *result_json = dup_string(nlohmann::json(run.result).dump());
    *patch_out = new gp_patch{std::move(run.patch)};
  });
}

gp_status gp_evaluate_attack(const gp_model* model, const gp_sequence* seq, const gp_patch* patch,
                             const char* config_json, char** result_json) {
  return guarded([&] {
    require(model && seq && patch && result_json, "arguments must not be NULL");
    const auto cfg = parse_json(config_json, "attack config").get<geopatch::AttackConfig>();
    const auto result = geopatch::evaluate_attack(model->model, seq->seq, patch->patch, cfg);
    *result_json = dup_string(nlohmann::json(result).dump());
  });
}

gp_status gp_run_synth_data(const char* options_json, char** summary_json) {
  return run_stage(&geopatch::run_synth_data, options_json, summary_json);
}
gp_status gp_run_train(const char* options_json, char** summary_json) {
  return run_stage(&geopatch::run_train, options_json, summary_json);
}
gp_status gp_run_attack(const char* options_json, char** summary_json) {
  return run_stage(&geopatch::run_attack, options_json, summary_json);
}
gp_status gp_run_evaluate(const char* options_json, char** summary_json) {
  return run_stage(&geopatch::run_evaluate, options_json, summary_json);
}
gp_status gp_run_report(const char* options_json, char** summary_json) {
  return run_stage(&geopatch::run_report, options_json, summary_json);
}

}  // extern "C"
