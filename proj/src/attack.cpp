// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "geopatch/attack.hpp"

#include <algorithm>
#include <cmath>

#include "geopatch/error.hpp"

namespace geopatch {

void AttackConfig::validate(const SceneSequence& seq) const {
  if (seq.frames.empty()) throw DataError("attack: sequence " + seq.scene_id + " has no frames");
  if (targeted) {
    if (target_label < 0) throw UsageError("attack: targeted attack needs target_label >= 0");
    if (target_label == seq.true_label) {
      throw UsageError("attack: target label equals the true label of " + seq.scene_id);
    }
  }
  if (frames_attacked < 1 || frames_attacked > seq.frames.size()) {
    throw UsageError("attack: frames_attacked must be in [1, " + std::to_string(seq.frames.size()) + "]");
  }
  if (n < 1) throw UsageError("attack: n must be >= 1");
  if (!(element_size_m > 0.0) || !std::isfinite(element_size_m)) {
    throw UsageError("attack: element_size_m must be positive");
  }
  if (!(weights.lambda1 >= 0.0) || !(weights.lambda2 >= 0.0)) throw UsageError("attack: lambda weights must be >= 0");
  for (const auto& ph : phases) {
    if (!(ph.learning_rate >= 0.0) || !std::isfinite(ph.learning_rate)) {
      throw UsageError("attack: learning rates must be finite and >= 0");
    }
  }
  if (jitter_px < 0) throw UsageError("attack: jitter_px must be >= 0");
}

void to_json(nlohmann::json& j, const AttackConfig& c) {
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& ph : c.phases) phases.push_back({{"epochs", ph.epochs}, {"learning_rate", ph.learning_rate}});
  j = nlohmann::json{{"targeted", c.targeted},
                     {"target_label", c.target_label},
                     {"frames_attacked", c.frames_attacked},
                     {"n", c.n},
                     {"element_size_m", c.element_size_m},
                     {"lambda1", c.weights.lambda1},
                     {"lambda2", c.weights.lambda2},
                     {"phases", phases},
                     {"jitter_px", c.jitter_px},
                     {"canny", c.canny},
                     {"seed", c.seed},
                     {"experiment_id", c.experiment_id}};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  if (!j.is_object()) throw UsageError("attack config must be a JSON object");
  c.targeted = j.value("targeted", c.targeted);
  c.target_label = j.value("target_label", c.target_label);
  c.frames_attacked = j.value("frames_attacked", c.frames_attacked);
  c.n = j.value("n", c.n);
  c.element_size_m = j.value("element_size_m", c.element_size_m);
  c.weights.lambda1 = j.value("lambda1", c.weights.lambda1);
  c.weights.lambda2 = j.value("lambda2", c.weights.lambda2);
  if (j.contains("phases")) {
    c.phases.clear();
    for (const auto& ph : j.at("phases")) {
      c.phases.push_back({ph.at("epochs").get<std::size_t>(), ph.at("learning_rate").get<double>()});
    }
  }
  c.jitter_px = j.value("jitter_px", c.jitter_px);
  if (j.contains("canny")) c.canny = j.at("canny").get<CannyParams>();
  c.seed = j.value("seed", c.seed);
  c.experiment_id = j.value("experiment_id", c.experiment_id);
}

TransformSampler::TransformSampler(int jitter_px, std::uint64_t seed) : jitter_px_(jitter_px), rng_(seed) {
  if (jitter_px < 0) throw UsageError("jitter_px must be >= 0");
}

std::array<int, 2> TransformSampler::sample() {
  if (jitter_px_ == 0) return {0, 0};
  const int dx = static_cast<int>(rng_.uniform_int(-jitter_px_, jitter_px_));
  const int dy = static_cast<int>(rng_.uniform_int(-jitter_px_, jitter_px_));
  return {dx, dy};
}

namespace {

template <typename T>
int predicted_label(const Model& model, const Tensor<T>& chip) {
  ad::Tape<T> tape;
  const auto logits = model.logits(tape, tape.constant(chip)).value().data();
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

template <typename T>
T sign_of(T v) {
  return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0});
}

}  // namespace

template <typename T>
SignedStep<T> fgs_step(const Model& model, const Tensor<T>& chip, double epsilon) {
  if (!(epsilon >= 0.0)) throw UsageError("fgs: epsilon must be >= 0");
  model.check_image(chip.shape());
  const int label = predicted_label(model, chip);
  auto grad = model.loss_and_input_grad<T>(chip, label).gradient;
  const T eps = static_cast<T>(epsilon);
  Tensor<T> pre = chip;
  Tensor<T> adv = chip;
  for (std::size_t i = 0; i < chip.size(); ++i) {
    pre[i] = chip[i] + eps * sign_of(grad[i]);
    adv[i] = std::clamp(pre[i], T{0}, T{1});
  }
  return {std::move(pre), std::move(adv), std::move(grad), label};
}

template SignedStep<float> fgs_step<float>(const Model&, const TensorF&, double);
template SignedStep<double> fgs_step<double>(const Model&, const TensorD&, double);

TensorF fgs(const Model& model, const TensorF& chip, double epsilon) {
  return fgs_step<float>(model, chip, epsilon).adversarial;
}

TensorF iterative_fgs(const Model& model, const TensorF& chip, double epsilon, double alpha, std::size_t iterations) {
  if (!(epsilon >= 0.0)) throw UsageError("iterative_fgs: epsilon must be >= 0");
  if (!(alpha > 0.0)) throw UsageError("iterative_fgs: alpha must be > 0");
  model.check_image(chip.shape());
  const int label = predicted_label(model, chip);
  const float eps = static_cast<float>(epsilon);
  const float step = static_cast<float>(alpha);
  TensorF x = chip;
  for (std::size_t it = 0; it < iterations; ++it) {
    const auto grad = model.loss_and_input_grad<float>(x, label).gradient;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float moved = x[i] + step * sign_of(grad[i]);
      const float ball = std::clamp(moved, chip[i] - eps, chip[i] + eps);
      x[i] = std::clamp(ball, 0.0f, 1.0f);
    }
  }
  return x;
}

template <typename T>
ad::Var<T> attack_objective(const Model& model, ad::Var<T> elements, std::span<const ObjectiveFrame> frames,
                            const AttackConfig& config, int label) {
  if (frames.empty()) throw UsageError("attack objective: no frames");
  auto& tape = elements.tape();
  const T sign = config.targeted ? T{1} : T{-1};
  ad::Var<T> total;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& frame = frames[f];
    const Tensor<T> original = frame.pixels->template cast<T>();
    const std::size_t chip_size = original.dim(0);
    auto raster = render<T>(elements, config.n, config.element_size_m, frame.gsd_m_per_px);
    const auto placement = Placement::centered(chip_size, raster.shape()[0], frame.offset[0], frame.offset[1]);
    auto composite = overlay<T>(tape.constant(original), raster, placement);
    auto ce = ad::softmax_cross_entropy(model.logits(tape, composite.image), label);
    auto d = penalty_d<T>(composite.image, original, composite.footprint, *frame.edges, config.weights);
    auto term = ad::add(ad::scale(ce, sign), d);
    total = f == 0 ? term : ad::add(total, term);
  }
  return ad::scale(total, static_cast<T>(1.0 / static_cast<double>(frames.size())));
}

template ad::Var<float> attack_objective<float>(const Model&, ad::Var<float>, std::span<const ObjectiveFrame>,
                                                const AttackConfig&, int);
template ad::Var<double> attack_objective<double>(const Model&, ad::Var<double>, std::span<const ObjectiveFrame>,
                                                  const AttackConfig&, int);

PhysicalPatch initial_patch(const AttackConfig& config, const ImageChip& frame) {
  PhysicalPatch patch(config.n, config.element_size_m);
  const std::size_t chip_size = frame.size();
  const std::size_t p = rendered_side(config.n, config.element_size_m, frame.metadata.gsd_m_per_px);
  const auto placement = Placement::centered(chip_size, p);
  const auto fp = footprint_of(chip_size, chip_size, p, placement);
  const auto index = render_index(config.n, p);

  std::vector<double> sums(patch.elements.size(), 0.0);
  std::vector<std::size_t> counts(config.n * config.n, 0);
  double fp_sum[3] = {0.0, 0.0, 0.0};
  for (long y = fp.top; y < fp.bottom; ++y) {
    for (long x = fp.left; x < fp.right; ++x) {
      const auto ry = static_cast<std::size_t>(y - placement.top);
      const auto rx = static_cast<std::size_t>(x - placement.left);
      // The gather index stores flat offsets; the channel-0 entry divided by 3 is the element.
      const std::size_t element = (*index)[(ry * p + rx) * 3] / 3;
      ++counts[element];
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = frame.pixels.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
        sums[element * 3 + c] += v;
        fp_sum[c] += v;
      }
    }
  }
  const double fp_count = static_cast<double>(fp.count());
  for (std::size_t e = 0; e < counts.size(); ++e) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double mean = counts[e] ? sums[e * 3 + c] / static_cast<double>(counts[e]) : fp_sum[c] / fp_count;
      patch.elements[e * 3 + c] = static_cast<float>(std::clamp(mean, 0.0, 1.0));
    }
  }
  return patch;
}

AttackRun attack_sequence(const Model& model, const SceneSequence& seq, const AttackConfig& config) {
  config.validate(seq);
  const int label = config.attack_label(seq.true_label);
  model.check_label(label);

  std::vector<EdgeMask> edges;
  std::vector<ObjectiveFrame> frames;
  edges.reserve(config.frames_attacked);
  for (std::size_t f = 0; f < config.frames_attacked; ++f) {
    const auto& chip = seq.frames[f];
    model.check_image(chip.pixels.shape());
    // Surfaces below-resolution renders before any optimization.
    rendered_side(config.n, config.element_size_m, chip.metadata.gsd_m_per_px);
    edges.push_back(canny(chip.pixels, config.canny));
  }
  for (std::size_t f = 0; f < config.frames_attacked; ++f) {
    frames.push_back({&seq.frames[f].pixels, seq.frames[f].metadata.gsd_m_per_px, &edges[f], {0, 0}});
  }

  AttackRun run;
  run.patch = initial_patch(config, seq.frames.front());
  TransformSampler sampler(config.jitter_px, config.seed);
  auto& elements = run.patch.elements;
  for (const auto& phase : config.phases) {
    const float lr = static_cast<float>(phase.learning_rate);
    for (std::size_t epoch = 0; epoch < phase.epochs; ++epoch) {
      for (auto& frame : frames) frame.offset = sampler.sample();
      ad::Tape<float> tape;
      auto var = tape.leaf(elements, true);
      auto objective = attack_objective<float>(model, var, frames, config, label);
      const double value = objective.value()[0];
      if (!std::isfinite(value)) {
        throw NumericError("attack: objective became non-finite on " + seq.scene_id);
      }
      run.objective_history.push_back(value);
      tape.backward(objective);
      const auto& grad = var.grad();
      for (std::size_t i = 0; i < elements.size(); ++i) {
        elements[i] = std::clamp(elements[i] - lr * grad[i], 0.0f, 1.0f);
      }
    }
  }
  run.result = evaluate_attack(model, seq, run.patch, config);
  return run;
}

double eot_distance(std::span<const TensorF> originals, std::span<const TensorF> composites,
                    const std::function<double(const TensorF&, const TensorF&)>& metric) {
  if (originals.size() != composites.size()) throw UsageError("eot_distance: unequal sample counts");
  if (originals.empty()) throw UsageError("eot_distance: empty sample set");
  double total = 0.0;
  for (std::size_t i = 0; i < originals.size(); ++i) total += metric(originals[i], composites[i]);
  return total / static_cast<double>(originals.size());
}

}  // namespace geopatch
