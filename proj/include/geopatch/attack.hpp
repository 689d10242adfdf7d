// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "geopatch/classifier.hpp"
#include "geopatch/edge_penalty.hpp"
#include "geopatch/evaluation.hpp"
#include "geopatch/geodata.hpp"
#include "geopatch/patch.hpp"
#include "geopatch/random.hpp"

namespace geopatch {

struct LearningPhase {
  std::size_t epochs = 0;
  double learning_rate = 0.0;
};

struct AttackConfig {
  bool targeted = true;
  int target_label = -1;
  /// Leading frames of the sequence visible to the optimizer.
  std::size_t frames_attacked = 1;
  std::size_t n = 60;
  double element_size_m = 0.5;
  PenaltyWeights weights;
  std::vector<LearningPhase> phases = {{1000, 100.0}, {1000, 20.0}};
  int jitter_px = 2;
  CannyParams canny;
  std::uint64_t seed = 1;
  std::string experiment_id;

  /// Throws UsageError when the config cannot attack `seq`.
  void validate(const SceneSequence& seq) const;
  /// The label the optimizer pushes toward (targeted) or away from.
  int attack_label(int true_label) const { return targeted ? target_label : true_label; }
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

/// Samples per-frame placement jitter, uniform over [-J, J]^2. Scale comes
/// from each frame's GSD and is not sampled.
class TransformSampler {
 public:
  TransformSampler(int jitter_px, std::uint64_t seed);

  std::array<int, 2> sample();
  int jitter_px() const noexcept { return jitter_px_; }

 private:
  int jitter_px_;
  Rng rng_;
};

/// Fast gradient sign: clamp01(x + eps * sign(grad J(x, y(x)))), with y(x)
/// the model's own prediction.
TensorF fgs(const Model& model, const TensorF& chip, double epsilon);

template <typename T>
struct SignedStep {
  Tensor<T> pre_clamp;  // x + eps * sign(g)
  Tensor<T> adversarial;
  Tensor<T> gradient;  // g at x
  int label = 0;
};
/// fgs with the intermediate values exposed, in either precision.
template <typename T>
SignedStep<T> fgs_step(const Model& model, const Tensor<T>& chip, double epsilon);

/// Repeated signed steps of size alpha, each projected onto the eps-ball
/// around the original chip intersected with [0, 1].
TensorF iterative_fgs(const Model& model, const TensorF& chip, double epsilon, double alpha, std::size_t iterations);

/// Per-frame inputs to the sequence objective.
struct ObjectiveFrame {
  const TensorF* pixels = nullptr;
  double gsd_m_per_px = 1.0;
  const EdgeMask* edges = nullptr;
  std::array<int, 2> offset{0, 0};
};

/// Mean over frames of  sign * J(frame (+) render(elements), label) + d(...),
/// sign = +1 (targeted) or -1 (non-targeted).
template <typename T>
ad::Var<T> attack_objective(const Model& model, ad::Var<T> elements, std::span<const ObjectiveFrame> frames,
                            const AttackConfig& config, int label);

/// Elements start at the mean of the chip pixels each one covers in
/// `frame` at the centered placement.
PhysicalPatch initial_patch(const AttackConfig& config, const ImageChip& frame);

struct AttackRun {
  PhysicalPatch patch;
  AttackResult result;
  /// Objective value evaluated at the start of every epoch.
  std::vector<double> objective_history;
};

/// Optimizes a single patch jointly over the leading frames_attacked frames
/// and evaluates it on every frame of the sequence.
AttackRun attack_sequence(const Model& model, const SceneSequence& seq, const AttackConfig& config);

/// Mean of metric(original, composite) over explicit transform samples.
double eot_distance(std::span<const TensorF> originals, std::span<const TensorF> composites,
                    const std::function<double(const TensorF&, const TensorF&)>& metric);

}  // namespace geopatch
