// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geopatch/autodiff.hpp"
#include "json.hpp"

namespace geopatch {

/// Architecture of the white-box target. Each conv block is 3x3 conv (stride
/// 1, same padding) + bias + relu + 2x2 max pool; the head is a stack of
/// relu dense layers followed by a linear k-way layer. With no conv blocks
/// and no hidden widths the model is a linear-softmax classifier.
struct ModelConfig {
  std::size_t input_size = 64;
  std::size_t channels = 3;
  std::size_t class_count = 6;
  std::vector<std::size_t> conv_filters = {16, 32, 64};
  std::vector<std::size_t> dense_widths = {128};
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct Parameter {
  std::string name;
  TensorF value;
};

struct Prediction {
  int label = 0;
  std::vector<double> probabilities;
};

template <typename T>
struct InputGradient {
  double loss = 0.0;
  Tensor<T> gradient;
};

class Model {
 public:
  /// Deterministic He-uniform initialization from config.seed.
  explicit Model(ModelConfig config);
  Model(ModelConfig config, std::vector<Parameter> params);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  std::vector<Parameter>& mutable_parameters() noexcept { return params_; }
  std::size_t parameter_count() const;
  Shape input_shape() const { return {config_.input_size, config_.input_size, config_.channels}; }

  /// Records the forward pass on `tape`. When `param_vars` is non-null the
  /// parameters become gradient-tracked leaves and are returned through it.
  template <typename T>
  ad::Var<T> logits(ad::Tape<T>& tape, ad::Var<T> image, std::vector<ad::Var<T>>* param_vars = nullptr) const;

  Prediction predict(const TensorF& image) const;
  /// J(x, label) and its gradient with respect to the pixels; parameters
  /// are held fixed.
  template <typename T>
  InputGradient<T> loss_and_input_grad(const Tensor<T>& image, int label) const;

  void check_image(const Shape& shape) const;
  void check_label(int label) const;

 private:
  ModelConfig config_;
  std::vector<Parameter> params_;
};

struct LabeledImage {
  TensorF pixels;
  int label = 0;
};

struct TrainOptions {
  std::size_t epochs = 20;
  double learning_rate = 0.02;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_accuracy;
  double seconds = 0.0;
};

struct TrainingLog {
  std::vector<EpochStats> epochs;
};

void to_json(nlohmann::json& j, const TrainOptions& o);
void from_json(const nlohmann::json& j, TrainOptions& o);
void to_json(nlohmann::json& j, const TrainingLog& log);

/// Minibatch SGD on cross-entropy. `progress` (optional) is called after
/// every epoch.
TrainingLog train(Model& model, const std::vector<LabeledImage>& train_set, const std::vector<LabeledImage>& val_set,
                  const TrainOptions& options, const std::function<void(const EpochStats&)>& progress = {});

double accuracy(const Model& model, const std::vector<LabeledImage>& data);

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace geopatch
