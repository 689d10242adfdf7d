// Copyright 2026 The geopatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "geopatch/classifier.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "geopatch/io.hpp"
#include "geopatch/random.hpp"

namespace geopatch {

void ModelConfig::validate() const {
  if (class_count < 2) throw UsageError("model config: class_count must be at least 2");
  if (input_size == 0 || channels == 0) throw UsageError("model config: input extents must be positive");
  const std::size_t factor = std::size_t{1} << conv_filters.size();
  if (input_size % factor != 0) {
    throw UsageError("model config: input_size " + std::to_string(input_size) + " is not divisible by 2^" +
                     std::to_string(conv_filters.size()));
  }
  for (auto f : conv_filters) {
    if (f == 0) throw UsageError("model config: conv filter counts must be positive");
  }
  for (auto w : dense_widths) {
    if (w == 0) throw UsageError("model config: dense widths must be positive");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_size", c.input_size},     {"channels", c.channels},
                     {"class_count", c.class_count},   {"conv_filters", c.conv_filters},
                     {"dense_widths", c.dense_widths}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.input_size = j.value("input_size", c.input_size);
  c.channels = j.value("channels", c.channels);
  c.class_count = j.value("class_count", c.class_count);
  c.conv_filters = j.value("conv_filters", c.conv_filters);
  c.dense_widths = j.value("dense_widths", c.dense_widths);
  c.seed = j.value("seed", c.seed);
}

namespace {

std::vector<Parameter> parameter_layout(const ModelConfig& c) {
  std::vector<Parameter> params;
  std::size_t channels = c.channels;
  std::size_t side = c.input_size;
  for (std::size_t i = 0; i < c.conv_filters.size(); ++i) {
    const auto f = c.conv_filters[i];
    params.push_back({"conv" + std::to_string(i + 1) + ".kernel", TensorF({3, 3, channels, f})});
    params.push_back({"conv" + std::to_string(i + 1) + ".bias", TensorF({f})});
    channels = f;
    side /= 2;
  }
  std::size_t width = side * side * channels;
  auto widths = c.dense_widths;
  widths.push_back(c.class_count);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    params.push_back({"dense" + std::to_string(i + 1) + ".weights", TensorF({width, widths[i]})});
    params.push_back({"dense" + std::to_string(i + 1) + ".bias", TensorF({widths[i]})});
    width = widths[i];
  }
  return params;
}

}  // namespace

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  params_ = parameter_layout(config_);
  Rng rng(derive_seed(config_.seed, {0x6d6f64656cULL}));
  for (auto& p : params_) {
    if (p.value.rank() == 1) continue;  // biases start at zero
    const auto& s = p.value.shape();
    const std::size_t fan_in = p.value.rank() == 4 ? s[0] * s[1] * s[2] : s[0];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : p.value.storage()) v = static_cast<float>(rng.uniform(-bound, bound));
  }
}

Model::Model(ModelConfig config, std::vector<Parameter> params) : config_(std::move(config)) {
  config_.validate();
  params_ = parameter_layout(config_);
  if (params.size() != params_.size()) throw DataError("model: parameter list does not match architecture");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.shape() != params_[i].value.shape()) {
      throw DataError("model: parameter " + params_[i].name + " has shape " + shape_string(params[i].value.shape()) +
                      ", expected " + shape_string(params_[i].value.shape()));
    }
    params_[i].value = std::move(params[i].value);
  }
}

std::size_t Model::parameter_count() const {
  return std::accumulate(params_.begin(), params_.end(), std::size_t{0},
                         [](std::size_t acc, const Parameter& p) { return acc + p.value.size(); });
}

void Model::check_image(const Shape& shape) const {
  if (shape != input_shape()) {
    throw ShapeError("model expects image " + shape_string(input_shape()) + ", got " + shape_string(shape));
  }
}

void Model::check_label(int label) const {
  if (label < 0 || static_cast<std::size_t>(label) >= config_.class_count) {
    throw UsageError("label " + std::to_string(label) + " outside [0, " + std::to_string(config_.class_count) + ")");
  }
}

template <typename T>
ad::Var<T> Model::logits(ad::Tape<T>& tape, ad::Var<T> image, std::vector<ad::Var<T>>* param_vars) const {
  check_image(image.shape());
  const bool track = param_vars != nullptr;
  std::vector<ad::Var<T>> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) {
    if constexpr (std::is_same_v<T, float>) {
      vars.push_back(tape.leaf(p.value, track));
    } else {
      vars.push_back(tape.leaf(p.value.template cast<T>(), track));
    }
  }
  std::size_t next = 0;
  auto x = image;
  for (std::size_t i = 0; i < config_.conv_filters.size(); ++i) {
    x = ad::conv2d(x, vars[next], 1, ad::Padding::same);
    x = ad::add_channel_bias(x, vars[next + 1]);
    x = ad::maxpool2(ad::relu(x));
    next += 2;
  }
  x = ad::reshape(x, {x.value().size()});
  const std::size_t layers = config_.dense_widths.size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    x = ad::dense(x, vars[next], vars[next + 1]);
    if (i + 1 < layers) x = ad::relu(x);
    next += 2;
  }
  if (param_vars) *param_vars = std::move(vars);
  return x;
}

Prediction Model::predict(const TensorF& image) const {
  ad::Tape<float> tape;
  auto z = logits(tape, tape.constant(image));
  const auto p = ad::softmax<float>(z.value().data());
  Prediction out;
  out.probabilities.assign(p.begin(), p.end());
  // max_element returns the first maximum: ties go to the lowest index.
  out.label = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  return out;
}

template <typename T>
InputGradient<T> Model::loss_and_input_grad(const Tensor<T>& image, int label) const {
  check_label(label);
  ad::Tape<T> tape;
  auto x = tape.leaf(image, true);
  auto loss = ad::softmax_cross_entropy(logits(tape, x), label);
  tape.backward(loss);
  return {static_cast<double>(loss.value()[0]), Tensor<T>(image.shape(), x.grad())};
}

template ad::Var<float> Model::logits<float>(ad::Tape<float>&, ad::Var<float>, std::vector<ad::Var<float>>*) const;
template ad::Var<double> Model::logits<double>(ad::Tape<double>&, ad::Var<double>,
                                                std::vector<ad::Var<double>>*) const;
template InputGradient<float> Model::loss_and_input_grad<float>(const TensorF&, int) const;
template InputGradient<double> Model::loss_and_input_grad<double>(const TensorD&, int) const;

// ---------------------------------------------------------------- training

void to_json(nlohmann::json& j, const TrainOptions& o) {
  j = nlohmann::json{
      {"epochs", o.epochs}, {"learning_rate", o.learning_rate}, {"batch_size", o.batch_size}, {"seed", o.seed}};
}

void from_json(const nlohmann::json& j, TrainOptions& o) {
  o.epochs = j.value("epochs", o.epochs);
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.seed = j.value("seed", o.seed);
}

void to_json(nlohmann::json& j, const TrainingLog& log) {
  j = nlohmann::json::array();
  for (const auto& e : log.epochs) {
    nlohmann::json row{{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"train_accuracy", e.train_accuracy},
                       {"val_accuracy", e.val_accuracy ? nlohmann::json(*e.val_accuracy) : nlohmann::json(nullptr)}};
    j.push_back(std::move(row));
  }
}

double accuracy(const Model& model, const std::vector<LabeledImage>& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data) correct += model.predict(ex.pixels).label == ex.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainingLog train(Model& model, const std::vector<LabeledImage>& train_set, const std::vector<LabeledImage>& val_set,
                  const TrainOptions& options, const std::function<void(const EpochStats&)>& progress) {
  if (train_set.empty()) throw DataError("train: empty dataset");
  if (options.batch_size == 0) throw UsageError("train: batch_size must be positive");
  for (const auto& ex : train_set) {
    model.check_image(ex.pixels.shape());
    model.check_label(ex.label);
    for (auto v : ex.pixels.data()) {
      if (!(v >= 0.0f && v <= 1.0f)) throw DataError("train: pixel values must lie in [0, 1]");
    }
  }
  auto& params = model.mutable_parameters();
  std::vector<std::vector<float>> grads(params.size());
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(options.seed, {0x747261696eULL}));
  const auto lr = static_cast<float>(options.learning_rate);

  TrainingLog log;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(i) - 1))]);
    }
    double loss_total = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::size_t end = std::min(order.size(), begin + options.batch_size);
      for (std::size_t p = 0; p < params.size(); ++p) grads[p].assign(params[p].value.size(), 0.0f);
      for (std::size_t b = begin; b < end; ++b) {
        const auto& ex = train_set[order[b]];
        ad::Tape<float> tape;
        std::vector<ad::Var<float>> vars;
        auto z = model.logits(tape, tape.constant(ex.pixels), &vars);
        const auto& zv = z.value();
        const auto pred = std::max_element(zv.data().begin(), zv.data().end()) - zv.data().begin();
        correct += pred == ex.label ? 1 : 0;
        auto loss = ad::softmax_cross_entropy(z, ex.label);
        loss_total += loss.value()[0];
        tape.backward(loss);
        for (std::size_t p = 0; p < params.size(); ++p) {
          const auto& g = vars[p].grad();
          for (std::size_t k = 0; k < g.size(); ++k) grads[p][k] += g[k];
        }
      }
      const float step = lr / static_cast<float>(end - begin);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p].value.storage();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= step * grads[p][k];
      }
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_total / static_cast<double>(order.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!std::isfinite(stats.train_loss)) throw NumericError("train: loss diverged at epoch " + std::to_string(epoch));
    if (!val_set.empty()) stats.val_accuracy = accuracy(model, val_set);
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.epochs.push_back(stats);
    if (progress) progress(stats);
  }
  return log;
}

// ---------------------------------------------------------------- checkpoint

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  nlohmann::json layers = nlohmann::json::array();
  std::vector<float> blob;
  blob.reserve(model.parameter_count());
  for (const auto& p : model.parameters()) {
    layers.push_back({{"name", p.name}, {"shape", p.value.shape()}});
    blob.insert(blob.end(), p.value.data().begin(), p.value.data().end());
  }
  const nlohmann::json header{{"format", "geopatch-checkpoint"},
                              {"version", kCheckpointVersion},
                              {"config", model.config()},
                              {"layers", layers},
                              {"param_count", blob.size()}};
  io::write_file_atomic(path, io::encode_framed(header, blob));
}

Model load_checkpoint(const std::filesystem::path& path) {
  const auto origin = path.string();
  auto framed = io::decode_framed(io::read_file(path), origin);
  const auto& h = framed.header;
  try {
    if (h.value("format", "") != "geopatch-checkpoint") throw DataError(origin + ": not a geopatch checkpoint");
    if (h.value("version", -1) != kCheckpointVersion) {
      throw DataError(origin + ": unsupported checkpoint version " + h.value("version", nlohmann::json()).dump());
    }
    const auto count = h.at("param_count").get<std::size_t>();
    if (framed.blob.size() != count) {
      throw DataError(origin + ": parameter blob holds " + std::to_string(framed.blob.size()) + " values, header declares " +
                      std::to_string(count) + " (truncated?)");
    }
    auto config = h.at("config").get<ModelConfig>();
    std::vector<Parameter> params;
    std::size_t offset = 0;
    for (const auto& layer : h.at("layers")) {
      auto shape = layer.at("shape").get<Shape>();
      const auto n = shape_size(shape);
      if (offset + n > framed.blob.size()) throw DataError(origin + ": layer shapes exceed the parameter blob");
      std::vector<float> values(framed.blob.begin() + static_cast<long>(offset),
                                framed.blob.begin() + static_cast<long>(offset + n));
      params.push_back({layer.at("name").get<std::string>(), TensorF(std::move(shape), std::move(values))});
      offset += n;
    }
    if (offset != framed.blob.size()) throw DataError(origin + ": layer shapes do not cover the parameter blob");
    return Model(std::move(config), std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": malformed header: " + e.what());
  }
}

}  // namespace geopatch
