#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "nopvis/smali.hpp"

namespace nopvis {

struct ConvLayerSpec {
  std::size_t filters = 32;
  std::size_t width = 8;
};

struct DetectorConfig {
  std::size_t vocabulary_size = 258;
  std::size_t embedding_dim = 8;
  std::vector<ConvLayerSpec> conv = {ConvLayerSpec{}};
  std::size_t hidden_dim = 16;
  std::size_t max_len = kDefaultMaxLen;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument on zero sizes or kernels wider than max_len.
  void validate() const;
  // Shortest input the stacked convolutions accept; shorter ones get padded.
  std::size_t min_len() const;
};

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t size() const { return data.size(); }
};

struct DetectorModel {
  DetectorConfig config;
  // embedding, conv{i}.weight, conv{i}.bias, dense1.*, dense2.*
  std::vector<Tensor> params;

  Tensor& param(std::string_view name);
  const Tensor& param(std::string_view name) const;
  std::size_t parameter_count() const;
};

struct Scores {
  double p_benign = 0.5;
  double p_malware = 0.5;
};

class DetectorInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Glorot-uniform weights, zero biases; deterministic per config.seed.
DetectorModel init_model(const DetectorConfig& config);
DetectorModel zero_model(const DetectorConfig& config);

// Truncate to max_len, pad short inputs with the padding id, range-check ids.
std::vector<OpcodeId> prepare_input(const DetectorConfig& config,
                                    std::span<const OpcodeId> ids);

Scores forward(const DetectorModel& model, std::span<const OpcodeId> ids);
// z_malware - z_benign.
double logit_margin(const DetectorModel& model, std::span<const OpcodeId> ids);
inline Scores forward(const DetectorModel& model, const OpcodeSequence& seq) {
  return forward(model, seq.ids);
}

enum class Label : int { Benign = 0, Malware = 1 };

struct Example {
  std::vector<OpcodeId> ids;
  Label label = Label::Benign;
};

struct Gradients {
  double loss = 0;
  // Same order and shapes as DetectorModel::params.
  std::vector<Tensor> grads;
};

// Mean cross-entropy over the batch. Throws std::invalid_argument when empty.
Gradients loss_and_gradients(const DetectorModel& model,
                             std::span<const Example> batch);
double loss(const DetectorModel& model, std::span<const Example> batch);

enum class Optimizer { Sgd, Adam };

struct TrainOptions {
  std::size_t epochs = 30;
  double learning_rate = 0.01;
  std::size_t batch_size = 16;
  Optimizer optimizer = Optimizer::Adam;
  std::uint64_t seed = 0;
  // Record full-data loss after every epoch (costs one extra pass).
  bool track_loss = false;
};

struct TrainReport {
  std::vector<double> epoch_loss;
};

DetectorModel train(DetectorModel model, std::span<const Example> corpus,
                    const TrainOptions& options, TrainReport* report = nullptr);

// Malware iff p_malware >= threshold.
Label classify(const DetectorModel& model, std::span<const OpcodeId> ids,
               double threshold = 0.5);

// Scores single-position substitutions in a fixed sequence. With one
// convolution layer only the windows covering the changed position are
// recomputed.
class SubstitutionScorer {
 public:
  SubstitutionScorer(const DetectorModel& model, std::span<const OpcodeId> ids);

  // Positions index the prepared (truncated/padded) input. Margins are the
  // logit gap z_malware - z_benign; they order inputs like p_malware but
  // do not saturate.
  double score() const;
  double margin() const { return current_; }
  double score_with(std::size_t position, OpcodeId id) const;
  double margin_with(std::size_t position, OpcodeId id) const;
  void set(std::size_t position, OpcodeId id);
  const std::vector<OpcodeId>& ids() const { return ids_; }

 private:
  double head(const std::vector<double>& pooled) const;
  void conv_row(std::size_t t, std::size_t position, OpcodeId id,
                double* out) const;

  const DetectorModel* model_;
  std::vector<OpcodeId> ids_;
  bool incremental_ = false;
  std::size_t out_len_ = 0;
  std::vector<double> act_;  // out_len x filters, post-ReLU
  double current_ = 0;
};

nlohmann::json to_json(const DetectorModel& model);
DetectorModel model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DetectorConfig& config);
DetectorConfig config_from_json(const nlohmann::json& j);

}  // namespace nopvis
