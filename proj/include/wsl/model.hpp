#pragma once

// Multi-scale weakly supervised classifier: a VGG-style backbone whose
// selected blocks each feed a 1x1 class-score head, global max pooling per
// head, and scores summed across heads.

#include "wsl/adam.hpp"
#include "wsl/autodiff.hpp"
#include "wsl/keyvalue.hpp"
#include "wsl/preprocess.hpp"
#include "wsl/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace wsl {

struct NetworkConfig {
    std::size_t input_size = 64;
    std::vector<std::size_t> blocks{16, 32, 64, 96, 96};
    std::vector<std::size_t> head_levels{3, 4, 5}; // 1-based block indices, ascending
    std::size_t num_classes = 3;
    double gamma = 1.0;
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps = 1e-8;
    int max_iters = 2000;
    int val_every = 50;
    int patience_iters = 200;
    int batch_size = 16;
    bool aux_losses = false; // add a focal term per head on its own scores

    void validate() const; // ConfigError on violation
};

std::string format_config(const NetworkConfig& cfg);
// Unknown keys are rejected.
NetworkConfig parse_config(const KeyValues& kv);
// Sets one field; false when the key is not a network key.
bool set_config_key(NetworkConfig& cfg, const std::string& key, const std::string& value);

struct ModelState {
    NetworkConfig config;
    std::vector<std::string> names;
    std::vector<Tensor> params;
    std::uint64_t step = 0;

    std::size_t parameter_count() const;
    const Tensor& param(const std::string& name) const;
    Tensor& param(const std::string& name);
};

// He-normal kernels (sigma = sqrt(2 / fan_in)), zero biases, heads without
// bias. Parameter order: block b conv1 w, b, conv2 w, b for every block,
// then one head kernel [K, C_l, 1, 1] per head level.
ModelState build(const NetworkConfig& cfg, std::uint64_t seed);

// Side length of the block-l output (after its pool), 1-based.
std::size_t feature_side(const NetworkConfig& cfg, std::size_t level);

struct ForwardOutput {
    std::vector<std::size_t> levels;
    std::vector<Tensor> score_maps;   // [K, h_l, w_l]
    std::vector<Tensor> level_scores; // [K]
    Tensor scores;                    // [K], sum over levels in ascending order
    Tensor probs;                     // [K]
};

enum class ParamMode { Constant, Trainable };

struct TapeForward {
    std::vector<Var> params; // empty unless Trainable
    std::vector<std::size_t> levels;
    std::vector<Var> score_maps;
    std::vector<Var> level_scores;
    Var scores{}; // only valid when every head level was evaluated
    bool has_scores = false;
};

// Builds the forward graph for a [H,W] or [1,H,W] image. With max_level > 0
// the backbone stops after that block and only heads up to it are evaluated.
TapeForward forward_on_tape(const ModelState& model, Tape& tape, Var image, ParamMode mode,
                            std::size_t max_level = 0);

ForwardOutput forward(const ModelState& model, const Tensor& image);

struct Prediction {
    int label = 0;
    ForwardOutput output;
};

// argmax of the probabilities, ties to the lowest class id.
Prediction predict(const ModelState& model, const Tensor& image);
int argmax(const Tensor& v);

// w_c = (N / n_c) / K. ContractError on an empty class.
Tensor class_weights(const std::vector<std::size_t>& class_counts);

// Per-example term  -w_c (1 - P_c)^gamma (S_c - lse(S)) / batch, with the
// focal factor held constant for the gradient.
Var focal_loss_term(Tape& tape, Var scores, int label, const Tensor& weights, double gamma, std::size_t batch);
double focal_loss_term(const Tensor& scores, int label, const Tensor& weights, double gamma, std::size_t batch);
// Mean over the batch, terms summed in order.
double focal_loss(const std::vector<Tensor>& scores, const std::vector<int>& labels, const Tensor& weights,
                  double gamma);

struct Sample {
    Tensor image; // [input_size, input_size]
    int label = 0;
};

struct HistoryRow {
    int iter = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainOptions {
    std::uint64_t seed = 0;
    bool augment = true;
    AugmentConfig augment_cfg;
    std::function<void(const HistoryRow&)> on_validate;
};

struct TrainResult {
    ModelState best;
    std::vector<HistoryRow> history;
    int iterations = 0;
    int best_iter = 0;
    std::string stop_reason;
};

struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& what, int iter) : std::runtime_error(what), iter(iter) {}
    int iter;
};

// Adam on minibatches drawn with replacement; batch members run in parallel
// and gradients are reduced in ascending batch order. Validation every
// val_every iterations (and at the last one); the returned model has the
// best validation accuracy, ties broken by lower validation loss. Stops
// after max_iters or when validation loss has not improved for
// patience_iters.
TrainResult train(ModelState model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const Tensor& weights, const TrainOptions& opts);

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<Prediction> predictions;
};

Evaluation evaluate(const ModelState& model, const std::vector<Sample>& set, const Tensor& weights);

std::string format_history(const std::vector<HistoryRow>& history);

// WSCK container plus a `<path>.cfg` sidecar (extension replaced by .cfg).
void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);
// Loads into a model built from a known config; FormatError on any name or
// dims mismatch.
void load_checkpoint_into(ModelState& model, const std::filesystem::path& path);
std::filesystem::path config_path_for(const std::filesystem::path& checkpoint);

std::vector<std::uint8_t> encode_checkpoint(const std::vector<std::string>& names, const std::vector<Tensor>& tensors);
void decode_checkpoint(std::span<const std::uint8_t> bytes, std::vector<std::string>& names,
                       std::vector<Tensor>& tensors);

} // namespace wsl
