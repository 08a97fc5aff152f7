#pragma once

// Run configuration and the end-to-end protocol shared by the command line
// tool and the acceptance suite: task filtering, patient-level k-fold
// training and evaluation, saliency-based localization.

#include "wsl/attribution.hpp"
#include "wsl/evaluation.hpp"
#include "wsl/localization.hpp"
#include "wsl/model.hpp"
#include "wsl/phantom.hpp"
#include "wsl/preprocess.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace wsl {

enum class Task { ThreeWay, NpVsCovid, NpVsCap, CovidVsCap };

struct TaskInfo {
    Task task = Task::ThreeWay;
    std::string name;
    std::vector<int> source_labels; // phantom label of each task class, in task order
    std::vector<std::string> class_names;
    std::optional<int> no_lesion_class; // task class holding lesion-free images
};

TaskInfo task_info(Task task);
Task parse_task(const std::string& name); // ConfigError on unknown names
std::optional<int> remap_label(const TaskInfo& info, int phantom_label);
// Keeps records of the task's classes with labels renumbered.
DatasetIndex filter_index(const DatasetIndex& index, const TaskInfo& info);

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    NetworkConfig network; // num_classes follows the task
    bool augment = true;
    AugmentConfig augmentation;
    bool normalize = false;
    NormalizationConfig normalization;
    LocalizationConfig localization;
    int ig_steps = 25;
    std::uint64_t seed = 0;
    Task task = Task::ThreeWay;
    int folds = 5;
    std::string data; // dataset directory holding index.tsv

    void validate() const;
};

std::string format_run_config(const RunConfig& cfg);
// Applies keys on top of cfg; unknown keys are rejected.
void apply_run_config(RunConfig& cfg, const KeyValues& kv);
RunConfig parse_run_config(const KeyValues& kv);

// Optional sliding-window normalization, then resize to size x size.
Tensor prepare_image(const Tensor& raw, std::size_t size, const RunConfig& cfg);

std::vector<Sample> load_samples(const DatasetIndex& index, const std::vector<int>& patients, const RunConfig& cfg);
std::vector<Tensor> load_masks(const DatasetIndex& index, const std::vector<int>& patients, std::size_t size);

struct FoldResult {
    FoldSplit split;
    TrainResult training;
    FoldOutcome joint;
    std::vector<FoldOutcome> per_level; // classifier = argmax of each head's own scores
    double seconds = 0.0;
};

using Logger = std::function<void(const std::string&)>;

NetworkConfig network_for(const RunConfig& cfg);
std::uint64_t fold_seed(std::uint64_t seed, int fold);

// Trains one model on the fold's train patients with early stopping on its
// val patients. `index` must already be filtered to the task.
TrainResult train_fold(const DatasetIndex& index, const FoldSplit& split, const RunConfig& cfg, const Logger& log = {});
FoldOutcome outcome_from(const Evaluation& ev, const std::vector<Sample>& set);
std::vector<FoldOutcome> level_outcomes(const Evaluation& ev, const std::vector<Sample>& set);

// The full k-fold protocol on a filtered index.
std::vector<FoldResult> run_crossval(const DatasetIndex& index, const RunConfig& cfg, const Logger& log = {});

struct LocalizeOutcome {
    int target = 0;
    bool localized = false; // false when the target is the lesion-free class
    SaliencyBundle saliency;
    std::vector<BoundingBox> boxes;
};

// Joint saliency then extract_boxes. When the target class is the task's
// lesion-free class no lesions are reported and saliency is skipped.
LocalizeOutcome localize_image(const ModelState& model, const Tensor& image, const RunConfig& cfg,
                               std::optional<int> explicit_target = std::nullopt);

} // namespace wsl
