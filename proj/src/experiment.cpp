#include "wsl/experiment.hpp"

#include "wsl/tensor_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

namespace wsl {

TaskInfo task_info(Task task) {
    switch (task) {
    case Task::ThreeWay: return {task, "threeway", {0, 1, 2}, {"NP", "CAP", "COVID"}, 0};
    case Task::NpVsCovid: return {task, "np_vs_covid", {0, 2}, {"NP", "COVID"}, 0};
    case Task::NpVsCap: return {task, "np_vs_cap", {0, 1}, {"NP", "CAP"}, 0};
    case Task::CovidVsCap: return {task, "covid_vs_cap", {2, 1}, {"COVID", "CAP"}, std::nullopt};
    }
    throw ContractError("unknown task");
}

Task parse_task(const std::string& name) {
    for (Task t : {Task::ThreeWay, Task::NpVsCovid, Task::NpVsCap, Task::CovidVsCap})
        if (task_info(t).name == name) return t;
    throw ConfigError("unknown task '" + name + "' (threeway, np_vs_covid, np_vs_cap, covid_vs_cap)");
}

std::optional<int> remap_label(const TaskInfo& info, int phantom_label) {
    for (std::size_t i = 0; i < info.source_labels.size(); ++i)
        if (info.source_labels[i] == phantom_label) return static_cast<int>(i);
    return std::nullopt;
}

DatasetIndex filter_index(const DatasetIndex& index, const TaskInfo& info) {
    DatasetIndex out;
    out.root = index.root;
    out.class_counts.assign(info.source_labels.size(), 0);
    for (const auto& r : index.records) {
        const auto l = remap_label(info, r.label);
        if (!l) continue;
        DatasetRecord copy = r;
        copy.label = *l;
        out.class_counts[static_cast<std::size_t>(*l)]++;
        out.records.push_back(std::move(copy));
    }
    return out;
}

void RunConfig::validate() const {
    network_for(*this).validate();
    if (augment) augmentation.validate();
    if (normalize) normalization.validate();
    localization.validate();
    if (ig_steps < 1) throw ConfigError("ig_steps must be >= 1");
    if (folds < 2) throw ConfigError("folds must be >= 2");
}

std::string format_run_config(const RunConfig& c) {
    std::ostringstream os;
    std::istringstream net(format_config(c.network));
    std::string line;
    while (std::getline(net, line))
        if (line.rfind("num_classes", 0) != 0) os << line << '\n';
    const auto& a = c.augmentation;
    os << "augment = " << (c.augment ? "true" : "false") << '\n'
       << "crop_scale_min = " << format_double(a.crop_scale_min) << '\n'
       << "crop_scale_max = " << format_double(a.crop_scale_max) << '\n'
       << "rotate_deg_max = " << format_double(a.rotate_deg_max) << '\n'
       << "flip_prob = " << format_double(a.flip_prob) << '\n'
       << "contrast_min = " << format_double(a.contrast_min) << '\n'
       << "contrast_max = " << format_double(a.contrast_max) << '\n'
       << "normalize = " << (c.normalize ? "true" : "false") << '\n'
       << "window_width = " << format_double(c.normalization.window_width) << '\n'
       << "window_step = " << format_double(c.normalization.step) << '\n'
       << "bin_count = " << c.normalization.bin_count << '\n'
       << "blur_sigma = " << format_double(c.localization.blur_sigma) << '\n'
       << "min_area_frac = " << format_double(c.localization.min_area_frac) << '\n'
       << "ig_steps = " << c.ig_steps << '\n'
       << "seed = " << c.seed << '\n'
       << "task = " << task_info(c.task).name << '\n'
       << "folds = " << c.folds << '\n'
       << "data = " << c.data << '\n';
    return os.str();
}

void apply_run_config(RunConfig& c, const KeyValues& kv) {
    for (const auto& [k, v] : kv) {
        if (k == "num_classes") throw ConfigError("num_classes follows the task and cannot be set");
        if (set_config_key(c.network, k, v)) continue;
        auto& a = c.augmentation;
        if (k == "augment") c.augment = parse_bool(k, v);
        else if (k == "crop_scale_min") a.crop_scale_min = parse_double(k, v);
        else if (k == "crop_scale_max") a.crop_scale_max = parse_double(k, v);
        else if (k == "rotate_deg_max") a.rotate_deg_max = parse_double(k, v);
        else if (k == "flip_prob") a.flip_prob = parse_double(k, v);
        else if (k == "contrast_min") a.contrast_min = parse_double(k, v);
        else if (k == "contrast_max") a.contrast_max = parse_double(k, v);
        else if (k == "normalize") c.normalize = parse_bool(k, v);
        else if (k == "window_width") c.normalization.window_width = parse_double(k, v);
        else if (k == "window_step") c.normalization.step = parse_double(k, v);
        else if (k == "bin_count") c.normalization.bin_count = static_cast<std::size_t>(parse_int(k, v));
        else if (k == "blur_sigma") c.localization.blur_sigma = parse_double(k, v);
        else if (k == "min_area_frac") c.localization.min_area_frac = parse_double(k, v);
        else if (k == "ig_steps") c.ig_steps = static_cast<int>(parse_int(k, v));
        else if (k == "seed") {
            const auto s = parse_int(k, v);
            if (s < 0) throw ConfigError("seed must be non-negative");
            c.seed = static_cast<std::uint64_t>(s);
        } else if (k == "task") c.task = parse_task(v);
        else if (k == "folds") c.folds = static_cast<int>(parse_int(k, v));
        else if (k == "data") c.data = v;
        else throw ConfigError("unknown config key '" + k + "'");
    }
    try {
        c.validate();
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
}

RunConfig parse_run_config(const KeyValues& kv) {
    RunConfig c;
    apply_run_config(c, kv);
    return c;
}

NetworkConfig network_for(const RunConfig& cfg) {
    NetworkConfig n = cfg.network;
    n.num_classes = task_info(cfg.task).source_labels.size();
    return n;
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) { return mix_seed(seed, 0x10000 + static_cast<std::uint64_t>(fold)); }

Tensor prepare_image(const Tensor& raw, std::size_t size, const RunConfig& cfg) {
    require_rank(raw, 2, "prepare_image");
    Tensor img = cfg.normalize ? sliding_window_normalize(raw, cfg.normalization) : raw;
    if (img.dim(0) != size || img.dim(1) != size) img = resize_bilinear(img, size, size);
    return img;
}

namespace {

std::vector<const DatasetRecord*> records_of(const DatasetIndex& index, const std::vector<int>& patients) {
    const std::set<int> keep(patients.begin(), patients.end());
    std::vector<const DatasetRecord*> out;
    for (const auto& r : index.records)
        if (keep.count(r.patient_id)) out.push_back(&r);
    return out;
}

} // namespace

std::vector<Sample> load_samples(const DatasetIndex& index, const std::vector<int>& patients, const RunConfig& cfg) {
    std::vector<Sample> out;
    for (const auto* r : records_of(index, patients))
        out.push_back({prepare_image(load_tensor(index.image_file(*r)), cfg.network.input_size, cfg), r->label});
    return out;
}

std::vector<Tensor> load_masks(const DatasetIndex& index, const std::vector<int>& patients, std::size_t size) {
    std::vector<Tensor> out;
    for (const auto* r : records_of(index, patients)) {
        Tensor m = load_tensor(index.mask_file(*r));
        require_rank(m, 2, "load_masks");
        if (m.dim(0) != size || m.dim(1) != size) {
            m = resize_bilinear(m, size, size);
            for (auto& v : m.data()) v = v >= 0.5 ? 1.0 : 0.0;
        }
        out.push_back(std::move(m));
    }
    return out;
}

TrainResult train_fold(const DatasetIndex& index, const FoldSplit& split, const RunConfig& cfg, const Logger& log) {
    const NetworkConfig net = network_for(cfg);
    const auto train_set = load_samples(index, split.train, cfg);
    const auto val_set = load_samples(index, split.val, cfg);
    if (train_set.empty()) throw ProtocolError("fold " + std::to_string(split.fold_index) + " has no training samples");
    std::vector<std::size_t> counts(net.num_classes, 0);
    for (const auto& s : train_set) counts[static_cast<std::size_t>(s.label)]++;
    const Tensor weights = class_weights(counts);

    TrainOptions opts;
    opts.seed = fold_seed(cfg.seed, split.fold_index);
    opts.augment = cfg.augment;
    opts.augment_cfg = cfg.augmentation;
    if (log)
        opts.on_validate = [&](const HistoryRow& r) {
            std::ostringstream os;
            os << "fold " << split.fold_index << " iter " << r.iter << " train_loss " << format_double(r.train_loss)
               << " val_loss " << format_double(r.val_loss) << " val_acc " << format_double(r.val_acc);
            log(os.str());
        };
    return train(build(net, mix_seed(opts.seed, 0)), train_set, val_set, weights, opts);
}

FoldOutcome outcome_from(const Evaluation& ev, const std::vector<Sample>& set) {
    FoldOutcome o;
    for (std::size_t i = 0; i < set.size(); ++i) {
        o.labels.push_back(set[i].label);
        o.predictions.push_back(ev.predictions[i].label);
        const Tensor& p = ev.predictions[i].output.probs;
        o.probabilities.emplace_back(p.data().begin(), p.data().end());
    }
    return o;
}

std::vector<FoldOutcome> level_outcomes(const Evaluation& ev, const std::vector<Sample>& set) {
    if (set.empty()) return {};
    const std::size_t levels = ev.predictions[0].output.level_scores.size();
    std::vector<FoldOutcome> out(levels);
    for (std::size_t l = 0; l < levels; ++l)
        for (std::size_t i = 0; i < set.size(); ++i) {
            const Tensor& s = ev.predictions[i].output.level_scores[l];
            Tensor p = log_softmax(s);
            for (auto& v : p.data()) v = std::exp(v);
            out[l].labels.push_back(set[i].label);
            out[l].predictions.push_back(argmax(s));
            out[l].probabilities.emplace_back(p.data().begin(), p.data().end());
        }
    return out;
}

std::vector<FoldResult> run_crossval(const DatasetIndex& index, const RunConfig& cfg, const Logger& log) {
    cfg.validate();
    const auto folds = kfold_split(index, cfg.folds, cfg.seed);
    const auto patients = index.patients();
    std::vector<FoldResult> results;
    for (const auto& split : folds) {
        check_split(split, patients);
        const auto t0 = std::chrono::steady_clock::now();
        FoldResult r;
        r.split = split;
        r.training = train_fold(index, split, cfg, log);
        const auto test_set = load_samples(index, split.test, cfg);
        std::vector<std::size_t> counts(network_for(cfg).num_classes, 1);
        const Evaluation ev = evaluate(r.training.best, test_set, class_weights(counts));
        r.joint = outcome_from(ev, test_set);
        r.per_level = level_outcomes(ev, test_set);
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (log) {
            std::ostringstream os;
            os << "fold " << split.fold_index << " test_acc " << format_double(ev.accuracy) << " best_iter "
               << r.training.best_iter << " stop " << r.training.stop_reason;
            log(os.str());
        }
        results.push_back(std::move(r));
    }
    return results;
}

LocalizeOutcome localize_image(const ModelState& model, const Tensor& image, const RunConfig& cfg,
                               std::optional<int> explicit_target) {
    LocalizeOutcome out;
    out.target = explicit_target ? *explicit_target : predict(model, image).label;
    const auto no_lesion = task_info(cfg.task).no_lesion_class;
    if (no_lesion && out.target == *no_lesion) return out;
    AttributionConfig acfg;
    acfg.steps = cfg.ig_steps;
    acfg.target = out.target;
    out.saliency = joint_saliency(model, image, acfg);
    out.boxes = extract_boxes(out.saliency.joint, cfg.localization);
    out.localized = true;
    return out;
}

} // namespace wsl
