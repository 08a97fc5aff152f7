#include "wsl/experiment.hpp"
#include "wsl/kernels.hpp"
#include "wsl/pgm.hpp"
#include "wsl/tensor_io.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace wsl;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kDiverged = 4, kProtocol = 5, kFormat = 6 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    int workers = 0;
    std::vector<std::string> overrides;
    bool seed_given = false;
};

void add_globals(CLI::App* sub, Globals& g, bool out_required) {
    sub->add_option("--config", g.config, "Run config file (key = value lines)");
    sub->add_option("--seed", g.seed, "Random seed (overrides the config)");
    auto* out = sub->add_option("--out", g.out, "Output directory");
    if (out_required) out->required();
    sub->add_option("--workers", g.workers, "Worker threads (1 gives the bitwise-determinism path)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--set", g.overrides, "Override one config key, KEY=VALUE (repeatable)");
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

// Config file, then --set overrides, then dedicated flags.
RunConfig effective_config(const Globals& g, const std::vector<std::pair<std::string, std::string>>& flags) {
    RunConfig cfg;
    KeyValues kv;
    if (!g.config.empty()) {
        if (!fs::exists(g.config)) throw IoError("config file not found: " + g.config);
        kv = read_key_values(g.config);
    }
    for (const auto& o : g.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects KEY=VALUE, got '" + o + "'");
        kv.emplace_back(o.substr(0, eq), o.substr(eq + 1));
    }
    if (g.seed_given) kv.emplace_back("seed", std::to_string(g.seed));
    for (const auto& f : flags) kv.push_back(f);
    // Later entries win; keep the last value per key so duplicates are legal here.
    KeyValues merged;
    for (const auto& [k, v] : kv) {
        auto it = std::find_if(merged.begin(), merged.end(), [&](const auto& p) { return p.first == k; });
        if (it == merged.end()) merged.emplace_back(k, v);
        else it->second = v;
    }
    apply_run_config(cfg, merged);
    return cfg;
}

DatasetIndex task_index(const RunConfig& cfg) {
    if (cfg.data.empty()) throw UsageError("no dataset given (--data or data = ...)");
    const fs::path file = fs::path(cfg.data) / kIndexFileName;
    if (!fs::exists(file)) throw IoError("dataset index not found: " + file.string());
    return filter_index(read_index(file), task_info(cfg.task));
}

std::vector<FoldSplit> checked_folds(const DatasetIndex& index, const RunConfig& cfg) {
    try {
        auto folds = kfold_split(index, cfg.folds, cfg.seed);
        for (const auto& f : folds) check_split(f, index.patients());
        return folds;
    } catch (const ContractError& e) {
        throw ProtocolError(e.what());
    }
}

Tensor load_model_image(const fs::path& path, const ModelState& model, const RunConfig& cfg) {
    Tensor img = load_tensor(path);
    if (img.rank() == 3 && img.dim(0) == 1) img = img.reshaped({img.dim(1), img.dim(2)});
    const std::size_t n = model.config.input_size;
    if (img.rank() != 2 || img.dim(0) != n || img.dim(1) != n)
        throw FormatError("image " + path.string() + " has dims " + dims_string(img.dims()) + ", model expects [" +
                          std::to_string(n) + ", " + std::to_string(n) + "]",
                          0);
    return cfg.normalize ? sliding_window_normalize(img, cfg.normalization) : img;
}

std::optional<int> target_class(int cls, const ModelState& model) {
    if (cls < 0) return std::nullopt;
    if (static_cast<std::size_t>(cls) >= model.config.num_classes)
        throw UsageError("--class " + std::to_string(cls) + " out of range for " +
                         std::to_string(model.config.num_classes) + " classes");
    return cls;
}

int cmd_gen(const Globals& g, int patients, int slices, std::size_t size) {
    DatasetSpec spec;
    spec.patients_per_class = patients;
    spec.slices_per_patient = slices;
    spec.size = size;
    spec.seed = g.seed;
    if (patients < 1 || slices < 1) throw UsageError("--patients and --slices must be positive");
    const fs::path out = g.out;
    ensure_dir(out);
    const DatasetIndex index = generate_dataset(spec, out);
    std::cout << "wrote " << index.records.size() << " slices to " << out.string() << '\n';
    for (std::size_t c = 0; c < index.class_counts.size(); ++c)
        std::cout << "  " << label_name(static_cast<int>(c)) << ": " << index.class_counts[c] << '\n';
    return kOk;
}

int cmd_train(const Globals& g, const RunConfig& cfg, int fold, const std::string& resume) {
    const DatasetIndex index = task_index(cfg);
    const auto folds = checked_folds(index, cfg);
    if (fold < 0 || fold >= static_cast<int>(folds.size()))
        throw UsageError("--fold must be in [0, " + std::to_string(folds.size()) + ")");
    const FoldSplit& split = folds[static_cast<std::size_t>(fold)];
    const fs::path out = g.out;
    ensure_dir(out);
    write_text(out / "run.cfg", format_run_config(cfg));

    const NetworkConfig net = network_for(cfg);
    const auto train_set = load_samples(index, split.train, cfg);
    const auto val_set = load_samples(index, split.val, cfg);
    std::vector<std::size_t> counts(net.num_classes, 0);
    for (const auto& s : train_set) counts[static_cast<std::size_t>(s.label)]++;

    TrainOptions opts;
    opts.seed = fold_seed(cfg.seed, split.fold_index);
    opts.augment = cfg.augment;
    opts.augment_cfg = cfg.augmentation;
    opts.on_validate = [](const HistoryRow& r) {
        std::ostringstream os;
        os << "iter " << r.iter << " train_loss " << format_double(r.train_loss) << " val_loss "
           << format_double(r.val_loss) << " val_acc " << format_double(r.val_acc);
        log_line(os.str());
    };
    ModelState model = build(net, mix_seed(opts.seed, 0));
    if (!resume.empty()) {
        load_checkpoint_into(model, resume);
        model.step = load_checkpoint(resume).step;
        log_line("resumed at step " + std::to_string(model.step));
    }
    const TrainResult r = train(std::move(model), train_set, val_set, class_weights(counts), opts);
    save_checkpoint(r.best, out / "model.wsck");
    write_text(out / "history.tsv", format_history(r.history));
    std::cout << "trained " << r.iterations << " iterations (" << r.stop_reason << "), best at step " << r.best_iter
              << ", checkpoint " << (out / "model.wsck").string() << '\n';
    return kOk;
}

std::string fold_table(const std::vector<FoldResult>& results, const std::vector<std::size_t>& levels) {
    std::ostringstream os;
    os << "fold\tbest_iter\tjoint_acc";
    for (auto l : levels) os << "\tlevel" << l << "_acc";
    os << '\n';
    auto acc = [](const FoldOutcome& o) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < o.labels.size(); ++i) hits += o.labels[i] == o.predictions[i];
        return o.labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(o.labels.size());
    };
    for (const auto& r : results) {
        os << r.split.fold_index << '\t' << r.training.best_iter << '\t' << format_double(acc(r.joint));
        for (const auto& o : r.per_level) os << '\t' << format_double(acc(o));
        os << '\n';
    }
    return os.str();
}

int cmd_eval(const Globals& g, const RunConfig& cfg, const std::string& checkpoints) {
    const DatasetIndex index = task_index(cfg);
    const auto folds = checked_folds(index, cfg);
    const fs::path out = g.out;
    const TaskInfo info = task_info(cfg.task);

    std::vector<fs::path> provided;
    if (!checkpoints.empty()) {
        for (const auto& f : folds) {
            const fs::path p = fs::path(checkpoints) / ("fold" + std::to_string(f.fold_index) + ".wsck");
            if (!fs::exists(p)) throw ProtocolError("missing checkpoint for fold " + std::to_string(f.fold_index) + ": " + p.string());
            provided.push_back(p);
        }
    }
    ensure_dir(out);
    write_text(out / "run.cfg", format_run_config(cfg));

    std::vector<FoldResult> results;
    for (const auto& split : folds) {
        FoldResult r;
        r.split = split;
        if (provided.empty()) {
            r.training = train_fold(index, split, cfg, log_line);
            const std::string stem = "fold" + std::to_string(split.fold_index);
            save_checkpoint(r.training.best, out / (stem + ".wsck"));
            write_text(out / (stem + "_history.tsv"), format_history(r.training.history));
        } else {
            r.training.best = load_checkpoint(provided[static_cast<std::size_t>(split.fold_index)]);
            if (r.training.best.config.num_classes != info.class_names.size())
                throw FormatError("checkpoint class count does not match task " + info.name, 0);
        }
        const RunConfig fold_cfg = [&] {
            RunConfig c = cfg;
            c.network.input_size = r.training.best.config.input_size;
            return c;
        }();
        const auto test_set = load_samples(index, split.test, fold_cfg);
        const Tensor w = class_weights(std::vector<std::size_t>(info.class_names.size(), 1));
        const Evaluation ev = evaluate(r.training.best, test_set, w);
        r.joint = outcome_from(ev, test_set);
        r.per_level = level_outcomes(ev, test_set);
        log_line("fold " + std::to_string(split.fold_index) + " test_acc " + format_double(ev.accuracy));
        results.push_back(std::move(r));
    }

    std::vector<FoldOutcome> joint;
    for (const auto& r : results) joint.push_back(r.joint);
    const std::string report = format_report(crossval_report(joint, info.class_names));
    write_text(out / "report.txt", report);
    const auto& levels = results.front().training.best.config.head_levels;
    for (std::size_t li = 0; li < levels.size(); ++li) {
        std::vector<FoldOutcome> per;
        for (const auto& r : results) per.push_back(r.per_level[li]);
        write_text(out / ("report_level" + std::to_string(levels[li]) + ".txt"),
                   format_report(crossval_report(per, info.class_names)));
    }
    write_text(out / "folds.tsv", fold_table(results, levels));
    std::cout << report;
    return kOk;
}

int cmd_explain(const Globals& g, const RunConfig& cfg, const std::string& image_path, const std::string& ckpt, int cls) {
    const ModelState model = load_checkpoint(ckpt);
    const Tensor image = load_model_image(image_path, model, cfg);
    AttributionConfig acfg;
    acfg.steps = cfg.ig_steps;
    acfg.target = target_class(cls, model);
    const SaliencyBundle bundle = joint_saliency(model, image, acfg);
    const fs::path out = g.out;
    ensure_dir(out);
    write_text(out / "run.cfg", format_run_config(cfg));
    const std::string stem = fs::path(image_path).stem().string();
    auto files = save_bundle(bundle, out, stem);
    const fs::path overlay = out / (stem + "_overlay.pgm");
    write_pgm(saliency_overlay(image, bundle.joint), overlay);
    files.push_back(overlay);
    std::cout << "target class " << bundle.target << '\n';
    for (const auto& f : files) std::cout << "  " << f.string() << '\n';
    return kOk;
}

int cmd_localize(const Globals& g, const RunConfig& cfg, const std::string& saliency_path, const std::string& image_path,
                 const std::string& ckpt, int cls) {
    const fs::path out = g.out;
    std::vector<BoundingBox> boxes;
    Gray8 canvas;
    std::string stem;
    if (!saliency_path.empty()) {
        Tensor s = load_tensor(saliency_path);
        if (s.rank() != 2) throw FormatError("saliency map must be rank 2, got " + dims_string(s.dims()), 0);
        boxes = extract_boxes(s, cfg.localization);
        Tensor mag = s;
        for (auto& v : mag.data()) v = std::abs(v);
        canvas = to_gray_minmax(mag);
        stem = fs::path(saliency_path).stem().string();
    } else {
        if (image_path.empty() || ckpt.empty()) throw UsageError("localize needs --saliency or --image with --checkpoint");
        const ModelState model = load_checkpoint(ckpt);
        const Tensor image = load_model_image(image_path, model, cfg);
        const TaskInfo info = task_info(cfg.task);
        if (model.config.num_classes != info.class_names.size())
            throw UsageError("checkpoint has " + std::to_string(model.config.num_classes) + " classes but task " +
                             info.name + " has " + std::to_string(info.class_names.size()));
        const LocalizeOutcome lo = localize_image(model, image, cfg, target_class(cls, model));
        boxes = lo.boxes;
        canvas = to_gray(image, 0.0, 1.0);
        stem = fs::path(image_path).stem().string();
        std::cout << "target class " << lo.target << (lo.localized ? "" : " (lesion-free, no boxes)") << '\n';
    }
    ensure_dir(out);
    write_text(out / "run.cfg", format_run_config(cfg));
    write_boxes(boxes, canvas.h, canvas.w, out / (stem + ".wsbox"));
    draw_boxes(canvas, boxes);
    write_pgm(canvas, out / (stem + "_boxes.pgm"));
    std::cout << boxes.size() << " boxes\n";
    for (const auto& b : boxes)
        std::cout << "  " << b.row0 << ' ' << b.col0 << ' ' << b.row1 << ' ' << b.col1 << ' ' << b.area_px << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Weakly supervised lesion classification and localization on synthetic CT phantoms"};
    app.require_subcommand(1);
    Globals g;

    auto* gen = app.add_subcommand("gen", "Generate a phantom dataset");
    int patients = 10, slices = 8;
    std::size_t size = 64;
    gen->add_option("--patients", patients, "Patients per class")->capture_default_str();
    gen->add_option("--slices", slices, "Slices per patient")->capture_default_str();
    gen->add_option("--size", size, "Image side in pixels (>= 32)")->capture_default_str();
    add_globals(gen, g, true);

    std::string data, task;
    auto add_task_flags = [&](CLI::App* sub) {
        sub->add_option("--data", data, "Dataset directory holding index.tsv");
        sub->add_option("--task", task, "threeway, np_vs_covid, np_vs_cap or covid_vs_cap");
    };

    auto* train = app.add_subcommand("train", "Train one model on a fold's train/val patients");
    int fold = 0;
    std::string resume;
    add_task_flags(train);
    train->add_option("--fold", fold, "Fold whose train and val patients are used")->capture_default_str();
    train->add_option("--resume", resume, "Checkpoint to continue from (step counter continues)");
    add_globals(train, g, true);

    auto* eval = app.add_subcommand("eval", "Run the k-fold protocol and write report tables");
    std::string checkpoints;
    add_task_flags(eval);
    eval->add_option("--checkpoints", checkpoints, "Directory with fold<i>.wsck to evaluate instead of training");
    add_globals(eval, g, true);

    auto* explain = app.add_subcommand("explain", "Integrated-gradient saliency per level and joint");
    std::string image, ckpt;
    int cls = -1;
    explain->add_option("--image", image, "Input image (WST1)")->required();
    explain->add_option("--checkpoint", ckpt, "Model checkpoint")->required();
    explain->add_option("--class", cls, "Target class (default: predicted)");
    add_globals(explain, g, true);

    auto* localize = app.add_subcommand("localize", "Bounding boxes from a saliency map or an image");
    std::string saliency;
    localize->add_option("--saliency", saliency, "Joint saliency map (WST1)");
    localize->add_option("--image", image, "Input image (WST1), used with --checkpoint");
    localize->add_option("--checkpoint", ckpt, "Model checkpoint");
    localize->add_option("--class", cls, "Target class (default: predicted)");
    add_globals(localize, g, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    for (auto* sub : app.get_subcommands())
        g.seed_given = sub->get_option("--seed")->count() > 0;
    if (g.workers > 0) set_workers(g.workers);

    try {
        if (gen->parsed()) return cmd_gen(g, patients, slices, size);
        std::vector<std::pair<std::string, std::string>> flags;
        if (!data.empty()) flags.emplace_back("data", data);
        if (!task.empty()) flags.emplace_back("task", task);
        const RunConfig cfg = effective_config(g, flags);
        if (train->parsed()) return cmd_train(g, cfg, fold, resume);
        if (eval->parsed()) return cmd_eval(g, cfg, checkpoints);
        if (explain->parsed()) return cmd_explain(g, cfg, image, ckpt, cls);
        return cmd_localize(g, cfg, saliency, image, ckpt, cls);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const GenerationError& e) {
        std::cerr << "generation error: " << e.what() << '\n';
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const DivergenceError& e) {
        std::cerr << "diverged at iteration " << e.iter << ": " << e.what() << '\n';
        return kDiverged;
    } catch (const ProtocolError& e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return kProtocol;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return kFormat;
    } catch (const ShapeError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return kFormat;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
