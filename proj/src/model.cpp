#include "wsl/model.hpp"

#include "wsl/kernels.hpp"
#include "wsl/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace wsl {

void NetworkConfig::validate() const {
    if (blocks.empty()) throw ConfigError("blocks must not be empty");
    for (auto c : blocks)
        if (c == 0) throw ConfigError("block widths must be positive");
    if (head_levels.empty()) throw ConfigError("head_levels must not be empty");
    for (std::size_t i = 0; i < head_levels.size(); ++i) {
        if (head_levels[i] < 1 || head_levels[i] > blocks.size())
            throw ConfigError("head level " + std::to_string(head_levels[i]) + " outside 1.." +
                              std::to_string(blocks.size()));
        if (i > 0 && head_levels[i] <= head_levels[i - 1])
            throw ConfigError("head_levels must be strictly ascending");
    }
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    const std::size_t div = std::size_t{1} << blocks.size();
    if (input_size == 0 || input_size % div != 0)
        throw ConfigError("input_size " + std::to_string(input_size) + " is not divisible by 2^" +
                          std::to_string(blocks.size()));
    if (!(lr > 0.0) || !(eps > 0.0)) throw ConfigError("lr and eps must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0,1)");
    if (max_iters < 0 || val_every < 1 || patience_iters < 0 || batch_size < 1)
        throw ConfigError("max_iters, patience_iters >= 0 and val_every, batch_size >= 1 required");
}

std::string format_config(const NetworkConfig& c) {
    std::ostringstream os;
    os << "input_size = " << c.input_size << '\n'
       << "blocks = " << join_sizes(c.blocks) << '\n'
       << "head_levels = " << join_sizes(c.head_levels) << '\n'
       << "num_classes = " << c.num_classes << '\n'
       << "gamma = " << format_double(c.gamma) << '\n'
       << "lr = " << format_double(c.lr) << '\n'
       << "beta1 = " << format_double(c.beta1) << '\n'
       << "beta2 = " << format_double(c.beta2) << '\n'
       << "eps = " << format_double(c.eps) << '\n'
       << "max_iters = " << c.max_iters << '\n'
       << "val_every = " << c.val_every << '\n'
       << "patience_iters = " << c.patience_iters << '\n'
       << "batch_size = " << c.batch_size << '\n'
       << "aux_losses = " << (c.aux_losses ? "true" : "false") << '\n';
    return os.str();
}

bool set_config_key(NetworkConfig& c, const std::string& k, const std::string& v) {
    auto to_int = [&] { return static_cast<int>(parse_int(k, v)); };
    if (k == "input_size") c.input_size = static_cast<std::size_t>(parse_int(k, v));
    else if (k == "blocks") c.blocks = parse_size_list(k, v);
    else if (k == "head_levels") c.head_levels = parse_size_list(k, v);
    else if (k == "num_classes") c.num_classes = static_cast<std::size_t>(parse_int(k, v));
    else if (k == "gamma") c.gamma = parse_double(k, v);
    else if (k == "lr") c.lr = parse_double(k, v);
    else if (k == "beta1") c.beta1 = parse_double(k, v);
    else if (k == "beta2") c.beta2 = parse_double(k, v);
    else if (k == "eps") c.eps = parse_double(k, v);
    else if (k == "max_iters") c.max_iters = to_int();
    else if (k == "val_every") c.val_every = to_int();
    else if (k == "patience_iters") c.patience_iters = to_int();
    else if (k == "batch_size") c.batch_size = to_int();
    else if (k == "aux_losses") c.aux_losses = parse_bool(k, v);
    else return false;
    return true;
}

NetworkConfig parse_config(const KeyValues& kv) {
    NetworkConfig c;
    for (const auto& [k, v] : kv)
        if (!set_config_key(c, k, v)) throw ConfigError("unknown model config key '" + k + "'");
    c.validate();
    return c;
}

std::size_t ModelState::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
}

const Tensor& ModelState::param(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return params[i];
    throw ContractError("no parameter named '" + name + "'");
}

Tensor& ModelState::param(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ModelState&>(*this).param(name));
}

std::size_t feature_side(const NetworkConfig& cfg, std::size_t level) { return cfg.input_size >> level; }

ModelState build(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelState m;
    m.config = cfg;
    Rng rng(seed);
    auto he = [&](Dims dims) {
        const double fan_in = static_cast<double>(dims[1] * dims[2] * dims[3]);
        std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / fan_in));
        Tensor w(std::move(dims));
        for (auto& v : w.data()) v = nd(rng);
        return w;
    };
    std::size_t c_in = 1;
    for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
        const std::size_t c = cfg.blocks[b];
        const std::string prefix = "block" + std::to_string(b + 1);
        m.names.push_back(prefix + ".conv1.w");
        m.params.push_back(he({c, c_in, 3, 3}));
        m.names.push_back(prefix + ".conv1.b");
        m.params.emplace_back(Dims{c});
        m.names.push_back(prefix + ".conv2.w");
        m.params.push_back(he({c, c, 3, 3}));
        m.names.push_back(prefix + ".conv2.b");
        m.params.emplace_back(Dims{c});
        c_in = c;
    }
    for (auto level : cfg.head_levels) {
        m.names.push_back("head" + std::to_string(level) + ".w");
        m.params.push_back(he({cfg.num_classes, cfg.blocks[level - 1], 1, 1}));
    }
    return m;
}

TapeForward forward_on_tape(const ModelState& model, Tape& tape, Var image, ParamMode mode, std::size_t max_level) {
    const NetworkConfig& cfg = model.config;
    const Tensor& img = tape.value(image);
    if (img.rank() != 3 || img.dim(0) != 1 || img.dim(1) != cfg.input_size || img.dim(2) != cfg.input_size)
        throw ContractError("forward: expected image [1," + std::to_string(cfg.input_size) + "," +
                            std::to_string(cfg.input_size) + "], got " + dims_string(img.dims()));
    const std::size_t last_head = cfg.head_levels.back();
    const std::size_t stop = max_level == 0 ? last_head : std::min(max_level, last_head);

    TapeForward f;
    std::vector<Var> pv;
    for (const auto& p : model.params) pv.push_back(mode == ParamMode::Trainable ? tape.param(p) : tape.constant_ref(p));
    const std::size_t head_base = 4 * cfg.blocks.size();

    Var x = image;
    std::size_t head = 0;
    for (std::size_t b = 0; b < stop; ++b) {
        x = relu(tape, add_channel_bias(tape, conv2d(tape, x, pv[4 * b], 1, 1), pv[4 * b + 1]));
        x = relu(tape, add_channel_bias(tape, conv2d(tape, x, pv[4 * b + 2], 1, 1), pv[4 * b + 3]));
        x = maxpool2d(tape, x, 2, 2);
        while (head < cfg.head_levels.size() && cfg.head_levels[head] == b + 1) {
            const Var map = conv2d(tape, x, pv[head_base + head], 1, 0);
            f.levels.push_back(b + 1);
            f.score_maps.push_back(map);
            f.level_scores.push_back(global_max_pool(tape, map));
            ++head;
        }
    }
    if (f.levels.size() == cfg.head_levels.size()) {
        Var s = f.level_scores[0];
        for (std::size_t l = 1; l < f.level_scores.size(); ++l) s = add(tape, s, f.level_scores[l]);
        f.scores = s;
        f.has_scores = true;
    }
    if (mode == ParamMode::Trainable) f.params = std::move(pv);
    return f;
}

namespace {

Tensor as_chw(const Tensor& image) {
    if (image.rank() == 2) return image.reshaped({1, image.dim(0), image.dim(1)});
    return image;
}

} // namespace

ForwardOutput forward(const ModelState& model, const Tensor& image) {
    Tape tape;
    const Var x = tape.constant(as_chw(image));
    const TapeForward f = forward_on_tape(model, tape, x, ParamMode::Constant);
    ForwardOutput out;
    out.levels = f.levels;
    for (auto v : f.score_maps) out.score_maps.push_back(tape.value(v));
    for (auto v : f.level_scores) out.level_scores.push_back(tape.value(v));
    out.scores = tape.value(f.scores);
    out.probs = log_softmax(out.scores);
    for (auto& v : out.probs.data()) v = std::exp(v);
    return out;
}

int argmax(const Tensor& v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] > v[best]) best = k;
    return static_cast<int>(best);
}

Prediction predict(const ModelState& model, const Tensor& image) {
    Prediction p;
    p.output = forward(model, image);
    p.label = argmax(p.output.probs);
    return p;
}

Tensor class_weights(const std::vector<std::size_t>& class_counts) {
    if (class_counts.size() < 2) throw ContractError("class_weights: need at least 2 classes");
    std::size_t n = 0;
    for (std::size_t c = 0; c < class_counts.size(); ++c) {
        if (class_counts[c] == 0) throw ContractError("class_weights: class " + std::to_string(c) + " is empty");
        n += class_counts[c];
    }
    const double k = static_cast<double>(class_counts.size());
    Tensor w({class_counts.size()});
    for (std::size_t c = 0; c < class_counts.size(); ++c)
        w[c] = (static_cast<double>(n) / static_cast<double>(class_counts[c])) / k;
    return w;
}

namespace {

void check_label(int label, const Tensor& scores, const Tensor& weights) {
    if (weights.size() != scores.size())
        throw ShapeError("loss: " + std::to_string(weights.size()) + " weights for " + std::to_string(scores.size()) +
                         " classes");
    if (label < 0 || static_cast<std::size_t>(label) >= scores.size())
        throw ContractError("loss: label " + std::to_string(label) + " out of range for K=" +
                            std::to_string(scores.size()));
}

double term_coefficient(double log_p, int label, const Tensor& weights, double gamma, std::size_t batch) {
    const double focal = gamma == 0.0 ? 1.0 : std::pow(1.0 - std::exp(log_p), gamma);
    return -weights[static_cast<std::size_t>(label)] * focal / static_cast<double>(batch);
}

} // namespace

Var focal_loss_term(Tape& tape, Var scores, int label, const Tensor& weights, double gamma, std::size_t batch) {
    check_label(label, tape.value(scores), weights);
    const Var lp = pick(tape, log_softmax(tape, scores), static_cast<std::size_t>(label));
    return scale(tape, lp, term_coefficient(tape.value(lp)[0], label, weights, gamma, batch));
}

double focal_loss_term(const Tensor& scores, int label, const Tensor& weights, double gamma, std::size_t batch) {
    check_label(label, scores, weights);
    const double lp = log_softmax(scores)[static_cast<std::size_t>(label)];
    return lp * term_coefficient(lp, label, weights, gamma, batch);
}

double focal_loss(const std::vector<Tensor>& scores, const std::vector<int>& labels, const Tensor& weights,
                  double gamma) {
    if (scores.empty() || scores.size() != labels.size())
        throw ContractError("loss: need matching, non-empty scores and labels");
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        total += focal_loss_term(scores[i], labels[i], weights, gamma, scores.size());
    return total;
}

Evaluation evaluate(const ModelState& model, const std::vector<Sample>& set, const Tensor& weights) {
    Evaluation ev;
    ev.predictions.resize(set.size());
#pragma omp parallel for schedule(dynamic) if (workers() > 1)
    for (std::size_t i = 0; i < set.size(); ++i) ev.predictions[i] = predict(model, set[i].image);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        ev.loss += focal_loss_term(ev.predictions[i].output.scores, set[i].label, weights, model.config.gamma,
                                   set.size());
        if (ev.predictions[i].label == set[i].label) ++correct;
    }
    ev.accuracy = set.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(set.size());
    return ev;
}

namespace {

constexpr std::uint64_t kAugmentStream = 0x61756731ULL;

struct SampleGrad {
    double loss = 0.0;
    std::vector<Tensor> grads;
};

SampleGrad sample_gradient(const ModelState& model, const Tensor& image, int label, const Tensor& weights,
                           std::size_t batch) {
    const NetworkConfig& cfg = model.config;
    Tape tape;
    const Var x = tape.constant(as_chw(image));
    const TapeForward f = forward_on_tape(model, tape, x, ParamMode::Trainable);
    Var loss = focal_loss_term(tape, f.scores, label, weights, cfg.gamma, batch);
    if (cfg.aux_losses)
        for (auto s : f.level_scores) loss = add(tape, loss, focal_loss_term(tape, s, label, weights, cfg.gamma, batch));
    tape.backward(loss);
    SampleGrad g;
    g.loss = tape.value(loss)[0];
    for (auto p : f.params) g.grads.push_back(tape.take_grad(p));
    return g;
}

} // namespace

TrainResult train(ModelState model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const Tensor& weights, const TrainOptions& opts) {
    const NetworkConfig& cfg = model.config;
    cfg.validate();
    if (train_set.empty()) throw ContractError("train: empty training set");
    AugmentConfig aug = opts.augment_cfg;
    aug.output_size = cfg.input_size;
    if (opts.augment) aug.validate();

    AdamState adam = AdamState::for_params(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    const auto batch = static_cast<std::size_t>(cfg.batch_size);

    TrainResult result;
    result.best = model;
    double best_acc = -1.0, best_acc_loss = std::numeric_limits<double>::infinity();
    double best_loss = std::numeric_limits<double>::infinity();
    int best_loss_iter = 0;
    double window_loss = 0.0;
    int window_count = 0;
    result.stop_reason = "max_iters";
    const std::uint64_t start_step = model.step;

    for (int it = 1; it <= cfg.max_iters; ++it) {
        const std::uint64_t step = start_step + static_cast<std::uint64_t>(it);
        Rng pick_rng(mix_seed(opts.seed, step));
        std::uniform_int_distribution<std::size_t> pick_dist(0, train_set.size() - 1);
        std::vector<std::size_t> members(batch);
        for (auto& m : members) m = pick_dist(pick_rng);

        std::vector<SampleGrad> parts(batch);
#pragma omp parallel for schedule(dynamic, 1) if (workers() > 1)
        for (std::size_t j = 0; j < batch; ++j) {
            const Sample& s = train_set[members[j]];
            Tensor img = s.image;
            if (opts.augment) {
                Rng arng(mix_seed(opts.seed ^ kAugmentStream, step * batch + j));
                img = augment(img, aug, arng);
            } else if (img.dim(img.rank() - 1) != cfg.input_size) {
                img = resize_bilinear(img, cfg.input_size, cfg.input_size);
            }
            parts[j] = sample_gradient(model, img, s.label, weights, batch);
        }

        double batch_loss = 0.0;
        std::vector<Tensor> grads = std::move(parts[0].grads);
        batch_loss += parts[0].loss;
        for (std::size_t j = 1; j < batch; ++j) {
            batch_loss += parts[j].loss;
            for (std::size_t k = 0; k < grads.size(); ++k) {
                double* dst = grads[k].ptr();
                const double* src = parts[j].grads[k].ptr();
                for (std::size_t i = 0; i < grads[k].size(); ++i) dst[i] += src[i];
            }
        }
        if (!std::isfinite(batch_loss)) throw DivergenceError("training loss is not finite at iteration " + std::to_string(it), it);
        for (std::size_t k = 0; k < grads.size(); ++k)
            if (!grads[k].all_finite())
                throw DivergenceError("non-finite gradient for " + model.names[k] + " at iteration " + std::to_string(it),
                                      it);
        adam_step(adam, model.params, grads);
        ++model.step;
        result.iterations = it;
        window_loss += batch_loss;
        ++window_count;

        if (val_set.empty() || (it % cfg.val_every != 0 && it != cfg.max_iters)) continue;
        const Evaluation ev = evaluate(model, val_set, weights);
        if (!std::isfinite(ev.loss)) throw DivergenceError("validation loss is not finite at iteration " + std::to_string(it), it);
        const HistoryRow row{static_cast<int>(step), window_loss / window_count, ev.loss, ev.accuracy};
        window_loss = 0.0;
        window_count = 0;
        result.history.push_back(row);
        if (opts.on_validate) opts.on_validate(row);
        if (ev.accuracy > best_acc || (ev.accuracy == best_acc && ev.loss < best_acc_loss)) {
            best_acc = ev.accuracy;
            best_acc_loss = ev.loss;
            result.best = model;
            result.best_iter = static_cast<int>(step);
        }
        if (ev.loss < best_loss) {
            best_loss = ev.loss;
            best_loss_iter = it;
        } else if (it - best_loss_iter >= cfg.patience_iters) {
            result.stop_reason = "early_stop";
            break;
        }
    }
    if (val_set.empty()) {
        result.best = model;
        result.best_iter = static_cast<int>(model.step);
    }
    return result;
}

std::string format_history(const std::vector<HistoryRow>& history) {
    std::ostringstream os;
    os << "iter\ttrain_loss\tval_loss\tval_acc\n";
    for (const auto& r : history)
        os << r.iter << '\t' << format_double(r.train_loss) << '\t' << format_double(r.val_loss) << '\t'
           << format_double(r.val_acc) << '\n';
    return os.str();
}

namespace {
constexpr char kCheckpointMagic[4] = {'W', 'S', 'C', 'K'};
}

std::vector<std::uint8_t> encode_checkpoint(const std::vector<std::string>& names, const std::vector<Tensor>& tensors) {
    if (names.size() != tensors.size()) throw ContractError("checkpoint: names and tensors differ in count");
    std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
    append_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (names[i].size() > 0xffff) throw ContractError("checkpoint: name too long");
        append_u16(out, static_cast<std::uint16_t>(names[i].size()));
        out.insert(out.end(), names[i].begin(), names[i].end());
        encode_tensor(tensors[i], out);
    }
    return out;
}

void decode_checkpoint(std::span<const std::uint8_t> bytes, std::vector<std::string>& names,
                       std::vector<Tensor>& tensors) {
    ByteReader in(bytes);
    if (in.remaining() < 4 || in.text(4, "magic") != std::string(kCheckpointMagic, 4))
        throw FormatError("bad magic: not a WSCK checkpoint", 0);
    const std::uint32_t count = in.u32("tensor count");
    names.clear();
    tensors.clear();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t len = in.u16("name length");
        names.push_back(in.text(len, "name"));
        tensors.push_back(decode_tensor(in, false));
    }
    if (in.remaining() != 0)
        throw FormatError("trailing bytes after " + std::to_string(count) + " tensors", in.offset());
}

std::filesystem::path config_path_for(const std::filesystem::path& checkpoint) {
    auto p = checkpoint;
    p.replace_extension(".cfg");
    return p;
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
    write_file_bytes(path, encode_checkpoint(model.names, model.params));
    const std::string cfg = "# model config\n" + format_config(model.config) + "step = " + std::to_string(model.step) + "\n";
    write_file_bytes(config_path_for(path), std::span(reinterpret_cast<const std::uint8_t*>(cfg.data()), cfg.size()));
}

void load_checkpoint_into(ModelState& model, const std::filesystem::path& path) {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
    decode_checkpoint(read_file_bytes(path), names, tensors);
    if (names.size() != model.names.size())
        throw FormatError("checkpoint holds " + std::to_string(names.size()) + " tensors, model expects " +
                              std::to_string(model.names.size()),
                          4);
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] != model.names[i])
            throw FormatError("tensor " + std::to_string(i) + " is '" + names[i] + "', expected '" + model.names[i] + "'", 0);
        if (tensors[i].dims() != model.params[i].dims())
            throw FormatError("dims mismatch for " + names[i] + ": file " + dims_string(tensors[i].dims()) + ", model " +
                                  dims_string(model.params[i].dims()),
                              0);
        if (!tensors[i].all_finite()) throw FormatError("non-finite values in " + names[i], 0);
    }
    model.params = std::move(tensors);
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    const auto cfg_path = config_path_for(path);
    if (!std::filesystem::exists(cfg_path)) throw IoError("missing config sidecar " + cfg_path.string());
    std::uint64_t step = 0;
    NetworkConfig cfg;
    try {
        KeyValues rest;
        for (auto& [k, v] : read_key_values(cfg_path.string())) {
            if (k == "step") step = static_cast<std::uint64_t>(parse_int(k, v));
            else rest.emplace_back(k, v);
        }
        cfg = parse_config(rest);
    } catch (const ConfigError& e) {
        throw FormatError(cfg_path.string() + ": " + e.what(), 0);
    }
    ModelState model = build(cfg, 0);
    load_checkpoint_into(model, path);
    model.step = step;
    return model;
}

} // namespace wsl
