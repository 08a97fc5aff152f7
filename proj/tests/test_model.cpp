#include "oracles.hpp"
#include "toy.hpp"
#include "wsl/model.hpp"
#include "wsl/tensor_io.hpp"

#include <doctest.h>

#include <filesystem>

using namespace wsl;
namespace fs = std::filesystem;

namespace {

NetworkConfig tiny_config() {
    NetworkConfig c;
    c.input_size = 8;
    c.blocks = {2, 2, 2};
    c.head_levels = {2, 3};
    c.num_classes = 3;
    return c;
}

// Block and head math spelled out with the oracle primitives.
Tensor oracle_scores(const ModelState& m, const Tensor& image, std::vector<Tensor>* level_scores = nullptr) {
    Tensor x = image;
    std::size_t head = 0;
    Tensor total({m.config.num_classes});
    const std::size_t head_base = 4 * m.config.blocks.size();
    for (std::size_t b = 0; b < m.config.blocks.size(); ++b) {
        for (int conv = 0; conv < 2; ++conv) {
            Tensor y = oracle::conv2d(x, m.params[4 * b + 2 * conv], 1, 1);
            const Tensor& bias = m.params[4 * b + 2 * conv + 1];
            const std::size_t plane = y.dim(1) * y.dim(2);
            for (std::size_t i = 0; i < y.size(); ++i) {
                const double v = y[i] + bias[i / plane];
                y[i] = v > 0.0 ? v : 0.0;
            }
            x = y;
        }
        x = oracle::window_max(x, 2, 2);
        if (head < m.config.head_levels.size() && m.config.head_levels[head] == b + 1) {
            const Tensor s = oracle::channel_max(oracle::conv2d(x, m.params[head_base + head], 1, 0));
            if (level_scores) level_scores->push_back(s);
            for (std::size_t k = 0; k < s.size(); ++k) total[k] += s[k];
            ++head;
        }
    }
    return total;
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("build") {
    NetworkConfig cfg;
    const ModelState a = build(cfg, 5), b = build(cfg, 5);
    for (std::size_t l = 1; l <= 5; ++l) CHECK(feature_side(cfg, l) == (64u >> l));
    CHECK(a.names == b.names);
    for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(bitwise_equal(a.params[i], b.params[i]));
    CHECK(a.param("head3.w").dims() == Dims{3, 64, 1, 1});
    CHECK(a.param("block2.conv1.w").dims() == Dims{32, 16, 3, 3});
    for (double v : a.param("block1.conv2.b").data()) CHECK(v == 0.0);

    const Tensor& w = a.param("block4.conv2.w");
    double ss = 0.0;
    for (double v : w.data()) ss += v * v;
    CHECK(std::sqrt(ss / static_cast<double>(w.size())) == doctest::Approx(std::sqrt(2.0 / (96 * 9))).epsilon(0.05));

    NetworkConfig bad = cfg;
    bad.input_size = 48;
    CHECK_THROWS_AS(build(bad, 0), ConfigError);
    bad = cfg;
    bad.head_levels = {6};
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    std::vector<Tensor> maps;
    const ForwardOutput out = forward(a, Tensor({64, 64}, 0.5));
    REQUIRE(out.score_maps.size() == 3);
    CHECK(out.score_maps[0].dims() == Dims{3, 8, 8});
    CHECK(out.score_maps[2].dims() == Dims{3, 2, 2});
}

TEST_CASE("forward replays its definition") {
    ModelState zero = build(tiny_config(), 1);
    for (auto& p : zero.params) p.fill(0.0);
    const Prediction z = predict(zero, Tensor({8, 8}, 0.3));
    for (double s : z.output.scores.data()) CHECK(s == 0.0);
    for (double p : z.output.probs.data()) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(z.label == 0);

    std::mt19937_64 rng(40);
    for (int trial = 0; trial < 10; ++trial) {
        const ModelState m = build(tiny_config(), 100 + trial);
        const Tensor img = oracle::random_tensor({1, 8, 8}, rng, 0.0, 1.0);
        std::vector<Tensor> levels;
        const Tensor expect = oracle_scores(m, img, &levels);
        const ForwardOutput out = forward(m, img);
        CHECK(oracle::max_abs_diff(out.scores, expect) <= 1e-12);
        for (std::size_t l = 0; l < levels.size(); ++l) CHECK(oracle::max_abs_diff(out.level_scores[l], levels[l]) <= 1e-12);
        for (std::size_t k = 0; k < 3; ++k) {
            double s = 0.0;
            for (const auto& map : out.score_maps) {
                const std::size_t plane = map.dim(1) * map.dim(2);
                double mx = map[k * plane];
                for (std::size_t i = 1; i < plane; ++i) mx = std::max(mx, map[k * plane + i]);
                s += mx;
            }
            CHECK(out.scores[k] == s);
        }
        double total = 0.0;
        for (double p : out.probs.data()) total += p;
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
    CHECK_THROWS_AS(forward(build(tiny_config(), 1), Tensor({16, 16})), ContractError);
}

TEST_CASE("argmax") {
    CHECK(argmax(Tensor({3}, {0.2, 0.7, 0.7})) == 1);
    CHECK(argmax(Tensor({3}, {0.5, 0.5, 0.5})) == 0);
    std::mt19937_64 rng(41);
    for (int i = 0; i < 100; ++i) {
        Tensor s = oracle::random_tensor({4}, rng, -3, 3);
        Tensor shifted = s;
        for (auto& v : shifted.data()) v += 17.25;
        const Tensor p = log_softmax(s), q = log_softmax(shifted);
        CHECK(argmax(p) == argmax(q));
        CHECK(argmax(s) == argmax(p));
    }
}

TEST_CASE("class weights") {
    const Tensor a = class_weights({80, 80, 80});
    for (double w : a.data()) CHECK(w == 1.0);
    const Tensor b = class_weights({100, 100, 50});
    CHECK(b[0] == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(b[1] == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(b[2] == doctest::Approx(5.0 / 3.0).epsilon(1e-15));
    CHECK_THROWS_AS(class_weights({3, 0, 2}), ContractError);

    // Dropping the 1/K factor scales every loss by the same constant.
    std::mt19937_64 rng(42);
    Tensor raw = b;
    for (auto& w : raw.data()) w *= 3.0;
    std::vector<Tensor> scores;
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) {
        scores.push_back(oracle::random_tensor({3}, rng, -2, 2));
        labels.push_back(i % 3);
    }
    const double ratio = focal_loss(scores, labels, raw, 1.0) / focal_loss(scores, labels, b, 1.0);
    CHECK(ratio == doctest::Approx(3.0).epsilon(1e-13));
}

TEST_CASE("focal loss values") {
    const Tensor ones({3}, 1.0);
    CHECK(focal_loss({Tensor({3}, 0.0)}, {0}, ones, 1.0) == doctest::Approx(2.0 / 3.0 * std::log(3.0)).epsilon(1e-14));
    CHECK(focal_loss({Tensor({3}, 0.0)}, {0}, ones, 1.0) == doctest::Approx(0.73240).epsilon(1e-5));
    const double ce = std::log(std::exp(1.0) + 2.0) - 1.0;
    CHECK(focal_loss({Tensor({3}, {1, 0, 0})}, {0}, ones, 0.0) == doctest::Approx(ce).epsilon(1e-14));
    CHECK(ce == doctest::Approx(0.55144).epsilon(1e-5));
    const double easy = focal_loss({Tensor({3}, {10, 0, 0})}, {0}, ones, 1.0);
    CHECK(easy == doctest::Approx(oracle::focal_term({10, 0, 0}, 0, {1, 1, 1}, 1.0)).epsilon(1e-12));
    CHECK(easy == doctest::Approx(8.2e-9).epsilon(0.01));
    CHECK_THROWS_AS(focal_loss({Tensor({3}, 0.0)}, {3}, ones, 1.0), ContractError);

    std::mt19937_64 rng(43);
    for (int i = 0; i < 200; ++i) {
        const Tensor s = oracle::random_tensor({4}, rng, -5, 5);
        const Tensor w = oracle::random_tensor({4}, rng, 0.1, 3.0);
        const int c = i % 4;
        const double weighted_ce = -w[c] * log_softmax(s)[c];
        CHECK(focal_loss_term(s, c, w, 0.0, 1) == doctest::Approx(weighted_ce).epsilon(1e-14));
    }
}

TEST_CASE("focal factor is detached in the gradient") {
    const Tensor s0({3}, {0.3, -0.4, 1.1});
    const Tensor w({3}, {1.0, 2.0, 0.5});
    Tape t;
    const Var s = t.input(s0);
    t.backward(focal_loss_term(t, s, 1, w, 2.0, 1));
    const Tensor g = t.grad(s);
    const Tensor lp = log_softmax(s0);
    const double f = std::pow(1.0 - std::exp(lp[1]), 2.0);
    for (std::size_t k = 0; k < 3; ++k) {
        const double dlp = (k == 1 ? 1.0 : 0.0) - std::exp(lp[k]);
        CHECK(g[k] == doctest::Approx(-w[1] * f * dlp).epsilon(1e-13));
    }
}

TEST_CASE("single-sample overfit") {
    NetworkConfig cfg = toy::config();
    cfg.max_iters = 200;
    cfg.batch_size = 1;
    cfg.patience_iters = 1000;
    const auto set = toy::samples(1, 16, 44);
    TrainOptions opts;
    opts.seed = 1;
    opts.augment = false;
    const Tensor w({2}, 1.0);
    const double initial = evaluate(build(cfg, 2), set, w).loss;
    const TrainResult r = train(build(cfg, 2), set, {}, w, opts);
    CHECK(r.iterations == 200);
    const double final_loss = evaluate(r.best, set, w).loss;
    CHECK(final_loss < 0.1 * initial);
}

TEST_CASE("training cadence, early stop and determinism") {
    const NetworkConfig cfg = toy::config();
    const auto tr = toy::samples(12, 16, 45), va = toy::samples(6, 16, 46);
    const Tensor w({2}, 1.0);
    TrainOptions opts;
    opts.seed = 9;
    int callbacks = 0;
    opts.on_validate = [&](const HistoryRow&) { ++callbacks; };
    const TrainResult a = train(build(cfg, 3), tr, va, w, opts);
    const TrainResult b = train(build(cfg, 3), tr, va, w, opts);
    REQUIRE(a.history.size() == 6);
    CHECK(callbacks == 12);
    CHECK(format_history(a.history) == format_history(b.history));
    for (std::size_t i = 0; i < a.best.params.size(); ++i) CHECK(bitwise_equal(a.best.params[i], b.best.params[i]));
    CHECK(a.history[0].iter == 10);
    CHECK(format_history(a.history).rfind("iter\ttrain_loss\tval_loss\tval_acc\n", 0) == 0);

    double best = -1.0;
    for (const auto& h : a.history) best = std::max(best, h.val_acc);
    CHECK(evaluate(a.best, va, w).accuracy == best);

    NetworkConfig p0 = cfg;
    p0.patience_iters = 0;
    p0.max_iters = 400;
    p0.lr = 5e-2;
    const TrainResult e = train(build(p0, 4), tr, va, w, opts);
    REQUIRE(!e.history.empty());
    for (std::size_t i = 1; i + 1 < e.history.size(); ++i) CHECK(e.history[i].val_loss < e.history[i - 1].val_loss);
    if (e.stop_reason == "early_stop") {
        const auto n = e.history.size();
        CHECK(n >= 2);
        CHECK(e.history[n - 1].val_loss >= e.history[n - 2].val_loss);
    }
}

TEST_CASE("divergence is reported") {
    NetworkConfig cfg = toy::config();
    auto tr = toy::samples(4, 16, 47);
    tr[0].image[3] = NAN;
    tr[1].image[3] = NAN;
    tr[2].image[3] = NAN;
    tr[3].image[3] = NAN;
    TrainOptions opts;
    opts.augment = false;
    CHECK_THROWS_AS(train(build(cfg, 1), tr, {}, Tensor({2}, 1.0), opts), DivergenceError);
}

TEST_CASE("resume continues the step counter") {
    NetworkConfig cfg = toy::config();
    cfg.max_iters = 20;
    const auto tr = toy::samples(8, 16, 48), va = toy::samples(4, 16, 49);
    TrainOptions opts;
    opts.seed = 2;
    const TrainResult first = train(build(cfg, 5), tr, va, Tensor({2}, 1.0), opts);
    CHECK(first.best.step == 20);
    const TrainResult second = train(first.best, tr, va, Tensor({2}, 1.0), opts);
    CHECK(second.history.front().iter == 30);
    CHECK(second.history.back().iter == 40);
}

TEST_CASE("config text") {
    NetworkConfig c;
    c.blocks = {8, 16};
    c.head_levels = {1, 2};
    c.lr = 3.5e-4;
    c.aux_losses = true;
    const std::string text = format_config(c);
    CHECK(format_config(parse_config(parse_key_values(text))) == text);
    CHECK_THROWS_AS(parse_config(parse_key_values("lr = 1\nlearning_rate = 2\n")), ConfigError);
    CHECK_THROWS_AS(parse_config(parse_key_values("lr = fast\n")), ConfigError);
}

TEST_CASE("checkpoints") {
    const fs::path dir = fs::temp_directory_path() / "wsl_test_ckpt";
    fs::create_directories(dir);
    ModelState m = build(tiny_config(), 8);
    m.step = 77;
    save_checkpoint(m, dir / "m.wsck");
    CHECK(fs::exists(dir / "m.cfg"));
    const ModelState back = load_checkpoint(dir / "m.wsck");
    CHECK(back.step == 77);
    CHECK(back.names == m.names);
    std::mt19937_64 rng(50);
    const Tensor img = oracle::random_tensor({8, 8}, rng, 0, 1);
    CHECK(bitwise_equal(predict(m, img).output.scores, predict(back, img).output.scores));

    auto bytes = read_file_bytes(dir / "m.wsck");
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2));
    write_file_bytes(dir / "cut.wsck", cut);
    fs::copy_file(dir / "m.cfg", dir / "cut.cfg", fs::copy_options::overwrite_existing);
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.wsck"), FormatError);
    bytes.push_back(0);
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
    CHECK_THROWS_AS(decode_checkpoint(bytes, names, tensors), FormatError);

    NetworkConfig other = tiny_config();
    other.blocks = {2, 3, 2};
    ModelState b = build(other, 1);
    CHECK_THROWS_AS(load_checkpoint_into(b, dir / "m.wsck"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.wsck"), IoError);
    fs::remove_all(dir);
}

}
