#include "gradcheck.hpp"
#include "oracles.hpp"
#include "wsl/adam.hpp"
#include "wsl/autodiff.hpp"
#include "wsl/kernels.hpp"
#include "wsl/tensor_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace wsl;

TEST_SUITE("tensor_core") {

TEST_CASE("conv2d small cases") {
    const Tensor x({1, 2, 2}, {1, 2, 3, 4});
    const Tensor k({1, 1, 2, 2}, {1, 0, 0, 1});
    const Tensor y = kernels::conv2d(x, k, 1, 0);
    CHECK(y.dims() == Dims{1, 1, 1});
    CHECK(y[0] == 5.0);

    std::mt19937_64 rng(1);
    const Tensor big = oracle::random_tensor({3, 9, 7}, rng);
    const Tensor zero = kernels::conv2d(big, Tensor({4, 3, 3, 3}), 2, 1);
    for (double v : zero.data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(kernels::conv2d(big, Tensor({4, 2, 3, 3}), 1, 1), ShapeError);
    CHECK_THROWS_AS(kernels::conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 3, 3}), 1, 0), ShapeError);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
    std::mt19937_64 rng(2);
    const Tensor x = oracle::random_tensor({1, 8, 8}, rng);
    const Tensor k = oracle::random_tensor({2, 1, 3, 3}, rng);
    const Tensor o = oracle::conv2d(x, k, 1, 0);
    CHECK(oracle::max_abs_diff(kernels::conv2d(x, k, 1, 0), o) <= 1e-12);

    struct Case {
        Dims x, k;
        std::size_t stride, pad;
    };
    const Case cases[] = {{{1, 8, 8}, {2, 1, 3, 3}, 1, 0},  {{3, 16, 16}, {8, 3, 3, 3}, 1, 1},
                          {{5, 7, 11}, {3, 5, 3, 3}, 2, 1}, {{16, 4, 4}, {24, 16, 3, 3}, 1, 1},
                          {{6, 9, 9}, {4, 6, 1, 1}, 1, 0},  {{2, 33, 33}, {17, 2, 5, 3}, 3, 2}};
    for (const auto& c : cases) {
        const Tensor xi = oracle::random_tensor(c.x, rng);
        const Tensor ki = oracle::random_tensor(c.k, rng);
        const Tensor expect = oracle::conv2d(xi, ki, c.stride, c.pad);
        CHECK(bitwise_equal(kernels::conv2d(xi, ki, c.stride, c.pad), expect));
        CHECK(bitwise_equal(reference::conv2d(xi, ki, c.stride, c.pad), expect));
    }
}

TEST_CASE("conv2d gradients agree between implementations") {
    std::mt19937_64 rng(3);
    for (auto [ci, co, n, stride, pad] : {std::tuple{3, 5, 10, 1, 1}, {4, 2, 9, 2, 1}, {16, 32, 8, 1, 1}, {2, 3, 6, 1, 0}}) {
        const Tensor x = oracle::random_tensor({std::size_t(ci), std::size_t(n), std::size_t(n)}, rng);
        const Tensor k = oracle::random_tensor({std::size_t(co), std::size_t(ci), 3, 3}, rng);
        const ConvGeometry g = conv_geometry(x.dims(), k.dims(), stride, pad);
        const Tensor go = oracle::random_tensor({g.c_out, g.out_h, g.out_w}, rng);
        CHECK(oracle::max_abs_diff(kernels::conv2d_grad_input(go, k, g), reference::conv2d_grad_input(go, k, g)) < 1e-12);
        CHECK(oracle::max_abs_diff(kernels::conv2d_grad_kernel(go, x, g), reference::conv2d_grad_kernel(go, x, g)) <
              1e-12);
    }
}

TEST_CASE("maxpool2d") {
    const auto r = kernels::maxpool2d(Tensor({1, 2, 2}, {1, 2, 3, 4}), 2, 2);
    CHECK(r.out[0] == 4.0);
    CHECK(r.argmax[0] == 3);
    const auto c = kernels::maxpool2d(Tensor({2, 4, 4}, 0.25), 2, 2);
    for (double v : c.out.data()) CHECK(v == 0.25);

    std::mt19937_64 rng(4);
    const Tensor x = oracle::random_tensor({1, 6, 6}, rng);
    CHECK(kernels::maxpool2d(x, 2, 2).out == oracle::window_max(x, 2, 2));
    const Tensor y = oracle::random_tensor({3, 9, 8}, rng);
    CHECK(kernels::maxpool2d(y, 3, 2).out == oracle::window_max(y, 3, 2));
    CHECK(reference::maxpool2d(y, 3, 2).out == oracle::window_max(y, 3, 2));
    CHECK_THROWS_AS(kernels::maxpool2d(Tensor({1, 2, 2}), 3, 1), ShapeError);
}

TEST_CASE("global_max_pool and its tie rule") {
    CHECK(kernels::global_max_pool(Tensor({1, 2, 2}, {-1, 2, 3, 0})).out[0] == 3.0);

    Tape t;
    const Var x = t.input(Tensor({1, 3, 3}, 0.7));
    const Var g = global_max_pool(t, x);
    CHECK(t.value(g)[0] == 0.7);
    t.backward(g);
    const Tensor gx = t.grad(x);
    CHECK(gx[0] == 1.0);
    for (std::size_t i = 1; i < gx.size(); ++i) CHECK(gx[i] == 0.0);

    std::mt19937_64 rng(5);
    const Tensor r = oracle::random_tensor({3, 4, 4}, rng);
    CHECK(kernels::global_max_pool(r).out == oracle::channel_max(r));
}

TEST_CASE("relu forward and gradient") {
    Tape t;
    const Var x = t.input(Tensor({3}, {-2.0, 0.0, 3.0}));
    const Var y = relu(t, x);
    CHECK(t.value(y)[0] == 0.0);
    CHECK(t.value(y)[2] == 3.0);
    t.backward(sum(t, y));
    const Tensor g = t.grad(x);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
    CHECK(g[2] == 1.0);

    std::mt19937_64 rng(6);
    const Tensor r = oracle::random_tensor({7, 5}, rng);
    Tape t2;
    const Tensor out = t2.value(relu(t2, t2.constant(r)));
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(out[i] == (r[i] > 0.0 ? r[i] : 0.0));
}

TEST_CASE("log_softmax") {
    const Tensor a = log_softmax(Tensor({3}, {0, 0, 0}));
    for (double v : a.data()) CHECK(v == doctest::Approx(-std::log(3.0)).epsilon(1e-15));
    const Tensor b = log_softmax(Tensor({2}, {1000, 0}));
    CHECK(std::isfinite(b[0]));
    CHECK(std::abs(b[0]) < 1e-300);
    CHECK(b[1] == doctest::Approx(-1000.0));

    const auto ld = oracle::log_softmax_ld({1, 2, 3});
    const Tensor c = log_softmax(Tensor({3}, {1, 2, 3}));
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(c[i] - static_cast<double>(ld[i])) <= 1e-12);

    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const Tensor s = oracle::random_tensor({2 + std::size_t(trial % 7)}, rng, -50.0, 50.0);
        const Tensor l = log_softmax(s);
        double z = 0.0;
        for (double v : l.data()) z += std::exp(v);
        CHECK(std::abs(z - 1.0) <= 1e-12);
    }
}

TEST_CASE("backward basics") {
    std::mt19937_64 rng(8);
    {
        Tape t;
        const Var x = t.input(oracle::random_tensor({2, 3}, rng));
        t.backward(sum(t, x));
        const Tensor g = t.grad(x);
        for (double v : g.data()) CHECK(v == 1.0);
    }
    {
        Tape t;
        const Var x = t.input(Tensor::scalar(2.0));
        const Var y = t.input(Tensor::scalar(3.0));
        t.backward(mul(t, x, y));
        CHECK(t.grad(x)[0] == 3.0);
        CHECK(t.grad(y)[0] == 2.0);
    }
    {
        Tape t;
        const Var x = t.input(Tensor::scalar(1.5));
        t.backward(add(t, x, x));
        CHECK(t.grad(x)[0] == 2.0);
    }
    {
        Tape t;
        const Var x = t.input(Tensor({2}, 1.0));
        CHECK_THROWS_AS(t.backward(x), ContractError);
    }
}

TEST_CASE("backward is linear in the root") {
    std::mt19937_64 rng(9);
    const Tensor img = oracle::random_tensor({2, 6, 6}, rng);
    const Tensor k = oracle::random_tensor({3, 2, 3, 3}, rng);
    const Tensor w = oracle::random_tensor({3, 6, 6}, rng);
    const double a = 0.7, b = -1.9;
    auto grads = [&](double ca, double cb) {
        Tape t;
        const Var x = t.input(img);
        const Var kk = t.param(k);
        const Var y = relu(t, conv2d(t, x, kk, 1, 1));
        const Var f = sum(t, mul(t, y, t.constant(w)));
        const Var g = sum(t, global_max_pool(t, y));
        t.backward(add(t, scale(t, f, ca), scale(t, g, cb)));
        return std::pair{t.grad(x), t.grad(kk)};
    };
    const auto [fx, fk] = grads(1.0, 0.0);
    const auto [gx, gk] = grads(0.0, 1.0);
    const auto [cx, ck] = grads(a, b);
    for (std::size_t i = 0; i < cx.size(); ++i) CHECK(std::abs(cx[i] - (a * fx[i] + b * gx[i])) <= 1e-12);
    for (std::size_t i = 0; i < ck.size(); ++i) CHECK(std::abs(ck[i] - (a * fk[i] + b * gk[i])) <= 1e-12);
}

TEST_CASE("finite-difference check on a three-block network") {
    NetworkConfig cfg;
    cfg.input_size = 16;
    cfg.blocks = {2, 3, 3};
    cfg.head_levels = {2, 3};
    cfg.num_classes = 3;
    const ModelState m = build(cfg, 11);
    CHECK(m.parameter_count() <= 1000);
    std::mt19937_64 rng(12);
    const Tensor img = oracle::random_tensor({1, 16, 16}, rng, 0.0, 1.0);
    const Tensor w({3}, {0.8, 1.1, 1.3});
    for (double gamma : {0.0, 2.0}) {
        const auto r = gradcheck::check(m, img, 1, w, gamma);
        CHECK(r.checked > 0.9 * static_cast<double>(m.parameter_count()));
        CHECK(r.max_rel < 1e-6);
    }
}

TEST_CASE("adam") {
    {
        std::vector<Tensor> p{Tensor({1}, 0.0)};
        auto st = AdamState::for_params(p, 1e-4, 0.5, 0.9, 1e-8);
        adam_step(st, p, {Tensor({1}, 1.0)});
        CHECK(p[0][0] == doctest::Approx(-1e-4 / (1.0 + 1e-8)).epsilon(1e-14));
        CHECK(st.step == 1);
        CHECK(st.m[0].dims() == p[0].dims());
    }
    {
        std::vector<Tensor> p{Tensor({2, 2}, {1, -2, 3, 4})};
        const Tensor keep = p[0];
        auto st = AdamState::for_params(p, 1e-3, 0.5, 0.9, 1e-8);
        for (int i = 0; i < 4; ++i) adam_step(st, p, {Tensor({2, 2}, 0.0)});
        CHECK(p[0] == keep);
    }
    {
        const double lr = 1e-4, b1 = 0.5, b2 = 0.9, eps = 1e-8, g = 0.5;
        std::vector<Tensor> p{Tensor({1}, 0.3)};
        auto st = AdamState::for_params(p, lr, b1, b2, eps);
        double m = 0.0, v = 0.0, x = 0.3;
        for (int t = 1; t <= 3; ++t) {
            adam_step(st, p, {Tensor({1}, g)});
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g * g;
            const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
            x -= lr * mh / (std::sqrt(vh) + eps);
            CHECK(std::abs(p[0][0] - x) <= 1e-15);
        }
        CHECK(st.step == 3);
    }
}

TEST_CASE("WST1 files") {
    const auto dir = std::filesystem::temp_directory_path() / "wsl_test_tensor_io";
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(13);
    Tensor t = oracle::random_tensor({3, 1, 4, 2}, rng);
    t[0] = -0.0;
    save_tensor(t, dir / "t.wst");
    CHECK(bitwise_equal(load_tensor(dir / "t.wst"), t));

    const auto bytes = encode_tensor(Tensor({2}, {1.0, 2.0}));
    CHECK(bytes.size() == 4 + 1 + 4 + 16);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "WST1");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 2);

    auto message = [](std::span<const std::uint8_t> b) {
        try {
            decode_tensor(b);
        } catch (const FormatError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message({}).find("bad magic") != std::string::npos);
    std::vector<std::uint8_t> short_payload;
    const std::string magic = "WST1";
    short_payload.insert(short_payload.end(), magic.begin(), magic.end());
    short_payload.push_back(2);
    append_u32(short_payload, 2);
    append_u32(short_payload, 2);
    for (double v : {1.0, 2.0, 3.0}) append_f64(short_payload, v);
    CHECK(message(short_payload).find("payload length") != std::string::npos);

    { std::ofstream(dir / "empty.wst", std::ios::binary); }
    CHECK_THROWS_AS(load_tensor(dir / "empty.wst"), FormatError);
    CHECK_THROWS_AS(load_tensor(dir / "missing.wst"), IoError);
    std::filesystem::remove_all(dir);
}

}
