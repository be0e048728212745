#include <cmath>
#include <cstdio>
#include <functional>

#include "cdst/checkpoint.hpp"
#include "cdst/optim.hpp"
#include "cdst/tensor.hpp"
#include "doctest.h"

using namespace cdst;

namespace {

// Central finite differences (h = 1e-5) against the analytic gradient of a
// scalar-valued graph. Returns the max relative error over all inputs.
double fd_max_rel_error(std::vector<Tensor>& inputs, const std::function<Tensor()>& f) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor loss = f();
    loss.backward();
    const double h = 1e-5;
    double worst = 0.0;
    for (auto& t : inputs) {
        for (size_t i = 0; i < t.size(); ++i) {
            double orig = t.value()[i];
            t.value()[i] = orig + h;
            double up = f().item();
            t.value()[i] = orig - h;
            double dn = f().item();
            t.value()[i] = orig;
            double fd = (up - dn) / (2.0 * h);
            double an = t.grad()[i];
            double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
            worst = std::max(worst, std::fabs(fd - an) / denom);
        }
    }
    return worst;
}

RandomSource rng_for(uint64_t seed) { return RandomSource(seed); }

}  // namespace

TEST_CASE("softmax rows sum to one; matmul identity") {
    RandomSource rng = rng_for(1);
    Tensor a = Tensor::randn({5, 7}, rng, 2.0);
    Tensor s = softmax_rows(a);
    for (size_t i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (size_t j = 0; j < 7; ++j) sum += s.value()[i * 7 + j];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }

    Tensor eye = Tensor::zeros({7, 7});
    for (size_t i = 0; i < 7; ++i) eye.value()[i * 7 + i] = 1.0;
    Tensor prod = matmul(a, eye);
    CHECK(prod.value() == a.value());
}

TEST_CASE("ops: shape mismatches throw with op name") {
    RandomSource rng = rng_for(2);
    Tensor a = Tensor::randn({3, 4}, rng, 1.0);
    Tensor b = Tensor::randn({3, 4}, rng, 1.0);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
    Tensor c = Tensor::randn({2, 4}, rng, 1.0);
    CHECK_THROWS_WITH_AS(add(a, c), doctest::Contains("add"), std::invalid_argument);
}

TEST_CASE("finite differences: elementwise and matrix ops") {
    RandomSource rng = rng_for(3);
    Tensor a = Tensor::randn({4, 5}, rng, 1.0);
    Tensor b = Tensor::randn({4, 5}, rng, 1.0);
    Tensor w = Tensor::randn({5, 3}, rng, 0.7);

    std::vector<Tensor> inputs = {a, b, w};
    auto f = [&]() {
        Tensor x = mul(add(a, b), sub(a, scale(b, 0.3)));
        return mean_all(matmul(gelu(x), w));
    };
    CHECK(fd_max_rel_error(inputs, f) < 1e-4);
}

TEST_CASE("finite differences: softmax, layer_norm, row bias and gain") {
    RandomSource rng = rng_for(4);
    Tensor a = Tensor::randn({3, 6}, rng, 1.5);
    Tensor gain = Tensor::randn({6}, rng, 0.5);
    Tensor bias = Tensor::randn({6}, rng, 0.5);
    std::vector<Tensor> inputs = {a, gain, bias};
    auto f = [&]() {
        Tensor n = add_rowwise(mul_rowwise(layer_norm(a), gain), bias);
        return mean_all(mul(softmax_rows(n), n));
    };
    CHECK(fd_max_rel_error(inputs, f) < 1e-4);
}

TEST_CASE("finite differences: conv2d stride 1 and 2, upsample, concat, pooling") {
    RandomSource rng = rng_for(5);
    Tensor x = Tensor::randn({2, 6, 6}, rng, 1.0);
    Tensor w1 = Tensor::randn({3, 2, 3, 3}, rng, 0.5);
    Tensor b1 = Tensor::randn({3}, rng, 0.2);
    Tensor w2 = Tensor::randn({2, 3, 3, 3}, rng, 0.5);
    Tensor b2 = Tensor::randn({2}, rng, 0.2);
    std::vector<Tensor> inputs = {x, w1, b1, w2, b2};
    auto f = [&]() {
        Tensor h = gelu(conv2d(x, w1, b1, 1));
        Tensor d = gelu(conv2d(h, w2, b2, 2));  // [2,3,3]
        Tensor u = upsample2x(d);               // [2,6,6]
        Tensor both = concat_channels(u, x);    // [4,6,6]
        Tensor rows = reshape(both, {4, 36});
        Tensor pooled = mean_pool_rows(rows);
        return mean_all(concat_rows({rows, pooled}));
    };
    CHECK(fd_max_rel_error(inputs, f) < 1e-4);
}

TEST_CASE("finite differences: add_channelwise") {
    RandomSource rng = rng_for(15);
    Tensor x = Tensor::randn({3, 4, 4}, rng, 1.0);
    Tensor b = Tensor::randn({3}, rng, 0.5);
    std::vector<Tensor> inputs = {x, b};
    auto f = [&]() { return mean_all(gelu(reshape(add_channelwise(x, b), {3, 16}))); };
    CHECK(fd_max_rel_error(inputs, f) < 1e-4);

    CHECK_THROWS(add_channelwise(x, Tensor::zeros({4})));
}

TEST_CASE("no-grad guard detaches op results") {
    RandomSource rng = rng_for(16);
    Tensor a = Tensor::randn({2, 2}, rng, 1.0, true);
    {
        NoGradGuard ng;
        CHECK(NoGradGuard::active());
        Tensor y = mul(a, a);
        CHECK_FALSE(y.requires_grad());
        CHECK(y.node()->parents.empty());
    }
    CHECK_FALSE(NoGradGuard::active());
    Tensor y = mul(a, a);
    CHECK(y.requires_grad());
}

TEST_CASE("finite differences: three-layer composite") {
    RandomSource rng = rng_for(6);
    Tensor x = Tensor::randn({2, 8}, rng, 1.0);
    Tensor w1 = Tensor::randn({8, 8}, rng, 0.5);
    Tensor w2 = Tensor::randn({8, 8}, rng, 0.5);
    Tensor w3 = Tensor::randn({8, 4}, rng, 0.5);
    Tensor target = Tensor::randn({2, 4}, rng, 1.0);
    std::vector<Tensor> inputs = {x, w1, w2, w3};
    auto f = [&]() {
        Tensor h1 = gelu(matmul(x, w1));
        Tensor h2 = layer_norm(matmul(h1, w2));
        return mse(matmul(h2, w3), target);
    };
    CHECK(fd_max_rel_error(inputs, f) < 1e-4);
}

TEST_CASE("attention: singleton key/value returns that value row") {
    RandomSource rng = rng_for(7);
    Tensor q = Tensor::randn({5, 4}, rng, 1.0);
    Tensor k = Tensor::randn({1, 4}, rng, 1.0);
    Tensor v = Tensor::randn({1, 6}, rng, 1.0);
    Tensor out = attention(q, k, v, 4);
    for (size_t i = 0; i < 5; ++i)
        for (size_t j = 0; j < 6; ++j)
            CHECK(out.value()[i * 6 + j] == doctest::Approx(v.value()[j]).epsilon(1e-12));
}

TEST_CASE("attention: orthonormal keys at large scale select matching values") {
    // Q = K = s * I rows; softmax sharpens toward the diagonal as s grows.
    size_t n = 4;
    double s = 40.0;
    Tensor q = Tensor::zeros({n, n});
    for (size_t i = 0; i < n; ++i) q.value()[i * n + i] = s;
    RandomSource rng = rng_for(8);
    Tensor v = Tensor::randn({n, 3}, rng, 1.0);
    Tensor out = attention(q, q, v, 1);  // d=1: no sqrt damping
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < 3; ++j)
            CHECK(std::fabs(out.value()[i * 3 + j] - v.value()[i * 3 + j]) < 1e-6);
}

TEST_CASE("attention: gradient matches finite differences") {
    RandomSource rng = rng_for(9);
    Tensor q = Tensor::randn({3, 4}, rng, 1.0);
    Tensor k = Tensor::randn({5, 4}, rng, 1.0);
    Tensor v = Tensor::randn({5, 4}, rng, 1.0);
    std::vector<Tensor> inputs = {q, k, v};
    auto f = [&]() { return mean_all(attention(q, k, v, 4)); };
    CHECK(fd_max_rel_error(inputs, f) < 1e-4);
    CHECK_THROWS_AS(attention(q, Tensor::zeros({5, 3}), v, 4), std::invalid_argument);
}

TEST_CASE("adamw: fixed point, hand-computed step, decoupled decay") {
    // zero gradient, zero decay -> unchanged
    Tensor p = Tensor::from({2}, {1.0, -2.0}, true);
    p.grad();  // zeros
    std::vector<Tensor> params = {p};
    AdamW opt({.lr = 0.1});
    opt.step(params);
    CHECK(p.value()[0] == 1.0);
    CHECK(p.value()[1] == -2.0);

    // one step from zero state, scalar: m=(1-b1)g, v=(1-b2)g^2,
    // mhat=g, vhat=g^2 -> update = lr * g/(|g|+eps)
    Tensor q = Tensor::from({1}, {0.5}, true);
    q.grad()[0] = 2.0;
    std::vector<Tensor> params2 = {q};
    AdamWConfig cfg;
    cfg.lr = 0.01;
    AdamW opt2(cfg);
    opt2.step(params2);
    double expect = 0.5 - 0.01 * (2.0 / (2.0 + cfg.eps));
    CHECK(q.value()[0] == doctest::Approx(expect).epsilon(1e-12));

    // weight decay with zero gradient shrinks by lr*wd*param
    Tensor r = Tensor::from({1}, {4.0}, true);
    r.grad();
    std::vector<Tensor> params3 = {r};
    AdamWConfig cfg3;
    cfg3.lr = 0.1;
    cfg3.weight_decay = 0.01;
    AdamW opt3(cfg3);
    opt3.step(params3);
    CHECK(r.value()[0] == doctest::Approx(4.0 - 0.1 * 0.01 * 4.0).epsilon(1e-12));

    // non-finite gradient is rejected
    Tensor s = Tensor::from({1}, {0.0}, true);
    s.grad()[0] = std::numeric_limits<double>::quiet_NaN();
    std::vector<Tensor> params4 = {s};
    AdamW opt4({});
    CHECK_THROWS_AS(opt4.step(params4), std::runtime_error);
}

TEST_CASE("determinism: identical graphs give bit-identical results") {
    auto run = []() {
        RandomSource rng(77);
        Tensor x = Tensor::randn({3, 3}, rng, 1.0, true);
        Tensor w = Tensor::randn({3, 3}, rng, 1.0, true);
        Tensor loss = mean_all(gelu(matmul(layer_norm(x), w)));
        loss.backward();
        auto out = x.grad();
        out.push_back(loss.item());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("gradient accumulation across backward calls") {
    Tensor w = Tensor::from({1}, {1.5}, true);
    for (int i = 0; i < 2; ++i) {
        Tensor loss = mean_all(mul(w, w));
        loss.backward();
    }
    CHECK(w.grad()[0] == doctest::Approx(2.0 * 2.0 * 1.5).epsilon(1e-12));
    w.zero_grad();
    CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("checkpoint: round trip preserves names, shapes, payloads") {
    RandomSource rng = rng_for(10);
    std::vector<std::pair<std::string, Tensor>> entries = {
        {"grid.3", Tensor::randn({4, 7}, rng, 1.0)},
        {"cls", Tensor::randn({7}, rng, 1.0)},
        {"blocks.0.wks", Tensor::randn({2, 3, 3, 3}, rng, 1.0)},
    };
    std::string path = "ckpt_roundtrip_test.bin";
    save_checkpoint(path, entries);
    auto loaded = load_checkpoint(path);
    REQUIRE(loaded.size() == entries.size());
    for (const auto& [name, t] : entries) {
        auto it = loaded.find(name);
        REQUIRE(it != loaded.end());
        CHECK(it->second.shape() == t.shape());
        CHECK(it->second.value() == t.value());
    }
    std::remove(path.c_str());
    CHECK_THROWS(load_checkpoint("no/such/file.bin"));
}
