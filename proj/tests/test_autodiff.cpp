#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "evf/gaussian.hpp"
#include "evf/param_store.hpp"
#include "evf/rng.hpp"
#include "evf/tape.hpp"
#include "oracles.hpp"

using namespace evf;

TEST_CASE("forward: sigmoid and identity matmul") {
    Tape t;
    const auto s = t.sigmoid(t.constant(Tensor::scalar(0.0f)));
    CHECK(t.value(s).data[0] == doctest::Approx(0.5).epsilon(1e-7));

    Tensor eye = Tensor::zeros({3, 3});
    eye.data[0] = eye.data[4] = eye.data[8] = 1.0f;
    const auto x = t.constant(Tensor::vec({0.3f, -1.2f, 2.5f}));
    const auto y = t.matmul(t.constant(eye), x);
    for (int i = 0; i < 3; ++i) CHECK(t.value(y).data[i] == t.value(x).data[i]);
}

TEST_CASE("forward: tanh(softplus(1)) against a 64-bit scalar oracle") {
    Tape t;
    const auto v = t.tanh(t.softplus(t.constant(Tensor::scalar(1.0f))));
    const double oracle = std::tanh(std::log1p(std::exp(1.0)));
    CHECK(std::abs(t.value(v).data[0] - oracle) < 1e-6);
}

TEST_CASE("forward: deterministic and replay<float> matches the eager pass") {
    auto build = [](Tape& t) {
        Rng rng(7);
        const auto x = t.leaf(rng.normal_tensor({6}), true);
        auto h = t.tanh(t.mul(x, x));
        h = t.add(t.sigmoid(h), t.softplus(x));
        return t.sum(h);
    };
    Tape t1, t2;
    const auto l1 = build(t1);
    const auto l2 = build(t2);
    CHECK(t1.value(l1).data[0] == t2.value(l2).data[0]);

    const auto replayed = t1.replay<float>(l1, {});
    CHECK(replayed[0] == t1.value(l1).data[0]);
}

TEST_CASE("forward: shape mismatch names the node, non-finite values are errors") {
    Tape t;
    const auto a = t.constant(Tensor::vec({1.0f, 2.0f}));
    const auto b = t.constant(Tensor::vec({1.0f, 2.0f, 3.0f}));
    CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("add shape mismatch"),
                         std::runtime_error);
    const auto big = t.constant(Tensor::scalar(200.0f));
    CHECK_THROWS_WITH_AS(t.exp(big), doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("backward: d(sum w^2)/dw = 2w and fan-out accumulates") {
    Tape t;
    const auto w = t.leaf(Tensor::vec({1.0f, 2.0f}), true);
    const auto loss = t.sum(t.square(w));
    t.backward(loss);
    const auto g = t.grad(w);
    CHECK(g.data[0] == doctest::Approx(2.0));
    CHECK(g.data[1] == doctest::Approx(4.0));

    Tape t2;
    const auto x = t2.leaf(Tensor::scalar(0.7f), true);
    const auto loss2 = t2.add(t2.mul(x, x), t2.mul(x, x));  // 2x^2, x used four times
    t2.backward(loss2);
    CHECK(t2.grad(x).data[0] == doctest::Approx(4.0 * 0.7).epsilon(1e-5));
}

TEST_CASE("backward: sigmoid'(0) = 1/4 scaled by a constant") {
    const float k = 3.0f;
    Tape t;
    const auto x = t.leaf(Tensor::scalar(0.0f), true);
    const auto loss = t.mul(t.sigmoid(x), t.scalar(k));
    t.backward(loss);
    CHECK(t.grad(x).data[0] == doctest::Approx(0.25 * k).epsilon(1e-6));
}

TEST_CASE("backward: non-scalar loss is rejected") {
    Tape t;
    const auto x = t.leaf(Tensor::vec({1.0f, 2.0f}), true);
    const auto y = t.square(x);
    CHECK_THROWS_WITH_AS(t.backward(y), doctest::Contains("scalar"), std::runtime_error);
}

TEST_CASE("backward: random 3-layer net matches finite differences") {
    Rng rng(11);
    Tape t;
    std::vector<Tape::Id> leaves;
    auto mat = [&](int r, int c) {
        Tensor m = Tensor::zeros({r, c});
        for (auto& v : m.data) v = rng.uniform(-0.8f, 0.8f);
        return t.leaf(std::move(m), true);
    };
    const auto w1 = mat(5, 4), w2 = mat(4, 5), w3 = mat(2, 4);
    const auto x = t.leaf(rng.normal_tensor({4}), true);
    leaves = {w1, w2, w3, x};
    auto h = t.tanh(t.matmul(w1, x));
    h = t.sigmoid(t.matmul(w2, h));
    const auto loss = t.sum(t.square(t.matmul(w3, h)));
    const auto r = oracles::compare_grads(t, loss, leaves, 1e-3, 1e-3);
    CHECK(r.failed == 0);
    CHECK(r.checked == 5 * 4 + 4 * 5 + 2 * 4 + 4);
}

TEST_CASE("finite differences: x^2 at 3 and exp at 0") {
    Tape t;
    const auto x = t.leaf(Tensor::scalar(3.0f), true);
    const auto loss = t.square(x);
    const auto fd = t.finite_difference(loss, x, 1e-3);
    CHECK(std::abs(fd[0] - 6.0) < 1e-6);

    Tape t2;
    const auto y = t2.leaf(Tensor::scalar(0.0f), true);
    const auto l2 = t2.exp(y);
    CHECK(std::abs(t2.finite_difference(l2, y, 1e-3)[0] - 1.0) < 1e-6);
    CHECK_THROWS(t2.finite_difference(l2, y, 0.0));
}

TEST_CASE("property: backward matches finite differences over random graphs") {
    int failed_graphs = 0;
    for (uint64_t seed = 0; seed < 30; ++seed) {
        auto g = oracles::make_random_graph(seed);
        const auto r = oracles::compare_grads(g.tape, g.loss, g.grad_leaves, 1e-3, 1e-3);
        if (r.failed) ++failed_graphs;
    }
    CHECK(failed_graphs == 0);
}

TEST_CASE("reparameterize: vanishing variance, zero noise, Monte Carlo moments") {
    const int d = 4;
    Rng rng(5);
    auto q = GaussianParams::make(rng.normal_tensor({d}), Tensor::full({d}, -10.0f));
    const Tensor noise = rng.normal_tensor({d});
    const Tensor out = reparameterize(q, noise);
    for (int i = 0; i < d; ++i)
        CHECK(std::abs(out.data[i] - q.mean.data[i]) < 0.01f * std::abs(noise.data[i]) + 1e-6f);

    const Tensor zero = Tensor::zeros({d});
    const Tensor exact = reparameterize(q, zero);
    for (int i = 0; i < d; ++i) CHECK(exact.data[i] == q.mean.data[i]);

    auto std_q = GaussianParams::standard(1);
    double sum = 0, sq = 0;
    const int n = 100000;
    Rng mc(123);
    for (int i = 0; i < n; ++i) {
        const double v = reparameterize(std_q, mc.normal_tensor({1})).data[0];
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("reparameterize: shape mismatch is an error") {
    auto q = GaussianParams::standard(3);
    CHECK_THROWS(reparameterize(q, Tensor::zeros({4})));
}

TEST_CASE("reparameterize: tape gradient wrt mean is 1 componentwise") {
    Tape t;
    Rng rng(9);
    const auto mean = t.leaf(rng.normal_tensor({5}), true);
    const auto lv = t.constant(rng.normal_tensor({5}));
    const auto z = tape_reparameterize(t, mean, lv, rng.normal_tensor({5}));
    t.backward(t.sum(z));
    const auto g = t.grad(mean);
    for (int i = 0; i < 5; ++i) CHECK(g.data[i] == doctest::Approx(1.0));
}

TEST_CASE("kl_diag_gaussian: identities and the quadrature oracle") {
    Rng rng(3);
    auto q = GaussianParams::make(rng.normal_tensor({6}), rng.normal_tensor({6}));
    CHECK(kl_diag_gaussian(q, q) == doctest::Approx(0.0));

    auto q1 = GaussianParams::make(Tensor::vec({1.0f}), Tensor::vec({0.0f}));
    auto p1 = GaussianParams::standard(1);
    CHECK(kl_diag_gaussian(q1, p1) == doctest::Approx(0.5).epsilon(1e-6));

    // N(0, 4) vs N(0, 1): closed form against numerical integration
    auto q4 = GaussianParams::make(Tensor::vec({0.0f}), Tensor::vec({std::log(4.0f)}));
    const double closed = kl_diag_gaussian(q4, p1);
    const double quad = oracles::kl_quadrature(0.0, 4.0, 0.0, 1.0);
    CHECK(std::abs(closed - quad) < 1e-4);

    // nonnegativity, and zero only at q == p
    for (int i = 0; i < 2000; ++i) {
        auto a = GaussianParams::make(rng.normal_tensor({3}), rng.normal_tensor({3}));
        auto b = GaussianParams::make(rng.normal_tensor({3}), rng.normal_tensor({3}));
        const double kl = kl_diag_gaussian(a, b);
        CHECK(kl >= 0.0);
        if (kl < 1e-7) {
            for (int k = 0; k < 3; ++k) {
                CHECK(std::abs(a.mean.data[k] - b.mean.data[k]) < 1e-3);
                CHECK(std::abs(a.log_var.data[k] - b.log_var.data[k]) < 1e-3);
            }
        }
    }
}

TEST_CASE("tape KL to the standard normal matches the closed form") {
    Rng rng(17);
    Tape t;
    const Tensor mean = rng.normal_tensor({4});
    const Tensor lv = rng.normal_tensor({4});
    const auto node = tape_kl_to_std_normal(t, t.constant(mean), t.constant(lv));
    const double expect = kl_diag_gaussian(GaussianParams::make(mean, lv),
                                           GaussianParams::standard(4));
    CHECK(t.value(node).data[0] == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("log_var is clamped on construction") {
    auto g = GaussianParams::make(Tensor::vec({0.0f}), Tensor::vec({35.0f}));
    CHECK(g.log_var.data[0] == kLogVarBound);
    auto g2 = GaussianParams::make(Tensor::vec({0.0f}), Tensor::vec({-35.0f}));
    CHECK(g2.log_var.data[0] == -kLogVarBound);
}

TEST_CASE("adam: zero gradient leaves fresh parameters unchanged") {
    ParamStore ps;
    ps.create("w", Tensor::vec({1.0f, -2.0f}));
    std::map<std::string, Tensor> grads;
    grads.emplace("w", Tensor::zeros({2}));
    ps.adam_step(grads, {});
    CHECK(ps.at("w").data[0] == 1.0f);
    CHECK(ps.at("w").data[1] == -2.0f);
}

TEST_CASE("adam: first step with constant gradient moves by -lr*sign(g)") {
    AdamConfig cfg;
    cfg.lr = 0.01f;
    ParamStore ps;
    ps.create("w", Tensor::vec({0.5f, -0.5f}));
    std::map<std::string, Tensor> grads;
    grads.emplace("w", Tensor::vec({0.3f, -0.7f}));
    ps.adam_step(grads, cfg);
    // bias-corrected first step: delta = -lr * g / (|g| + eps)
    for (int i = 0; i < 2; ++i) {
        const double g = i == 0 ? 0.3 : -0.7;
        const double expect = (i == 0 ? 0.5 : -0.5) - cfg.lr * g / (std::abs(g) + cfg.eps);
        CHECK(ps.at("w").data[i] == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("adam: 100 steps on w^2 from w0=1 converges below 0.05") {
    AdamConfig cfg;
    cfg.lr = 0.1f;
    ParamStore ps;
    ps.create("w", Tensor::scalar(1.0f));
    for (int i = 0; i < 100; ++i) {
        std::map<std::string, Tensor> grads;
        grads.emplace("w", Tensor::scalar(2.0f * ps.at("w").data[0]));
        ps.adam_step(grads, cfg);
    }
    CHECK(std::abs(ps.at("w").data[0]) < 0.05f);
}

TEST_CASE("adam: non-finite gradients abort and name the parameter") {
    ParamStore ps;
    ps.create("layer.w", Tensor::vec({1.0f}));
    std::map<std::string, Tensor> grads;
    grads.emplace("layer.w", Tensor::vec({std::numeric_limits<float>::infinity()}));
    CHECK_THROWS_WITH_AS(ps.adam_step(grads, {}), doctest::Contains("layer.w"),
                         std::runtime_error);
    CHECK(ps.at("layer.w").data[0] == 1.0f);  // untouched
}

TEST_CASE("adam: global-norm clip rescales the update") {
    AdamConfig clipped;
    clipped.clip_norm = 5.0f;
    AdamConfig equivalent;  // feeding the pre-scaled gradient must match
    ParamStore a, b;
    a.create("w", Tensor::vec({1.0f, 1.0f}));
    b.create("w", Tensor::vec({1.0f, 1.0f}));
    std::map<std::string, Tensor> ga, gb;
    ga.emplace("w", Tensor::vec({30.0f, 40.0f}));  // norm 50 -> scale 0.1
    gb.emplace("w", Tensor::vec({3.0f, 4.0f}));
    a.adam_step(ga, clipped);
    b.adam_step(gb, equivalent);
    CHECK(a.at("w").data[0] == doctest::Approx(b.at("w").data[0]).epsilon(1e-6));
    CHECK(a.at("w").data[1] == doctest::Approx(b.at("w").data[1]).epsilon(1e-6));
}

TEST_CASE("checkpoint: parameters and optimizer state round-trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "evf_ckpt_test";
    fs::create_directories(dir);
    Rng rng(21);
    ParamStore ps;
    ps.create("a.w", rng.normal_tensor({3, 2}));
    ps.create("b.w", rng.normal_tensor({4}));
    std::map<std::string, Tensor> grads;
    grads.emplace("a.w", rng.normal_tensor({3, 2}));
    grads.emplace("b.w", rng.normal_tensor({4}));
    ps.adam_step(grads, {});

    ps.save(dir / "m.evfp");
    ps.save_opt(dir / "m.evfp.opt");

    ParamStore loaded;
    loaded.load(dir / "m.evfp");
    loaded.load_opt(dir / "m.evfp.opt");
    CHECK(loaded.names() == ps.names());
    for (const auto& n : ps.names()) {
        CHECK(loaded.at(n).shape == ps.at(n).shape);
        CHECK(loaded.at(n).data == ps.at(n).data);
    }
    CHECK(loaded.step_count() == 1);

    // another identowy step on both stores stays in lockstep
    ps.adam_step(grads, {});
    loaded.adam_step(grads, {});
    for (const auto& n : ps.names()) CHECK(loaded.at(n).data == ps.at(n).data);
}

TEST_CASE("checkpoint: corrupted magic is an error, not a crash") {
    namespace fs = std::filesystem;
    const fs::path p = fs::temp_directory_path() / "evf_bad.evfp";
    std::ofstream f(p, std::ios::binary);
    f << "XXXX1234";
    f.close();
    ParamStore ps;
    CHECK_THROWS_WITH_AS(ps.load(p), doctest::Contains("bad magic"), std::runtime_error);
}

TEST_CASE("slice, concat, broadcast and mean_stack backward rules") {
    Tape t;
    const auto x = t.leaf(Tensor::vec({1.0f, 2.0f, 3.0f}), true);
    const auto y = t.leaf(Tensor::vec({5.0f, 6.0f, 7.0f}), true);
    const auto cat = t.concat({x, y});
    const auto sl = t.slice(cat, 2, 3);  // [3, 5, 6]
    CHECK(t.value(sl).data == std::vector<float>{3.0f, 5.0f, 6.0f});
    const auto ms = t.mean_stack({x, y});
    const auto loss = t.add(t.sum(sl), t.mul(t.sum(ms), t.scalar(2.0f)));
    t.backward(loss);
    // slice grad hits x[2], y[0], y[1]; mean_stack adds 2 * 1/2 everywhere
    CHECK(t.grad(x).data == std::vector<float>{1.0f, 1.0f, 2.0f});
    CHECK(t.grad(y).data == std::vector<float>{2.0f, 2.0f, 1.0f});
}

TEST_CASE("mean_stack is permutation invariant and duplication idempotent bitwise") {
    Rng rng(33);
    const Tensor a = rng.normal_tensor({7});
    const Tensor b = rng.normal_tensor({7});
    const Tensor c = rng.normal_tensor({7});
    Tape t1, t2;
    const auto m1 = t1.mean_stack({t1.constant(a), t1.constant(b), t1.constant(c)});
    const auto m2 = t2.mean_stack({t2.constant(c), t2.constant(a), t2.constant(b)});
    CHECK(t1.value(m1).data == t2.value(m2).data);

    Tape t3;
    const auto m3 = t3.mean_stack({t3.constant(a), t3.constant(a), t3.constant(a)});
    CHECK(t3.value(m3).data == a.data);
}

TEST_CASE("replay in f64 tracks the recorded program") {
    Tape t;
    const auto x = t.leaf(Tensor::scalar(0.25f), true);
    const auto loss = t.log(t.add(t.exp(x), t.scalar(1.0f)));
    std::map<Tape::Id, std::vector<double>> ov;
    ov[x] = {0.5};
    const double got = t.replay<double>(loss, ov)[0];
    CHECK(got == doctest::Approx(std::log(std::exp(0.5) + 1.0)).epsilon(1e-12));
}
