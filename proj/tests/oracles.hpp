// Test-only oracles: independent 64-bit routes used to check the
// implementation (quadrature, finite differences on random graphs, Student-t
// tails for paired comparisons). Nothing here may call back into the code
// path it verifies.
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "evf/rng.hpp"
#include "evf/tape.hpp"

namespace oracles {

// Simpson's rule
inline double integrate(const std::function<double(double)>& f, double a, double b, int n) {
    if (n % 2) ++n;
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

// KL(N(mq,vq) || N(mp,vp)) by numerical integration of q log(q/p)
inline double kl_quadrature(double mq, double vq, double mp, double vp) {
    auto logpdf = [](double x, double m, double v) {
        return -0.5 * std::log(2.0 * 3.14159265358979323846 * v) - (x - m) * (x - m) / (2.0 * v);
    };
    auto f = [&](double x) {
        const double lq = logpdf(x, mq, vq);
        return std::exp(lq) * (lq - logpdf(x, mp, vp));
    };
    return integrate(f, -20.0, 20.0, 20000);
}

// regularized incomplete beta via continued fraction (Lentz)
inline double betacf(double a, double b, double x) {
    const double eps = 3e-16, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

inline double incbeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                      b * std::log(1.0 - x);
    const double front = std::exp(ln);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) +
                          b * std::log(1.0 - x) + a * std::log(x)) *
                     betacf(b, a, 1.0 - x) / b;
}

// one-sided p-value for t > 0 with df degrees of freedom
inline double t_tail_one_sided(double t, double df) {
    const double x = df / (df + t * t);
    const double p_two = incbeta(df / 2.0, 0.5, x);
    return t >= 0.0 ? p_two / 2.0 : 1.0 - p_two / 2.0;
}

struct PairedTTest {
    double mean_diff = 0, t = 0, p_one_sided = 1.0;
    int n = 0;
};

// H1: mean(a - b) > 0
inline PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
    PairedTTest r;
    r.n = static_cast<int>(a.size());
    double s = 0;
    for (int i = 0; i < r.n; ++i) s += a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)];
    r.mean_diff = s / r.n;
    double var = 0;
    for (int i = 0; i < r.n; ++i) {
        const double d = a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)] - r.mean_diff;
        var += d * d;
    }
    var /= (r.n - 1);
    const double se = std::sqrt(var / r.n);
    r.t = se > 0 ? r.mean_diff / se : (r.mean_diff > 0 ? 1e9 : 0.0);
    r.p_one_sided = t_tail_one_sided(r.t, r.n - 1);
    return r;
}

// --- random graphs over the full primitive set --------------------------------

struct RandomGraph {
    evf::Tape tape;
    std::vector<evf::Tape::Id> grad_leaves;
    evf::Tape::Id loss = -1;
};

// Builds a random program touching every op kind over several attempts; a
// graph is rejected when any relu input sits within `kink` of 0, because
// central differences are invalid across the kink.
inline bool try_random_graph(RandomGraph& g, uint64_t seed, double kink = 5e-3) {
    using evf::Tape;
    using evf::Tensor;
    evf::Rng rng(seed);
    auto& t = g.tape;

    const int dim = rng.uniform_int(2, 5);
    auto rand_vec = [&](int n) {
        Tensor v = Tensor::zeros({n});
        for (auto& x : v.data) x = rng.uniform(-1.5f, 1.5f);
        return v;
    };
    std::vector<Tape::Id> pool;
    for (int i = 0; i < 3; ++i)
        g.grad_leaves.push_back(t.leaf(rand_vec(dim), true, "x" + std::to_string(i)));
    pool = g.grad_leaves;

    Tensor w = Tensor::zeros({dim, dim});
    for (auto& x : w.data) x = rng.uniform(-1.0f, 1.0f);
    const Tape::Id wmat = t.leaf(w, true, "w");
    g.grad_leaves.push_back(wmat);

    std::vector<bool> relu_ok;
    const int n_ops = rng.uniform_int(6, 12);
    for (int i = 0; i < n_ops; ++i) {
        const int pick = rng.uniform_int(0, 12);
        const Tape::Id a = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        const Tape::Id b = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        Tape::Id out = -1;
        switch (pick) {
            case 0: out = t.add(a, b); break;
            case 1: out = t.sub(a, b); break;
            case 2: out = t.mul(t.tanh(a), t.tanh(b)); break;
            case 3: out = t.sigmoid(a); break;
            case 4: out = t.tanh(a); break;
            case 5: {
                for (float v : t.value(a).data)
                    if (std::abs(v) < kink) return false;
                out = t.relu(a);
                break;
            }
            case 6: out = t.softplus(a); break;
            case 7: out = t.exp(t.tanh(a)); break;
            case 8: out = t.log(t.add(t.softplus(a), t.scalar(0.5f))); break;
            case 9: out = t.square(t.tanh(a)); break;
            case 10: out = t.matmul(wmat, a); break;
            case 11: {
                const Tape::Id cat = t.concat({a, b});
                out = t.slice(cat, dim / 2, dim);
                break;
            }
            case 12: out = t.mean_stack({a, b}); break;
        }
        if (t.value(out).shape == std::vector<int>{dim}) pool.push_back(out);
    }
    // fold everything through sum/mean/broadcast so all leaves participate
    Tape::Id acc = t.mean(pool.back());
    acc = t.add(acc, t.sum(t.mul(t.broadcast(acc, {dim}), t.tanh(pool[pool.size() / 2]))));
    for (const Tape::Id leaf : g.grad_leaves) acc = t.add(acc, t.mean(t.square(leaf)));
    g.loss = acc;
    return true;
}

inline RandomGraph make_random_graph(uint64_t seed) {
    for (uint64_t attempt = 0;; ++attempt) {
        RandomGraph g;
        if (try_random_graph(g, evf::mix_seed(seed, attempt))) return g;
    }
}

struct GradCheck {
    int checked = 0, failed = 0;
    double worst = 0;
};

// per component: pass when |a-f| <= max(abs_floor, rel*max(|a|,|f|)); the
// absolute floor absorbs f32 accumulation noise on near-zero gradients
inline GradCheck compare_grads(evf::Tape& tape, evf::Tape::Id loss,
                               std::span<const evf::Tape::Id> leaves, double rel, double h,
                               double abs_floor = 1e-4) {
    GradCheck r;
    tape.backward(loss);
    for (const auto leaf : leaves) {
        const auto fd = tape.finite_difference(loss, leaf, h);
        const auto an = tape.grad(leaf);
        for (size_t i = 0; i < fd.size(); ++i) {
            const double a = an.data[i], f = fd[i];
            const double err = std::abs(a - f);
            const double bound = std::max(abs_floor, rel * std::max(std::abs(a), std::abs(f)));
            ++r.checked;
            if (err > bound) ++r.failed;
            if (bound > 0) r.worst = std::max(r.worst, err / bound);
        }
    }
    return r;
}

}  // namespace oracles
