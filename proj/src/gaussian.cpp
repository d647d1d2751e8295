#include "evf/gaussian.hpp"

#include <algorithm>
#include <cmath>

namespace evf {

GaussianParams GaussianParams::make(Tensor mean, Tensor log_var) {
    check(mean.shape == log_var.shape, "GaussianParams: mean/log_var shape mismatch " +
                                           shape_str(mean.shape) + " vs " + shape_str(log_var.shape));
    for (auto& v : log_var.data) v = std::clamp(v, -kLogVarBound, kLogVarBound);
    GaussianParams g;
    g.mean = std::move(mean);
    g.log_var = std::move(log_var);
    return g;
}

GaussianParams GaussianParams::standard(int dim) {
    return {Tensor::zeros({dim}), Tensor::zeros({dim})};
}

Tensor reparameterize(const GaussianParams& q, const Tensor& noise) {
    check(noise.shape == q.mean.shape, "reparameterize: noise shape " + shape_str(noise.shape) +
                                           " does not match " + shape_str(q.mean.shape));
    Tensor out = Tensor::zeros(q.mean.shape);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = q.mean.data[i] + std::exp(0.5f * q.log_var.data[i]) * noise.data[i];
    return out;
}

double kl_diag_gaussian(const GaussianParams& q, const GaussianParams& p) {
    check(q.mean.shape == p.mean.shape, "kl_diag_gaussian: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < q.mean.data.size(); ++i) {
        const double lq = q.log_var.data[i];
        const double lp = p.log_var.data[i];
        const double dm = static_cast<double>(q.mean.data[i]) - p.mean.data[i];
        acc += std::exp(lq - lp) + dm * dm * std::exp(-lp) - 1.0 + lp - lq;
    }
    return 0.5 * acc;
}

Tape::Id tape_soft_clamp_log_var(Tape& t, Tape::Id raw) {
    const float inv = 1.0f / kLogVarBound;
    return t.mul(t.tanh(t.mul(raw, t.scalar(inv))), t.scalar(kLogVarBound));
}

Tape::Id tape_reparameterize(Tape& t, Tape::Id mean, Tape::Id log_var, const Tensor& noise) {
    check(noise.shape == t.value(mean).shape, "tape_reparameterize: noise shape mismatch");
    auto std_dev = t.exp(t.mul(log_var, t.scalar(0.5f)));
    return t.add(mean, t.mul(std_dev, t.constant(noise)));
}

Tape::Id tape_kl_to_std_normal(Tape& t, Tape::Id mean, Tape::Id log_var) {
    // 0.5 * sum(exp(lv) + mu^2 - 1 - lv)
    auto terms = t.sub(t.sub(t.add(t.exp(log_var), t.square(mean)), t.scalar(1.0f)), log_var);
    return t.mul(t.sum(terms), t.scalar(0.5f));
}

}  // namespace evf
