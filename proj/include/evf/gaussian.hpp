#pragma once

#include "evf/tape.hpp"
#include "evf/tensor.hpp"

namespace evf {

inline constexpr float kLogVarBound = 10.0f;

// Mean / log-variance of a diagonal Gaussian. log_var is kept in
// [-kLogVarBound, kLogVarBound]; raw values are clamped on construction.
struct GaussianParams {
    Tensor mean;
    Tensor log_var;

    static GaussianParams make(Tensor mean, Tensor log_var);
    static GaussianParams standard(int dim);  // N(0, I)
    int dim() const { return static_cast<int>(mean.size()); }
};

// mean + exp(0.5 * log_var) * noise; noise is standard normal from the caller
Tensor reparameterize(const GaussianParams& q, const Tensor& noise);

// KL(q || p) for diagonal Gaussians:
// 0.5 * sum( exp(lq-lp) + (mq-mp)^2 * exp(-lp) - 1 + lp - lq )
double kl_diag_gaussian(const GaussianParams& q, const GaussianParams& p);

// tape builders used by the model graphs (prior fixed at N(0, I))
Tape::Id tape_soft_clamp_log_var(Tape& t, Tape::Id raw);  // bound*tanh(x/bound)
Tape::Id tape_reparameterize(Tape& t, Tape::Id mean, Tape::Id log_var, const Tensor& noise);
Tape::Id tape_kl_to_std_normal(Tape& t, Tape::Id mean, Tape::Id log_var);

}  // namespace evf
