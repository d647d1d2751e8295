#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "evf/model.hpp"
#include "evf/tensor.hpp"
#include "evf/training.hpp"

namespace evf::metrics {

// -10*log10(MSE) on [0,1] frames, capped at 100 dB when MSE < 1e-10
double psnr(const Tensor& a, const Tensor& b);

// uniform 7x7 windows, stride 1, C1=0.01^2, C2=0.03^2 on unit dynamic range
double ssim(const Tensor& a, const Tensor& b, int h, int w);

struct BestOfKConfig {
    int k = 10;
    int horizon = 10;
    int per_object = 6;  // eval trajectories per object
    int support_m = 5;
    uint64_t seed = 0;
    bool mismatched_support = false;  // support drawn from an object of another shape
    bool zero_context = false;        // c = 0 (no-context baseline checkpoints)
};

struct TrajScore {
    uint32_t object_id = 0;
    int traj_index = 0;
    double mean_psnr = 0, mean_ssim = 0;  // mean over timesteps of the best-of-K value
};

struct EvalReport {
    int k = 0, horizon = 0, n_traj = 0;
    std::vector<double> psnr_curve, ssim_curve;  // per prediction step
    std::vector<TrajScore> per_traj;
    std::map<uint32_t, std::pair<double, double>> per_object;  // object -> (psnr, ssim)
    double mean_psnr = 0, mean_ssim = 0;
};

// per trajectory: condition on the configured context frames, draw K rollouts
// (z from the prior, one context sample per rollout), keep the best metric
// value per timestep, then average over trajectories
EvalReport best_of_k_eval(const model::EvfModel& m, std::span<const train::Dataset> datasets,
                          const BestOfKConfig& cfg);

void write_eval_report(const std::filesystem::path& dir, const EvalReport& r);

struct EmbeddingSample {
    uint32_t object_id = 0;
    int draw = 0;
    std::vector<double> coords;  // posterior mean of c
};

struct SeparationStats {
    double mean_intra = 0;
    double mean_inter = 0;
    double silhouette = 0;
};

// posterior means of c over `draws` independent support draws per object
SeparationStats embedding_separation(const model::EvfModel& m,
                                     std::span<const train::Dataset> datasets, int draws,
                                     int support_m, uint64_t seed,
                                     std::vector<EmbeddingSample>* samples_out = nullptr);

double silhouette_score(std::span<const EmbeddingSample> samples);

struct PcaResult {
    std::vector<std::vector<double>> coords;  // n x dims
    std::vector<double> explained_variance;   // fraction per component
};

// center, project on the top principal components of the covariance;
// deterministic sign (largest-magnitude entry positive); rank-deficient
// directions come out as zero coordinates
PcaResult pca_project(const std::vector<std::vector<double>>& points, int dims = 2);

}  // namespace evf::metrics
