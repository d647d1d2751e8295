#include "evf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "evf/gaussian.hpp"
#include "evf/io.hpp"

namespace evf::metrics {

double psnr(const Tensor& a, const Tensor& b) {
    check(a.shape == b.shape, "psnr: shape mismatch " + shape_str(a.shape) + " vs " +
                                  shape_str(b.shape));
    double sq = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(a.data.size());
    if (mse < 1e-10) return 100.0;
    return -10.0 * std::log10(mse);
}

double ssim(const Tensor& a, const Tensor& b, int h, int w) {
    check(a.shape == b.shape, "ssim: shape mismatch");
    check(static_cast<int64_t>(h) * w == a.size(), "ssim: dims do not match tensor size");
    constexpr int win = 7;
    check(h >= win && w >= win, "ssim: frame smaller than the 7x7 window");
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const double n = win * win;

    double acc = 0.0;
    int count = 0;
    for (int r0 = 0; r0 + win <= h; ++r0)
        for (int c0 = 0; c0 + win <= w; ++c0) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int r = r0; r < r0 + win; ++r)
                for (int c = c0; c < c0 + win; ++c) {
                    const double x = a.data[static_cast<size_t>(r) * w + c];
                    const double y = b.data[static_cast<size_t>(r) * w + c];
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            const double ma = sa / n, mb = sb / n;
            const double va = saa / n - ma * ma;
            const double vb = sbb / n - mb * mb;
            const double cov = sab / n - ma * mb;
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return acc / count;
}

namespace {

// the donor object for mismatched support: next object in the list whose
// shape differs, so the support genuinely disagrees with the target
size_t mismatch_donor(std::span<const train::Dataset> datasets, size_t oi) {
    for (size_t step = 1; step < datasets.size(); ++step) {
        const size_t j = (oi + step) % datasets.size();
        if (datasets[j].spec.shape_id != datasets[oi].spec.shape_id) return j;
    }
    // all shapes equal: fall back to the next object
    return (oi + 1) % datasets.size();
}

}  // namespace

EvalReport best_of_k_eval(const model::EvfModel& m, std::span<const train::Dataset> datasets,
                          const BestOfKConfig& cfg) {
    check(cfg.k >= 1, "best_of_k_eval: k must be >= 1");
    check(!datasets.empty(), "best_of_k_eval: no datasets");
    const auto& mc = m.config();
    const int ctx = mc.context_frames;

    EvalReport rep;
    rep.k = cfg.k;
    std::vector<double> psnr_sum, ssim_sum;
    std::map<uint32_t, std::pair<double, double>> obj_sum;
    std::map<uint32_t, int> obj_count;

    for (size_t oi = 0; oi < datasets.size(); ++oi) {
        const train::Dataset& d = datasets[oi];
        check(d.seqs.size() >= 2,
              "best_of_k_eval: object " + std::to_string(d.object_id) +
                  " has a single trajectory, no support available");
        const int n_eval = std::min<int>(cfg.per_object, static_cast<int>(d.seqs.size()));
        for (int ti = 0; ti < n_eval; ++ti) {
            const model::Sequence& seq = d.seqs[static_cast<size_t>(ti)];
            const int t_total = static_cast<int>(seq.frames.size());
            check(t_total > ctx, "best_of_k_eval: trajectory shorter than the context");
            const int horizon = std::min(cfg.horizon, t_total - ctx);
            if (rep.horizon == 0) {
                rep.horizon = horizon;
                psnr_sum.assign(static_cast<size_t>(horizon), 0.0);
                ssim_sum.assign(static_cast<size_t>(horizon), 0.0);
            }
            check(horizon == rep.horizon, "best_of_k_eval: inconsistent horizons across objects");

            // support set: same object without the eval trajectory, or a
            // different-shape donor when probing mismatched adaptation
            Rng srng(mix_seed(cfg.seed, 0x5E7 + oi, static_cast<uint64_t>(ti)));
            model::SupportSet support;
            if (cfg.mismatched_support) {
                const train::Dataset& donor = datasets[mismatch_donor(datasets, oi)];
                support = train::sample_support_set(donor, cfg.support_m, srng);
            } else {
                const int n = static_cast<int>(d.seqs.size());
                auto pool = srng.sample_without_replacement(n - 1, std::min(cfg.support_m, n - 1));
                for (auto& idx : pool)
                    if (idx >= ti) ++idx;  // skip the eval trajectory
                support = train::support_from_indices(d, pool);
            }
            GaussianParams post;
            if (!cfg.zero_context) post = m.encode_experience(support);

            std::vector<double> best_psnr(static_cast<size_t>(horizon), -1e300);
            std::vector<double> best_ssim(static_cast<size_t>(horizon), -1e300);
            std::span<const Tensor> context(seq.frames.data(), static_cast<size_t>(ctx));
            for (int k = 0; k < cfg.k; ++k) {
                Rng krng(mix_seed(mix_seed(cfg.seed, 0xE7A1, oi * 4096 + static_cast<uint64_t>(ti)),
                                  static_cast<uint64_t>(k)));
                Tensor c = m.zero_context();
                if (!cfg.zero_context)
                    c = reparameterize(post, krng.normal_tensor({mc.context_dim}));
                auto preds = m.rollout_predict(context, seq.actions, c, horizon, krng);
                for (int t = 0; t < horizon; ++t) {
                    const Tensor& gt = seq.frames[static_cast<size_t>(ctx + t)];
                    best_psnr[static_cast<size_t>(t)] = std::max(
                        best_psnr[static_cast<size_t>(t)], psnr(preds[static_cast<size_t>(t)], gt));
                    best_ssim[static_cast<size_t>(t)] =
                        std::max(best_ssim[static_cast<size_t>(t)],
                                 ssim(preds[static_cast<size_t>(t)], gt, mc.frame_h, mc.frame_w));
                }
            }
            TrajScore ts;
            ts.object_id = d.object_id;
            ts.traj_index = ti;
            for (int t = 0; t < horizon; ++t) {
                psnr_sum[static_cast<size_t>(t)] += best_psnr[static_cast<size_t>(t)];
                ssim_sum[static_cast<size_t>(t)] += best_ssim[static_cast<size_t>(t)];
                ts.mean_psnr += best_psnr[static_cast<size_t>(t)];
                ts.mean_ssim += best_ssim[static_cast<size_t>(t)];
            }
            ts.mean_psnr /= horizon;
            ts.mean_ssim /= horizon;
            rep.per_traj.push_back(ts);
            obj_sum[d.object_id].first += ts.mean_psnr;
            obj_sum[d.object_id].second += ts.mean_ssim;
            obj_count[d.object_id] += 1;
            rep.n_traj += 1;
        }
    }
    check(rep.n_traj > 0, "best_of_k_eval: nothing evaluated");
    rep.psnr_curve.resize(psnr_sum.size());
    rep.ssim_curve.resize(ssim_sum.size());
    for (size_t t = 0; t < psnr_sum.size(); ++t) {
        rep.psnr_curve[t] = psnr_sum[t] / rep.n_traj;
        rep.ssim_curve[t] = ssim_sum[t] / rep.n_traj;
    }
    for (const auto& [id, s] : obj_sum)
        rep.per_object[id] = {s.first / obj_count[id], s.second / obj_count[id]};
    for (const auto& ts : rep.per_traj) {
        rep.mean_psnr += ts.mean_psnr;
        rep.mean_ssim += ts.mean_ssim;
    }
    rep.mean_psnr /= rep.n_traj;
    rep.mean_ssim /= rep.n_traj;
    return rep;
}

void write_eval_report(const std::filesystem::path& dir, const EvalReport& r) {
    std::filesystem::create_directories(dir);
    char buf[256];
    std::string curves = "t,psnr_best,ssim_best\n";
    for (size_t t = 0; t < r.psnr_curve.size(); ++t) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", t + 1, r.psnr_curve[t], r.ssim_curve[t]);
        curves += buf;
    }
    io::write_file_atomic(dir / "eval_curves.csv", curves);

    std::string trajs = "object_id,traj,mean_psnr,mean_ssim\n";
    for (const auto& ts : r.per_traj) {
        std::snprintf(buf, sizeof(buf), "%u,%d,%.9g,%.9g\n", ts.object_id, ts.traj_index,
                      ts.mean_psnr, ts.mean_ssim);
        trajs += buf;
    }
    io::write_file_atomic(dir / "eval_trajs.csv", trajs);

    std::string summary;
    std::snprintf(buf, sizeof(buf),
                  "best-of-%d over %d trajectories, horizon %d\nmean psnr %.4f  mean ssim %.4f\n",
                  r.k, r.n_traj, r.horizon, r.mean_psnr, r.mean_ssim);
    summary += buf;
    for (const auto& [id, s] : r.per_object) {
        std::snprintf(buf, sizeof(buf), "object %3u: psnr %.4f  ssim %.4f\n", id, s.first, s.second);
        summary += buf;
    }
    io::write_file_atomic(dir / "eval_summary.txt", summary);
}

double silhouette_score(std::span<const EmbeddingSample> samples) {
    const size_t n = samples.size();
    auto dist = [&](size_t i, size_t j) {
        double acc = 0.0;
        for (size_t k = 0; k < samples[i].coords.size(); ++k) {
            const double d = samples[i].coords[k] - samples[j].coords[k];
            acc += d * d;
        }
        return std::sqrt(acc);
    };
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double a = 0.0;
        int a_count = 0;
        std::map<uint32_t, std::pair<double, int>> others;
        for (size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            if (samples[j].object_id == samples[i].object_id) {
                a += dist(i, j);
                ++a_count;
            } else {
                auto& o = others[samples[j].object_id];
                o.first += dist(i, j);
                o.second += 1;
            }
        }
        check(a_count > 0 && !others.empty(), "silhouette: need >= 2 draws and >= 2 objects");
        a /= a_count;
        double b = 1e300;
        for (const auto& [id, o] : others) b = std::min(b, o.first / o.second);
        const double m = std::max(a, b);
        total += m > 0.0 ? (b - a) / m : 0.0;  // identical points score 0
    }
    return total / static_cast<double>(n);
}

SeparationStats embedding_separation(const model::EvfModel& m,
                                     std::span<const train::Dataset> datasets, int draws,
                                     int support_m, uint64_t seed,
                                     std::vector<EmbeddingSample>* samples_out) {
    check(datasets.size() >= 2, "embedding_separation: need at least 2 objects");
    check(draws >= 2, "embedding_separation: need at least 2 support draws per object");
    std::vector<EmbeddingSample> samples;
    for (size_t oi = 0; oi < datasets.size(); ++oi) {
        for (int r = 0; r < draws; ++r) {
            Rng rng(mix_seed(seed, 0xE3B + oi, static_cast<uint64_t>(r)));
            auto support = train::sample_support_set(datasets[oi], support_m, rng);
            auto post = m.encode_experience(support);
            EmbeddingSample s;
            s.object_id = datasets[oi].object_id;
            s.draw = r;
            s.coords.assign(post.mean.data.begin(), post.mean.data.end());
            samples.push_back(std::move(s));
        }
    }
    auto dist = [&](const EmbeddingSample& a, const EmbeddingSample& b) {
        double acc = 0.0;
        for (size_t k = 0; k < a.coords.size(); ++k) {
            const double d = a.coords[k] - b.coords[k];
            acc += d * d;
        }
        return std::sqrt(acc);
    };
    double intra = 0.0, inter = 0.0;
    int64_t n_intra = 0, n_inter = 0;
    for (size_t i = 0; i < samples.size(); ++i)
        for (size_t j = i + 1; j < samples.size(); ++j) {
            const double d = dist(samples[i], samples[j]);
            if (samples[i].object_id == samples[j].object_id) {
                intra += d;
                ++n_intra;
            } else {
                inter += d;
                ++n_inter;
            }
        }
    SeparationStats st;
    st.mean_intra = n_intra ? intra / n_intra : 0.0;
    st.mean_inter = n_inter ? inter / n_inter : 0.0;
    st.silhouette = silhouette_score(samples);
    if (samples_out) *samples_out = std::move(samples);
    return st;
}

namespace {

// cyclic Jacobi eigendecomposition of a symmetric matrix, f64
void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& eigval,
                  std::vector<std::vector<double>>& eigvec) {
    const size_t d = a.size();
    eigvec.assign(d, std::vector<double>(d, 0.0));
    for (size_t i = 0; i < d; ++i) eigvec[i][i] = 1.0;
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < d; ++p)
            for (size_t q = p + 1; q < d; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (size_t p = 0; p < d; ++p)
            for (size_t q = p + 1; q < d; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (size_t k = 0; k < d; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (size_t k = 0; k < d; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (size_t k = 0; k < d; ++k) {
                    const double vkp = eigvec[k][p], vkq = eigvec[k][q];
                    eigvec[k][p] = c * vkp - s * vkq;
                    eigvec[k][q] = s * vkp + c * vkq;
                }
            }
    }
    eigval.resize(d);
    for (size_t i = 0; i < d; ++i) eigval[i] = a[i][i];
}

}  // namespace

PcaResult pca_project(const std::vector<std::vector<double>>& points, int dims) {
    check(dims >= 1, "pca_project: dims must be >= 1");
    const size_t n = points.size();
    check(n >= static_cast<size_t>(dims), "pca_project: need at least `dims` samples");
    const size_t d = points[0].size();
    for (const auto& p : points) check(p.size() == d, "pca_project: ragged input");

    std::vector<double> mean(d, 0.0);
    for (const auto& p : points)
        for (size_t k = 0; k < d; ++k) mean[k] += p[k];
    for (auto& v : mean) v /= static_cast<double>(n);

    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (const auto& p : points)
        for (size_t i = 0; i < d; ++i)
            for (size_t j = 0; j < d; ++j)
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]);
    for (auto& row : cov)
        for (auto& v : row) v /= static_cast<double>(n);

    std::vector<double> eigval;
    std::vector<std::vector<double>> eigvec;
    jacobi_eigen(cov, eigval, eigvec);

    std::vector<size_t> order(d);
    for (size_t i = 0; i < d; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return eigval[a] > eigval[b]; });

    double total_var = 0.0;
    for (double v : eigval) total_var += std::max(v, 0.0);

    PcaResult out;
    out.coords.assign(n, std::vector<double>(static_cast<size_t>(dims), 0.0));
    out.explained_variance.assign(static_cast<size_t>(dims), 0.0);
    for (int k = 0; k < dims; ++k) {
        if (static_cast<size_t>(k) >= d) break;  // fewer input dims: zero-pad
        const size_t e = order[static_cast<size_t>(k)];
        if (eigval[e] <= 1e-14 * std::max(total_var, 1e-300)) continue;  // rank-deficient
        // deterministic sign: largest-magnitude entry positive
        size_t imax = 0;
        for (size_t i = 1; i < d; ++i)
            if (std::abs(eigvec[i][e]) > std::abs(eigvec[imax][e])) imax = i;
        const double sign = eigvec[imax][e] < 0.0 ? -1.0 : 1.0;
        for (size_t r = 0; r < n; ++r) {
            double acc = 0.0;
            for (size_t i = 0; i < d; ++i) acc += (points[r][i] - mean[i]) * eigvec[i][e] * sign;
            out.coords[r][static_cast<size_t>(k)] = acc;
        }
        out.explained_variance[static_cast<size_t>(k)] =
            total_var > 0.0 ? std::max(eigval[e], 0.0) / total_var : 0.0;
    }
    return out;
}

}  // namespace evf::metrics
