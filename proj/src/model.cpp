#include "evf/model.hpp"

#include <algorithm>
#include <cmath>

#include "evf/kernels.hpp"

namespace evf::model {

namespace {

// y = W x for row-major W [out, in]; same kernel the tape's matmul uses, so
// the tape-free path reproduces tape values bitwise
void matvec(const Tensor& w, const float* x, float* y) {
    const int out = w.dim(0), in = w.dim(1);
    for (int i = 0; i < out; ++i)
        y[i] = kernels::dot(w.data.data() + static_cast<size_t>(i) * in, x, in);
}

float soft_clamp(float raw) {
    float z = raw * (1.0f / kLogVarBound);
    z = std::tanh(z);
    return z * kLogVarBound;
}

}  // namespace

Sequence to_sequence(const push::Trajectory& tr) {
    Sequence s;
    s.object_id = tr.object_id;
    s.frames.reserve(tr.frames.size());
    for (const auto& f : tr.frames) s.frames.push_back(push::frame_to_tensor(f));
    s.actions.reserve(tr.actions.size());
    for (const auto& a : tr.actions) s.actions.push_back({a.dx, a.dy});
    return s;
}

Tape::Id EvfModel::TapeBind::operator()(const std::string& name) {
    auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    Tape::Id id = tape->leaf(store->at(name), true, name);
    ids.emplace(name, id);
    return id;
}

EvfModel::EvfModel(ModelConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    check(cfg_.context_dim > 0 && cfg_.latent_dim > 0 && cfg_.hidden_dim > 0 &&
              cfg_.frame_dim() > 0 && cfg_.action_dim > 0,
          "ModelConfig: dimensions must be positive");
    check(cfg_.beta >= 0.0f && cfg_.gamma >= 0.0f, "ModelConfig: beta/gamma must be >= 0");
    init_params(init_seed);
}

EvfModel::EvfModel(ModelConfig cfg, const std::filesystem::path& checkpoint) : cfg_(cfg) {
    params_.load(checkpoint);
    validate_params();
}

void EvfModel::init_params(uint64_t seed) {
    Rng rng(mix_seed(seed, 0x111717));
    auto dense = [&](const std::string& name, int out, int in, float scale) {
        const float lim = scale * std::sqrt(6.0f / static_cast<float>(in + out));
        Tensor w = Tensor::zeros({out, in});
        for (auto& v : w.data) v = rng.uniform(-lim, lim);
        params_.create(name + ".w", std::move(w));
        params_.create(name + ".b", Tensor::zeros({out}));
    };
    auto gru = [&](const std::string& name, int in, int h) {
        dense(name + ".r", h, in, 1.0f);
        dense(name + ".u", h, in, 1.0f);
        dense(name + ".n", h, in, 1.0f);
        dense(name + ".hr", h, h, 1.0f);
        dense(name + ".hu", h, h, 1.0f);
        dense(name + ".hn", h, h, 1.0f);
    };
    const int fd = cfg_.frame_dim(), h = cfg_.hidden_dim;
    const int dc = cfg_.context_dim, dz = cfg_.latent_dim;

    dense("exp_enc.embed", h, fd, 1.0f);
    gru("exp_enc.gru", h, h);
    // posterior heads start tiny so the initial posteriors sit near the prior
    dense("exp_enc.mean", dc, h, 0.01f);
    dense("exp_enc.logvar", dc, h, 0.01f);

    dense("frame_enc.fc", h, 2 * fd + dc, 1.0f);
    dense("frame_enc.mean", dz, h, 0.01f);
    dense("frame_enc.logvar", dz, h, 0.01f);

    gru("gen.gru", gen_input_dim(), h);
    dense("gen.frame", fd, h, 1.0f);
    dense("gen.gate", fd, h, 1.0f);
}

void EvfModel::validate_params() const {
    EvfModel fresh(cfg_, 0);
    auto expected = fresh.params_.names();
    auto got = params_.names();
    check(expected == got, "checkpoint parameter set does not match the model configuration");
    for (const auto& n : expected)
        check(fresh.params_.at(n).shape == params_.at(n).shape,
              "checkpoint shape mismatch for '" + n + "': expected " +
                  shape_str(fresh.params_.at(n).shape) + ", got " + shape_str(params_.at(n).shape));
}

// --- tape-free inference -----------------------------------------------------

namespace {

struct GruRaw {
    const Tensor *wr, *br, *wu, *bu, *wn, *bn, *hr, *hu, *hn;
};

GruRaw gru_raw(const ParamStore& p, const std::string& name) {
    return {&p.at(name + ".r.w"),  &p.at(name + ".r.b"),  &p.at(name + ".u.w"),
            &p.at(name + ".u.b"),  &p.at(name + ".n.w"),  &p.at(name + ".n.b"),
            &p.at(name + ".hr.w"), &p.at(name + ".hu.w"), &p.at(name + ".hn.w")};
}

// mirrors generator_step_tape / encode_experience_tape op for op
void gru_step_raw(const GruRaw& g, const std::vector<float>& x, std::vector<float>& h,
                  std::vector<float>& t1, std::vector<float>& t2) {
    const int hd = static_cast<int>(h.size());
    std::vector<float> r(static_cast<size_t>(hd)), u(static_cast<size_t>(hd)),
        n(static_cast<size_t>(hd));
    matvec(*g.wr, x.data(), t1.data());
    matvec(*g.hr, h.data(), t2.data());
    for (int i = 0; i < hd; ++i) {
        float s = t1[static_cast<size_t>(i)] + t2[static_cast<size_t>(i)];
        s = s + g.br->data[static_cast<size_t>(i)];
        r[static_cast<size_t>(i)] = kernels::sigmoid(s);
    }
    matvec(*g.wu, x.data(), t1.data());
    matvec(*g.hu, h.data(), t2.data());
    for (int i = 0; i < hd; ++i) {
        float s = t1[static_cast<size_t>(i)] + t2[static_cast<size_t>(i)];
        s = s + g.bu->data[static_cast<size_t>(i)];
        u[static_cast<size_t>(i)] = kernels::sigmoid(s);
    }
    std::vector<float> rh(static_cast<size_t>(hd));
    for (int i = 0; i < hd; ++i)
        rh[static_cast<size_t>(i)] = r[static_cast<size_t>(i)] * h[static_cast<size_t>(i)];
    matvec(*g.wn, x.data(), t1.data());
    matvec(*g.hn, rh.data(), t2.data());
    for (int i = 0; i < hd; ++i) {
        float s = t1[static_cast<size_t>(i)] + t2[static_cast<size_t>(i)];
        s = s + g.bn->data[static_cast<size_t>(i)];
        n[static_cast<size_t>(i)] = std::tanh(s);
    }
    for (int i = 0; i < hd; ++i) {
        const float omu = 1.0f - u[static_cast<size_t>(i)];
        const float p1 = omu * n[static_cast<size_t>(i)];
        const float p2 = u[static_cast<size_t>(i)] * h[static_cast<size_t>(i)];
        h[static_cast<size_t>(i)] = p1 + p2;
    }
}

// canonical mean pool: lexicographic order, f64 accumulation (see tape MeanStack)
std::vector<float> mean_pool_sorted(std::vector<std::vector<float>> states) {
    std::vector<int> perm(states.size());
    for (size_t i = 0; i < states.size(); ++i) perm[i] = static_cast<int>(i);
    std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) {
        return std::lexicographical_compare(states[static_cast<size_t>(a)].begin(),
                                            states[static_cast<size_t>(a)].end(),
                                            states[static_cast<size_t>(b)].begin(),
                                            states[static_cast<size_t>(b)].end());
    });
    const size_t dim = states[0].size();
    std::vector<float> out(dim);
    for (size_t j = 0; j < dim; ++j) {
        double acc = 0.0;
        for (size_t r = 0; r < states.size(); ++r)
            acc += static_cast<double>(states[static_cast<size_t>(perm[r])][j]);
        out[j] = static_cast<float>(acc / static_cast<double>(states.size()));
    }
    return out;
}

}  // namespace

GaussianParams EvfModel::encode_experience(const SupportSet& s) const {
    check(s.size() >= 1, "encode_experience: empty support set");
    check(s.size() <= 5, "encode_experience: support set larger than 5");
    const int h = cfg_.hidden_dim, fd = cfg_.frame_dim();
    const GruRaw g = gru_raw(params_, "exp_enc.gru");
    const Tensor& ew = params_.at("exp_enc.embed.w");
    const Tensor& eb = params_.at("exp_enc.embed.b");

    std::vector<std::vector<float>> finals;
    std::vector<float> t1(static_cast<size_t>(h)), t2(static_cast<size_t>(h));
    for (const auto& seq : s.sequences) {
        check(!seq.empty(), "encode_experience: empty sequence in support set");
        std::vector<float> hidden(static_cast<size_t>(h), 0.0f);
        std::vector<float> embed(static_cast<size_t>(h));
        for (const auto& frame : seq) {
            check(frame.size() == fd, "encode_experience: frame dim mismatch");
            matvec(ew, frame.data.data(), t1.data());
            for (int i = 0; i < h; ++i) {
                const float v = t1[static_cast<size_t>(i)] + eb.data[static_cast<size_t>(i)];
                embed[static_cast<size_t>(i)] = v > 0.0f ? v : 0.0f;
            }
            gru_step_raw(g, embed, hidden, t1, t2);
        }
        finals.push_back(std::move(hidden));
    }
    const auto pooled = mean_pool_sorted(std::move(finals));

    const int dc = cfg_.context_dim;
    Tensor mean = Tensor::zeros({dc});
    Tensor logv = Tensor::zeros({dc});
    std::vector<float> head(static_cast<size_t>(dc));
    matvec(params_.at("exp_enc.mean.w"), pooled.data(), head.data());
    for (int i = 0; i < dc; ++i)
        mean.data[static_cast<size_t>(i)] =
            head[static_cast<size_t>(i)] + params_.at("exp_enc.mean.b").data[static_cast<size_t>(i)];
    matvec(params_.at("exp_enc.logvar.w"), pooled.data(), head.data());
    for (int i = 0; i < dc; ++i) {
        const float raw =
            head[static_cast<size_t>(i)] + params_.at("exp_enc.logvar.b").data[static_cast<size_t>(i)];
        logv.data[static_cast<size_t>(i)] = soft_clamp(raw);
    }
    return GaussianParams::make(std::move(mean), std::move(logv));
}

GaussianParams EvfModel::encode_frame_posterior(const Tensor& frame_t, const Tensor& frame_prev,
                                                const Tensor& c) const {
    const int fd = cfg_.frame_dim();
    check(frame_t.size() == fd && frame_prev.size() == fd,
          "encode_frame_posterior: frame dim mismatch");
    check(c.size() == cfg_.context_dim, "encode_frame_posterior: context dim mismatch");
    std::vector<float> x;
    x.reserve(static_cast<size_t>(2 * fd + cfg_.context_dim));
    x.insert(x.end(), frame_t.data.begin(), frame_t.data.end());
    x.insert(x.end(), frame_prev.data.begin(), frame_prev.data.end());
    x.insert(x.end(), c.data.begin(), c.data.end());

    const int h = cfg_.hidden_dim, dz = cfg_.latent_dim;
    std::vector<float> hid(static_cast<size_t>(h));
    matvec(params_.at("frame_enc.fc.w"), x.data(), hid.data());
    for (int i = 0; i < h; ++i) {
        const float v = hid[static_cast<size_t>(i)] +
                        params_.at("frame_enc.fc.b").data[static_cast<size_t>(i)];
        hid[static_cast<size_t>(i)] = v > 0.0f ? v : 0.0f;
    }
    Tensor mean = Tensor::zeros({dz});
    Tensor logv = Tensor::zeros({dz});
    std::vector<float> head(static_cast<size_t>(dz));
    matvec(params_.at("frame_enc.mean.w"), hid.data(), head.data());
    for (int i = 0; i < dz; ++i)
        mean.data[static_cast<size_t>(i)] =
            head[static_cast<size_t>(i)] + params_.at("frame_enc.mean.b").data[static_cast<size_t>(i)];
    matvec(params_.at("frame_enc.logvar.w"), hid.data(), head.data());
    for (int i = 0; i < dz; ++i) {
        const float raw = head[static_cast<size_t>(i)] +
                          params_.at("frame_enc.logvar.b").data[static_cast<size_t>(i)];
        logv.data[static_cast<size_t>(i)] = soft_clamp(raw);
    }
    return GaussianParams::make(std::move(mean), std::move(logv));
}

EvfModel::GenState EvfModel::initial_state(const Tensor& first_frame) const {
    check(first_frame.size() == cfg_.frame_dim(), "initial_state: frame dim mismatch");
    return GenState{Tensor::zeros({cfg_.hidden_dim}), first_frame};
}

Tensor EvfModel::generator_step(GenState& st, const Tensor& prev_frame,
                                const std::array<float, 2>& action, const Tensor& z,
                                const Tensor& c) const {
    const int fd = cfg_.frame_dim(), h = cfg_.hidden_dim;
    check(prev_frame.size() == fd, "generator_step: frame dim mismatch");
    check(z.size() == cfg_.latent_dim && c.size() == cfg_.context_dim,
          "generator_step: latent/context dim mismatch");
    std::vector<float> x;
    x.reserve(static_cast<size_t>(gen_input_dim()));
    x.insert(x.end(), prev_frame.data.begin(), prev_frame.data.end());
    x.push_back(action[0]);
    x.push_back(action[1]);
    x.insert(x.end(), z.data.begin(), z.data.end());
    x.insert(x.end(), c.data.begin(), c.data.end());

    std::vector<float> hid(st.hidden.data.begin(), st.hidden.data.end());
    std::vector<float> t1(static_cast<size_t>(std::max(h, fd))), t2(static_cast<size_t>(h));
    gru_step_raw(gru_raw(params_, "gen.gru"), x, hid, t1, t2);
    std::copy(hid.begin(), hid.end(), st.hidden.data.begin());

    Tensor pred = Tensor::zeros({fd});
    std::vector<float> cand(static_cast<size_t>(fd)), gate(static_cast<size_t>(fd));
    matvec(params_.at("gen.frame.w"), hid.data(), cand.data());
    const Tensor& fb = params_.at("gen.frame.b");
    for (int i = 0; i < fd; ++i) {
        const float s = cand[static_cast<size_t>(i)] + fb.data[static_cast<size_t>(i)];
        cand[static_cast<size_t>(i)] = kernels::sigmoid(s);
    }
    matvec(params_.at("gen.gate.w"), hid.data(), gate.data());
    const Tensor& gb = params_.at("gen.gate.b");
    for (int i = 0; i < fd; ++i) {
        const float s = gate[static_cast<size_t>(i)] + gb.data[static_cast<size_t>(i)];
        gate[static_cast<size_t>(i)] = kernels::sigmoid(s);
    }
    for (int i = 0; i < fd; ++i) {
        const float m = gate[static_cast<size_t>(i)];
        const float p1 = m * cand[static_cast<size_t>(i)];
        const float omm = 1.0f - m;
        const float p2 = omm * st.first_frame.data[static_cast<size_t>(i)];
        pred.data[static_cast<size_t>(i)] = p1 + p2;
    }
    return pred;
}

std::vector<Tensor> EvfModel::rollout_predict(std::span<const Tensor> context,
                                              std::span<const std::array<float, 2>> actions,
                                              const Tensor& c, int horizon, Rng& z_rng) const {
    check(!context.empty(), "rollout_predict: need at least one context frame");
    check(horizon >= 0, "rollout_predict: negative horizon");
    check(actions.size() >= context.size() - 1 + static_cast<size_t>(horizon),
          "rollout_predict: need an action for every transition");
    GenState st = initial_state(context[0]);
    size_t ai = 0;
    for (size_t i = 1; i < context.size(); ++i) {
        const Tensor z = z_rng.normal_tensor({cfg_.latent_dim});
        (void)generator_step(st, context[i - 1], actions[ai++], z, c);  // warm-up only
    }
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(horizon));
    const Tensor* prev = &context.back();
    for (int j = 0; j < horizon; ++j) {
        const Tensor z = z_rng.normal_tensor({cfg_.latent_dim});
        out.push_back(generator_step(st, *prev, actions[ai++], z, c));
        prev = &out.back();
    }
    return out;
}

// --- training graphs ---------------------------------------------------------

EvfModel::ContextNodes EvfModel::encode_experience_tape(Tape& t, TapeBind& p,
                                                        const SupportSet& s) const {
    check(s.size() >= 1, "encode_experience: empty support set");
    check(s.size() <= 5, "encode_experience: support set larger than 5");
    std::vector<Tape::Id> finals;
    for (const auto& seq : s.sequences) {
        check(!seq.empty(), "encode_experience: empty sequence in support set");
        Tape::Id hidden = t.constant(Tensor::zeros({cfg_.hidden_dim}));
        for (const auto& frame : seq) {
            check(frame.size() == cfg_.frame_dim(), "encode_experience: frame dim mismatch");
            Tape::Id embed = t.relu(
                t.add(t.matmul(p("exp_enc.embed.w"), t.constant(frame)), p("exp_enc.embed.b")));
            hidden = gru_step_tape_impl(t, p, "exp_enc.gru", embed, hidden);
        }
        finals.push_back(hidden);
    }
    Tape::Id pooled = t.mean_stack(finals);
    Tape::Id mean = t.add(t.matmul(p("exp_enc.mean.w"), pooled), p("exp_enc.mean.b"));
    Tape::Id raw = t.add(t.matmul(p("exp_enc.logvar.w"), pooled), p("exp_enc.logvar.b"));
    return {mean, tape_soft_clamp_log_var(t, raw)};
}

EvfModel::PosteriorNodes EvfModel::encode_frame_posterior_tape(Tape& t, TapeBind& p,
                                                               Tape::Id frame_t,
                                                               Tape::Id frame_prev,
                                                               Tape::Id c) const {
    Tape::Id x = t.concat({frame_t, frame_prev, c});
    Tape::Id hid = t.relu(t.add(t.matmul(p("frame_enc.fc.w"), x), p("frame_enc.fc.b")));
    Tape::Id mean = t.add(t.matmul(p("frame_enc.mean.w"), hid), p("frame_enc.mean.b"));
    Tape::Id raw = t.add(t.matmul(p("frame_enc.logvar.w"), hid), p("frame_enc.logvar.b"));
    return {mean, tape_soft_clamp_log_var(t, raw)};
}

Tape::Id EvfModel::gru_step_tape_impl(Tape& t, TapeBind& p, const std::string& name, Tape::Id x,
                                      Tape::Id h) const {
    Tape::Id r = t.sigmoid(
        t.add(t.add(t.matmul(p(name + ".r.w"), x), t.matmul(p(name + ".hr.w"), h)), p(name + ".r.b")));
    Tape::Id u = t.sigmoid(
        t.add(t.add(t.matmul(p(name + ".u.w"), x), t.matmul(p(name + ".hu.w"), h)), p(name + ".u.b")));
    Tape::Id rh = t.mul(r, h);
    Tape::Id n = t.tanh(
        t.add(t.add(t.matmul(p(name + ".n.w"), x), t.matmul(p(name + ".hn.w"), rh)), p(name + ".n.b")));
    Tape::Id omu = t.sub(t.scalar(1.0f), u);
    return t.add(t.mul(omu, n), t.mul(u, h));
}

Tape::Id EvfModel::generator_step_tape(Tape& t, TapeBind& p, GenStateTape& st, Tape::Id prev_frame,
                                       Tape::Id action, Tape::Id z, Tape::Id c) const {
    Tape::Id x = t.concat({prev_frame, action, z, c});
    st.hidden = gru_step_tape_impl(t, p, "gen.gru", x, st.hidden);
    Tape::Id cand = t.sigmoid(t.add(t.matmul(p("gen.frame.w"), st.hidden), p("gen.frame.b")));
    Tape::Id gate = t.sigmoid(t.add(t.matmul(p("gen.gate.w"), st.hidden), p("gen.gate.b")));
    Tape::Id omg = t.sub(t.scalar(1.0f), gate);
    return t.add(t.mul(gate, cand), t.mul(omg, st.first_frame));
}

EvfModel::RolloutNodes EvfModel::rollout_train_tape(Tape& t, TapeBind& p, const Sequence& traj,
                                                    Tape::Id c, Rng& z_rng) const {
    const int T = static_cast<int>(traj.frames.size());
    check(T >= cfg_.context_frames + 1,
          "rollout_train: trajectory length " + std::to_string(T) +
              " is shorter than context_frames+1 = " + std::to_string(cfg_.context_frames + 1));
    check(traj.actions.size() + 1 == traj.frames.size(), "rollout_train: frames != actions+1");

    RolloutNodes out;
    GenStateTape st{t.constant(Tensor::zeros({cfg_.hidden_dim})), t.constant(traj.frames[0])};
    Tape::Id recon_sum = -1, zkl_sum = -1;
    for (int step = 1; step < T; ++step) {
        Tape::Id target = t.constant(traj.frames[static_cast<size_t>(step)]);
        Tape::Id prev_gt = t.constant(traj.frames[static_cast<size_t>(step - 1)]);
        auto post = encode_frame_posterior_tape(t, p, target, prev_gt, c);
        Tape::Id z =
            tape_reparameterize(t, post.mean, post.log_var, z_rng.normal_tensor({cfg_.latent_dim}));
        // teacher forcing on the context frames only, autoregressive afterward
        Tape::Id prev = step <= cfg_.context_frames ? prev_gt : out.preds.back();
        Tape::Id action = t.constant(Tensor::vec(
            {traj.actions[static_cast<size_t>(step - 1)][0], traj.actions[static_cast<size_t>(step - 1)][1]}));
        Tape::Id pred = generator_step_tape(t, p, st, prev, action, z, c);
        out.preds.push_back(pred);

        Tape::Id err = t.sum(t.square(t.sub(pred, target)));
        Tape::Id kl = tape_kl_to_std_normal(t, post.mean, post.log_var);
        recon_sum = recon_sum < 0 ? err : t.add(recon_sum, err);
        zkl_sum = zkl_sum < 0 ? kl : t.add(zkl_sum, kl);
    }
    out.recon = t.mul(recon_sum, t.scalar(1.0f / static_cast<float>(T - 1)));
    out.z_kl = zkl_sum;
    return out;
}

EvfModel::ElboNodes EvfModel::elbo_tape(Tape& t, TapeBind& p, const SupportSet& support,
                                        std::span<const Sequence* const> batch, int dataset_size,
                                        Rng& rng, bool baseline) const {
    check(!batch.empty(), "elbo: empty batch");
    check(dataset_size >= 1, "elbo: dataset_size must be >= 1");
    for (const Sequence* seq : batch)
        check(seq->object_id == support.object_id,
              "elbo: batch trajectory from object " + std::to_string(seq->object_id) +
                  " does not match support object " + std::to_string(support.object_id));

    ElboNodes out;
    Tape::Id c_id;
    Tape::Id c_term = -1;
    if (baseline) {
        c_id = t.constant(zero_context());
        out.c_kl = t.scalar(0.0f);
        out.c_term = t.scalar(0.0f);
        out.has_context = false;
    } else {
        auto ctx = encode_experience_tape(t, p, support);
        // one context sample per (support, batch)
        c_id = tape_reparameterize(t, ctx.mean, ctx.log_var,
                                   rng.normal_tensor({cfg_.context_dim}));
        out.c_kl = tape_kl_to_std_normal(t, ctx.mean, ctx.log_var);
        c_term = t.mul(out.c_kl, t.scalar(cfg_.gamma / static_cast<float>(dataset_size)));
        out.c_term = c_term;
        out.has_context = true;
    }

    Tape::Id beta = t.scalar(cfg_.beta);
    Tape::Id loss_sum = -1, recon_sum = -1, zkl_sum = -1;
    for (const Sequence* seq : batch) {
        auto ro = rollout_train_tape(t, p, *seq, c_id, rng);
        Tape::Id li = t.add(ro.recon, t.mul(beta, ro.z_kl));
        if (c_term >= 0) li = t.add(li, c_term);
        loss_sum = loss_sum < 0 ? li : t.add(loss_sum, li);
        recon_sum = recon_sum < 0 ? ro.recon : t.add(recon_sum, ro.recon);
        zkl_sum = zkl_sum < 0 ? ro.z_kl : t.add(zkl_sum, ro.z_kl);
    }
    const float inv_b = 1.0f / static_cast<float>(batch.size());
    out.loss = t.mul(loss_sum, t.scalar(inv_b));
    out.recon = t.mul(recon_sum, t.scalar(inv_b));
    out.z_kl = t.mul(zkl_sum, t.scalar(inv_b));
    return out;
}

}  // namespace evf::model
