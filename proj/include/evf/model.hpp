#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "evf/gaussian.hpp"
#include "evf/param_store.hpp"
#include "evf/pushworld.hpp"
#include "evf/rng.hpp"
#include "evf/tape.hpp"

namespace evf::model {

struct ModelConfig {
    int frame_h = 16, frame_w = 16;
    int action_dim = 2;
    int context_dim = 8;
    int latent_dim = 8;
    int hidden_dim = 128;
    float beta = 1e-3f;   // weight on the per-step latent KL
    float gamma = 1e-3f;  // weight on the context KL
    int context_frames = 2;
    int predict_frames = 10;

    int frame_dim() const { return frame_h * frame_w; }
};

// M action-free frame sequences from one object's dataset, 1 <= M <= 5
struct SupportSet {
    uint32_t object_id = 0;
    std::vector<std::vector<Tensor>> sequences;
    int size() const { return static_cast<int>(sequences.size()); }
};

// trajectory in model form: flat frames plus actions
struct Sequence {
    uint32_t object_id = 0;
    std::vector<Tensor> frames;
    std::vector<std::array<float, 2>> actions;
};
Sequence to_sequence(const push::Trajectory& tr);

// Experience encoder, frame encoder and recurrent generator over one shared
// parameter store. Inference runs tape-free; training builds a tape graph
// that executes the same kernel sequence, so the two paths agree bitwise.
class EvfModel {
public:
    EvfModel(ModelConfig cfg, uint64_t init_seed);
    EvfModel(ModelConfig cfg, const std::filesystem::path& checkpoint);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    Tensor zero_context() const { return Tensor::zeros({cfg_.context_dim}); }

    // --- tape-free inference -------------------------------------------------

    GaussianParams encode_experience(const SupportSet& s) const;
    GaussianParams encode_frame_posterior(const Tensor& frame_t, const Tensor& frame_prev,
                                          const Tensor& c) const;

    struct GenState {
        Tensor hidden;
        Tensor first_frame;  // skip-gate reference
    };
    GenState initial_state(const Tensor& first_frame) const;
    // pred = m * g + (1 - m) * first_frame, hidden advanced in place
    Tensor generator_step(GenState& st, const Tensor& prev_frame,
                          const std::array<float, 2>& action, const Tensor& z,
                          const Tensor& c) const;

    // context warm-up on observed frames, then autoregressive prediction with
    // z ~ N(0, I); needs actions for every transition: |context|-1 + horizon
    std::vector<Tensor> rollout_predict(std::span<const Tensor> context,
                                        std::span<const std::array<float, 2>> actions,
                                        const Tensor& c, int horizon, Rng& z_rng) const;

    // --- training graphs -----------------------------------------------------

    // binds parameters as tape leaves on first use
    struct TapeBind {
        Tape* tape = nullptr;
        const ParamStore* store = nullptr;
        std::map<std::string, Tape::Id> ids;
        Tape::Id operator()(const std::string& name);
    };

    struct ContextNodes {
        Tape::Id mean, log_var;
    };
    ContextNodes encode_experience_tape(Tape& t, TapeBind& p, const SupportSet& s) const;

    struct PosteriorNodes {
        Tape::Id mean, log_var;
    };
    PosteriorNodes encode_frame_posterior_tape(Tape& t, TapeBind& p, Tape::Id frame_t,
                                               Tape::Id frame_prev, Tape::Id c) const;

    struct GenStateTape {
        Tape::Id hidden, first_frame;
    };
    Tape::Id generator_step_tape(Tape& t, TapeBind& p, GenStateTape& st, Tape::Id prev_frame,
                                 Tape::Id action, Tape::Id z, Tape::Id c) const;

    struct RolloutNodes {
        Tape::Id recon;  // sum_t ||pred_t - I_t||^2 / (T-1)
        Tape::Id z_kl;   // sum_t KL(q(z_t|.) || N(0,I))
        std::vector<Tape::Id> preds;
    };
    RolloutNodes rollout_train_tape(Tape& t, TapeBind& p, const Sequence& traj, Tape::Id c,
                                    Rng& z_rng) const;

    struct ElboNodes {
        Tape::Id loss;     // mean_i [recon_i + beta*Z_i + (gamma/|D|)*C]
        Tape::Id recon;    // mean_i recon_i
        Tape::Id z_kl;     // mean_i Z_i
        Tape::Id c_kl;     // C (scalar 0 in baseline mode)
        Tape::Id c_term;   // (gamma/|D|)*C as it enters the loss
        bool has_context = false;
    };
    ElboNodes elbo_tape(Tape& t, TapeBind& p, const SupportSet& support,
                        std::span<const Sequence* const> batch, int dataset_size, Rng& rng,
                        bool baseline) const;

private:
    ModelConfig cfg_;
    ParamStore params_;

    void init_params(uint64_t seed);
    void validate_params() const;
    Tape::Id gru_step_tape_impl(Tape& t, TapeBind& p, const std::string& name, Tape::Id x,
                                Tape::Id h) const;
    int gen_input_dim() const {
        return cfg_.frame_dim() + cfg_.action_dim + cfg_.latent_dim + cfg_.context_dim;
    }
};

}  // namespace evf::model
