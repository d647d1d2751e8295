#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "evf/model.hpp"
#include "evf/pushworld.hpp"
#include "evf/rng.hpp"

namespace evf::train {

struct TrainConfig {
    int64_t steps = 2000;
    int meta_batch_objects = 4;  // datasets per gradient step
    int traj_per_object = 4;     // target trajectories per dataset
    int support_m = 5;
    float lr = 1e-3f;
    uint64_t seed = 0;
    int64_t checkpoint_every = 500;
    bool baseline_mode = false;  // context clamped to zero, no context KL
    float clip_norm = 0.0f;      // 0 disables the global-norm clip
};

// one object's dataset, decoded into model form
struct Dataset {
    uint32_t object_id = 0;
    push::ObjectSpec spec;
    int t_len = 0, h = 0, w = 0;
    std::vector<model::Sequence> seqs;
};
Dataset to_dataset(const push::DatasetFile& f);
std::vector<Dataset> load_split(const std::filesystem::path& manifest, const std::string& tag);

// min(m, N) distinct trajectories, actions stripped; *clamped reports N < m
model::SupportSet sample_support_set(const Dataset& d, int m, Rng& rng, bool* clamped = nullptr);
model::SupportSet support_from_indices(const Dataset& d, std::span<const int> indices);

struct StepDiagnostics {
    double recon = 0, z_kl = 0, c_kl = 0, c_term = 0, loss = 0;
};

// samples meta_batch_objects datasets, draws disjoint support/target
// trajectories per dataset when it is large enough, and applies one joint
// Adam step; the per-step RNG derives from (seed, step_index) so resumed runs
// reproduce the original trace
StepDiagnostics train_step(model::EvfModel& m, std::span<const Dataset> datasets,
                           const TrainConfig& cfg, int64_t step_index);

// runs steps, writes the CSV metrics log and periodic checkpoints; the
// sidecar key=value snapshot is written next to every checkpoint. Resuming is
// implicit: a model restored from checkpoint+opt continues at its step count.
// Returns the last completed step index.
int64_t train_loop(model::EvfModel& m, std::span<const Dataset> datasets, const TrainConfig& cfg,
                   const std::filesystem::path& out_dir,
                   const std::map<std::string, std::string>& sidecar);

void write_sidecar(const std::filesystem::path& checkpoint,
                   const std::map<std::string, std::string>& sidecar);
std::map<std::string, std::string> read_sidecar(const std::filesystem::path& checkpoint);

}  // namespace evf::train
