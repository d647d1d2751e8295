#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evf/model.hpp"
#include "evf/pushworld.hpp"
#include "evf/rng.hpp"
#include "evf/training.hpp"

namespace evf::plan {

struct PlanConfig {
    int horizon = 5;
    int candidates = 200;
    int elites = 10;
    int iters = 3;
    int replan_every = 1;
    int samples_per_candidate = 1;
    float action_max = push::kActionMax;
    float init_sigma = push::kActionMax / 2;  // sigma0^2 = a_max^2 / 4 per dim
};

enum class Method { Evf, NoContext, NoMotion };
Method parse_method(const std::string& s);
const char* method_name(Method m);

enum class TaskKind { Reposition, Track };
const char* task_name(TaskKind k);

struct TaskSpec {
    TaskKind kind = TaskKind::Reposition;
    push::ObjectSpec spec;
    push::WorldState init_state;
    // goal_states[t] / goal frame active after executing step t; reposition
    // repeats its single goal, track carries one per step
    std::vector<push::Frame> goal_frames;
    std::vector<push::WorldState> goal_states;
    int episode_len = 12;
};

// mean squared difference over pixels not covered by either the prediction
// mask or the goal frame's own pusher mask
double cost_masked_l2(const Tensor& pred, const push::Frame& goal,
                      std::span<const uint8_t> pred_mask);

using CandidateScorer = std::function<double(std::span<const float> actions)>;

struct CemDiagnostics {
    std::vector<double> best_cost_per_iter;
};

// CEM over flattened action sequences [horizon*2]. From iteration 1 on, the
// previous refit mean and the best candidate so far are re-injected, which
// makes the per-iteration best cost non-increasing whenever the scorer is a
// deterministic function of the actions.
std::vector<push::Action> cem_plan(const CandidateScorer& scorer, const PlanConfig& cfg, Rng& rng,
                                   CemDiagnostics* diag = nullptr);

struct EpisodeStep {
    int step = 0;
    push::Action action;
    double obs_cost = 0;    // masked l2 of the current observation vs goal
    double pose_error = 0;  // object-center offset from goal, world units x1000
};

struct EpisodeRecord {
    std::string method, split;
    int episode = 0;
    uint32_t object_id = 0;
    TaskKind kind = TaskKind::Reposition;
    std::vector<EpisodeStep> steps;
    double final_error = 0, mean_error = 0;
    std::vector<push::Frame> observations;  // filled when record_frames is set
};

TaskSpec make_reposition_task(const push::ObjectSpec& spec, int episode_len, uint64_t seed);
TaskSpec make_track_task(const push::ObjectSpec& spec, int episode_len, uint64_t seed);

// before the episode: support set from the object's dataset, context taken as
// the posterior mean; each control step plans, executes the first action in
// the simulator, observes, and replans
EpisodeRecord mpc_run(const model::EvfModel* m, Method method, const train::Dataset& dataset,
                      const TaskSpec& task, const PlanConfig& pcfg, int support_m, uint64_t seed,
                      const std::string& split_label, int episode_index,
                      bool record_frames = false);

struct ControlSummaryRow {
    std::string method, split, task;
    int n = 0;
    double mean_final = 0, median_final = 0, mean_over_time = 0;
};

std::vector<ControlSummaryRow> report_control(std::span<const EpisodeRecord> records);
std::string control_table_text(std::span<const ControlSummaryRow> rows);
std::string control_table_csv(std::span<const ControlSummaryRow> rows);

void write_episodes_csv(const std::filesystem::path& p, std::span<const EpisodeRecord> records);
std::vector<EpisodeRecord> read_episodes_csv(const std::filesystem::path& p);

}  // namespace evf::plan
