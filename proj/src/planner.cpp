#include "evf/planner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "evf/io.hpp"
#include "evf/parallel.hpp"

namespace evf::plan {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kErrorScale = 1000.0;  // world units -> milli-units
}  // namespace

Method parse_method(const std::string& s) {
    if (s == "evf") return Method::Evf;
    if (s == "nocontext") return Method::NoContext;
    if (s == "nomotion") return Method::NoMotion;
    throw std::runtime_error("unknown planning method '" + s + "' (evf|nocontext|nomotion)");
}

const char* method_name(Method m) {
    switch (m) {
        case Method::Evf: return "evf";
        case Method::NoContext: return "nocontext";
        case Method::NoMotion: return "nomotion";
    }
    return "?";
}

const char* task_name(TaskKind k) { return k == TaskKind::Reposition ? "reposition" : "track"; }

double cost_masked_l2(const Tensor& pred, const push::Frame& goal,
                      std::span<const uint8_t> pred_mask) {
    const size_t n = goal.intensity.size();
    check(static_cast<size_t>(pred.size()) == n, "cost_masked_l2: dimension mismatch");
    check(pred_mask.empty() || pred_mask.size() == n, "cost_masked_l2: bad mask size");
    double acc = 0.0;
    int64_t used = 0;
    for (size_t i = 0; i < n; ++i) {
        if (!pred_mask.empty() && pred_mask[i]) continue;
        if (goal.pusher_mask[i]) continue;
        const double d = static_cast<double>(pred.data[i]) - goal.intensity[i];
        acc += d * d;
        ++used;
    }
    check(used > 0, "cost_masked_l2: every pixel is masked");
    return acc / static_cast<double>(used);
}

std::vector<push::Action> cem_plan(const CandidateScorer& scorer, const PlanConfig& cfg, Rng& rng,
                                   CemDiagnostics* diag) {
    check(cfg.horizon >= 1 && cfg.candidates >= 1 && cfg.iters >= 1, "cem_plan: bad counts");
    check(cfg.elites >= 1 && cfg.elites <= cfg.candidates, "cem_plan: elites must be <= candidates");
    const int dims = cfg.horizon * 2;
    std::vector<double> mean(static_cast<size_t>(dims), 0.0);
    std::vector<double> sigma(static_cast<size_t>(dims), cfg.init_sigma);

    std::vector<float> best_actions;
    double best_cost = std::numeric_limits<double>::infinity();

    std::vector<std::vector<float>> cands(static_cast<size_t>(cfg.candidates));
    std::vector<double> costs(static_cast<size_t>(cfg.candidates));
    for (int iter = 0; iter < cfg.iters; ++iter) {
        int ci = 0;
        if (iter > 0) {
            // refit-mean and best-so-far injections
            std::vector<float> mf(static_cast<size_t>(dims));
            for (int d = 0; d < dims; ++d)
                mf[static_cast<size_t>(d)] = std::clamp(static_cast<float>(mean[static_cast<size_t>(d)]),
                                                        -cfg.action_max, cfg.action_max);
            cands[static_cast<size_t>(ci++)] = std::move(mf);
            if (ci < cfg.candidates) cands[static_cast<size_t>(ci++)] = best_actions;
        }
        for (; ci < cfg.candidates; ++ci) {
            auto& c = cands[static_cast<size_t>(ci)];
            c.resize(static_cast<size_t>(dims));
            for (int d = 0; d < dims; ++d) {
                const float v = static_cast<float>(mean[static_cast<size_t>(d)] +
                                                   sigma[static_cast<size_t>(d)] * rng.normal());
                c[static_cast<size_t>(d)] = std::clamp(v, -cfg.action_max, cfg.action_max);
            }
        }
        parallel_for(cfg.candidates, [&](int i) {
            double v;
            try {
                v = scorer(cands[static_cast<size_t>(i)]);
            } catch (const std::exception&) {
                v = std::numeric_limits<double>::quiet_NaN();
            }
            costs[static_cast<size_t>(i)] = std::isfinite(v)
                                                ? v
                                                : std::numeric_limits<double>::infinity();
        });

        std::vector<int> order(static_cast<size_t>(cfg.candidates));
        for (int i = 0; i < cfg.candidates; ++i) order[static_cast<size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return costs[static_cast<size_t>(a)] < costs[static_cast<size_t>(b)];
        });
        check(std::isfinite(costs[static_cast<size_t>(order[0])]),
              "cem_plan: every candidate produced a non-finite cost");
        if (costs[static_cast<size_t>(order[0])] < best_cost) {
            best_cost = costs[static_cast<size_t>(order[0])];
            best_actions = cands[static_cast<size_t>(order[0])];
        }
        if (diag) diag->best_cost_per_iter.push_back(costs[static_cast<size_t>(order[0])]);

        // refit the diagonal Gaussian to the elites
        int usable = 0;
        for (int i = 0; i < cfg.elites; ++i)
            if (std::isfinite(costs[static_cast<size_t>(order[static_cast<size_t>(i)])])) ++usable;
        check(usable >= 1, "cem_plan: no usable elites");
        for (int d = 0; d < dims; ++d) {
            double s = 0.0;
            for (int i = 0; i < usable; ++i)
                s += cands[static_cast<size_t>(order[static_cast<size_t>(i)])][static_cast<size_t>(d)];
            const double mu = s / usable;
            double var = 0.0;
            for (int i = 0; i < usable; ++i) {
                const double dv =
                    cands[static_cast<size_t>(order[static_cast<size_t>(i)])][static_cast<size_t>(d)] - mu;
                var += dv * dv;
            }
            var /= usable;
            mean[static_cast<size_t>(d)] = mu;
            sigma[static_cast<size_t>(d)] = std::sqrt(var + 1e-12);
        }
    }
    std::vector<push::Action> out(static_cast<size_t>(cfg.horizon));
    for (int t = 0; t < cfg.horizon; ++t) {
        out[static_cast<size_t>(t)].dx = std::clamp(static_cast<float>(mean[static_cast<size_t>(2 * t)]),
                                                    -cfg.action_max, cfg.action_max);
        out[static_cast<size_t>(t)].dy = std::clamp(
            static_cast<float>(mean[static_cast<size_t>(2 * t + 1)]), -cfg.action_max, cfg.action_max);
    }
    return out;
}

TaskSpec make_reposition_task(const push::ObjectSpec& spec, int episode_len, uint64_t seed) {
    check(episode_len >= 0, "make_reposition_task: negative episode length");
    Rng rng(mix_seed(seed, 0x6EA1));
    TaskSpec t;
    t.kind = TaskKind::Reposition;
    t.spec = spec;
    t.episode_len = episode_len;

    push::WorldState s;
    s.x = 0.5f + rng.uniform(-0.05f, 0.05f);
    s.y = 0.5f + rng.uniform(-0.05f, 0.05f);
    s.theta = rng.uniform(-static_cast<float>(kPi), static_cast<float>(kPi));
    const float alpha = rng.uniform(0.0f, 2.0f * static_cast<float>(kPi));
    const float dist = rng.uniform(0.15f, 0.22f);
    push::WorldState goal = s;
    goal.x = std::clamp(s.x + dist * std::cos(alpha), push::kCenterMin + 0.03f,
                        push::kCenterMax - 0.03f);
    goal.y = std::clamp(s.y + dist * std::sin(alpha), push::kCenterMin + 0.03f,
                        push::kCenterMax - 0.03f);

    // pusher spawns behind the object, opposite the goal direction
    const float d0 = push::clear_spawn_radius(spec) + rng.uniform(0.01f, 0.04f);
    const float jitter = rng.uniform(-0.25f, 0.25f);
    s.px = std::clamp(s.x - d0 * std::cos(alpha + jitter), push::kPusherMin, push::kPusherMax);
    s.py = std::clamp(s.y - d0 * std::sin(alpha + jitter), push::kPusherMin, push::kPusherMax);

    t.init_state = s;
    const push::Frame gf = push::render_object(goal, spec);
    t.goal_frames.assign(static_cast<size_t>(std::max(episode_len, 1)), gf);
    t.goal_states.assign(static_cast<size_t>(std::max(episode_len, 1)), goal);
    return t;
}

TaskSpec make_track_task(const push::ObjectSpec& spec, int episode_len, uint64_t seed) {
    check(episode_len >= 1, "make_track_task: episode length must be >= 1");
    Rng rng(mix_seed(seed, 0x76ACC));
    TaskSpec t;
    t.kind = TaskKind::Track;
    t.spec = spec;
    t.episode_len = episode_len;

    push::WorldState s;
    s.x = 0.5f + rng.uniform(-0.05f, 0.05f);
    s.y = 0.5f + rng.uniform(-0.05f, 0.05f);
    s.theta = rng.uniform(-static_cast<float>(kPi), static_cast<float>(kPi));
    const float ray = rng.uniform(0.0f, 2.0f * static_cast<float>(kPi));
    const float d0 = push::clear_spawn_radius(spec) + rng.uniform(0.01f, 0.04f);
    s.px = std::clamp(s.x + d0 * std::cos(ray), push::kPusherMin, push::kPusherMax);
    s.py = std::clamp(s.y + d0 * std::sin(ray), push::kPusherMin, push::kPusherMax);
    t.init_state = s;

    // reference push demonstrated from the same start
    const float dir = ray + static_cast<float>(kPi) + rng.uniform(-0.25f, 0.25f);
    const float speed = push::kActionMax * rng.uniform(0.75f, 1.0f);
    const push::Action ref{speed * std::cos(dir), speed * std::sin(dir)};
    push::WorldState cur = s;
    for (int step = 0; step < episode_len; ++step) {
        cur = push::step(cur, spec, ref);
        t.goal_states.push_back(cur);
        t.goal_frames.push_back(push::render_object(cur, spec));
    }
    return t;
}

namespace {

// the pusher obeys p' = clamp(p + a) exactly, so future pusher pixels are
// computable without the model; they become the prediction-side mask
void pusher_stencil(float px, float py, int h, int w, std::vector<uint8_t>& mask) {
    mask.assign(static_cast<size_t>(h) * w, 0);
    const int pc = static_cast<int>(std::floor(static_cast<double>(px) * w));
    const int pr = static_cast<int>(std::floor(static_cast<double>(py) * h));
    const int offs[5][2] = {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (auto& o : offs) {
        const int c = pc + o[0], r = pr + o[1];
        if (c < 0 || c >= w || r < 0 || r >= h) continue;
        mask[static_cast<size_t>(r) * w + c] = 1;
    }
}

double pose_error_milli(const push::WorldState& s, const push::WorldState& goal) {
    const double dx = static_cast<double>(s.x) - goal.x;
    const double dy = static_cast<double>(s.y) - goal.y;
    return std::sqrt(dx * dx + dy * dy) * kErrorScale;
}

}  // namespace

EpisodeRecord mpc_run(const model::EvfModel* m, Method method, const train::Dataset& dataset,
                      const TaskSpec& task, const PlanConfig& pcfg, int support_m, uint64_t seed,
                      const std::string& split_label, int episode_index, bool record_frames) {
    check(method == Method::NoMotion || m != nullptr, "mpc_run: planning methods need a model");
    check(task.goal_frames.size() == task.goal_states.size(), "mpc_run: goal frames/states differ");
    check(task.kind == TaskKind::Reposition ||
              static_cast<int>(task.goal_frames.size()) == task.episode_len,
          "mpc_run: track goals must match the episode length");

    EpisodeRecord rec;
    rec.method = method_name(method);
    rec.split = split_label;
    rec.episode = episode_index;
    rec.object_id = dataset.object_id;
    rec.kind = task.kind;

    Tensor c;
    if (method == Method::Evf) {
        Rng srng(mix_seed(seed, 0x5099, static_cast<uint64_t>(episode_index)));
        auto support = train::sample_support_set(dataset, support_m, srng);
        c = m->encode_experience(support).mean;  // posterior mean at plan time
    } else if (method == Method::NoContext) {
        c = m->zero_context();
    }

    push::WorldState sim = task.init_state;
    push::Frame obs = push::render(sim, task.spec);
    const int h = obs.h, w = obs.w;
    if (record_frames) rec.observations.push_back(obs);

    // rolling 2-frame context; only one real frame exists at t=0
    Tensor ctx_prev = push::frame_to_tensor(obs);
    Tensor ctx_last = ctx_prev;
    std::array<float, 2> last_action{0.0f, 0.0f};

    std::vector<push::Action> plan;
    std::vector<uint8_t> scratch_mask;
    if (task.episode_len == 0) return rec;

    for (int step = 0; step < task.episode_len; ++step) {
        const size_t goal_idx = std::min<size_t>(static_cast<size_t>(step),
                                                 task.goal_frames.size() - 1);
        push::Action a{0.0f, 0.0f};
        if (method != Method::NoMotion) {
            if (step % pcfg.replan_every == 0) {
                // common random numbers: one z draw shared by all candidates
                Rng prng(mix_seed(seed, 0x91A2 + static_cast<uint64_t>(episode_index) * 131,
                                  static_cast<uint64_t>(step)));
                std::vector<Tensor> znoise;
                const int per_sample = 1 + pcfg.horizon;  // warm-up + horizon
                for (int sdx = 0; sdx < pcfg.samples_per_candidate * per_sample; ++sdx)
                    znoise.push_back(prng.normal_tensor({m->config().latent_dim}));

                const Tensor ctx0 = ctx_prev, ctx1 = ctx_last;
                const std::array<float, 2> warm_action = last_action;
                const float px0 = sim.px, py0 = sim.py;
                const int base_step = step;
                auto scorer = [&, ctx0, ctx1, warm_action, px0, py0,
                               base_step](std::span<const float> actions) -> double {
                    double total = 0.0;
                    std::vector<uint8_t> mask;
                    for (int sample = 0; sample < pcfg.samples_per_candidate; ++sample) {
                        auto st = m->initial_state(ctx0);
                        (void)m->generator_step(st, ctx0, warm_action,
                                                znoise[static_cast<size_t>(sample * per_sample)], c);
                        Tensor prev = ctx1;
                        float px = px0, py = py0;
                        for (int j = 0; j < pcfg.horizon; ++j) {
                            const std::array<float, 2> aj{actions[static_cast<size_t>(2 * j)],
                                                          actions[static_cast<size_t>(2 * j + 1)]};
                            prev = m->generator_step(
                                st, prev, aj,
                                znoise[static_cast<size_t>(sample * per_sample + 1 + j)], c);
                            px = std::clamp(px + aj[0], push::kPusherMin, push::kPusherMax);
                            py = std::clamp(py + aj[1], push::kPusherMin, push::kPusherMax);
                            pusher_stencil(px, py, h, w, mask);
                            const size_t gi =
                                std::min<size_t>(static_cast<size_t>(base_step + j),
                                                 task.goal_frames.size() - 1);
                            total += cost_masked_l2(prev, task.goal_frames[gi], mask);
                        }
                    }
                    return total / pcfg.samples_per_candidate;
                };
                plan = cem_plan(scorer, pcfg, prng);
            }
            a = plan[static_cast<size_t>(step % pcfg.replan_every)];
        }

        // progress cost of the current observation before acting
        pusher_stencil(sim.px, sim.py, h, w, scratch_mask);
        const double obs_cost =
            cost_masked_l2(push::frame_to_tensor(obs), task.goal_frames[goal_idx], scratch_mask);

        sim = push::step(sim, task.spec, a);
        obs = push::render(sim, task.spec);
        if (record_frames) rec.observations.push_back(obs);
        ctx_prev = ctx_last;
        ctx_last = push::frame_to_tensor(obs);
        last_action = {a.dx, a.dy};

        EpisodeStep es;
        es.step = step;
        es.action = a;
        es.obs_cost = obs_cost;
        es.pose_error = pose_error_milli(sim, task.goal_states[goal_idx]);
        rec.steps.push_back(es);
    }
    rec.final_error = rec.steps.back().pose_error;
    double acc = 0.0;
    for (const auto& s : rec.steps) acc += s.pose_error;
    rec.mean_error = acc / static_cast<double>(rec.steps.size());
    return rec;
}

std::vector<ControlSummaryRow> report_control(std::span<const EpisodeRecord> records) {
    check(!records.empty(), "report_control: no records");
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<const EpisodeRecord*>>
        groups;
    for (const auto& r : records)
        groups[{r.method, r.split, task_name(r.kind)}].push_back(&r);
    std::vector<ControlSummaryRow> rows;
    for (const auto& [key, recs] : groups) {
        ControlSummaryRow row;
        row.method = std::get<0>(key);
        row.split = std::get<1>(key);
        row.task = std::get<2>(key);
        row.n = static_cast<int>(recs.size());
        std::vector<double> finals;
        double mean_final = 0, mean_time = 0;
        for (const auto* r : recs) {
            finals.push_back(r->final_error);
            mean_final += r->final_error;
            mean_time += r->mean_error;
        }
        std::sort(finals.begin(), finals.end());
        const size_t n = finals.size();
        row.mean_final = mean_final / static_cast<double>(n);
        row.median_final = n % 2 ? finals[n / 2] : 0.5 * (finals[n / 2 - 1] + finals[n / 2]);
        row.mean_over_time = mean_time / static_cast<double>(n);
        rows.push_back(row);
    }
    return rows;
}

std::string control_table_text(std::span<const ControlSummaryRow> rows) {
    std::string out;
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%-12s %-10s %-11s %4s %10s %10s %10s\n", "method", "split",
                  "task", "n", "mean", "median", "mean_time");
    out += buf;
    out += std::string(71, '-') + "\n";
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-12s %-10s %-11s %4d %10.2f %10.2f %10.2f\n",
                      r.method.c_str(), r.split.c_str(), r.task.c_str(), r.n, r.mean_final,
                      r.median_final, r.mean_over_time);
        out += buf;
    }
    out += "(errors in world units x1000; final object-center offset from the goal)\n";
    return out;
}

std::string control_table_csv(std::span<const ControlSummaryRow> rows) {
    std::string out = "method,split,task,n,mean_final,median_final,mean_over_time\n";
    char buf[200];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%d,%.9g,%.9g,%.9g\n", r.method.c_str(),
                      r.split.c_str(), r.task.c_str(), r.n, r.mean_final, r.median_final,
                      r.mean_over_time);
        out += buf;
    }
    return out;
}

void write_episodes_csv(const std::filesystem::path& p, std::span<const EpisodeRecord> records) {
    std::string out =
        "method,split,task,episode,object_id,step,action_dx,action_dy,obs_cost,pose_error\n";
    char buf[300];
    for (const auto& r : records)
        for (const auto& s : r.steps) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%s,%d,%u,%d,%.9g,%.9g,%.9g,%.9g\n",
                          r.method.c_str(), r.split.c_str(), task_name(r.kind), r.episode,
                          r.object_id, s.step, static_cast<double>(s.action.dx),
                          static_cast<double>(s.action.dy), s.obs_cost, s.pose_error);
            out += buf;
        }
    io::write_file_atomic(p, out);
}

std::vector<EpisodeRecord> read_episodes_csv(const std::filesystem::path& p) {
    const std::string body = io::read_file(p);
    std::map<std::tuple<std::string, std::string, std::string, int>, EpisodeRecord> recs;
    std::istringstream in(body);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) f.push_back(tok);
        check(f.size() == 10, p.string() + ": bad episode row '" + line + "'");
        auto key = std::make_tuple(f[0], f[1], f[2], std::stoi(f[3]));
        auto& r = recs[key];
        r.method = f[0];
        r.split = f[1];
        r.kind = f[2] == "track" ? TaskKind::Track : TaskKind::Reposition;
        r.episode = std::stoi(f[3]);
        r.object_id = static_cast<uint32_t>(std::stoul(f[4]));
        EpisodeStep s;
        s.step = std::stoi(f[5]);
        s.action.dx = std::stof(f[6]);
        s.action.dy = std::stof(f[7]);
        s.obs_cost = std::stod(f[8]);
        s.pose_error = std::stod(f[9]);
        r.steps.push_back(s);
    }
    std::vector<EpisodeRecord> out;
    for (auto& [key, r] : recs) {
        std::sort(r.steps.begin(), r.steps.end(),
                  [](const EpisodeStep& a, const EpisodeStep& b) { return a.step < b.step; });
        r.final_error = r.steps.back().pose_error;
        double acc = 0.0;
        for (const auto& s : r.steps) acc += s.pose_error;
        r.mean_error = acc / static_cast<double>(r.steps.size());
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace evf::plan
