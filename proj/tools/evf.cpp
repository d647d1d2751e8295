// evf: data generation, training, evaluation, embedding analysis and control
// benchmarks for the pushing testbed, one subcommand each.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "evf/config.hpp"
#include "evf/io.hpp"
#include "evf/metrics.hpp"
#include "evf/model.hpp"
#include "evf/planner.hpp"
#include "evf/png.hpp"
#include "evf/pushworld.hpp"
#include "evf/training.hpp"

namespace fs = std::filesystem;
using namespace evf;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    int64_t seed = -1;  // -1: keep the config value
    bool force = false;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_out = true) {
    cmd->add_option("--config", a.config_path, "key=value config file");
    auto* out = cmd->add_option("--out", a.out_dir, "output directory");
    if (needs_out) out->required();
    cmd->add_option("--seed", a.seed, "seed override");
    cmd->add_flag("--force", a.force, "overwrite existing outputs");
    cmd->add_option("--set", a.sets, "config override key=value (repeatable)");
}

void resolve(KvConfig& cfg, const CommonArgs& a, const std::string& name) {
    if (!a.config_path.empty()) cfg.load_file(a.config_path);
    for (const auto& kv : a.sets) cfg.set_kv(kv);
    if (a.seed >= 0) cfg.set("seed", std::to_string(a.seed));
    if (!a.out_dir.empty()) {
        fs::create_directories(a.out_dir);
        cfg.write_resolved(fs::path(a.out_dir) / "resolved.cfg", "evf " + name);
    }
}

model::ModelConfig model_config_from(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& k) {
        auto it = kv.find(k);
        check(it != kv.end(), "checkpoint sidecar is missing key '" + k + "'");
        return it->second;
    };
    model::ModelConfig mc;
    mc.frame_h = std::stoi(get("model.frame_h"));
    mc.frame_w = std::stoi(get("model.frame_w"));
    mc.context_dim = std::stoi(get("model.context_dim"));
    mc.latent_dim = std::stoi(get("model.latent_dim"));
    mc.hidden_dim = std::stoi(get("model.hidden_dim"));
    mc.beta = std::stof(get("model.beta"));
    mc.gamma = std::stof(get("model.gamma"));
    mc.context_frames = std::stoi(get("model.context_frames"));
    mc.predict_frames = std::stoi(get("model.predict_frames"));
    return mc;
}

bool sidecar_baseline(const std::map<std::string, std::string>& kv) {
    auto it = kv.find("train.baseline");
    return it != kv.end() && (it->second == "true" || it->second == "1");
}

int cmd_gen_data(const CommonArgs& a) {
    KvConfig cfg;
    cfg.declare("seed", "42");
    cfg.declare("data.k_train", "25");
    cfg.declare("data.k_test", "8");
    cfg.declare("data.n", "50");
    cfg.declare("data.t", "12");
    cfg.declare("data.h", "16");
    cfg.declare("data.w", "16");
    resolve(cfg, a, "gen-data");

    const int k_train = cfg.int_("data.k_train"), k_test = cfg.int_("data.k_test");
    const int n = cfg.int_("data.n"), t = cfg.int_("data.t");
    const int h = cfg.int_("data.h"), w = cfg.int_("data.w");
    const uint64_t seed = cfg.u64("seed");
    const fs::path out(a.out_dir);

    const fs::path manifest = out / "manifest.txt";
    if (fs::exists(manifest) && !a.force)
        throw std::runtime_error(manifest.string() + " exists; pass --force to overwrite");

    auto specs = push::sample_object_catalog(seed, k_train + k_test);
    std::vector<push::ManifestEntry> entries;
    char name[64];
    for (int i = 0; i < k_train + k_test; ++i) {
        std::snprintf(name, sizeof(name), "obj_%03d.evfd", i);
        const fs::path p = out / name;
        if (fs::exists(p) && !a.force)
            throw std::runtime_error(p.string() + " exists; pass --force to overwrite");
        auto d = push::generate_dataset(specs[static_cast<size_t>(i)], static_cast<uint32_t>(i), n,
                                        t, mix_seed(seed, 0xDA7A, static_cast<uint64_t>(i)), h, w);
        push::write_dataset(d, p);
        entries.push_back({i < k_train ? "train" : "test", name});
    }
    push::write_manifest(manifest, entries);
    std::printf("wrote %d train + %d test datasets under %s\n", k_train, k_test,
                out.string().c_str());
    return 0;
}

void declare_model_keys(KvConfig& cfg) {
    cfg.declare("model.context_dim", "8");
    cfg.declare("model.latent_dim", "8");
    cfg.declare("model.hidden_dim", "128");
    cfg.declare("model.beta", "0.001");
    cfg.declare("model.gamma", "0.001");
    cfg.declare("model.context_frames", "2");
    cfg.declare("model.predict_frames", "10");
}

int cmd_train(const CommonArgs& a) {
    KvConfig cfg;
    cfg.declare("seed", "0");
    cfg.declare("train.manifest", "");
    cfg.declare("train.steps", "2000");
    cfg.declare("train.meta_batch_objects", "4");
    cfg.declare("train.traj_per_object", "4");
    cfg.declare("train.support_m", "5");
    cfg.declare("train.lr", "0.001");
    cfg.declare("train.checkpoint_every", "500");
    cfg.declare("train.baseline", "false");
    cfg.declare("train.clip_norm", "0");
    cfg.declare("train.resume", "");
    declare_model_keys(cfg);
    resolve(cfg, a, "train");

    check(!cfg.str("train.manifest").empty(), "train.manifest is required");
    auto datasets = train::load_split(cfg.str("train.manifest"), "train");
    check(!datasets.empty(), "no train datasets in " + cfg.str("train.manifest"));

    model::ModelConfig mc;
    mc.frame_h = datasets[0].h;
    mc.frame_w = datasets[0].w;
    mc.context_dim = cfg.int_("model.context_dim");
    mc.latent_dim = cfg.int_("model.latent_dim");
    mc.hidden_dim = cfg.int_("model.hidden_dim");
    mc.beta = cfg.f32("model.beta");
    mc.gamma = cfg.f32("model.gamma");
    mc.context_frames = cfg.int_("model.context_frames");
    mc.predict_frames = cfg.int_("model.predict_frames");

    train::TrainConfig tc;
    tc.steps = cfg.i64("train.steps");
    tc.meta_batch_objects = cfg.int_("train.meta_batch_objects");
    tc.traj_per_object = cfg.int_("train.traj_per_object");
    tc.support_m = cfg.int_("train.support_m");
    tc.lr = cfg.f32("train.lr");
    tc.seed = cfg.u64("seed");
    tc.checkpoint_every = cfg.i64("train.checkpoint_every");
    tc.baseline_mode = cfg.flag("train.baseline");
    tc.clip_norm = cfg.f32("train.clip_norm");

    // the sidecar snapshot lets eval/plan rebuild the model without guessing
    auto sidecar = cfg.values();
    sidecar["model.frame_h"] = std::to_string(mc.frame_h);
    sidecar["model.frame_w"] = std::to_string(mc.frame_w);

    std::optional<model::EvfModel> m;
    if (!cfg.str("train.resume").empty()) {
        const fs::path ckpt = cfg.str("train.resume");
        m.emplace(model_config_from(train::read_sidecar(ckpt)), ckpt);
        auto opt = ckpt;
        opt += ".opt";
        m->params().load_opt(opt);
    } else {
        m.emplace(mc, tc.seed);
    }
    const int64_t done = train::train_loop(*m, datasets, tc, a.out_dir, sidecar);
    std::printf("trained to step %lld; final checkpoint %s\n", static_cast<long long>(done),
                (fs::path(a.out_dir) / "ckpt_final.evfp").string().c_str());
    return 0;
}

int cmd_eval(const CommonArgs& a) {
    KvConfig cfg;
    cfg.declare("seed", "0");
    cfg.declare("eval.checkpoint", "");
    cfg.declare("eval.manifest", "");
    cfg.declare("eval.split", "test");
    cfg.declare("eval.k", "10");
    cfg.declare("eval.horizon", "10");
    cfg.declare("eval.per_object", "6");
    cfg.declare("eval.support_m", "5");
    cfg.declare("eval.mismatched", "false");
    resolve(cfg, a, "eval");

    const fs::path ckpt = cfg.str("eval.checkpoint");
    check(!ckpt.empty(), "eval.checkpoint is required");
    check(fs::exists(ckpt), "missing checkpoint " + ckpt.string());
    auto sidecar = train::read_sidecar(ckpt);
    model::EvfModel m(model_config_from(sidecar), ckpt);

    check(!cfg.str("eval.manifest").empty(), "eval.manifest is required");
    auto datasets = train::load_split(cfg.str("eval.manifest"), cfg.str("eval.split"));
    check(!datasets.empty(), "no '" + cfg.str("eval.split") + "' datasets in manifest");

    metrics::BestOfKConfig bc;
    bc.k = cfg.int_("eval.k");
    bc.horizon = cfg.int_("eval.horizon");
    bc.per_object = cfg.int_("eval.per_object");
    bc.support_m = cfg.int_("eval.support_m");
    bc.seed = cfg.u64("seed");
    bc.mismatched_support = cfg.flag("eval.mismatched");
    bc.zero_context = sidecar_baseline(sidecar);

    auto rep = metrics::best_of_k_eval(m, datasets, bc);
    metrics::write_eval_report(a.out_dir, rep);
    std::printf("best-of-%d on %d trajectories: psnr %.4f  ssim %.4f\n", rep.k, rep.n_traj,
                rep.mean_psnr, rep.mean_ssim);
    return 0;
}

int cmd_embed(const CommonArgs& a) {
    KvConfig cfg;
    cfg.declare("seed", "0");
    cfg.declare("embed.checkpoint", "");
    cfg.declare("embed.manifest", "");
    cfg.declare("embed.split", "test");
    cfg.declare("embed.draws", "10");
    cfg.declare("embed.support_m", "5");
    resolve(cfg, a, "embed");

    const fs::path ckpt = cfg.str("embed.checkpoint");
    check(!ckpt.empty(), "embed.checkpoint is required");
    check(fs::exists(ckpt), "missing checkpoint " + ckpt.string());
    model::EvfModel m(model_config_from(train::read_sidecar(ckpt)), ckpt);
    auto datasets = train::load_split(cfg.str("embed.manifest"), cfg.str("embed.split"));
    check(!datasets.empty(), "no '" + cfg.str("embed.split") + "' datasets in manifest");

    std::vector<metrics::EmbeddingSample> samples;
    auto stats = metrics::embedding_separation(m, datasets, cfg.int_("embed.draws"),
                                               cfg.int_("embed.support_m"), cfg.u64("seed"),
                                               &samples);

    std::vector<std::vector<double>> pts;
    for (const auto& s : samples) pts.push_back(s.coords);
    auto pca = metrics::pca_project(pts, 2);

    char buf[256];
    std::string txt;
    std::snprintf(buf, sizeof(buf),
                  "objects %zu, draws %d\nmean intra-object distance %.6f\nmean inter-object "
                  "distance %.6f\ninter/intra ratio %.4f\nsilhouette %.4f\n",
                  datasets.size(), cfg.int_("embed.draws"), stats.mean_intra, stats.mean_inter,
                  stats.mean_intra > 0 ? stats.mean_inter / stats.mean_intra : 0.0,
                  stats.silhouette);
    txt += buf;
    std::snprintf(buf, sizeof(buf), "pca explained variance %.4f %.4f\n",
                  pca.explained_variance[0], pca.explained_variance[1]);
    txt += buf;
    io::write_file_atomic(fs::path(a.out_dir) / "embed_stats.txt", txt);

    std::string csv = "object_id,draw,x,y\n";
    for (size_t i = 0; i < samples.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%u,%d,%.9g,%.9g\n", samples[i].object_id, samples[i].draw,
                      pca.coords[i][0], pca.coords[i][1]);
        csv += buf;
    }
    io::write_file_atomic(fs::path(a.out_dir) / "embed_pca.csv", csv);
    std::printf("%s", txt.c_str());
    return 0;
}

int cmd_plan(const CommonArgs& a) {
    KvConfig cfg;
    cfg.declare("seed", "0");
    cfg.declare("plan.checkpoint", "");
    cfg.declare("plan.manifest", "");
    cfg.declare("plan.method", "evf");
    cfg.declare("plan.task", "reposition");
    cfg.declare("plan.split", "unseen");
    cfg.declare("plan.episodes", "20");
    cfg.declare("plan.episode_len", "12");
    cfg.declare("plan.horizon", "5");
    cfg.declare("plan.candidates", "200");
    cfg.declare("plan.elites", "10");
    cfg.declare("plan.iters", "3");
    cfg.declare("plan.replan_every", "1");
    cfg.declare("plan.samples_per_candidate", "1");
    cfg.declare("plan.support_m", "5");
    cfg.declare("plan.dump_frames", "false");
    resolve(cfg, a, "plan");

    const plan::Method method = plan::parse_method(cfg.str("plan.method"));
    std::optional<model::EvfModel> m;
    if (method != plan::Method::NoMotion) {
        const fs::path ckpt = cfg.str("plan.checkpoint");
        check(!ckpt.empty(), "plan.checkpoint is required for method " + cfg.str("plan.method"));
        check(fs::exists(ckpt), "missing checkpoint " + ckpt.string());
        m.emplace(model_config_from(train::read_sidecar(ckpt)), ckpt);
    }
    check(!cfg.str("plan.manifest").empty(), "plan.manifest is required");
    const std::string split = cfg.str("plan.split");
    check(split == "seen" || split == "unseen", "plan.split must be seen|unseen");
    auto datasets = train::load_split(cfg.str("plan.manifest"), split == "seen" ? "train" : "test");
    check(!datasets.empty(), "no datasets for split " + split);

    plan::PlanConfig pc;
    pc.horizon = cfg.int_("plan.horizon");
    pc.candidates = cfg.int_("plan.candidates");
    pc.elites = cfg.int_("plan.elites");
    pc.iters = cfg.int_("plan.iters");
    pc.replan_every = cfg.int_("plan.replan_every");
    pc.samples_per_candidate = cfg.int_("plan.samples_per_candidate");

    const int episodes = cfg.int_("plan.episodes");
    const int episode_len = cfg.int_("plan.episode_len");
    const uint64_t seed = cfg.u64("seed");
    const bool track = cfg.str("plan.task") == "track";
    const bool dump = cfg.flag("plan.dump_frames");

    std::vector<plan::EpisodeRecord> records;
    for (int e = 0; e < episodes; ++e) {
        const train::Dataset& d = datasets[static_cast<size_t>(e) % datasets.size()];
        // the task depends only on (seed, split, episode), never on the
        // method, so methods face identical episodes
        const uint64_t tseed = mix_seed(seed, split == "seen" ? 0x5EE : 0xAD5E,
                                        static_cast<uint64_t>(e));
        auto task = track ? plan::make_track_task(d.spec, episode_len, tseed)
                          : plan::make_reposition_task(d.spec, episode_len, tseed);
        records.push_back(plan::mpc_run(m ? &*m : nullptr, method, d, task, pc,
                                        cfg.int_("plan.support_m"), mix_seed(seed, 0xEB, static_cast<uint64_t>(e)),
                                        split, e, dump));
        if (dump) {
            const fs::path fdir = fs::path(a.out_dir) / "frames" /
                                  ("episode_" + std::to_string(e));
            fs::create_directories(fdir);
            const auto& frames = records.back().observations;
            char name[64];
            for (size_t i = 0; i < frames.size(); ++i) {
                std::snprintf(name, sizeof(name), "step_%03zu.png", i);
                write_png_gray(fdir / name, frames[i].intensity, frames[i].h, frames[i].w);
            }
        }
    }
    plan::write_episodes_csv(fs::path(a.out_dir) / "episodes.csv", records);
    auto rows = plan::report_control(records);
    io::write_file_atomic(fs::path(a.out_dir) / "summary.csv", plan::control_table_csv(rows));
    const std::string txt = plan::control_table_text(rows);
    io::write_file_atomic(fs::path(a.out_dir) / "summary.txt", txt);
    std::printf("%s", txt.c_str());
    return 0;
}

int cmd_report(const CommonArgs& a, const std::vector<std::string>& run_dirs) {
    KvConfig cfg;
    cfg.declare("seed", "0");
    resolve(cfg, a, "report");
    check(!run_dirs.empty(), "report: need at least one run directory");
    std::vector<plan::EpisodeRecord> all;
    for (const auto& dir : run_dirs) {
        const fs::path p = fs::path(dir) / "episodes.csv";
        check(fs::exists(p), "missing " + p.string());
        auto recs = plan::read_episodes_csv(p);
        all.insert(all.end(), recs.begin(), recs.end());
    }
    auto rows = plan::report_control(all);
    io::write_file_atomic(fs::path(a.out_dir) / "merged_summary.csv",
                          plan::control_table_csv(rows));
    const std::string txt = plan::control_table_text(rows);
    io::write_file_atomic(fs::path(a.out_dir) / "merged_summary.txt", txt);
    std::printf("%s", txt.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"experience-conditioned visual prediction and pushing control testbed"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, embed_args, plan_args, report_args;
    std::vector<std::string> report_dirs;

    auto* gen = app.add_subcommand("gen-data", "generate the object datasets and manifest");
    add_common(gen, gen_args);
    auto* tr = app.add_subcommand("train", "train a model on the train split");
    add_common(tr, train_args);
    auto* ev = app.add_subcommand("eval", "best-of-K prediction metrics");
    add_common(ev, eval_args);
    auto* em = app.add_subcommand("embed", "context embedding statistics and PCA export");
    add_common(em, embed_args);
    auto* pl = app.add_subcommand("plan", "control benchmark episodes");
    add_common(pl, plan_args);
    auto* re = app.add_subcommand("report", "merge plan runs into one comparison table");
    add_common(re, report_args);
    re->add_option("dirs", report_dirs, "plan output directories")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_args);
        if (tr->parsed()) return cmd_train(train_args);
        if (ev->parsed()) return cmd_eval(eval_args);
        if (em->parsed()) return cmd_embed(embed_args);
        if (pl->parsed()) return cmd_plan(plan_args);
        if (re->parsed()) return cmd_report(report_args, report_dirs);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
