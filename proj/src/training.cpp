#include "evf/training.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "evf/io.hpp"

namespace evf::train {

Dataset to_dataset(const push::DatasetFile& f) {
    Dataset d;
    d.object_id = f.object_id;
    d.spec = f.spec;
    d.t_len = f.t_len;
    d.h = f.h;
    d.w = f.w;
    d.seqs.reserve(f.trajectories.size());
    for (const auto& tr : f.trajectories) d.seqs.push_back(model::to_sequence(tr));
    return d;
}

std::vector<Dataset> load_split(const std::filesystem::path& manifest, const std::string& tag) {
    std::vector<Dataset> out;
    for (const auto& e : push::read_manifest(manifest))
        if (e.tag == tag) out.push_back(to_dataset(push::read_dataset(e.path)));
    return out;
}

model::SupportSet support_from_indices(const Dataset& d, std::span<const int> indices) {
    model::SupportSet s;
    s.object_id = d.object_id;
    for (int i : indices) {
        check(i >= 0 && static_cast<size_t>(i) < d.seqs.size(), "support index out of range");
        s.sequences.push_back(d.seqs[static_cast<size_t>(i)].frames);  // actions stripped
    }
    return s;
}

model::SupportSet sample_support_set(const Dataset& d, int m, Rng& rng, bool* clamped) {
    const int n = static_cast<int>(d.seqs.size());
    check(n >= 1, "sample_support_set: empty dataset");
    check(m >= 1, "sample_support_set: m must be >= 1");
    if (clamped) *clamped = n < m;
    auto idx = rng.sample_without_replacement(n, std::min(m, n));
    return support_from_indices(d, idx);
}

StepDiagnostics train_step(model::EvfModel& m, std::span<const Dataset> datasets,
                           const TrainConfig& cfg, int64_t step_index) {
    const int B = cfg.meta_batch_objects;
    const int b = cfg.traj_per_object;
    check(static_cast<int>(datasets.size()) >= B,
          "train_step: need at least " + std::to_string(B) + " datasets, have " +
              std::to_string(datasets.size()));

    Rng rng(mix_seed(cfg.seed, 0x57E9, static_cast<uint64_t>(step_index)));
    auto object_pick = rng.sample_without_replacement(static_cast<int>(datasets.size()), B);

    Tape tape;
    model::EvfModel::TapeBind bind{&tape, &m.params(), {}};
    Tape::Id loss_sum = -1;
    StepDiagnostics diag;
    for (int k = 0; k < B; ++k) {
        const Dataset& d = datasets[static_cast<size_t>(object_pick[static_cast<size_t>(k)])];
        const int n = static_cast<int>(d.seqs.size());
        std::vector<int> support_idx, target_idx;
        if (n >= cfg.support_m + b) {
            // disjoint support and target draws
            auto idx = rng.sample_without_replacement(n, cfg.support_m + b);
            support_idx.assign(idx.begin(), idx.begin() + cfg.support_m);
            target_idx.assign(idx.begin() + cfg.support_m, idx.end());
        } else {
            support_idx = rng.sample_without_replacement(n, std::min(cfg.support_m, n));
            target_idx = rng.sample_without_replacement(n, std::min(b, n));
        }
        auto support = support_from_indices(d, support_idx);
        std::vector<const model::Sequence*> batch;
        for (int i : target_idx) batch.push_back(&d.seqs[static_cast<size_t>(i)]);

        auto elbo = m.elbo_tape(tape, bind, support, batch, n, rng, cfg.baseline_mode);
        loss_sum = loss_sum < 0 ? elbo.loss : tape.add(loss_sum, elbo.loss);
        diag.recon += tape.value(elbo.recon).data[0];
        diag.z_kl += tape.value(elbo.z_kl).data[0];
        diag.c_kl += tape.value(elbo.c_kl).data[0];
        diag.c_term += tape.value(elbo.c_term).data[0];
    }
    Tape::Id total = tape.mul(loss_sum, tape.scalar(1.0f / static_cast<float>(B)));
    diag.recon /= B;
    diag.z_kl /= B;
    diag.c_kl /= B;
    diag.c_term /= B;
    diag.loss = tape.value(total).data[0];

    tape.backward(total);
    std::map<std::string, Tensor> grads;
    for (const auto& name : m.params().names()) {
        auto it = bind.ids.find(name);
        grads.emplace(name, it != bind.ids.end() ? tape.grad(it->second)
                                                 : Tensor::zeros(m.params().at(name).shape));
    }
    AdamConfig adam;
    adam.lr = cfg.lr;
    adam.clip_norm = cfg.clip_norm;
    m.params().adam_step(grads, adam);
    return diag;
}

void write_sidecar(const std::filesystem::path& checkpoint,
                   const std::map<std::string, std::string>& sidecar) {
    std::string body;
    for (const auto& [k, v] : sidecar) body += k + "=" + v + "\n";
    auto p = checkpoint;
    p += ".cfg";
    io::write_file_atomic(p, body);
}

std::map<std::string, std::string> read_sidecar(const std::filesystem::path& checkpoint) {
    auto p = checkpoint;
    p += ".cfg";
    std::map<std::string, std::string> out;
    const std::string body = io::read_file(p);
    size_t pos = 0;
    while (pos < body.size()) {
        size_t end = body.find('\n', pos);
        if (end == std::string::npos) end = body.size();
        std::string line = body.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        check(eq != std::string::npos, p.string() + ": bad sidecar line '" + line + "'");
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

namespace {

void save_checkpoint(const model::EvfModel& m, const std::filesystem::path& base,
                     const std::map<std::string, std::string>& sidecar) {
    m.params().save(base);
    auto opt = base;
    opt += ".opt";
    m.params().save_opt(opt);
    write_sidecar(base, sidecar);
}

}  // namespace

int64_t train_loop(model::EvfModel& m, std::span<const Dataset> datasets, const TrainConfig& cfg,
                   const std::filesystem::path& out_dir,
                   const std::map<std::string, std::string>& sidecar) {
    check(!datasets.empty(), "train_loop: no datasets");
    for (const auto& d : datasets)
        check(!d.seqs.empty(), "train_loop: dataset " + std::to_string(d.object_id) + " is empty");
    std::filesystem::create_directories(out_dir);

    const int64_t start = m.params().step_count();
    check(start <= cfg.steps, "train_loop: checkpoint is already past the requested step count");

    const auto log_path = out_dir / "train_log.csv";
    std::ofstream log;
    if (start == 0) {
        log.open(log_path, std::ios::trunc);
        log << "step,recon,z_kl,c_kl,loss,wall_ms\n";
    } else {
        log.open(log_path, std::ios::app);
    }
    check(static_cast<bool>(log), "train_loop: cannot write " + log_path.string());

    if (start == 0) save_checkpoint(m, out_dir / "ckpt_initial.evfp", sidecar);

    char buf[256];
    for (int64_t step = start; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        StepDiagnostics d = train_step(m, datasets, cfg, step);
        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.3f\n",
                      static_cast<long long>(step + 1), d.recon, d.z_kl, d.c_kl, d.loss, wall_ms);
        log << buf;
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 != cfg.steps) {
            std::snprintf(buf, sizeof(buf), "ckpt_step%06lld.evfp", static_cast<long long>(step + 1));
            save_checkpoint(m, out_dir / buf, sidecar);
        }
    }
    log.flush();
    save_checkpoint(m, out_dir / "ckpt_final.evfp", sidecar);
    return cfg.steps;
}

}  // namespace evf::train
