#include "evf/param_store.hpp"

#include <cmath>

#include "evf/io.hpp"

namespace evf {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'F', 'P'};
constexpr uint16_t kVersion = 1;

void write_record(io::ByteWriter& w, const std::string& name, const Tensor& t) {
    w.str(name);
    w.u8(static_cast<uint8_t>(t.rank()));
    for (int d : t.shape) w.u32(static_cast<uint32_t>(d));
    for (float v : t.data) w.f32(v);
}

std::map<std::string, Tensor> read_records(const std::filesystem::path& p) {
    const std::string bytes = io::read_file(p);
    io::ByteReader r(bytes, p.filename().string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error(p.string() + ": bad magic, not an EVFP checkpoint");
    uint16_t ver = r.u16();
    if (ver != kVersion)
        throw std::runtime_error(p.string() + ": unsupported version " + std::to_string(ver));
    std::map<std::string, Tensor> out;
    while (!r.eof()) {
        std::string name = r.str();
        uint8_t rank = r.u8();
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(r.u32());
        Tensor t = Tensor::zeros(shape);
        r.bytes(t.data.data(), t.data.size() * 4);
        if (!out.emplace(std::move(name), std::move(t)).second)
            throw std::runtime_error(p.string() + ": duplicate record name");
    }
    return out;
}

}  // namespace

Tensor& ParamStore::create(const std::string& name, Tensor init) {
    auto [it, ok] = params_.emplace(name, std::move(init));
    check(ok, "ParamStore: duplicate parameter '" + name + "'");
    AdamState st;
    st.m = Tensor::zeros(it->second.shape);
    st.v = Tensor::zeros(it->second.shape);
    opt_.emplace(name, std::move(st));
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    check(it != params_.end(), "ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    check(it != params_.end(), "ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
}

int64_t ParamStore::step_count() const {
    int64_t t = 0;
    for (const auto& [k, st] : opt_) t = std::max(t, st.t);
    return t;
}

void ParamStore::adam_step(const std::map<std::string, Tensor>& grads, const AdamConfig& cfg) {
    // validate everything before touching any parameter, so a bad gradient
    // cannot leave the store half-updated
    for (const auto& [name, p] : params_) {
        auto it = grads.find(name);
        check(it != grads.end(), "adam_step: missing gradient for '" + name + "'");
        check(it->second.shape == p.shape, "adam_step: gradient shape mismatch for '" + name + "'");
        if (!it->second.all_finite())
            throw std::runtime_error("adam_step: non-finite gradient for '" + name + "'");
    }
    float scale = 1.0f;
    if (cfg.clip_norm > 0.0f) {
        double sq = 0.0;
        for (const auto& [name, g] : grads)
            for (float v : g.data) sq += static_cast<double>(v) * v;
        double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) scale = static_cast<float>(cfg.clip_norm / norm);
    }
    for (auto& [name, p] : params_) {
        const Tensor& g = grads.at(name);
        AdamState& st = opt_.at(name);
        st.t += 1;
        const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(st.t));
        const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(st.t));
        for (size_t i = 0; i < p.data.size(); ++i) {
            const float gi = g.data[i] * scale;
            st.m.data[i] = cfg.beta1 * st.m.data[i] + (1.0f - cfg.beta1) * gi;
            st.v.data[i] = cfg.beta2 * st.v.data[i] + (1.0f - cfg.beta2) * gi * gi;
            const float mhat = st.m.data[i] / bc1;
            const float vhat = st.v.data[i] / bc2;
            p.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

void ParamStore::save(const std::filesystem::path& p) const {
    io::ByteWriter w;
    w.bytes(kMagic, 4);
    w.u16(kVersion);
    for (const auto& [name, t] : params_) write_record(w, name, t);
    io::write_file_atomic(p, w.buf);
}

void ParamStore::save_opt(const std::filesystem::path& p) const {
    io::ByteWriter w;
    w.bytes(kMagic, 4);
    w.u16(kVersion);
    for (const auto& [name, st] : opt_) {
        write_record(w, name + ".m", st.m);
        write_record(w, name + ".v", st.v);
        write_record(w, name + ".t", Tensor::scalar(static_cast<float>(st.t)));
    }
    io::write_file_atomic(p, w.buf);
}

void ParamStore::load(const std::filesystem::path& p) {
    auto records = read_records(p);
    params_.clear();
    opt_.clear();
    for (auto& [name, t] : records) create(name, std::move(t));
}

void ParamStore::load_opt(const std::filesystem::path& p) {
    auto records = read_records(p);
    for (auto& [name, st] : opt_) {
        auto m = records.find(name + ".m");
        auto v = records.find(name + ".v");
        auto t = records.find(name + ".t");
        check(m != records.end() && v != records.end() && t != records.end(),
              "load_opt: missing state for '" + name + "' in " + p.string());
        check(m->second.shape == st.m.shape && v->second.shape == st.v.shape,
              "load_opt: moment shape mismatch for '" + name + "'");
        st.m = m->second;
        st.v = v->second;
        st.t = static_cast<int64_t>(std::llround(t->second.data[0]));
    }
}

}  // namespace evf
