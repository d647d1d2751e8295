#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evf/tensor.hpp"

namespace evf {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float clip_norm = 0.0f;  // 0 disables the global-norm clip
};

struct AdamState {
    Tensor m;
    Tensor v;
    int64_t t = 0;
};

// Named parameter tensors plus their optimizer state. Reads may be shared
// across threads; adam_step and load require exclusive access.
class ParamStore {
public:
    Tensor& create(const std::string& name, Tensor init);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) > 0; }
    std::vector<std::string> names() const;  // sorted
    size_t count() const { return params_.size(); }
    int64_t step_count() const;  // max over per-parameter counters

    void adam_step(const std::map<std::string, Tensor>& grads, const AdamConfig& cfg);

    // "EVFP" checkpoint; optimizer state goes to a ".opt" sibling
    void save(const std::filesystem::path& p) const;
    void save_opt(const std::filesystem::path& p) const;
    void load(const std::filesystem::path& p);      // replaces all parameters
    void load_opt(const std::filesystem::path& p);  // restores moments + counters

private:
    std::map<std::string, Tensor> params_;
    std::map<std::string, AdamState> opt_;
};

}  // namespace evf
