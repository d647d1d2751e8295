#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace evf {

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

// Dense row-major float32 array with a shape tag. The single numeric carrier
// for frames, actions, latents, activations and parameters.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        check(static_cast<size_t>(numel(shape)) == data.size(),
              "Tensor: shape/data size mismatch");
    }

    static int64_t numel(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            check(d > 0, "Tensor: nonpositive dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), 0.0f));
    }
    static Tensor full(std::vector<int> s, float v) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), v));
    }
    static Tensor scalar(float v) { return Tensor({1}, {v}); }
    static Tensor vec(std::vector<float> d) {
        int n = static_cast<int>(d.size());
        return Tensor({n}, std::move(d));
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    float& operator[](size_t i) { return data[i]; }
    float operator[](size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

}  // namespace evf
