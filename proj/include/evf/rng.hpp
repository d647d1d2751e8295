#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "evf/tensor.hpp"

namespace evf {

// splitmix64; used to derive independent sub-seeds from (seed, stream) pairs
// so that trajectories, train steps and planner calls each get their own
// reproducible stream.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
    return mix_seed(mix_seed(seed, a), b);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    float uniform(float lo, float hi) {
        std::uniform_real_distribution<float> d(lo, hi);
        return d(gen_);
    }
    double uniform_d(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen_);
    }
    // inclusive bounds
    int uniform_int(int lo, int hi) {
        std::uniform_int_distribution<int> d(lo, hi);
        return d(gen_);
    }
    float normal() {
        std::normal_distribution<float> d(0.0f, 1.0f);
        return d(gen_);
    }
    Tensor normal_tensor(std::vector<int> shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (auto& v : t.data) v = normal();
        return t;
    }
    // k distinct values from {0,...,n-1} via partial Fisher-Yates
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> idx(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
        for (int i = 0; i < k && i < n; ++i) {
            int j = uniform_int(i, n - 1);
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
        idx.resize(static_cast<size_t>(k < n ? k : n));
        return idx;
    }
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }
    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace evf
