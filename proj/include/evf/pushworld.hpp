#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evf/tensor.hpp"

namespace evf::push {

// world is the unit square; one footprint cell is one pixel at 16x16
inline constexpr float kCellSize = 1.0f / 16.0f;
inline constexpr float kActionMax = 0.08f;
inline constexpr float kPusherRadius = 0.07f;
inline constexpr float kObjectIntensity = 0.8f;
inline constexpr float kPusherIntensity = 0.4f;
inline constexpr float kCenterMin = 0.15f, kCenterMax = 0.85f;
inline constexpr float kPusherMin = 0.10f, kPusherMax = 0.90f;
inline constexpr int kShapeCount = 12;

// 3x3 occupancy, row-major; every catalog shape has >= 3 cells and is
// 4-connected
using ShapeMask = std::array<uint8_t, 9>;
const std::array<ShapeMask, kShapeCount>& shape_catalog();

struct ObjectSpec {
    int shape_id = 0;
    float mass = 1.0f;      // [0.5, 2.0]
    float friction = 0.5f;  // [0.2, 1.0]
    float com_x = 0.0f;     // cell units, inside the occupied bounding region
    float com_y = 0.0f;
};

struct WorldState {
    float x = 0.5f, y = 0.5f;  // object footprint center
    float theta = 0.0f;        // wrapped to (-pi, pi]
    float px = 0.1f, py = 0.1f;
};

struct Frame {
    int h = 16, w = 16;
    std::vector<float> intensity;     // [0,1], row-major
    std::vector<uint8_t> pusher_mask; // 1 exactly on pusher pixels
};

struct Action {
    float dx = 0.0f, dy = 0.0f;
};

struct Trajectory {
    uint32_t object_id = 0;
    std::vector<Frame> frames;    // length T
    std::vector<Action> actions;  // length T-1
};

struct DatasetFile {
    uint32_t object_id = 0;
    ObjectSpec spec;
    int t_len = 12, h = 16, w = 16;
    std::vector<Trajectory> trajectories;
};

// catalog capacity is kShapeCount x 5 masses x 5 frictions; the first
// k_train entries of one call form the train split and the next k_test the
// test split, so the splits are disjoint by construction
int catalog_capacity();
std::vector<ObjectSpec> sample_object_catalog(uint64_t seed, int count);

// quasi-static single-contact push; action exactly (0,0) leaves the state
// unchanged
WorldState step(const WorldState& s, const ObjectSpec& spec, const Action& a);
Frame render(const WorldState& s, const ObjectSpec& spec, int h = 16, int w = 16);
Frame render_object(const WorldState& s, const ObjectSpec& spec, int h = 16, int w = 16);

// distance from the footprint center that guarantees a spawned pusher disc
// cannot touch the object
float clear_spawn_radius(const ObjectSpec& spec);

// one straight push per trajectory: direction aimed at the object with
// +-0.3 rad jitter, constant action across all T-1 steps
Trajectory generate_trajectory(const ObjectSpec& spec, uint32_t object_id, int t_len,
                               uint64_t seed, int h = 16, int w = 16);
DatasetFile generate_dataset(const ObjectSpec& spec, uint32_t object_id, int n, int t_len,
                             uint64_t seed, int h = 16, int w = 16);

void write_dataset(const DatasetFile& d, const std::filesystem::path& p);
DatasetFile read_dataset(const std::filesystem::path& p);
// exact on-disk size implied by the format, for integrity checks
size_t dataset_file_size(int n, int t_len, int h, int w);

struct ManifestEntry {
    std::string tag;  // "train" or "test"
    std::filesystem::path path;
};
void write_manifest(const std::filesystem::path& p, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& p);

Tensor frame_to_tensor(const Frame& f);  // flat [h*w]

}  // namespace evf::push
