#include "evf/pushworld.hpp"

#include <algorithm>
#include <cmath>

#include "evf/io.hpp"
#include "evf/rng.hpp"

namespace evf::push {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'F', 'D'};
constexpr uint16_t kVersion = 1;
constexpr double kPi = 3.14159265358979323846;

constexpr std::array<ShapeMask, kShapeCount> kShapes = {{
    {0, 0, 0, 1, 1, 1, 0, 0, 0},  // horizontal bar
    {0, 1, 0, 0, 1, 0, 0, 1, 0},  // vertical bar
    {0, 1, 0, 1, 1, 1, 0, 1, 0},  // plus
    {1, 1, 1, 1, 1, 1, 1, 1, 1},  // full block
    {1, 1, 0, 1, 1, 0, 0, 0, 0},  // 2x2 square
    {1, 0, 0, 1, 0, 0, 1, 1, 1},  // L
    {1, 1, 1, 1, 0, 0, 1, 0, 0},  // gamma
    {0, 1, 1, 1, 1, 0, 0, 0, 0},  // S
    {1, 1, 0, 0, 1, 1, 0, 0, 0},  // Z
    {1, 1, 1, 0, 1, 0, 0, 1, 0},  // T
    {1, 0, 1, 1, 1, 1, 1, 0, 1},  // H
    {1, 1, 1, 1, 0, 1, 1, 1, 1},  // ring
}};

constexpr std::array<float, 5> kMassGrid = {0.5f, 0.875f, 1.25f, 1.625f, 2.0f};
constexpr std::array<float, 5> kFrictionGrid = {0.2f, 0.4f, 0.6f, 0.8f, 1.0f};

inline bool occupied(const ShapeMask& m, int row, int col) {
    return row >= 0 && row < 3 && col >= 0 && col < 3 && m[static_cast<size_t>(row * 3 + col)];
}

double wrap_angle(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a <= 0.0) a += 2.0 * kPi;
    return a - kPi;
}

// signed distance from point q (object frame, world scale) to the union of
// occupied cell squares
double footprint_sdf(const ShapeMask& m, double qx, double qy) {
    const double hc = 0.5 * kCellSize;
    double best = 1e9;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            if (!m[static_cast<size_t>(r * 3 + c)]) continue;
            const double ox = (c - 1) * static_cast<double>(kCellSize);
            const double oy = (r - 1) * static_cast<double>(kCellSize);
            const double ax = std::abs(qx - ox) - hc;
            const double ay = std::abs(qy - oy) - hc;
            double d;
            if (ax > 0.0 || ay > 0.0) {
                const double gx = std::max(ax, 0.0), gy = std::max(ay, 0.0);
                d = std::sqrt(gx * gx + gy * gy);
            } else {
                d = std::max(ax, ay);
            }
            best = std::min(best, d);
        }
    return best;
}

// squared gyration radius about the center of mass, world units
double gyration_sq(const ShapeMask& m, double com_x_cell, double com_y_cell) {
    const double cell = kCellSize;
    double acc = 0.0;
    int n = 0;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            if (!m[static_cast<size_t>(r * 3 + c)]) continue;
            const double dx = ((c - 1) - com_x_cell) * cell;
            const double dy = ((r - 1) - com_y_cell) * cell;
            acc += dx * dx + dy * dy + cell * cell / 6.0;  // cell's own moment
            ++n;
        }
    return acc / n;
}

}  // namespace

const std::array<ShapeMask, kShapeCount>& shape_catalog() { return kShapes; }

int catalog_capacity() {
    return kShapeCount * static_cast<int>(kMassGrid.size()) * static_cast<int>(kFrictionGrid.size());
}

std::vector<ObjectSpec> sample_object_catalog(uint64_t seed, int count) {
    check(count >= 1, "sample_object_catalog: count must be >= 1");
    check(count <= catalog_capacity(),
          "sample_object_catalog: count " + std::to_string(count) + " exceeds catalog capacity " +
              std::to_string(catalog_capacity()));
    std::vector<int> combo(static_cast<size_t>(catalog_capacity()));
    for (size_t i = 0; i < combo.size(); ++i) combo[i] = static_cast<int>(i);
    Rng rng(mix_seed(seed, 0xCA7A106));
    rng.shuffle(combo);
    std::vector<ObjectSpec> out;
    out.reserve(static_cast<size_t>(count));
    const int nm = static_cast<int>(kMassGrid.size());
    const int nf = static_cast<int>(kFrictionGrid.size());
    for (int i = 0; i < count; ++i) {
        int id = combo[static_cast<size_t>(i)];
        ObjectSpec s;
        s.shape_id = id / (nm * nf);
        s.mass = kMassGrid[static_cast<size_t>((id / nf) % nm)];
        s.friction = kFrictionGrid[static_cast<size_t>(id % nf)];
        // center-of-mass offset from a small grid restricted to the occupied
        // bounding region
        const ShapeMask& m = kShapes[static_cast<size_t>(s.shape_id)];
        int r0 = 3, r1 = -1, c0 = 3, c1 = -1;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                if (m[static_cast<size_t>(r * 3 + c)]) {
                    r0 = std::min(r0, r);
                    r1 = std::max(r1, r);
                    c0 = std::min(c0, c);
                    c1 = std::max(c1, c);
                }
        Rng crng(mix_seed(seed, 0xC011, static_cast<uint64_t>(id)));
        static constexpr std::array<float, 5> kComGrid = {-0.4f, -0.2f, 0.0f, 0.2f, 0.4f};
        std::vector<std::pair<float, float>> valid;
        for (float cx : kComGrid)
            for (float cy : kComGrid)
                if (cx >= (c0 - 1) - 0.5f && cx <= (c1 - 1) + 0.5f && cy >= (r0 - 1) - 0.5f &&
                    cy <= (r1 - 1) + 0.5f)
                    valid.emplace_back(cx, cy);
        auto [cx, cy] = valid[static_cast<size_t>(crng.uniform_int(0, static_cast<int>(valid.size()) - 1))];
        s.com_x = cx;
        s.com_y = cy;
        out.push_back(s);
    }
    return out;
}

WorldState step(const WorldState& s, const ObjectSpec& spec, const Action& a) {
    const double dx = std::clamp(a.dx, -kActionMax, kActionMax);
    const double dy = std::clamp(a.dy, -kActionMax, kActionMax);
    if (dx == 0.0 && dy == 0.0) return s;

    WorldState out = s;
    const double npx = std::clamp(static_cast<double>(s.px) + dx,
                                  static_cast<double>(kPusherMin), static_cast<double>(kPusherMax));
    const double npy = std::clamp(static_cast<double>(s.py) + dy,
                                  static_cast<double>(kPusherMin), static_cast<double>(kPusherMax));
    out.px = static_cast<float>(npx);
    out.py = static_cast<float>(npy);

    const ShapeMask& mask = kShapes[static_cast<size_t>(spec.shape_id)];
    const double ct = std::cos(static_cast<double>(s.theta));
    const double st = std::sin(static_cast<double>(s.theta));
    const double rx = npx - s.x, ry = npy - s.y;
    const double qx = ct * rx + st * ry;  // pusher center in object frame
    const double qy = -st * rx + ct * ry;

    const double d = footprint_sdf(mask, qx, qy);
    const double pen = kPusherRadius - d;
    if (pen <= 0.0) return out;

    // contact normal from the SDF gradient (object frame)
    const double eps = 1e-6;
    double gx = (footprint_sdf(mask, qx + eps, qy) - footprint_sdf(mask, qx - eps, qy)) / (2 * eps);
    double gy = (footprint_sdf(mask, qx, qy + eps) - footprint_sdf(mask, qx, qy - eps)) / (2 * eps);
    double gn = std::sqrt(gx * gx + gy * gy);
    if (gn < 0.5) {
        // degenerate interior ridge: push along the pusher motion instead
        const double mn = std::sqrt(dx * dx + dy * dy);
        gx = -(ct * dx + st * dy) / mn;
        gy = -(-st * dx + ct * dy) / mn;
        gn = 1.0;
    }
    gx /= gn;
    gy /= gn;

    // overlap-resolving displacement, attenuated by sqrt(friction * mass)
    const double sfac = 1.0 / std::sqrt(static_cast<double>(spec.friction) * spec.mass);
    const double nwx = ct * gx - st * gy;  // normal in world frame
    const double nwy = st * gx + ct * gy;
    const double ox = -pen * sfac * nwx;
    const double oy = -pen * sfac * nwy;

    // torque about the center of mass from the contact impulse
    const double comx = s.x + (ct * spec.com_x - st * spec.com_y) * kCellSize;
    const double comy = s.y + (st * spec.com_x + ct * spec.com_y) * kCellSize;
    const double bx = qx - d * gx;  // boundary point nearest the pusher
    const double by = qy - d * gy;
    const double cxw = s.x + ct * bx - st * by;
    const double cyw = s.y + st * bx + ct * by;
    const double lever_x = cxw - comx, lever_y = cyw - comy;
    const double rg2 = gyration_sq(mask, spec.com_x, spec.com_y);
    const double dtheta = (lever_x * oy - lever_y * ox) / (spec.mass * rg2);

    // translate, then rotate about the displaced center of mass
    const double c2 = std::cos(dtheta), s2 = std::sin(dtheta);
    const double relx = s.x - comx, rely = s.y - comy;
    double nx = comx + ox + c2 * relx - s2 * rely;
    double ny = comy + oy + s2 * relx + c2 * rely;
    nx = std::clamp(nx, static_cast<double>(kCenterMin), static_cast<double>(kCenterMax));
    ny = std::clamp(ny, static_cast<double>(kCenterMin), static_cast<double>(kCenterMax));
    out.x = static_cast<float>(nx);
    out.y = static_cast<float>(ny);
    out.theta = static_cast<float>(wrap_angle(s.theta + dtheta));
    return out;
}

namespace {

Frame render_impl(const WorldState& s, const ObjectSpec& spec, int h, int w, bool with_pusher) {
    Frame f;
    f.h = h;
    f.w = w;
    f.intensity.assign(static_cast<size_t>(h) * w, 0.0f);
    f.pusher_mask.assign(static_cast<size_t>(h) * w, 0);

    const ShapeMask& mask = kShapes[static_cast<size_t>(spec.shape_id)];
    const double ct = std::cos(static_cast<double>(s.theta));
    const double st = std::sin(static_cast<double>(s.theta));
    int object_pixels = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double pxw = (c + 0.5) / w;
            const double pyw = (r + 0.5) / h;
            const double rx = pxw - s.x, ry = pyw - s.y;
            const double qx = (ct * rx + st * ry) / kCellSize;  // cell units
            const double qy = (-st * rx + ct * ry) / kCellSize;
            const int ax = static_cast<int>(std::llround(qx));
            const int ay = static_cast<int>(std::llround(qy));
            if (occupied(mask, ay + 1, ax + 1)) {
                f.intensity[static_cast<size_t>(r) * w + c] = kObjectIntensity;
                ++object_pixels;
            }
        }
    if (object_pixels < 3) {
        // pathological rotations can slip every cell between pixel centers;
        // mark the cell-center pixels so the object never vanishes
        for (int r = 0; r < 3 && object_pixels < 3; ++r)
            for (int c = 0; c < 3 && object_pixels < 3; ++c) {
                if (!mask[static_cast<size_t>(r * 3 + c)]) continue;
                const double ox = (c - 1) * static_cast<double>(kCellSize);
                const double oy = (r - 1) * static_cast<double>(kCellSize);
                const double wx = s.x + ct * ox - st * oy;
                const double wy = s.y + st * ox + ct * oy;
                const int pc = std::clamp(static_cast<int>(std::floor(wx * w)), 0, w - 1);
                const int pr = std::clamp(static_cast<int>(std::floor(wy * h)), 0, h - 1);
                auto& px = f.intensity[static_cast<size_t>(pr) * w + pc];
                if (px != kObjectIntensity) {
                    px = kObjectIntensity;
                    ++object_pixels;
                }
            }
    }

    if (with_pusher) {
        // constant 5-pixel plus stencil, drawn last
        const int pc = static_cast<int>(std::floor(static_cast<double>(s.px) * w));
        const int pr = static_cast<int>(std::floor(static_cast<double>(s.py) * h));
        const int offs[5][2] = {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (auto& o : offs) {
            const int c = pc + o[0], r = pr + o[1];
            if (c < 0 || c >= w || r < 0 || r >= h) continue;
            f.intensity[static_cast<size_t>(r) * w + c] = kPusherIntensity;
            f.pusher_mask[static_cast<size_t>(r) * w + c] = 1;
        }
    }
    return f;
}

}  // namespace

Frame render(const WorldState& s, const ObjectSpec& spec, int h, int w) {
    return render_impl(s, spec, h, w, true);
}

Frame render_object(const WorldState& s, const ObjectSpec& spec, int h, int w) {
    return render_impl(s, spec, h, w, false);
}

float clear_spawn_radius(const ObjectSpec& spec) {
    const ShapeMask& m = kShapes[static_cast<size_t>(spec.shape_id)];
    double rmax = 0.0;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            if (!m[static_cast<size_t>(r * 3 + c)]) continue;
            const double dx = std::abs(c - 1) * kCellSize + 0.5 * kCellSize;
            const double dy = std::abs(r - 1) * kCellSize + 0.5 * kCellSize;
            rmax = std::max(rmax, std::sqrt(dx * dx + dy * dy));
        }
    return static_cast<float>(rmax + kPusherRadius + 0.005);
}

Trajectory generate_trajectory(const ObjectSpec& spec, uint32_t object_id, int t_len,
                               uint64_t seed, int h, int w) {
    check(t_len >= 2, "generate_trajectory: need t_len >= 2");
    Rng rng(seed);
    WorldState s;
    s.x = 0.5f + rng.uniform(-0.06f, 0.06f);
    s.y = 0.5f + rng.uniform(-0.06f, 0.06f);
    s.theta = rng.uniform(-static_cast<float>(kPi), static_cast<float>(kPi));

    const float ray = rng.uniform(0.0f, 2.0f * static_cast<float>(kPi));
    const float d0 = clear_spawn_radius(spec) + rng.uniform(0.01f, 0.05f);
    s.px = std::clamp(s.x + d0 * std::cos(ray), kPusherMin, kPusherMax);
    s.py = std::clamp(s.y + d0 * std::sin(ray), kPusherMin, kPusherMax);

    const float dir = ray + static_cast<float>(kPi) + rng.uniform(-0.3f, 0.3f);
    const float speed = kActionMax * rng.uniform(0.7f, 1.0f);
    Action a{speed * std::cos(dir), speed * std::sin(dir)};

    Trajectory tr;
    tr.object_id = object_id;
    tr.frames.push_back(render(s, spec, h, w));
    for (int t = 0; t < t_len - 1; ++t) {
        s = step(s, spec, a);
        tr.frames.push_back(render(s, spec, h, w));
        tr.actions.push_back(a);
    }
    return tr;
}

DatasetFile generate_dataset(const ObjectSpec& spec, uint32_t object_id, int n, int t_len,
                             uint64_t seed, int h, int w) {
    check(n >= 1, "generate_dataset: need n >= 1");
    DatasetFile d;
    d.object_id = object_id;
    d.spec = spec;
    d.t_len = t_len;
    d.h = h;
    d.w = w;
    d.trajectories.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        d.trajectories.push_back(
            generate_trajectory(spec, object_id, t_len, mix_seed(seed, static_cast<uint64_t>(i)), h, w));
    return d;
}

size_t dataset_file_size(int n, int t_len, int h, int w) {
    const size_t header = 4 + 2 + 4 + (2 + 4 * 4) + 4 + 2 + 2 + 2;
    const size_t per_traj = 2ull * static_cast<size_t>(t_len) * h * w +
                            static_cast<size_t>(t_len - 1) * 2 * 4;
    return header + static_cast<size_t>(n) * per_traj;
}

void write_dataset(const DatasetFile& d, const std::filesystem::path& p) {
    for (const auto& tr : d.trajectories) {
        check(tr.object_id == d.object_id, "write_dataset: trajectory object_id mismatch");
        check(tr.frames.size() == static_cast<size_t>(d.t_len), "write_dataset: bad frame count");
        check(tr.actions.size() + 1 == tr.frames.size(), "write_dataset: frames != actions+1");
    }
    io::ByteWriter wtr;
    wtr.bytes(kMagic, 4);
    wtr.u16(kVersion);
    wtr.u32(d.object_id);
    wtr.u16(static_cast<uint16_t>(d.spec.shape_id));
    wtr.f32(d.spec.mass);
    wtr.f32(d.spec.friction);
    wtr.f32(d.spec.com_x);
    wtr.f32(d.spec.com_y);
    wtr.u32(static_cast<uint32_t>(d.trajectories.size()));
    wtr.u16(static_cast<uint16_t>(d.t_len));
    wtr.u16(static_cast<uint16_t>(d.h));
    wtr.u16(static_cast<uint16_t>(d.w));
    for (const auto& tr : d.trajectories) {
        for (const auto& f : tr.frames) {
            check(f.h == d.h && f.w == d.w, "write_dataset: frame dimension mismatch");
            for (float v : f.intensity)
                wtr.u8(static_cast<uint8_t>(std::llround(static_cast<double>(v) * 255.0)));
        }
        for (const auto& f : tr.frames)
            for (uint8_t m : f.pusher_mask) wtr.u8(m ? 1 : 0);
        for (const auto& a : tr.actions) {
            wtr.f32(a.dx);
            wtr.f32(a.dy);
        }
    }
    io::write_file_atomic(p, wtr.buf);
}

DatasetFile read_dataset(const std::filesystem::path& p) {
    const std::string bytes = io::read_file(p);
    io::ByteReader r(bytes, p.filename().string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error(p.string() + ": bad magic at byte offset 0, not an EVFD dataset");
    const uint16_t ver = r.u16();
    if (ver != kVersion)
        throw std::runtime_error(p.string() + ": unsupported version " + std::to_string(ver) +
                                 " at byte offset 4");
    DatasetFile d;
    d.object_id = r.u32();
    d.spec.shape_id = r.u16();
    d.spec.mass = r.f32();
    d.spec.friction = r.f32();
    d.spec.com_x = r.f32();
    d.spec.com_y = r.f32();
    const uint32_t n = r.u32();
    d.t_len = r.u16();
    d.h = r.u16();
    d.w = r.u16();
    check(d.spec.shape_id >= 0 && d.spec.shape_id < kShapeCount,
          p.string() + ": shape_id out of range");
    const size_t hw = static_cast<size_t>(d.h) * d.w;
    d.trajectories.resize(n);
    for (auto& tr : d.trajectories) {
        tr.object_id = d.object_id;
        tr.frames.resize(static_cast<size_t>(d.t_len));
        for (auto& f : tr.frames) {
            f.h = d.h;
            f.w = d.w;
            f.intensity.resize(hw);
            f.pusher_mask.resize(hw);
            for (auto& v : f.intensity) v = static_cast<float>(r.u8()) / 255.0f;
        }
        for (auto& f : tr.frames)
            for (auto& m : f.pusher_mask) m = r.u8();
        tr.actions.resize(static_cast<size_t>(d.t_len - 1));
        for (auto& a : tr.actions) {
            a.dx = r.f32();
            a.dy = r.f32();
        }
    }
    if (!r.eof())
        throw std::runtime_error(p.string() + ": trailing bytes at offset " + std::to_string(r.pos));
    return d;
}

void write_manifest(const std::filesystem::path& p, const std::vector<ManifestEntry>& entries) {
    std::string out;
    for (const auto& e : entries) out += e.tag + "\t" + e.path.generic_string() + "\n";
    io::write_file_atomic(p, out);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& p) {
    const std::string bytes = io::read_file(p);
    std::vector<ManifestEntry> out;
    size_t pos = 0;
    const auto base = p.parent_path();
    while (pos < bytes.size()) {
        size_t end = bytes.find('\n', pos);
        if (end == std::string::npos) end = bytes.size();
        std::string line = bytes.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        const size_t tab = line.find('\t');
        check(tab != std::string::npos, p.string() + ": manifest line missing tab separator");
        ManifestEntry e;
        e.tag = line.substr(0, tab);
        std::filesystem::path fp = line.substr(tab + 1);
        e.path = fp.is_absolute() ? fp : base / fp;
        out.push_back(std::move(e));
    }
    return out;
}

Tensor frame_to_tensor(const Frame& f) {
    Tensor t;
    t.shape = {f.h * f.w};
    t.data = f.intensity;
    return t;
}

}  // namespace evf::push
