#include "evf/png.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "evf/io.hpp"

namespace evf {

namespace {

void be32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

void chunk(std::string& out, const char type[4], const std::string& data) {
    be32(out, static_cast<uint32_t>(data.size()));
    std::string body(type, 4);
    body += data;
    out += body;
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                           static_cast<uInt>(body.size()));
    be32(out, static_cast<uint32_t>(crc));
}

}  // namespace

void write_png_gray(const std::filesystem::path& p, std::span<const float> intensity, int h, int w) {
    if (static_cast<size_t>(h) * w != intensity.size())
        throw std::runtime_error("write_png_gray: dimension mismatch");

    // filter byte 0 per scanline
    std::vector<unsigned char> raw(static_cast<size_t>(h) * (static_cast<size_t>(w) + 1));
    for (int r = 0; r < h; ++r) {
        raw[static_cast<size_t>(r) * (w + 1)] = 0;
        for (int c = 0; c < w; ++c) {
            const float v = std::clamp(intensity[static_cast<size_t>(r) * w + c], 0.0f, 1.0f);
            raw[static_cast<size_t>(r) * (w + 1) + 1 + c] =
                static_cast<unsigned char>(std::llround(static_cast<double>(v) * 255.0));
        }
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw std::runtime_error("write_png_gray: deflate failed");

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    be32(ihdr, static_cast<uint32_t>(w));
    be32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // no interlace
    chunk(out, "IHDR", ihdr);
    chunk(out, "IDAT", std::string(reinterpret_cast<char*>(comp.data()), comp_len));
    chunk(out, "IEND", "");
    io::write_file_atomic(p, out);
}

}  // namespace evf
