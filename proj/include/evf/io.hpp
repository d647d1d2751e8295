#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include "evf/tensor.hpp"

namespace evf::io {

// little-endian scratch buffer for the EVFP / EVFD file formats
struct ByteWriter {
    std::string buf;

    void u8(uint8_t v) { buf.push_back(static_cast<char>(v)); }
    void u16(uint16_t v) {
        u8(static_cast<uint8_t>(v & 0xff));
        u8(static_cast<uint8_t>(v >> 8));
    }
    void u32(uint32_t v) {
        u16(static_cast<uint16_t>(v & 0xffff));
        u16(static_cast<uint16_t>(v >> 16));
    }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
};

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;
    std::string what;  // used in error messages

    ByteReader(const std::string& b, std::string w) : buf(b), what(std::move(w)) {}

    void need(size_t n) const {
        if (pos + n > buf.size())
            throw std::runtime_error(what + ": truncated at byte offset " + std::to_string(pos) +
                                     " (need " + std::to_string(n) + " more, have " +
                                     std::to_string(buf.size() - pos) + ")");
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16() {
        uint16_t lo = u8();
        return static_cast<uint16_t>(lo | (static_cast<uint16_t>(u8()) << 8));
    }
    uint32_t u32() {
        uint32_t lo = u16();
        return lo | (static_cast<uint32_t>(u16()) << 16);
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    void bytes(void* p, size_t n) {
        need(n);
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
    bool eof() const { return pos == buf.size(); }
};

std::string read_file(const std::filesystem::path& p);
// write-temp-then-rename so concurrent readers never see a partial file
void write_file_atomic(const std::filesystem::path& p, const std::string& bytes);

}  // namespace evf::io
