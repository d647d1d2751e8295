#include "evf/config.hpp"

#include <stdexcept>

#include "evf/io.hpp"

namespace evf {

const char* build_id() {
#ifdef EVF_BUILD_ID
    return EVF_BUILD_ID;
#else
    return "unknown";
#endif
}

void KvConfig::declare(const std::string& key, const std::string& default_value) {
    values_[key] = default_value;
}

void KvConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("unknown config key '" + key + "'");
    it->second = value;
}

void KvConfig::set_kv(const std::string& kv) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
        throw std::runtime_error("expected key=value, got '" + kv + "'");
    set(kv.substr(0, eq), kv.substr(eq + 1));
}

void KvConfig::load_file(const std::filesystem::path& p) {
    const std::string body = io::read_file(p);
    size_t pos = 0;
    while (pos < body.size()) {
        size_t end = body.find('\n', pos);
        if (end == std::string::npos) end = body.size();
        std::string line = body.substr(pos, end - pos);
        pos = end + 1;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        size_t start = line.find_first_not_of(' ');
        if (start == std::string::npos) continue;
        line = line.substr(start);
        if (line.empty() || line[0] == '#') continue;
        try {
            set_kv(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(p.string() + ": " + e.what());
        }
    }
}

const std::string& KvConfig::str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("unknown config key '" + key + "'");
    return it->second;
}

int64_t KvConfig::i64(const std::string& key) const {
    try {
        return std::stoll(str(key));
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "' is not an integer: '" + str(key) + "'");
    }
}

int KvConfig::int_(const std::string& key) const { return static_cast<int>(i64(key)); }

uint64_t KvConfig::u64(const std::string& key) const {
    try {
        return std::stoull(str(key));
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "' is not an integer: '" + str(key) + "'");
    }
}

double KvConfig::f64(const std::string& key) const {
    try {
        return std::stod(str(key));
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "' is not a number: '" + str(key) + "'");
    }
}

float KvConfig::f32(const std::string& key) const { return static_cast<float>(f64(key)); }

bool KvConfig::flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config key '" + key + "' is not a boolean: '" + v + "'");
}

void KvConfig::write_resolved(const std::filesystem::path& p,
                              const std::string& header_comment) const {
    std::string out;
    out += "# " + header_comment + "\n";
    out += std::string("# build ") + build_id() + "\n";
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    io::write_file_atomic(p, out);
}

}  // namespace evf
