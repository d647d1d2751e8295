#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace evf {

const char* build_id();

// flat key=value configuration: declared keys with defaults, then a config
// file, then --set overrides; anything undeclared is rejected
class KvConfig {
public:
    void declare(const std::string& key, const std::string& default_value);
    void load_file(const std::filesystem::path& p);
    void set(const std::string& key, const std::string& value);
    void set_kv(const std::string& kv);  // "key=value"

    const std::string& str(const std::string& key) const;
    int64_t i64(const std::string& key) const;
    int int_(const std::string& key) const;
    double f64(const std::string& key) const;
    float f32(const std::string& key) const;
    bool flag(const std::string& key) const;
    uint64_t u64(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    void write_resolved(const std::filesystem::path& p, const std::string& header_comment) const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace evf
