#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "morse/util.hpp"

namespace morse {

/// Flat "key = value" configuration files: '#' starts a comment line,
/// keys may repeat only where read through get_all, and every key must
/// be consumed (reject_unknown throws on leftovers, so typos fail loudly).
class FlatConfig {
public:
    static FlatConfig parse_text(std::string_view text);
    static FlatConfig parse_file(const std::string& path);

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key);
    std::string get_string(const std::string& key, const std::string& def);
    std::optional<std::string> get_optional(const std::string& key);
    long long get_int(const std::string& key);
    long long get_int(const std::string& key, long long def);
    uint64_t get_u64(const std::string& key, uint64_t def);
    double get_double(const std::string& key);
    double get_double(const std::string& key, double def);
    bool get_bool(const std::string& key, bool def);

    /// All values of a repeatable key, in file order.
    std::vector<std::string> get_all(const std::string& key);

    void reject_unknown() const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

private:
    std::optional<std::string> take(const std::string& key);

    std::vector<std::pair<std::string, std::string>> entries_;
    std::vector<bool> consumed_;
};

}  // namespace morse
