#include "morse/config.hpp"

#include <cstdlib>

namespace morse {

FlatConfig FlatConfig::parse_text(std::string_view text) {
    FlatConfig cfg;
    size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string_view::npos)
            throw UsageError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.empty())
            throw UsageError("config line " + std::to_string(line_no) + ": empty key");
        cfg.entries_.emplace_back(std::move(key), std::move(value));
    }
    cfg.consumed_.assign(cfg.entries_.size(), false);
    return cfg;
}

FlatConfig FlatConfig::parse_file(const std::string& path) {
    return parse_text(read_file(path));
}

bool FlatConfig::has(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return true;
    return false;
}

std::optional<std::string> FlatConfig::take(const std::string& key) {
    std::optional<std::string> found;
    for (size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].first != key) continue;
        if (found) throw UsageError("config: duplicate key '" + key + "'");
        found = entries_[i].second;
        consumed_[i] = true;
    }
    return found;
}

std::string FlatConfig::get_string(const std::string& key) {
    auto v = take(key);
    if (!v) throw UsageError("config: missing required key '" + key + "'");
    return *v;
}

std::string FlatConfig::get_string(const std::string& key, const std::string& def) {
    auto v = take(key);
    return v ? *v : def;
}

std::optional<std::string> FlatConfig::get_optional(const std::string& key) { return take(key); }

namespace {

long long to_int(const std::string& key, const std::string& value) {
    char* end = nullptr;
    long long v = std::strtoll(value.c_str(), &end, 10);
    if (end == value.c_str() || *end != '\0')
        throw UsageError("config: key '" + key + "' expects an integer, got '" + value + "'");
    return v;
}

double to_double(const std::string& key, const std::string& value) {
    char* end = nullptr;
    double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0')
        throw UsageError("config: key '" + key + "' expects a number, got '" + value + "'");
    return v;
}

}  // namespace

long long FlatConfig::get_int(const std::string& key) { return to_int(key, get_string(key)); }

long long FlatConfig::get_int(const std::string& key, long long def) {
    auto v = take(key);
    return v ? to_int(key, *v) : def;
}

uint64_t FlatConfig::get_u64(const std::string& key, uint64_t def) {
    auto v = take(key);
    if (!v) return def;
    char* end = nullptr;
    uint64_t out = std::strtoull(v->c_str(), &end, 10);
    if (end == v->c_str() || *end != '\0')
        throw UsageError("config: key '" + key + "' expects an unsigned integer");
    return out;
}

double FlatConfig::get_double(const std::string& key) { return to_double(key, get_string(key)); }

double FlatConfig::get_double(const std::string& key, double def) {
    auto v = take(key);
    return v ? to_double(key, *v) : def;
}

bool FlatConfig::get_bool(const std::string& key, bool def) {
    auto v = take(key);
    if (!v) return def;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw UsageError("config: key '" + key + "' expects true/false");
}

std::vector<std::string> FlatConfig::get_all(const std::string& key) {
    std::vector<std::string> out;
    for (size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].first == key) {
            out.push_back(entries_[i].second);
            consumed_[i] = true;
        }
    }
    return out;
}

void FlatConfig::reject_unknown() const {
    std::string unknown;
    for (size_t i = 0; i < entries_.size(); ++i) {
        if (!consumed_[i]) {
            if (!unknown.empty()) unknown += ", ";
            unknown += entries_[i].first;
        }
    }
    if (!unknown.empty()) throw UsageError("config: unknown key(s): " + unknown);
}

}  // namespace morse
