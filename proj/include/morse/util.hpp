#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace morse {

// Error categories map to CLI exit codes: usage 1, data 2, numeric 3.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// UTF-8 helpers. Decoding maps each invalid byte to U+FFFD.
std::vector<uint32_t> utf8_decode(std::string_view text);
void utf8_append(std::string& out, uint32_t cp);
std::string utf8_encode(const std::vector<uint32_t>& cps);
size_t utf8_length(std::string_view text);

std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// FNV-1a 64-bit. Used for vocabulary hashes and manifest file digests;
// a stable non-cryptographic fingerprint is all that is needed there.
class Fnv1a64 {
public:
    void update(const void* data, size_t n);
    void update(std::string_view s) { update(s.data(), s.size()); }
    uint64_t digest() const { return state_; }

private:
    uint64_t state_ = 0xcbf29ce484222325ull;
};

uint64_t fnv1a64(std::string_view data);

std::string read_file(const std::string& path);                      // throws DataError
void write_file(const std::string& path, std::string_view content);  // throws DataError

}  // namespace morse
