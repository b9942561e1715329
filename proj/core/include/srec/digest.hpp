#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

namespace srec {

// Streaming SHA-256, used for run digests and artifact checksums.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t size);
    void update(std::span<const double> values) {
        update(values.data(), values.size() * sizeof(double));
    }
    void update(std::uint64_t v) { update(&v, sizeof v); }
    void update(const std::string& s) { update(s.data(), s.size()); }

    // Finalises and returns the lowercase hex digest; the object is spent.
    std::string hex();

private:
    void* ctx_;
};

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& bytes);

}  // namespace srec
