#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace cgrs {

// Incremental SHA-256; hex digests are lowercase.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::span<const std::byte> bytes);
    void update(const std::string& text);
    std::string hex_digest();

private:
    void* ctx_;
};

std::string sha256_hex(std::span<const std::byte> bytes);
std::string md5_file_hex(const std::filesystem::path& path);

// 64-bit mixing for deriving independent seed streams (splitmix64 finalizer).
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return mix_seed(mix_seed(a) ^ b); }

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

}  // namespace cgrs
