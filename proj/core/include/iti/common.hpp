#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace iti {

using Token = std::int32_t;

// (layer, head) address of one attention head.
struct HeadId {
    int layer = 0;
    int head  = 0;

    friend auto operator<=>(const HeadId &, const HeadId &) = default;
};

enum class SelectorKind { head_wise, point_wise, all_heads };

std::string_view to_string(SelectorKind kind);
SelectorKind parse_selector(std::string_view name);

// mt19937_64 output is fixed by the standard, the distributions are not, so
// anything that must reproduce across toolchains draws through these.
using Rng = std::mt19937_64;

// uniform integer in [0, n) by rejection sampling
std::uint64_t uniform_index(Rng & rng, std::uint64_t n);

// uniform real in [0, 1) from the top 53 bits
double uniform_unit(Rng & rng);

// standard normal via Box-Muller
double standard_normal(Rng & rng);

template <typename T>
void seeded_shuffle(std::vector<T> & v, Rng & rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

// 64-bit FNV-1a, used for provenance hashes
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);
std::string hash_hex(std::uint64_t h);
std::string file_hash_hex(const std::filesystem::path & path);

std::string read_file(const std::filesystem::path & path);

// writes to <path>.tmp then renames over path
void write_file_atomic(const std::filesystem::path & path, std::string_view contents);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

} // namespace iti
