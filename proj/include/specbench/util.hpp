#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace specbench {

// 64-bit FNV-1a. Stable across platforms; used for fixture keys, config
// hashes and per-query seeds.
std::uint64_t fnv1a64(std::string_view data,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

// 16-digit lowercase hex.
std::string hex64(std::uint64_t value);

// splitmix64 finalizer; combines a seed with a hash.
std::uint64_t mix64(std::uint64_t value);

// Unbiased integer in [0, bound) drawn from a mt19937_64. Unlike
// std::uniform_int_distribution the result is identical on every standard
// library, which keeps seeded samples portable.
std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound);

std::vector<std::string_view> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

// Replaces tab, CR and LF with a single space so a value fits one TSV field.
std::string tsv_field(std::string_view value);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary file and renames, so readers never see a
// partially written file.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents);

}  // namespace specbench
