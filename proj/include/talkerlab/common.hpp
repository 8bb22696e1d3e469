#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace talkerlab {

namespace fs = std::filesystem;

// FNV-1a over raw bytes. Used for config hashes, parameter freeze checks and
// vocabulary compatibility stamps. Stable across runs and platforms.
uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a(const std::string& s);
uint64_t fnv1a_combine(uint64_t a, uint64_t b);

std::string hash_hex(uint64_t h);

// Single RNG type for the whole artifact so state can be serialized for
// bit-exact checkpoint resume.
using Rng = std::mt19937_64;

std::string rng_state_to_string(const Rng& rng);
void rng_state_from_string(Rng& rng, const std::string& s);

double uniform(Rng& rng);                    // [0,1)
double normal(Rng& rng);                     // N(0,1), Box-Muller without cache
int uniform_int(Rng& rng, int lo, int hi);   // inclusive bounds

std::string read_text_file(const fs::path& path);
void write_text_file(const fs::path& path, const std::string& content);

// Seconds formatted with fixed decimals (metrics logs want stable text).
std::string format_fixed(double v, int decimals);

std::vector<std::string> split_ws(const std::string& s);
std::vector<std::string> split_on(const std::string& s, char sep);
std::string lowercase(const std::string& s);

// Unicode codepoints of a UTF-8 string; invalid bytes become U+FFFD.
std::vector<uint32_t> utf8_codepoints(const std::string& s);

}  // namespace talkerlab
