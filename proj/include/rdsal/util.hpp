#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rdsal {

// Error taxonomy. Everything thrown by the library derives from Error so the
// CLI can map categories onto exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ValueError : Error {
    using Error::Error;
};
struct StateError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
// Raised when numeric self-verification (gradcheck, audits) fails.
struct VerificationError : Error {
    using Error::Error;
};

// FNV-1a, used for content hashes in manifests and for deriving per-sample
// RNG streams.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 1469598103934665603ull);
std::uint64_t fnv1a_str(const std::string& s, std::uint64_t seed = 1469598103934665603ull);
std::uint64_t fnv1a_file(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

// Deterministic float formatting for CSV output (locale-independent,
// round-trippable for the precision we care about).
std::string fmt_double(double v);
std::string fmt_float(float v);

// splitmix64: cheap statistically solid mixer, used to derive independent
// seeds from (seed, epoch, index) style tuples.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_seeds(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seeds(std::uint64_t a, std::uint64_t b, std::uint64_t c);

void ensure_dir(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, const std::string& text);
std::string read_text_file(const std::filesystem::path& p);
std::vector<std::string> read_lines(const std::filesystem::path& p);

}  // namespace rdsal
