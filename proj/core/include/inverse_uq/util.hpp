#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace inverse_uq::util {

/// 64-bit FNV-1a; stable across platforms, used for config and split fingerprints.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

std::vector<std::string> split(std::string_view line, char delimiter);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

/// Mixes a base seed with a stream index (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace inverse_uq::util
