#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "featmimic/network.hpp"

namespace featmimic {

/// Weight blob header: 8-byte magic followed by a little-endian uint32 version.
inline constexpr std::array<char, 8> kWeightMagic = {'F', 'M', 'N', 'E', 'T', 'W', 'T', 'S'};
inline constexpr std::uint32_t kWeightVersion = 1;

/// Loads a JSON network description and the weight blob it names (resolved
/// relative to the description file). Schema is documented in docs/formats.md.
Network load_network(const std::filesystem::path& description);

/// Writes the description and its weight blob. The description refers to the
/// blob by file name, so both should live in the same directory.
void save_network(const Network& net, const std::filesystem::path& description,
                  const std::filesystem::path& weights);

/// Concatenated parameters in declaration order (kernel/weight, then bias).
std::vector<float> read_weight_blob(const std::filesystem::path& path);
void write_weight_blob(const std::filesystem::path& path, const std::vector<float>& values);

}  // namespace featmimic
