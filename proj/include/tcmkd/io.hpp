#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tcmkd {

// CRC-32 (IEEE 802.3 polynomial), used by checkpoint tensor blocks and run
// manifests.
uint32_t crc32(std::span<const uint8_t> data, uint32_t seed = 0);
uint32_t crc32_file(const std::filesystem::path& path);

// Canonical float formatting for CSV output: shortest form at %.10g.
// Deterministic for identical values, which is what the byte-identity
// guarantees rest on.
std::string format_number(double v);

std::string join_csv_row(const std::vector<std::string>& cells);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

} // namespace tcmkd
