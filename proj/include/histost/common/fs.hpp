// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace histost {

namespace fs = std::filesystem;

/// Whole-file read; IoError naming the path on failure.
std::string read_file(const fs::path& path);

/// Write via a sibling temp file and rename, so readers never observe a
/// partially written file.
void write_file_atomic(const fs::path& path, std::string_view bytes);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

/// Split on a single-character delimiter; no quoting support.
std::vector<std::string> split(std::string_view line, char delim);

/// Lines of a text file without trailing '\r'; a final empty line is dropped.
std::vector<std::string> read_lines(const fs::path& path);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

// Little-endian scalar encoding.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f32(std::string& out, float v);
std::uint32_t get_u32(std::string_view in, std::size_t& pos);
std::uint64_t get_u64(std::string_view in, std::size_t& pos);
float get_f32(std::string_view in, std::size_t& pos);

}  // namespace histost
