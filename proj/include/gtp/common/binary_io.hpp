#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace gtp {

// Raw little-endian arrays. Readers check that the file size is a whole
// number of elements and, when `expected` is non-zero, that the count matches.
void write_f32(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected = 0);
void write_u32(const std::filesystem::path& path, const std::vector<std::uint32_t>& values);
std::vector<std::uint32_t> read_u32(const std::filesystem::path& path, std::size_t expected = 0);
void write_i32(const std::filesystem::path& path, const std::vector<std::int32_t>& values);
std::vector<std::int32_t> read_i32(const std::filesystem::path& path, std::size_t expected = 0);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// 64-bit FNV-1a of a file's bytes.
std::uint64_t file_hash(const std::filesystem::path& path);

} // namespace gtp
