#include "gtp/common/binary_io.hpp"

#include "gtp/common/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace gtp {
namespace {

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const void* data, std::size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw DataError("write failed: " + path.string());
}

template <typename T>
std::vector<T> read_array(const std::filesystem::path& path, std::size_t expected) {
    const std::vector<char> raw = slurp(path);
    if (raw.size() % sizeof(T) != 0) throw DataError(path.string() + ": size is not a multiple of the element size");
    std::vector<T> out(raw.size() / sizeof(T));
    std::memcpy(out.data(), raw.data(), raw.size());
    if (expected != 0 && out.size() != expected) {
        throw DataError(path.string() + ": expected " + std::to_string(expected) + " values, found " +
                        std::to_string(out.size()));
    }
    return out;
}

} // namespace

void write_f32(const std::filesystem::path& path, const std::vector<double>& values) {
    std::vector<float> buf(values.begin(), values.end());
    dump(path, buf.data(), buf.size() * sizeof(float));
}

std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected) {
    std::vector<float> buf = read_array<float>(path, expected);
    return {buf.begin(), buf.end()};
}

void write_u32(const std::filesystem::path& path, const std::vector<std::uint32_t>& values) {
    dump(path, values.data(), values.size() * sizeof(std::uint32_t));
}

std::vector<std::uint32_t> read_u32(const std::filesystem::path& path, std::size_t expected) {
    return read_array<std::uint32_t>(path, expected);
}

void write_i32(const std::filesystem::path& path, const std::vector<std::int32_t>& values) {
    dump(path, values.data(), values.size() * sizeof(std::int32_t));
}

std::vector<std::int32_t> read_i32(const std::filesystem::path& path, std::size_t expected) {
    return read_array<std::int32_t>(path, expected);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    write_text(path, doc.dump(2) + "\n");
}

nlohmann::json read_json(const std::filesystem::path& path) {
    const std::vector<char> raw = slurp(path);
    try {
        return nlohmann::json::parse(raw.begin(), raw.end());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) { dump(path, text.data(), text.size()); }

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : slurp(path)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace gtp
