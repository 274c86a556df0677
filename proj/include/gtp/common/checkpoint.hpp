#pragma once

#include "gtp/numerics/parameters.hpp"

#include <filesystem>

#include <json.hpp>

namespace gtp {

/// Writes `<dir>/manifest.json` (the given document plus a "parameters" list
/// of {name, shape, file}) and one little-endian .f32 array per parameter.
void save_checkpoint(const std::filesystem::path& dir, nlohmann::json manifest, const num::ParameterSet& params);

struct Checkpoint {
    nlohmann::json manifest;
    num::ParameterSet params;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Checks that `loaded` has exactly the names and shapes of `reference`.
void require_same_layout(const num::ParameterSet& reference, const num::ParameterSet& loaded, const std::string& what);

} // namespace gtp
