#include "gtp/common/checkpoint.hpp"

#include "gtp/common/binary_io.hpp"
#include "gtp/common/errors.hpp"

#include <algorithm>

namespace gtp {
namespace {

std::string file_name_for(const std::string& name) {
    std::string f = name;
    std::replace(f.begin(), f.end(), '/', '_');
    return f + ".f32";
}

} // namespace

void save_checkpoint(const std::filesystem::path& dir, nlohmann::json manifest, const num::ParameterSet& params) {
    std::filesystem::create_directories(dir);
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string file = file_name_for(params.name(i));
        list.push_back({{"name", params.name(i)}, {"shape", params.value(i).shape()}, {"file", file}});
        write_f32(dir / file, params.value(i).storage());
    }
    manifest["parameters"] = list;
    write_json(dir / "manifest.json", manifest);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    Checkpoint ck;
    ck.manifest = read_json(dir / "manifest.json");
    try {
        for (const auto& p : ck.manifest.at("parameters")) {
            const auto shape = p.at("shape").get<num::Shape>();
            const auto name = p.at("name").get<std::string>();
            ck.params.add(name, num::Tensor(shape, read_f32(dir / p.at("file").get<std::string>(), num::shape_volume(shape))));
            if (!ck.params.at(name).all_finite()) throw DataError("checkpoint parameter " + name + " is not finite");
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError((dir / "manifest.json").string() + ": " + e.what());
    }
    return ck;
}

void require_same_layout(const num::ParameterSet& reference, const num::ParameterSet& loaded, const std::string& what) {
    if (reference.size() != loaded.size()) throw DataError(what + ": parameter count does not match the configuration");
    for (std::size_t i = 0; i < reference.size(); ++i) {
        if (reference.name(i) != loaded.name(i) || reference.value(i).shape() != loaded.value(i).shape()) {
            throw DataError(what + ": parameter " + reference.name(i) + " does not match the configuration");
        }
    }
}

} // namespace gtp
