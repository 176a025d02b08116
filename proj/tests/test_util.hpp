#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <mtdsense/model.hpp>

namespace mtdsense::testing {

inline std::string bundled_model_path() { return std::string(MTDSENSE_DATA_DIR) + "/example_model.json"; }

inline ModelBundle bundled_model() { return load_model(bundled_model_path()); }

inline nlohmann::json bundled_json() {
    std::ifstream in(bundled_model_path());
    return nlohmann::json::parse(in);
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("mtdsense_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Site site(const ModelBundle& b, const std::string& state, const std::string& config, const std::string& action) {
    return Site{b.state_index(state).value(), b.config_index(config).value(), b.action_index(action).value()};
}

}  // namespace mtdsense::testing
