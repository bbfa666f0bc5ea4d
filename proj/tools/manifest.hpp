#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace cadet::cli {

/// Record of one run: enough to re-execute it with identical outputs.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;  // arguments after the program name
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

/// Every option of the subcommand with its effective value (given or default).
nlohmann::json echo_config(const CLI::App& sub);

void write_manifest(const RunManifest& m, const std::filesystem::path& path);
RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace cadet::cli
