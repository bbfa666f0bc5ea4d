#include "manifest.hpp"

#include <fstream>

#include "cadet/errors.hpp"
#include "cadet/version.hpp"

namespace cadet::cli {

nlohmann::json RunManifest::to_json() const {
    return {{"command", command}, {"argv", argv},       {"config", config},          {"seed", seed},
            {"inputs", inputs},   {"outputs", outputs}, {"version", kToolkitVersion}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    try {
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.argv = j.at("argv").get<std::vector<std::string>>();
        m.config = j.value("config", nlohmann::json::object());
        m.seed = j.at("seed").get<std::uint64_t>();
        m.inputs = j.value("inputs", std::vector<std::string>{});
        m.outputs = j.value("outputs", std::vector<std::string>{});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed manifest: ") + e.what());
    }
}

nlohmann::json echo_config(const CLI::App& sub) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto* opt : sub.get_options()) {
        const std::string name = opt->get_name();
        if (name.empty() || name == "--help" || name == "-h,--help") continue;
        std::string key = opt->get_lnames().empty() ? name : opt->get_lnames().front();
        if (opt->count() > 0) {
            const auto& r = opt->results();
            out[key] = r.size() == 1 ? nlohmann::json(r.front()) : nlohmann::json(r);
        } else if (!opt->get_default_str().empty()) {
            out[key] = opt->get_default_str();
        }
    }
    return out;
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest " + path.string());
    f << m.to_json().dump(2) << '\n';
    if (!f) throw IoError("failed writing manifest " + path.string());
}

RunManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read manifest " + path.string());
    const auto j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) throw ConfigError("manifest is not valid JSON: " + path.string());
    return RunManifest::from_json(j);
}

}  // namespace cadet::cli
