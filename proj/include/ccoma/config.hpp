#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccoma/env.hpp"
#include "ccoma/envs/manufacture.hpp"
#include "ccoma/envs/traffic.hpp"
#include "ccoma/policy.hpp"
#include "ccoma/trainer.hpp"

// Flat key=value run configuration with [env] [model] [train] [eval]
// sections. Every constant the artifact exposes lives in the registry here;
// unknown keys are rejected and the fully resolved values are echoed into
// the run manifest.

namespace ccoma::config {

class ConfigError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    // section -> key -> value, fully populated (defaults + file + overrides)
    std::map<std::string, std::map<std::string, std::string>> values;

    const std::string& get(const std::string& section, const std::string& key) const;
    double get_double(const std::string& section, const std::string& key) const;
    long long get_int(const std::string& section, const std::string& key) const;
    bool get_bool(const std::string& section, const std::string& key) const;
};

// path may be empty (defaults only); overrides are "section.key=value"
RunConfig load_file(const std::string& path, const std::vector<std::string>& overrides);
RunConfig load_text(const std::string& text, const std::vector<std::string>& overrides);

// effective configuration, resolved (mode-dependent "auto" values filled in)
nlohmann::json to_json(const RunConfig& cfg);
std::string to_ini(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);  // FNV-1a 64 over canonical json text

traffic::Config traffic_config(const RunConfig& cfg);
manufacture::Config manufacture_config(const RunConfig& cfg);
PolicyConfig policy_config(const RunConfig& cfg);
TrainConfig train_config(const RunConfig& cfg);
int critic_hidden(const RunConfig& cfg);
EnvFactory make_env_factory(const RunConfig& cfg);

}  // namespace ccoma::config
