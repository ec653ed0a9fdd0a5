#include "ccoma/config.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace ccoma::config {

namespace {

struct KeyInfo {
    const char* section;
    const char* key;
    const char* def;
    const char* env_scope;  // "", "traffic" or "manufacture"
};

// "auto" defaults resolve from the traffic mode
const KeyInfo kRegistry[] = {
    {"env", "name", "traffic", ""},
    {"env", "mode", "easy", "traffic"},
    {"env", "n_max", "auto", "traffic"},
    {"env", "p_arrive", "auto", "traffic"},
    {"env", "r_coll", "-10", "traffic"},
    {"env", "r_time", "-0.01", "traffic"},
    {"env", "vision", "1", "traffic"},
    {"env", "route_file", "", "traffic"},
    {"env", "horizon", "auto", ""},
    {"env", "p_product", "10", "manufacture"},
    {"env", "n_product", "1", "manufacture"},
    {"env", "c_op", "1", "manufacture"},
    {"env", "c_op_stop", "0.25", "manufacture"},
    {"env", "c_maint", "5", "manufacture"},
    {"env", "c_broke", "20", "manufacture"},
    {"env", "gamma_scale", "2", "manufacture"},
    {"env", "mean_premature", "6", "manufacture"},
    {"env", "mean_mature", "12", "manufacture"},
    {"env", "mean_slightly_worn", "8", "manufacture"},
    {"env", "mean_maintenance", "4", "manufacture"},
    {"env", "wear_while_stopped", "false", "manufacture"},
    {"env", "time_norm", "48", "manufacture"},
    {"model", "d_model", "64", ""},
    {"model", "layers", "2", ""},
    {"model", "heads", "8", ""},
    {"model", "d_k", "16", ""},
    {"model", "rnn_hidden", "64", ""},
    {"model", "critic_hidden", "128", ""},
    {"model", "mask_fill", "-1e9", ""},
    {"train", "algo", "ccoma", ""},
    {"train", "steps", "0", ""},
    {"train", "batch", "8", ""},
    {"train", "lr", "5e-4", ""},
    {"train", "rms_alpha", "0.99", ""},
    {"train", "rms_eps", "1e-5", ""},
    {"train", "gamma", "0.99", ""},
    {"train", "lambda", "0.8", ""},
    {"train", "seed", "1", ""},
    {"train", "grad_clip", "10", ""},
    {"train", "entropy_coef", "0", ""},
    {"train", "advantage_norm", "false", ""},
    {"train", "curriculum_window", "425000", ""},
    {"train", "replay_capacity", "5000", ""},
    {"train", "replay_minibatch", "4", ""},
    {"train", "target_sync", "200", ""},
    {"train", "epsilon_start", "1.0", ""},
    {"train", "epsilon_end", "0.05", ""},
    {"train", "epsilon_anneal_steps", "50000", ""},
    {"eval", "episodes", "96", ""},
    {"eval", "period", "10000", ""},
    {"eval", "greedy", "true", ""},
    {"eval", "timing", "wall", ""},
};

const KeyInfo* find_key(const std::string& section, const std::string& key) {
    for (const auto& k : kRegistry)
        if (section == k.section && key == k.key) return &k;
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

void apply_one(RunConfig& cfg, const std::string& section, const std::string& key,
               const std::string& value, const std::string& where) {
    const KeyInfo* info = find_key(section, key);
    if (info == nullptr)
        throw ConfigError("unknown key '" + section + "." + key + "' (" + where + ")");
    cfg.values[section][key] = value;
}

void check_scopes(const RunConfig& cfg, const RunConfig& defaults) {
    const std::string env = cfg.get("env", "name");
    if (env != "traffic" && env != "manufacture")
        throw ConfigError("env.name must be traffic or manufacture, got '" + env + "'");
    for (const auto& k : kRegistry) {
        if (k.env_scope[0] == '\0' || env == k.env_scope) continue;
        // keys for the other environment may only hold their default value
        if (cfg.get(k.section, k.key) != defaults.get(k.section, k.key))
            throw ConfigError("key '" + std::string(k.section) + "." + k.key + "' applies to " +
                              k.env_scope + " runs only");
    }
}

RunConfig defaults_config() {
    RunConfig cfg;
    for (const auto& k : kRegistry) cfg.values[k.section][k.key] = k.def;
    return cfg;
}

}  // namespace

const std::string& RunConfig::get(const std::string& section, const std::string& key) const {
    auto s = values.find(section);
    if (s == values.end()) throw ConfigError("no section '" + section + "'");
    auto k = s->second.find(key);
    if (k == s->second.end()) throw ConfigError("no key '" + section + "." + key + "'");
    return k->second;
}

double RunConfig::get_double(const std::string& section, const std::string& key) const {
    const std::string& v = get(section, key);
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("key '" + section + "." + key + "': '" + v + "' is not a number");
    }
}

long long RunConfig::get_int(const std::string& section, const std::string& key) const {
    const std::string& v = get(section, key);
    try {
        std::size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("key '" + section + "." + key + "': '" + v + "' is not an integer");
    }
}

bool RunConfig::get_bool(const std::string& section, const std::string& key) const {
    const std::string& v = get(section, key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + section + "." + key + "': '" + v + "' is not a boolean");
}

RunConfig load_text(const std::string& text, const std::vector<std::string>& overrides) {
    RunConfig defaults = defaults_config();
    RunConfig cfg = defaults;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) +
                                                      ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (cfg.values.find(section) == cfg.values.end())
                throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" +
                                  section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        apply_one(cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)),
                  "line " + std::to_string(lineno));
    }
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        const auto dot = ov.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw ConfigError("override '" + ov + "' must look like section.key=value");
        apply_one(cfg, trim(ov.substr(0, dot)), trim(ov.substr(dot + 1, eq - dot - 1)),
                  trim(ov.substr(eq + 1)), "command line");
    }
    check_scopes(cfg, defaults);
    // fail early on malformed values
    if (cfg.get("env", "name") == "traffic")
        (void)traffic_config(cfg);
    else
        (void)manufacture_config(cfg);
    (void)policy_config(cfg);
    (void)train_config(cfg);
    (void)critic_hidden(cfg);
    return cfg;
}

RunConfig load_file(const std::string& path, const std::vector<std::string>& overrides) {
    std::string text;
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file '" + path + "'");
        std::ostringstream ss;
        ss << f.rdbuf();
        text = ss.str();
    }
    return load_text(text, overrides);
}

traffic::Config traffic_config(const RunConfig& cfg) {
    traffic::Config c = traffic::Config::for_mode(traffic::mode_from_string(cfg.get("env", "mode")));
    if (cfg.get("env", "n_max") != "auto") c.n_max = static_cast<int>(cfg.get_int("env", "n_max"));
    if (cfg.get("env", "p_arrive") != "auto") c.p_arrive = cfg.get_double("env", "p_arrive");
    if (cfg.get("env", "horizon") != "auto")
        c.horizon = static_cast<int>(cfg.get_int("env", "horizon"));
    c.r_coll = cfg.get_double("env", "r_coll");
    c.r_time = cfg.get_double("env", "r_time");
    c.vision = static_cast<int>(cfg.get_int("env", "vision"));
    c.route_file = cfg.get("env", "route_file");
    return c;
}

manufacture::Config manufacture_config(const RunConfig& cfg) {
    manufacture::Config c;
    c.p_product = cfg.get_double("env", "p_product");
    c.n_product = static_cast<int>(cfg.get_int("env", "n_product"));
    c.c_op = cfg.get_double("env", "c_op");
    c.c_op_stop = cfg.get_double("env", "c_op_stop");
    c.c_maint = cfg.get_double("env", "c_maint");
    c.c_broke = cfg.get_double("env", "c_broke");
    c.gamma_scale = cfg.get_double("env", "gamma_scale");
    c.mean_premature = cfg.get_double("env", "mean_premature");
    c.mean_mature = cfg.get_double("env", "mean_mature");
    c.mean_slightly_worn = cfg.get_double("env", "mean_slightly_worn");
    c.mean_maintenance = cfg.get_double("env", "mean_maintenance");
    if (cfg.get("env", "horizon") != "auto")
        c.horizon = static_cast<int>(cfg.get_int("env", "horizon"));
    c.wear_while_stopped = cfg.get_bool("env", "wear_while_stopped");
    c.time_norm = cfg.get_double("env", "time_norm");
    return c;
}

PolicyConfig policy_config(const RunConfig& cfg) {
    PolicyConfig p;
    p.d_model = static_cast<int>(cfg.get_int("model", "d_model"));
    p.n_layers = static_cast<int>(cfg.get_int("model", "layers"));
    p.n_heads = static_cast<int>(cfg.get_int("model", "heads"));
    p.d_k = static_cast<int>(cfg.get_int("model", "d_k"));
    p.rnn_hidden = static_cast<int>(cfg.get_int("model", "rnn_hidden"));
    p.mask_fill = cfg.get_double("model", "mask_fill");
    return p;
}

TrainConfig train_config(const RunConfig& cfg) {
    TrainConfig t;
    t.algo = algo_from_string(cfg.get("train", "algo"));
    t.total_steps = cfg.get_int("train", "steps");
    t.batch = static_cast<int>(cfg.get_int("train", "batch"));
    t.lr = cfg.get_double("train", "lr");
    t.rms_alpha = cfg.get_double("train", "rms_alpha");
    t.rms_eps = cfg.get_double("train", "rms_eps");
    t.gamma = cfg.get_double("train", "gamma");
    t.lambda = cfg.get_double("train", "lambda");
    t.seed = static_cast<std::uint64_t>(cfg.get_int("train", "seed"));
    t.grad_clip = cfg.get_double("train", "grad_clip");
    t.entropy_coef = cfg.get_double("train", "entropy_coef");
    t.advantage_norm = cfg.get_bool("train", "advantage_norm");
    t.curriculum_window = cfg.get_int("train", "curriculum_window");
    t.replay_capacity = static_cast<int>(cfg.get_int("train", "replay_capacity"));
    t.replay_minibatch = static_cast<int>(cfg.get_int("train", "replay_minibatch"));
    t.target_sync = static_cast<int>(cfg.get_int("train", "target_sync"));
    t.epsilon_start = cfg.get_double("train", "epsilon_start");
    t.epsilon_end = cfg.get_double("train", "epsilon_end");
    t.epsilon_anneal_steps = cfg.get_int("train", "epsilon_anneal_steps");
    t.eval_period = cfg.get_int("eval", "period");
    t.eval_episodes = static_cast<int>(cfg.get_int("eval", "episodes"));
    if (t.lr <= 0 || t.rms_alpha <= 0 || t.gamma <= 0 || t.lambda < 0 || t.batch <= 0 ||
        t.eval_period <= 0)
        throw ConfigError("train: hyperparameters must be positive");
    return t;
}

int critic_hidden(const RunConfig& cfg) {
    return static_cast<int>(cfg.get_int("model", "critic_hidden"));
}

EnvFactory make_env_factory(const RunConfig& cfg) {
    if (cfg.get("env", "name") == "traffic") {
        const traffic::Config c = traffic_config(cfg);
        return [c] { return std::make_unique<traffic::TrafficEnv>(c); };
    }
    const manufacture::Config c = manufacture_config(cfg);
    return [c] { return std::make_unique<manufacture::ManufactureEnv>(c); };
}

nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json j;
    for (const auto& [section, keys] : cfg.values)
        for (const auto& [key, value] : keys) j[section][key] = value;
    // resolved values for the mode-dependent defaults
    if (cfg.get("env", "name") == "traffic") {
        const traffic::Config c = traffic_config(cfg);
        j["env"]["n_max"] = std::to_string(c.n_max);
        j["env"]["p_arrive"] = std::to_string(c.p_arrive);
        j["env"]["horizon"] = std::to_string(c.horizon);
    } else {
        const manufacture::Config c = manufacture_config(cfg);
        j["env"]["horizon"] = std::to_string(c.horizon);
    }
    return j;
}

std::string to_ini(const RunConfig& cfg) {
    std::ostringstream out;
    bool first = true;
    for (const auto& [section, keys] : cfg.values) {
        if (!first) out << "\n";
        first = false;
        out << "[" << section << "]\n";
        for (const auto& [key, value] : keys) out << key << " = " << value << "\n";
    }
    return out.str();
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace ccoma::config
