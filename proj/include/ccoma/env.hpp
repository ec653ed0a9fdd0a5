#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccoma/adjacency.hpp"

namespace ccoma {

struct EnvStep {
    std::vector<double> obs;         // n_slots * obs_dim, zero rows for inactive slots
    AdjacencyMask adj;               // inactive slots attend only to themselves
    std::vector<std::uint8_t> active;  // n_slots
    std::vector<double> avail;       // n_slots * n_actions, {0,1}
    double reward = 0.0;
    bool done = false;
    nlohmann::json trace;            // one episode-trace record (empty at reset)
};

// Seedable, fully serializable multi-agent simulator. One instance per
// rollout context; instances are independent and may run in parallel.
class MultiAgentEnv {
  public:
    virtual ~MultiAgentEnv() = default;

    virtual int n_slots() const = 0;
    virtual int obs_dim() const = 0;
    virtual int n_actions() const = 0;
    virtual int state_dim() const = 0;
    virtual int horizon() const = 0;

    virtual EnvStep reset(std::uint64_t seed) = 0;
    // actions[slot] must be -1 exactly for inactive slots
    virtual EnvStep step(const std::vector<int>& actions) = 0;

    virtual std::vector<double> true_state() const = 0;

    // traffic reports zero-collision success at episode end; others nullopt
    virtual std::optional<bool> episode_success() const { return std::nullopt; }

    // curriculum hook applied on the next reset; default ignores it
    virtual void set_curriculum(int /*level*/) {}

    virtual std::string save_state() const = 0;
    virtual void load_state(const std::string& blob) = 0;
};

using EnvFactory = std::function<std::unique_ptr<MultiAgentEnv>()>;

}  // namespace ccoma
