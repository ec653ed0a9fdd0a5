#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccoma/critic.hpp"
#include "ccoma/env.hpp"
#include "ccoma/policy.hpp"

namespace ccoma {

enum class Algo { CCOMA, COMA, IQL_COMM };

Algo algo_from_string(const std::string& s);
std::string algo_to_string(Algo a);

struct TrainConfig {
    Algo algo = Algo::CCOMA;
    double lr = 5e-4;
    double rms_alpha = 0.99;
    double rms_eps = 1e-5;
    int batch = 8;  // parallel environments, one episode each per update
    double gamma = 0.99;
    double lambda = 0.8;
    long long total_steps = 0;  // environment timesteps summed over parallel envs
    long long eval_period = 10000;
    int eval_episodes = 96;
    std::uint64_t seed = 1;
    double grad_clip = 10.0;
    double entropy_coef = 0.0;
    bool advantage_norm = false;
    long long curriculum_window = 425000;
    // value-based ablation
    int replay_capacity = 5000;   // episodes
    int replay_minibatch = 4;     // episodes per update
    int target_sync = 200;        // updates between target copies
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    long long epsilon_anneal_steps = 50000;
};

// One trajectory from one environment: aligned per-timestep records.
struct EpisodeData {
    std::vector<std::vector<double>> obs;          // T x (n_slots*obs_dim)
    std::vector<std::vector<double>> state;        // T x state_dim (state before the step)
    std::vector<AdjacencyMask> adj;                // mask presented with the observations
    std::vector<std::vector<std::uint8_t>> active; // T x n_slots
    std::vector<std::vector<double>> avail;        // T x (n_slots*n_actions)
    std::vector<std::vector<int>> actions;         // T x n_slots, -1 for inactive
    std::vector<std::vector<double>> dists;        // T x (n_slots*n_actions), policy at rollout
    std::vector<double> rewards;                   // T
    std::vector<nlohmann::json> traces;            // T env trace records
    std::vector<std::vector<double>> messages;     // T x (n_slots*d_model), only when requested
    double episode_return = 0.0;
    std::optional<bool> success;

    int length() const { return static_cast<int>(rewards.size()); }
};

using EpisodeBatch = std::vector<EpisodeData>;

// advantages[episode][t*n_slots + slot], zero on inactive pairs
using AdvantageTable = std::vector<std::vector<double>>;

struct UpdateStats {
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    long long updates = 0;
};

struct EvalMetrics {
    double mean_return = 0.0;
    std::optional<double> success_rate;
    int episodes = 0;
};

// Raised when a loss or advantage goes non-finite; carries a batch dump.
class NumericalError : public std::runtime_error {
  public:
    NumericalError(const std::string& what, nlohmann::json dump)
        : std::runtime_error(what), dump_(std::move(dump)) {}
    const nlohmann::json& dump() const { return dump_; }

  private:
    nlohmann::json dump_;
};

class Trainer {
  public:
    Trainer(TrainConfig cfg, EnvFactory factory, PolicyConfig policy_cfg, int critic_hidden);

    CommPolicy& policy() { return *policy_; }
    CounterfactualCritic& critic() { return *critic_; }
    const TrainConfig& config() const { return cfg_; }
    long long steps_done() const { return steps_done_; }
    long long updates_done() const { return updates_done_; }
    std::string rng_state() const;

    // One full episode per environment context; recurrent states reset at the
    // episode boundary. Deterministic for a fixed seed order regardless of
    // how many contexts run simultaneously.
    EpisodeBatch collect_rollouts();

    UpdateStats update(const EpisodeBatch& batch);

    // policy-gradient path; comm=false forces the identity adjacency
    UpdateStats update_pg(const EpisodeBatch& batch, bool comm);
    // critic stage alone: one optimizer step on the blended n-step targets,
    // then fresh counterfactual advantages from the updated critic
    double critic_stage(const EpisodeBatch& batch, AdvantageTable& advantages);
    // actor stage alone, at fixed advantages
    double actor_stage(const EpisodeBatch& batch, const AdvantageTable& advantages, bool comm);

    UpdateStats update_iql(const EpisodeBatch& batch);

    EvalMetrics evaluate(int episodes, bool greedy);

    struct EvalRecord {
        long long step;
        EvalMetrics metrics;
        UpdateStats last_update;
        double wall_ms;
    };
    using EvalCallback = std::function<void(const EvalRecord&)>;
    using EpisodeCallback = std::function<void(int episode_index, const EpisodeData&)>;

    // Runs collect/update cycles until total_steps, pausing every eval_period
    // steps for a greedy evaluation pass.
    void run(const EvalCallback& on_eval);

    // Greedy episodes with per-episode reporting (used by the eval and
    // analyze entry points). Seeds are derived from the trainer seed and the
    // episode index only, so runs pair across algorithms.
    void evaluate_episodes(int episodes, bool greedy, const EpisodeCallback& cb);

    double epsilon_now() const;
    const std::deque<EpisodeData>& replay() const { return replay_; }

    // when set, rollouts keep each step's final convolution output
    void set_collect_messages(bool on) { collect_messages_ = on; }

  private:
    struct RolloutResult;
    EpisodeData run_episode(MultiAgentEnv& env, std::uint64_t env_seed, std::uint64_t sample_seed,
                            bool greedy, double epsilon);
    void build_critic_rows(const EpisodeBatch& batch, std::vector<double>& inputs,
                           std::vector<int>& chosen, std::vector<std::vector<int>>& row_of) const;
    nlohmann::json dump_batch(const EpisodeBatch& batch) const;

    TrainConfig cfg_;
    EnvFactory factory_;
    PolicyConfig policy_cfg_;
    std::unique_ptr<CommPolicy> policy_;
    std::unique_ptr<CounterfactualCritic> critic_;
    std::unique_ptr<CommPolicy> target_policy_;  // value-based ablation only
    RmsPropState policy_opt_;
    RmsPropState critic_opt_;
    std::vector<std::unique_ptr<MultiAgentEnv>> envs_;
    std::deque<EpisodeData> replay_;
    long long steps_done_ = 0;
    long long updates_done_ = 0;
    std::uint64_t rollout_counter_ = 0;
    bool collect_messages_ = false;
    UpdateStats last_stats_;
};

}  // namespace ccoma
