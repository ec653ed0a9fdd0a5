#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ccoma/optim.hpp"
#include "ccoma/rng.hpp"
#include "ccoma/tensor.hpp"

// Centralized critic: a feed-forward network that, for one agent at one
// timestep, maps (true state, the other agents' one-hot actions, the agent's
// one-hot identity, the agent's observation) to one action value per
// candidate action of that agent. Holding teammates' actions fixed while
// sweeping the agent's own action is what makes the advantage counterfactual.

namespace ccoma {

struct CriticConfig {
    int state_dim = 0;
    int obs_dim = 0;
    int n_slots = 0;
    int n_actions = 0;
    int hidden = 128;

    int input_dim() const { return state_dim + (n_slots - 1) * n_actions + n_slots + obs_dim; }
};

class CounterfactualCritic {
  public:
    CounterfactualCritic(CriticConfig cfg, std::uint64_t init_seed);

    const CriticConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    void copy_params_from(const CounterfactualCritic& other);

    // inputs: [m x input_dim]; returns [m x n_actions]
    Value forward(Tape& t, const Value& inputs) const;

    // Writes one input row. actions holds every slot's action (-1 for
    // inactive slots, which contribute zero action blocks); the agent's own
    // action is excluded from the row by construction.
    void build_input_row(std::span<double> out, std::span<const double> state,
                         std::span<const int> actions, int agent,
                         std::span<const double> agent_obs) const;

  private:
    CriticConfig cfg_;
    ParamStore params_;
    Value w1_, b1_, w2_, b2_, w3_, b3_;
};

// A^n = Q[a] - sum_a' pi(a') Q[a']; pi must sum to 1 within 1e-5
double counterfactual_advantage(std::span<const double> q, std::span<const double> pi, int action);

// Backward recursion for the blended n-step targets:
//   G_t = r_{t+1} + gamma * ((1-lambda) * Q_{t+1} + lambda * G_{t+1})
// rewards[t] = r_{t+1}; bootstrap_q[t] = Q(s_{t+1}, a_{t+1}).
// The final step bootstraps with 0 when terminal, else with bootstrap_q.back().
std::vector<double> td_lambda_targets(std::span<const double> rewards,
                                      std::span<const double> bootstrap_q, double gamma,
                                      double lambda, bool terminal);

// mean squared error between chosen-action values and constant targets
Value critic_loss(Tape& t, const Value& q, const std::vector<int>& chosen,
                  const std::vector<double>& targets);

// -(1/episodes) * sum_rows log dist[row, chosen[row]] * advantage[row];
// advantages are constants, so no gradient flows through them.
Value actor_loss(Tape& t, const Value& dist, const std::vector<int>& chosen,
                 const std::vector<double>& advantages, int episodes);

}  // namespace ccoma
