#include "ccoma/critic.hpp"

#include <cmath>
#include <stdexcept>

namespace ccoma {

CounterfactualCritic::CounterfactualCritic(CriticConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
    if (cfg_.state_dim < 0 || cfg_.obs_dim <= 0 || cfg_.n_slots <= 0 || cfg_.n_actions <= 0)
        throw std::invalid_argument("CounterfactualCritic: invalid configuration");
    Rng rng(init_seed);
    const int in = cfg_.input_dim(), h = cfg_.hidden;
    w1_ = params_.add("critic/fc1/w", zeros({in, h}));
    b1_ = params_.add("critic/fc1/b", zeros({h}));
    w2_ = params_.add("critic/fc2/w", zeros({h, h}));
    b2_ = params_.add("critic/fc2/b", zeros({h}));
    w3_ = params_.add("critic/out/w", zeros({h, cfg_.n_actions}));
    b3_ = params_.add("critic/out/b", zeros({cfg_.n_actions}));
    init_linear(*w1_, rng, in);
    init_linear(*w2_, rng, h);
    init_linear(*w3_, rng, h);
}

void CounterfactualCritic::copy_params_from(const CounterfactualCritic& other) {
    if (other.params_.items.size() != params_.items.size())
        throw std::invalid_argument("copy_params_from: parameter collections differ");
    for (std::size_t i = 0; i < params_.items.size(); ++i)
        params_.items[i].second->data = other.params_.items[i].second->data;
}

Value CounterfactualCritic::forward(Tape& t, const Value& inputs) const {
    if (inputs->dims.size() != 2 || inputs->dims[1] != cfg_.input_dim())
        throw std::invalid_argument("critic forward: expected [m x " +
                                    std::to_string(cfg_.input_dim()) + "], got " +
                                    shape_str(inputs->dims));
    Value h1 = t.relu(t.add(t.matmul(inputs, w1_), b1_));
    Value h2 = t.relu(t.add(t.matmul(h1, w2_), b2_));
    return t.add(t.matmul(h2, w3_), b3_);
}

void CounterfactualCritic::build_input_row(std::span<double> out, std::span<const double> state,
                                           std::span<const int> actions, int agent,
                                           std::span<const double> agent_obs) const {
    if (out.size() != static_cast<std::size_t>(cfg_.input_dim()))
        throw std::invalid_argument("build_input_row: bad output size");
    if (state.size() != static_cast<std::size_t>(cfg_.state_dim) ||
        actions.size() != static_cast<std::size_t>(cfg_.n_slots) ||
        agent_obs.size() != static_cast<std::size_t>(cfg_.obs_dim) || agent < 0 ||
        agent >= cfg_.n_slots)
        throw std::invalid_argument("build_input_row: input sizes do not match configuration");
    std::size_t k = 0;
    for (double v : state) out[k++] = v;
    for (int s = 0; s < cfg_.n_slots; ++s) {
        if (s == agent) continue;
        for (int a = 0; a < cfg_.n_actions; ++a) out[k++] = actions[s] == a ? 1.0 : 0.0;
    }
    for (int s = 0; s < cfg_.n_slots; ++s) out[k++] = s == agent ? 1.0 : 0.0;
    for (double v : agent_obs) out[k++] = v;
}

double counterfactual_advantage(std::span<const double> q, std::span<const double> pi, int action) {
    if (q.size() != pi.size())
        throw std::invalid_argument("counterfactual_advantage: q has " + std::to_string(q.size()) +
                                    " entries, pi has " + std::to_string(pi.size()));
    if (action < 0 || static_cast<std::size_t>(action) >= q.size())
        throw std::invalid_argument("counterfactual_advantage: action out of range");
    double psum = 0.0, baseline = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        psum += pi[i];
        baseline += pi[i] * q[i];
    }
    if (std::abs(psum - 1.0) > 1e-5)
        throw std::invalid_argument("counterfactual_advantage: pi sums to " + std::to_string(psum));
    return q[static_cast<std::size_t>(action)] - baseline;
}

std::vector<double> td_lambda_targets(std::span<const double> rewards,
                                      std::span<const double> bootstrap_q, double gamma,
                                      double lambda, bool terminal) {
    const std::size_t n = rewards.size();
    if (n == 0) throw std::invalid_argument("td_lambda_targets: empty episode");
    if (bootstrap_q.size() != n)
        throw std::invalid_argument("td_lambda_targets: " + std::to_string(n) + " rewards vs " +
                                    std::to_string(bootstrap_q.size()) + " bootstrap values");
    std::vector<double> y(n);
    double g = rewards[n - 1] + gamma * (terminal ? 0.0 : bootstrap_q[n - 1]);
    y[n - 1] = g;
    for (std::size_t t = n - 1; t-- > 0;) {
        g = rewards[t] + gamma * ((1.0 - lambda) * bootstrap_q[t] + lambda * g);
        y[t] = g;
    }
    return y;
}

Value critic_loss(Tape& t, const Value& q, const std::vector<int>& chosen,
                  const std::vector<double>& targets) {
    const int m = q->dims[0], a = q->dims[1];
    if (chosen.size() != static_cast<std::size_t>(m) || targets.size() != static_cast<std::size_t>(m))
        throw std::invalid_argument("critic_loss: row count mismatch");
    Value onehot = zeros({m, a});
    for (int i = 0; i < m; ++i) {
        if (chosen[static_cast<std::size_t>(i)] < 0 || chosen[static_cast<std::size_t>(i)] >= a)
            throw std::invalid_argument("critic_loss: chosen action out of range at row " +
                                        std::to_string(i));
        onehot->data[static_cast<std::size_t>(i) * a + chosen[static_cast<std::size_t>(i)]] = 1.0;
    }
    Value pred = t.sum_axis(t.mul(q, onehot), 1);
    Value diff = t.sub(pred, make_tensor({m}, targets));
    return t.mean_all(t.mul(diff, diff));
}

Value actor_loss(Tape& t, const Value& dist, const std::vector<int>& chosen,
                 const std::vector<double>& advantages, int episodes) {
    const int m = dist->dims[0], a = dist->dims[1];
    if (chosen.size() != static_cast<std::size_t>(m) ||
        advantages.size() != static_cast<std::size_t>(m))
        throw std::invalid_argument("actor_loss: row count mismatch");
    for (double adv : advantages)
        if (!std::isfinite(adv))
            throw std::invalid_argument("actor_loss: non-finite advantage");
    Value onehot = zeros({m, a});
    for (int i = 0; i < m; ++i)
        onehot->data[static_cast<std::size_t>(i) * a + chosen[static_cast<std::size_t>(i)]] = 1.0;
    Value chosen_p = t.sum_axis(t.mul(dist, onehot), 1);
    Value weighted = t.mul(t.log(chosen_p), make_tensor({m}, advantages));
    return t.scale(t.sum_all(weighted), -1.0 / episodes);
}

}  // namespace ccoma
