#include "ccoma/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ccoma/envs/manufacture.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ccoma {

namespace {

constexpr std::uint64_t kStreamPolicyInit = 0x501;
constexpr std::uint64_t kStreamCriticInit = 0x502;
constexpr std::uint64_t kStreamEnvSeeds = 0xE17;
constexpr std::uint64_t kStreamSampling = 0x5A3;
constexpr std::uint64_t kStreamReplay = 0x4E9;
constexpr std::uint64_t kStreamEval = 0xE7A1;

Value ep_obs_value(const EpisodeData& ep, int t, int n_slots, int obs_dim) {
    return make_tensor({n_slots, obs_dim}, ep.obs[static_cast<std::size_t>(t)]);
}

Value ep_avail_value(const EpisodeData& ep, int t, int n_slots, int n_actions) {
    return make_tensor({n_slots, n_actions}, ep.avail[static_cast<std::size_t>(t)]);
}

}  // namespace

Algo algo_from_string(const std::string& s) {
    if (s == "ccoma") return Algo::CCOMA;
    if (s == "coma") return Algo::COMA;
    if (s == "iql_comm") return Algo::IQL_COMM;
    throw std::invalid_argument("unknown algorithm '" + s + "' (ccoma|coma|iql_comm)");
}

std::string algo_to_string(Algo a) {
    switch (a) {
        case Algo::CCOMA: return "ccoma";
        case Algo::COMA: return "coma";
        case Algo::IQL_COMM: return "iql_comm";
    }
    return "?";
}

Trainer::Trainer(TrainConfig cfg, EnvFactory factory, PolicyConfig policy_cfg, int critic_hidden)
    : cfg_(cfg), factory_(std::move(factory)), policy_cfg_(policy_cfg) {
    if (cfg_.batch <= 0) throw std::invalid_argument("Trainer: batch must be positive");
    auto probe = factory_();
    policy_cfg_.n_slots = probe->n_slots();
    policy_cfg_.obs_dim = probe->obs_dim();
    policy_cfg_.n_actions = probe->n_actions();

    policy_ = std::make_unique<CommPolicy>(policy_cfg_, derive_seed(cfg_.seed, kStreamPolicyInit));

    CriticConfig ccfg;
    ccfg.state_dim = probe->state_dim();
    ccfg.obs_dim = probe->obs_dim();
    ccfg.n_slots = probe->n_slots();
    ccfg.n_actions = probe->n_actions();
    ccfg.hidden = critic_hidden;
    critic_ = std::make_unique<CounterfactualCritic>(ccfg, derive_seed(cfg_.seed, kStreamCriticInit));

    if (cfg_.algo == Algo::IQL_COMM) {
        target_policy_ =
            std::make_unique<CommPolicy>(policy_cfg_, derive_seed(cfg_.seed, kStreamPolicyInit));
        target_policy_->copy_params_from(*policy_);
    }

    policy_opt_ = RmsPropState{cfg_.lr, cfg_.rms_alpha, cfg_.rms_eps, {}};
    policy_opt_.init(policy_->params());
    critic_opt_ = RmsPropState{cfg_.lr, cfg_.rms_alpha, cfg_.rms_eps, {}};
    critic_opt_.init(critic_->params());

    envs_.push_back(std::move(probe));
    for (int i = 1; i < cfg_.batch; ++i) envs_.push_back(factory_());
}

std::string Trainer::rng_state() const {
    return "steps=" + std::to_string(steps_done_) + " updates=" + std::to_string(updates_done_) +
           " rollouts=" + std::to_string(rollout_counter_);
}

double Trainer::epsilon_now() const {
    if (cfg_.epsilon_anneal_steps <= 0) return cfg_.epsilon_end;
    const double frac = std::min(1.0, static_cast<double>(steps_done_) /
                                          static_cast<double>(cfg_.epsilon_anneal_steps));
    return cfg_.epsilon_start + frac * (cfg_.epsilon_end - cfg_.epsilon_start);
}

EpisodeData Trainer::run_episode(MultiAgentEnv& env, std::uint64_t env_seed,
                                 std::uint64_t sample_seed, bool greedy, double epsilon) {
    const int n = policy_cfg_.n_slots;
    const int n_act = policy_cfg_.n_actions;
    const bool comm = cfg_.algo != Algo::COMA;
    const AdjacencyMask identity = AdjacencyMask::identity(n);

    EpisodeData ep;
    Rng srng(sample_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    EnvStep s = env.reset(env_seed);
    Value rnn = policy_->initial_state();

    while (true) {
        const AdjacencyMask& adj = comm ? s.adj : identity;
        Tape tape(false);
        Value obs = make_tensor({n, policy_cfg_.obs_dim}, s.obs);
        Value avail = make_tensor({n, n_act}, s.avail);
        auto fwd = policy_->forward(tape, obs, policy_->mask_value(adj), avail, rnn);
        rnn = fwd.hidden;

        std::vector<int> actions(static_cast<std::size_t>(n), -1);
        for (int slot = 0; slot < n; ++slot) {
            if (!s.active[static_cast<std::size_t>(slot)]) continue;
            std::span<const double> row{fwd.dist->data.data() + static_cast<std::size_t>(slot) * n_act,
                                        static_cast<std::size_t>(n_act)};
            if (cfg_.algo == Algo::IQL_COMM && !greedy) {
                if (unit(srng) < epsilon) {
                    // uniform over available actions
                    int avail_count = 0;
                    for (int a = 0; a < n_act; ++a)
                        if (s.avail[static_cast<std::size_t>(slot) * n_act + a] != 0.0) ++avail_count;
                    std::uniform_int_distribution<int> pick(0, avail_count - 1);
                    int k = pick(srng);
                    for (int a = 0; a < n_act; ++a) {
                        if (s.avail[static_cast<std::size_t>(slot) * n_act + a] == 0.0) continue;
                        if (k-- == 0) {
                            actions[static_cast<std::size_t>(slot)] = a;
                            break;
                        }
                    }
                } else {
                    actions[static_cast<std::size_t>(slot)] = greedy_action(row);
                }
            } else if (greedy) {
                actions[static_cast<std::size_t>(slot)] = greedy_action(row);
            } else {
                actions[static_cast<std::size_t>(slot)] = sample_action(row, srng);
            }
        }

        ep.obs.push_back(s.obs);
        ep.state.push_back(env.true_state());
        ep.adj.push_back(adj);
        ep.active.push_back(s.active);
        ep.avail.push_back(s.avail);
        ep.actions.push_back(actions);
        ep.dists.push_back(fwd.dist->data);
        if (collect_messages_) ep.messages.push_back(fwd.messages->data);

        EnvStep next = env.step(actions);
        ep.rewards.push_back(next.reward);
        ep.traces.push_back(next.trace);
        ep.episode_return += next.reward;
        if (next.done) break;
        s = std::move(next);
    }
    ep.success = env.episode_success();
    return ep;
}

EpisodeBatch Trainer::collect_rollouts() {
    const int b = cfg_.batch;
    const int level = manufacture::curriculum_level(steps_done_, cfg_.curriculum_window);
    EpisodeBatch batch(static_cast<std::size_t>(b));
    std::vector<std::uint64_t> env_seeds(static_cast<std::size_t>(b));
    std::vector<std::uint64_t> sample_seeds(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        env_seeds[static_cast<std::size_t>(i)] =
            derive_seed(derive_seed(cfg_.seed, kStreamEnvSeeds), rollout_counter_ + i);
        sample_seeds[static_cast<std::size_t>(i)] =
            derive_seed(derive_seed(cfg_.seed, kStreamSampling), rollout_counter_ + i);
    }
    rollout_counter_ += static_cast<std::uint64_t>(b);
    const double eps = epsilon_now();

    std::exception_ptr err;
#pragma omp parallel for schedule(static, 1)
    for (int i = 0; i < b; ++i) {
        try {
            envs_[static_cast<std::size_t>(i)]->set_curriculum(level);
            batch[static_cast<std::size_t>(i)] =
                run_episode(*envs_[static_cast<std::size_t>(i)], env_seeds[static_cast<std::size_t>(i)],
                            sample_seeds[static_cast<std::size_t>(i)], false, eps);
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);

    for (const auto& ep : batch) steps_done_ += ep.length();
    return batch;
}

void Trainer::build_critic_rows(const EpisodeBatch& batch, std::vector<double>& inputs,
                                std::vector<int>& chosen,
                                std::vector<std::vector<int>>& row_of) const {
    const auto& ccfg = critic_->config();
    const int n = ccfg.n_slots;
    const int in_dim = ccfg.input_dim();
    inputs.clear();
    chosen.clear();
    row_of.assign(batch.size(), {});
    int rows = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const EpisodeData& ep = batch[b];
        row_of[b].assign(static_cast<std::size_t>(ep.length()) * n, -1);
        for (int t = 0; t < ep.length(); ++t) {
            for (int slot = 0; slot < n; ++slot) {
                if (!ep.active[static_cast<std::size_t>(t)][static_cast<std::size_t>(slot)]) continue;
                row_of[b][static_cast<std::size_t>(t) * n + slot] = rows++;
                inputs.resize(static_cast<std::size_t>(rows) * in_dim);
                std::span<double> out{inputs.data() + static_cast<std::size_t>(rows - 1) * in_dim,
                                      static_cast<std::size_t>(in_dim)};
                std::span<const double> obs_row{
                    ep.obs[static_cast<std::size_t>(t)].data() +
                        static_cast<std::size_t>(slot) * ccfg.obs_dim,
                    static_cast<std::size_t>(ccfg.obs_dim)};
                critic_->build_input_row(out, ep.state[static_cast<std::size_t>(t)],
                                         ep.actions[static_cast<std::size_t>(t)], slot, obs_row);
                chosen.push_back(ep.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(slot)]);
            }
        }
    }
}

double Trainer::critic_stage(const EpisodeBatch& batch, AdvantageTable& advantages) {
    const auto& ccfg = critic_->config();
    const int n = ccfg.n_slots;
    const int n_act = ccfg.n_actions;

    advantages.assign(batch.size(), {});
    for (std::size_t b = 0; b < batch.size(); ++b)
        advantages[b].assign(static_cast<std::size_t>(batch[b].length()) * n, 0.0);

    std::vector<double> inputs;
    std::vector<int> chosen;
    std::vector<std::vector<int>> row_of;
    build_critic_rows(batch, inputs, chosen, row_of);
    const int rows = static_cast<int>(chosen.size());
    if (rows == 0) return 0.0;  // nothing active anywhere in the batch

    Tape tape(true);
    Value in = make_tensor({rows, ccfg.input_dim()}, inputs);
    Value q = critic_->forward(tape, in);

    // Blended n-step targets per (episode, slot). When the slot is inactive
    // at t+1 there is no usable bootstrap value, so the recursion falls back
    // to the recursive return itself; for slots active throughout this is
    // exactly the td_lambda_targets recursion with a terminal bootstrap.
    std::vector<double> targets(static_cast<std::size_t>(rows), 0.0);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const EpisodeData& ep = batch[b];
        const int len = ep.length();
        for (int slot = 0; slot < n; ++slot) {
            double g_next = 0.0;
            for (int t = len - 1; t >= 0; --t) {
                double q_next = g_next;
                if (t + 1 < len) {
                    const int r_next = row_of[b][static_cast<std::size_t>(t + 1) * n + slot];
                    if (r_next >= 0) {
                        const int a_next =
                            ep.actions[static_cast<std::size_t>(t + 1)][static_cast<std::size_t>(slot)];
                        q_next = q->data[static_cast<std::size_t>(r_next) * n_act + a_next];
                    }
                }
                const double g = ep.rewards[static_cast<std::size_t>(t)] +
                                 cfg_.gamma * ((1.0 - cfg_.lambda) * q_next + cfg_.lambda * g_next);
                const int row = row_of[b][static_cast<std::size_t>(t) * n + slot];
                if (row >= 0) targets[static_cast<std::size_t>(row)] = g;
                g_next = g;
            }
        }
    }

    Value loss = critic_loss(tape, q, chosen, targets);
    const double loss_v = loss->scalar();
    if (!std::isfinite(loss_v))
        throw NumericalError("critic loss is not finite", dump_batch(batch));
    tape.backward(loss);
    for (auto& [name, p] : critic_->params().items) {
        p->ensure_grad();
        auto g = tape.grad(p);
        if (g.empty())
            p->zero_grad();
        else
            std::copy(g.begin(), g.end(), p->grad.begin());
    }
    clip_global_norm(critic_->params(), cfg_.grad_clip);
    rmsprop_step(critic_->params(), critic_opt_);

    // counterfactual advantages from the updated critic
    Tape eval_tape(false);
    Value q2 = critic_->forward(eval_tape, in);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const EpisodeData& ep = batch[b];
        for (int t = 0; t < ep.length(); ++t) {
            for (int slot = 0; slot < n; ++slot) {
                const int row = row_of[b][static_cast<std::size_t>(t) * n + slot];
                if (row < 0) continue;
                std::span<const double> q_row{q2->data.data() + static_cast<std::size_t>(row) * n_act,
                                              static_cast<std::size_t>(n_act)};
                std::span<const double> pi_row{
                    ep.dists[static_cast<std::size_t>(t)].data() +
                        static_cast<std::size_t>(slot) * n_act,
                    static_cast<std::size_t>(n_act)};
                const int act = ep.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(slot)];
                const double adv = counterfactual_advantage(q_row, pi_row, act);
                if (!std::isfinite(adv))
                    throw NumericalError("advantage is not finite", dump_batch(batch));
                advantages[b][static_cast<std::size_t>(t) * n + slot] = adv;
            }
        }
    }

    if (cfg_.advantage_norm) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b)
            for (double a : advantages[b]) {
                sum += a;
                sq += a * a;
            }
        const double count = static_cast<double>(rows);
        const double mean = sum / count;
        const double sd = std::sqrt(std::max(1e-12, sq / count - mean * mean));
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const EpisodeData& ep = batch[b];
            for (int t = 0; t < ep.length(); ++t)
                for (int slot = 0; slot < n; ++slot)
                    if (row_of[b][static_cast<std::size_t>(t) * n + slot] >= 0)
                        advantages[b][static_cast<std::size_t>(t) * n + slot] =
                            (advantages[b][static_cast<std::size_t>(t) * n + slot] - mean) / sd;
        }
    }
    return loss_v;
}

double Trainer::actor_stage(const EpisodeBatch& batch, const AdvantageTable& advantages, bool comm) {
    const int n = policy_cfg_.n_slots;
    const int n_act = policy_cfg_.n_actions;
    const int b_count = static_cast<int>(batch.size());
    const AdjacencyMask identity = AdjacencyMask::identity(n);

    auto& params = policy_->params().items;
    std::vector<std::vector<std::vector<double>>> ep_grads(
        static_cast<std::size_t>(b_count), std::vector<std::vector<double>>(params.size()));
    std::vector<double> ep_losses(static_cast<std::size_t>(b_count), 0.0);

    std::exception_ptr err;
#pragma omp parallel for schedule(static, 1)
    for (int b = 0; b < b_count; ++b) {
        try {
            const EpisodeData& ep = batch[static_cast<std::size_t>(b)];
            Tape tape(true);
            Value rnn = policy_->initial_state();
            std::vector<Value> dists;
            dists.reserve(static_cast<std::size_t>(ep.length()));
            for (int t = 0; t < ep.length(); ++t) {
                const AdjacencyMask& adj = comm ? ep.adj[static_cast<std::size_t>(t)] : identity;
                auto fwd = policy_->forward(tape, ep_obs_value(ep, t, n, policy_cfg_.obs_dim),
                                            policy_->mask_value(adj),
                                            ep_avail_value(ep, t, n, n_act), rnn);
                dists.push_back(fwd.dist);
                rnn = fwd.hidden;
            }
            Value all = dists.size() == 1 ? dists[0] : tape.concat(dists, 0);

            std::vector<int> active_rows, act;
            std::vector<double> adv;
            for (int t = 0; t < ep.length(); ++t)
                for (int slot = 0; slot < n; ++slot)
                    if (ep.active[static_cast<std::size_t>(t)][static_cast<std::size_t>(slot)]) {
                        active_rows.push_back(t * n + slot);
                        act.push_back(ep.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(slot)]);
                        adv.push_back(
                            advantages[static_cast<std::size_t>(b)][static_cast<std::size_t>(t) * n + slot]);
                    }
            if (active_rows.empty()) continue;

            Value gathered = tape.gather_rows(all, active_rows);
            Value loss = actor_loss(tape, gathered, act, adv, b_count);
            if (cfg_.entropy_coef != 0.0) {
                // sum_i p_i log p_i over available actions; masked entries add
                // exactly zero because log(p + 1 - avail) is 0 there
                Value avail_g = tape.gather_rows(
                    [&] {
                        std::vector<double> flat;
                        flat.reserve(static_cast<std::size_t>(ep.length() * n * n_act));
                        for (int t = 0; t < ep.length(); ++t)
                            flat.insert(flat.end(), ep.avail[static_cast<std::size_t>(t)].begin(),
                                        ep.avail[static_cast<std::size_t>(t)].end());
                        return make_tensor({ep.length() * n, n_act}, std::move(flat));
                    }(),
                    active_rows);
                Value one = make_tensor({static_cast<int>(active_rows.size()), n_act},
                                        std::vector<double>(active_rows.size() * n_act, 1.0));
                Value safe = tape.add(gathered, tape.sub(one, avail_g));
                Value neg_ent = tape.sum_all(tape.mul(gathered, tape.log(safe)));
                loss = tape.add(loss, tape.scale(neg_ent, cfg_.entropy_coef / b_count));
            }
            ep_losses[static_cast<std::size_t>(b)] = loss->scalar();
            tape.backward(loss);
            for (std::size_t pi = 0; pi < params.size(); ++pi) {
                auto g = tape.grad(params[pi].second);
                if (!g.empty())
                    ep_grads[static_cast<std::size_t>(b)][pi].assign(g.begin(), g.end());
            }
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);

    double total_loss = 0.0;
    for (double l : ep_losses) total_loss += l;
    if (!std::isfinite(total_loss))
        throw NumericalError("actor loss is not finite", dump_batch(batch));

    // deterministic reduction: episodes accumulate in index order
    for (auto& [name, p] : params) p->zero_grad();
    for (int b = 0; b < b_count; ++b)
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            const auto& g = ep_grads[static_cast<std::size_t>(b)][pi];
            if (g.empty()) continue;
            auto& dst = params[pi].second->grad;
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
    clip_global_norm(policy_->params(), cfg_.grad_clip);
    rmsprop_step(policy_->params(), policy_opt_);
    return total_loss;
}

UpdateStats Trainer::update_pg(const EpisodeBatch& batch, bool comm) {
    UpdateStats stats;
    AdvantageTable advantages;
    stats.critic_loss = critic_stage(batch, advantages);
    stats.actor_loss = actor_stage(batch, advantages, comm);
    stats.updates = ++updates_done_;
    last_stats_ = stats;
    return stats;
}

UpdateStats Trainer::update_iql(const EpisodeBatch& batch) {
    const int n = policy_cfg_.n_slots;
    const int n_act = policy_cfg_.n_actions;

    for (const auto& ep : batch) {
        EpisodeData stored = ep;
        stored.traces.clear();
        stored.dists.clear();
        stored.state.clear();
        replay_.push_back(std::move(stored));
        while (static_cast<int>(replay_.size()) > cfg_.replay_capacity) replay_.pop_front();
    }
    if (replay_.empty()) throw std::logic_error("update_iql: replay store is empty");

    Rng rng(derive_seed(derive_seed(cfg_.seed, kStreamReplay), static_cast<std::uint64_t>(updates_done_)));
    std::uniform_int_distribution<int> pick(0, static_cast<int>(replay_.size()) - 1);
    const int k = cfg_.replay_minibatch;
    std::vector<const EpisodeData*> chosen_eps;
    for (int i = 0; i < k; ++i) chosen_eps.push_back(&replay_[static_cast<std::size_t>(pick(rng))]);

    auto& params = policy_->params().items;
    std::vector<std::vector<std::vector<double>>> ep_grads(
        static_cast<std::size_t>(k), std::vector<std::vector<double>>(params.size()));
    std::vector<double> ep_losses(static_cast<std::size_t>(k), 0.0);

    std::exception_ptr err;
#pragma omp parallel for schedule(static, 1)
    for (int e = 0; e < k; ++e) {
        try {
            const EpisodeData& ep = *chosen_eps[static_cast<std::size_t>(e)];
            const int len = ep.length();

            // target values, no gradient
            Tape tt(false);
            Value trnn = target_policy_->initial_state();
            std::vector<std::vector<double>> tq(static_cast<std::size_t>(len));
            for (int t = 0; t < len; ++t) {
                auto f = target_policy_->forward_features(
                    tt, ep_obs_value(ep, t, n, policy_cfg_.obs_dim),
                    target_policy_->mask_value(ep.adj[static_cast<std::size_t>(t)]), trnn);
                tq[static_cast<std::size_t>(t)] = target_policy_->head_outputs(tt, f.hidden)->data;
                trnn = f.hidden;
            }

            Tape tape(true);
            Value rnn = policy_->initial_state();
            std::vector<Value> qs;
            for (int t = 0; t < len; ++t) {
                auto f = policy_->forward_features(tape, ep_obs_value(ep, t, n, policy_cfg_.obs_dim),
                                                   policy_->mask_value(ep.adj[static_cast<std::size_t>(t)]),
                                                   rnn);
                qs.push_back(policy_->head_outputs(tape, f.hidden));
                rnn = f.hidden;
            }
            Value all = qs.size() == 1 ? qs[0] : tape.concat(qs, 0);

            std::vector<int> rows, act;
            std::vector<double> targets;
            for (int t = 0; t < len; ++t) {
                for (int slot = 0; slot < n; ++slot) {
                    if (!ep.active[static_cast<std::size_t>(t)][static_cast<std::size_t>(slot)]) continue;
                    rows.push_back(t * n + slot);
                    act.push_back(ep.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(slot)]);
                    double boot = 0.0;
                    if (t + 1 < len &&
                        ep.active[static_cast<std::size_t>(t + 1)][static_cast<std::size_t>(slot)]) {
                        // max over actions available to the slot at t+1
                        double best = -HUGE_VAL;
                        for (int a = 0; a < n_act; ++a) {
                            if (ep.avail[static_cast<std::size_t>(t + 1)]
                                        [static_cast<std::size_t>(slot) * n_act + a] == 0.0)
                                continue;
                            best = std::max(best,
                                            tq[static_cast<std::size_t>(t + 1)]
                                              [static_cast<std::size_t>(slot) * n_act + a]);
                        }
                        boot = best;
                    }
                    targets.push_back(ep.rewards[static_cast<std::size_t>(t)] + cfg_.gamma * boot);
                }
            }
            if (rows.empty()) continue;
            Value gathered = tape.gather_rows(all, rows);
            Value loss = tape.scale(critic_loss(tape, gathered, act, targets), 1.0 / k);
            ep_losses[static_cast<std::size_t>(e)] = loss->scalar();
            tape.backward(loss);
            for (std::size_t pi = 0; pi < params.size(); ++pi) {
                auto g = tape.grad(params[pi].second);
                if (!g.empty())
                    ep_grads[static_cast<std::size_t>(e)][pi].assign(g.begin(), g.end());
            }
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);

    double total = 0.0;
    for (double l : ep_losses) total += l;
    if (!std::isfinite(total)) throw NumericalError("td loss is not finite", dump_batch(batch));

    for (auto& [name, p] : params) p->zero_grad();
    for (int e = 0; e < k; ++e)
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            const auto& g = ep_grads[static_cast<std::size_t>(e)][pi];
            if (g.empty()) continue;
            auto& dst = params[pi].second->grad;
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
    clip_global_norm(policy_->params(), cfg_.grad_clip);
    rmsprop_step(policy_->params(), policy_opt_);

    UpdateStats stats;
    stats.critic_loss = total;
    stats.updates = ++updates_done_;
    if (cfg_.target_sync > 0 && updates_done_ % cfg_.target_sync == 0)
        target_policy_->copy_params_from(*policy_);
    last_stats_ = stats;
    return stats;
}

UpdateStats Trainer::update(const EpisodeBatch& batch) {
    switch (cfg_.algo) {
        case Algo::CCOMA: return update_pg(batch, true);
        case Algo::COMA: return update_pg(batch, false);
        case Algo::IQL_COMM: return update_iql(batch);
    }
    throw std::logic_error("update: unhandled algorithm");
}

void Trainer::evaluate_episodes(int episodes, bool greedy, const EpisodeCallback& cb) {
    std::vector<EpisodeData> results(static_cast<std::size_t>(episodes));
    const int level = manufacture::curriculum_level(steps_done_, cfg_.curriculum_window);
    std::exception_ptr err;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < episodes; ++i) {
        try {
            auto env = factory_();
            env->set_curriculum(level);
            const std::uint64_t env_seed =
                derive_seed(derive_seed(cfg_.seed, kStreamEval), static_cast<std::uint64_t>(i));
            const std::uint64_t sample_seed =
                derive_seed(derive_seed(cfg_.seed, kStreamEval + 1), static_cast<std::uint64_t>(i));
            results[static_cast<std::size_t>(i)] = run_episode(*env, env_seed, sample_seed, greedy, 0.0);
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);
    for (int i = 0; i < episodes; ++i) cb(i, results[static_cast<std::size_t>(i)]);
}

EvalMetrics Trainer::evaluate(int episodes, bool greedy) {
    EvalMetrics m;
    m.episodes = episodes;
    int successes = 0, success_known = 0;
    evaluate_episodes(episodes, greedy, [&](int, const EpisodeData& ep) {
        m.mean_return += ep.episode_return;
        if (ep.success.has_value()) {
            ++success_known;
            if (*ep.success) ++successes;
        }
    });
    if (episodes > 0) m.mean_return /= episodes;
    if (success_known > 0)
        m.success_rate = static_cast<double>(successes) / static_cast<double>(success_known);
    return m;
}

void Trainer::run(const EvalCallback& on_eval) {
    long long next_mark = cfg_.eval_period;
    while (steps_done_ < cfg_.total_steps) {
        EpisodeBatch batch = collect_rollouts();
        update(batch);
        if (steps_done_ >= next_mark) {
            const auto t0 = std::chrono::steady_clock::now();
            EvalMetrics m = evaluate(cfg_.eval_episodes, true);
            const auto t1 = std::chrono::steady_clock::now();
            EvalRecord rec{steps_done_, m, last_stats_,
                           std::chrono::duration<double, std::milli>(t1 - t0).count()};
            on_eval(rec);
            next_mark = (steps_done_ / cfg_.eval_period + 1) * cfg_.eval_period;
        }
    }
}

nlohmann::json Trainer::dump_batch(const EpisodeBatch& batch) const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& ep : batch) {
        nlohmann::json e;
        e["rewards"] = ep.rewards;
        e["actions"] = ep.actions;
        e["return"] = ep.episode_return;
        out.push_back(std::move(e));
    }
    return {{"algo", algo_to_string(cfg_.algo)}, {"steps_done", steps_done_}, {"episodes", out}};
}

}  // namespace ccoma
