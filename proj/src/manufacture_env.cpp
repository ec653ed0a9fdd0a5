#include "ccoma/envs/manufacture.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ccoma::manufacture {

int curriculum_level(long long training_step, long long window) {
    if (training_step < 0) throw std::invalid_argument("curriculum_level: negative step");
    const long long level = 2 * (training_step / window);
    return static_cast<int>(std::min<long long>(level, kMachines));
}

ManufactureEnv::ManufactureEnv(Config cfg) : cfg_(cfg) {
    if (cfg_.horizon <= 0 || cfg_.n_product <= 0)
        throw std::invalid_argument("ManufactureEnv: horizon and n_product must be positive");
    if (cfg_.c_op < 0 || cfg_.c_op_stop < 0 || cfg_.c_maint < 0 || cfg_.c_broke < 0)
        throw std::invalid_argument("ManufactureEnv: costs must be non-negative");
}

double ManufactureEnv::sample_gamma(double mean) {
    std::gamma_distribution<double> d(mean / cfg_.gamma_scale, cfg_.gamma_scale);
    return d(rng_);
}

double ManufactureEnv::state_mean(int health) const {
    switch (health) {
        case kPreMature: return cfg_.mean_premature;
        case kMature: return cfg_.mean_mature;
        case kSlightlyWorn: return cfg_.mean_slightly_worn;
        default: throw std::logic_error("state_mean: severely-worn has no duration");
    }
}

void ManufactureEnv::set_curriculum(int level) {
    if (level < 0 || level > kMachines || level % 2 != 0)
        throw std::invalid_argument("ManufactureEnv: curriculum level must be 0, 2, 4 or 6");
    n_randomized_ = level;
}

EnvStep ManufactureEnv::reset(std::uint64_t seed) {
    rng_.seed(seed);
    t_ = 0;
    buffer_ = 0.0;

    std::array<int, kMachines> order;
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    std::array<bool, kMachines> randomized{};
    for (int i = 0; i < n_randomized_; ++i) randomized[static_cast<std::size_t>(order[i])] = true;

    std::uniform_int_distribution<int> health_pick(0, 3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int m = 0; m < kMachines; ++m) {
        Machine& mc = machines_[static_cast<std::size_t>(m)];
        mc = Machine{};
        if (randomized[static_cast<std::size_t>(m)]) {
            mc.health = health_pick(rng_);
            if (mc.health != kSeverelyWorn) {
                mc.state_duration = sample_gamma(state_mean(mc.health));
                mc.time_in_state = unit(rng_) * mc.state_duration;
            }
        } else {
            mc.state_duration = sample_gamma(cfg_.mean_premature);
        }
    }
    return snapshot(0.0, false, nullptr, 0, 0);
}

EnvStep ManufactureEnv::step(const std::vector<int>& actions) {
    if (t_ >= cfg_.horizon) throw std::logic_error("ManufactureEnv::step: episode already finished");
    if (actions.size() != kMachines)
        throw std::invalid_argument("ManufactureEnv::step: expected " + std::to_string(kMachines) +
                                    " actions, got " + std::to_string(actions.size()));
    for (int m = 0; m < kMachines; ++m) {
        const int a = actions[static_cast<std::size_t>(m)];
        if (a != kProduce && a != kStop && a != kMaintain)
            throw std::invalid_argument("ManufactureEnv::step: machine " + std::to_string(m) +
                                        " got action " + std::to_string(a));
        if (machines_[static_cast<std::size_t>(m)].must_maintain() && a != kMaintain)
            throw std::invalid_argument("ManufactureEnv::step: machine " + std::to_string(m) +
                                        " must maintain but chose " + std::to_string(a));
    }

    int n_produce = 0, n_stop = 0, n_maint = 0, breakdowns = 0;

    // intake first: step-2 producers draw from the stock the distributor
    // already holds, allocated greedily by machine index
    double intake = 0.0;
    int completed = 0;
    double remaining = buffer_;
    for (int m = kStepOneMachines; m < kMachines; ++m) {
        if (actions[static_cast<std::size_t>(m)] != kProduce) continue;
        const double take = std::min<double>(cfg_.n_product, remaining);
        remaining -= take;
        intake += take;
        completed += static_cast<int>(take);
    }

    double output = 0.0;
    for (int m = 0; m < kMachines; ++m) {
        Machine& mc = machines_[static_cast<std::size_t>(m)];
        const int a = actions[static_cast<std::size_t>(m)];
        bool wears = false;
        switch (a) {
            case kProduce:
                ++n_produce;
                wears = true;
                if (m < kStepOneMachines) output += cfg_.n_product;
                break;
            case kStop:
                ++n_stop;
                wears = cfg_.wear_while_stopped;
                break;
            case kMaintain:
                ++n_maint;
                if (!mc.under_maintenance()) mc.maint_remaining = sample_gamma(cfg_.mean_maintenance);
                mc.maint_remaining -= 1.0;
                if (mc.maint_remaining <= 0.0) {
                    mc.maint_remaining = 0.0;
                    mc.health = kPreMature;
                    mc.time_in_state = 0.0;
                    mc.state_duration = sample_gamma(cfg_.mean_premature);
                }
                break;
        }
        if (wears && mc.health != kSeverelyWorn) {
            mc.time_in_state += 1.0;
            if (mc.time_in_state >= mc.state_duration) {
                ++mc.health;
                mc.time_in_state = 0.0;
                if (mc.health == kSeverelyWorn) {
                    mc.state_duration = 0.0;
                    ++breakdowns;  // wore out without maintenance in advance
                } else {
                    mc.state_duration = sample_gamma(state_mean(mc.health));
                }
            }
        }
        mc.last_action = a;
    }

    buffer_ = buffer_ - intake + output;

    const double reward = cfg_.p_product * completed - n_produce * cfg_.c_op -
                          n_stop * cfg_.c_op_stop - n_maint * cfg_.c_maint -
                          breakdowns * cfg_.c_broke;
    ++t_;
    return snapshot(reward, t_ >= cfg_.horizon, &actions, completed, breakdowns);
}

EnvStep ManufactureEnv::snapshot(double reward, bool done, const std::vector<int>* actions,
                                 int produced, int breakdowns) {
    EnvStep out;
    out.obs.reserve(static_cast<std::size_t>(kMachines) * obs_dim());
    for (int m = 0; m < kMachines; ++m) {
        const auto row = observe(m);
        out.obs.insert(out.obs.end(), row.begin(), row.end());
    }
    out.adj = AdjacencyMask::identity(kMachines);
    out.adj.timestep = t_;
    for (auto& v : out.adj.m) v = 1.0;  // machines cooperate globally
    out.active.assign(kMachines, 1);
    out.avail.assign(static_cast<std::size_t>(kMachines) * n_actions(), 1.0);
    for (int m = 0; m < kMachines; ++m) {
        if (machines_[static_cast<std::size_t>(m)].must_maintain()) {
            out.avail[static_cast<std::size_t>(m) * 3 + kProduce] = 0.0;
            out.avail[static_cast<std::size_t>(m) * 3 + kStop] = 0.0;
        }
    }
    out.reward = reward;
    out.done = done;
    if (actions != nullptr) {
        nlohmann::json mj = nlohmann::json::array();
        for (int m = 0; m < kMachines; ++m) {
            const Machine& mc = machines_[static_cast<std::size_t>(m)];
            mj.push_back({{"health", mc.health},
                          {"action", (*actions)[static_cast<std::size_t>(m)]},
                          {"maintaining", mc.under_maintenance()}});
        }
        out.trace = {{"step", t_ - 1},     {"machines", mj},       {"buffer", buffer_},
                     {"n_t", produced},    {"breakdowns", breakdowns}, {"reward", reward}};
    }
    return out;
}

std::vector<double> ManufactureEnv::observe(int machine) const {
    const Machine& mc = machines_[static_cast<std::size_t>(machine)];
    std::vector<double> o(static_cast<std::size_t>(obs_dim()), 0.0);
    o[static_cast<std::size_t>(mc.health)] = 1.0;
    o[static_cast<std::size_t>(4 + machine)] = 1.0;
    o[10] = mc.time_in_state / cfg_.time_norm;
    o[static_cast<std::size_t>(11 + mc.last_action)] = 1.0;
    o[14] = mc.under_maintenance() ? 1.0 : 0.0;
    return o;
}

std::vector<double> ManufactureEnv::true_state() const {
    std::vector<double> s;
    s.reserve(static_cast<std::size_t>(state_dim()));
    for (int m = 0; m < kMachines; ++m) {
        const auto o = observe(m);
        s.insert(s.end(), o.begin(), o.end());
    }
    return s;
}

std::string ManufactureEnv::save_state() const {
    std::ostringstream ss;
    ss << "ml v1\n";
    ss << "t " << t_ << " rand " << n_randomized_ << "\n";
    ss << "buffer " << std::hexfloat << buffer_ << "\n";
    for (const auto& mc : machines_)
        ss << mc.health << " " << std::hexfloat << mc.time_in_state << " " << mc.state_duration
           << " " << mc.maint_remaining << " " << mc.last_action << "\n";
    ss << "rng " << engine_state(rng_) << "\n";
    return ss.str();
}

void ManufactureEnv::load_state(const std::string& blob) {
    std::istringstream ss(blob);
    std::string word, v;
    ss >> word >> v;
    if (word != "ml" || v != "v1") throw std::runtime_error("ManufactureEnv: unrecognized state blob");
    ss >> word >> t_ >> word >> n_randomized_;
    ss >> word >> buffer_;
    for (auto& mc : machines_)
        ss >> mc.health >> mc.time_in_state >> mc.state_duration >> mc.maint_remaining >>
            mc.last_action;
    ss >> word;
    if (word != "rng") throw std::runtime_error("ManufactureEnv: malformed state blob");
    ss >> rng_;
    if (ss.fail()) throw std::runtime_error("ManufactureEnv: malformed state blob");
}

}  // namespace ccoma::manufacture
