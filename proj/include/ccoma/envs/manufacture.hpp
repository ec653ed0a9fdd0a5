#pragma once

#include <array>
#include <string>

#include "ccoma/env.hpp"
#include "ccoma/rng.hpp"

// Two-step manufacturing line: machines 0-2 perform step 1, machines 3-5
// perform step 2, with an unbounded distributor buffer in between. Health
// states wear through gamma-distributed durations while a machine runs;
// reaching severely-worn without maintenance costs a breakdown fee and locks
// the machine to the maintenance action.

namespace ccoma::manufacture {

inline constexpr int kMachines = 6;
inline constexpr int kStepOneMachines = 3;

enum Health { kPreMature = 0, kMature = 1, kSlightlyWorn = 2, kSeverelyWorn = 3 };
enum Action { kProduce = 0, kStop = 1, kMaintain = 2 };

struct Config {
    double p_product = 10.0;
    int n_product = 1;
    double c_op = 1.0;
    double c_op_stop = 0.25;
    double c_maint = 5.0;
    double c_broke = 20.0;
    double gamma_scale = 2.0;
    // mean duration per health state, and of a maintenance stay
    double mean_premature = 6.0;
    double mean_mature = 12.0;
    double mean_slightly_worn = 8.0;
    double mean_maintenance = 4.0;
    int horizon = 48;
    bool wear_while_stopped = false;
    double time_norm = 48.0;  // observation normalizer for time-in-state
};

struct Machine {
    int health = kPreMature;
    double time_in_state = 0.0;
    double state_duration = 0.0;   // sampled at state entry; unused once severely worn
    double maint_remaining = 0.0;  // > 0 while under maintenance
    int last_action = kStop;

    bool under_maintenance() const { return maint_remaining > 0.0; }
    bool must_maintain() const { return under_maintenance() || health == kSeverelyWorn; }
};

// 0 for the first schedule window, then two more machines every window
int curriculum_level(long long training_step, long long window = 425000);

class ManufactureEnv : public MultiAgentEnv {
  public:
    explicit ManufactureEnv(Config cfg);

    int n_slots() const override { return kMachines; }
    int obs_dim() const override { return 15; }  // health(4)+id(6)+time(1)+last action(3)+maint(1)
    int n_actions() const override { return 3; }
    int state_dim() const override { return kMachines * obs_dim(); }
    int horizon() const override { return cfg_.horizon; }

    void set_curriculum(int level) override;
    EnvStep reset(std::uint64_t seed) override;
    EnvStep step(const std::vector<int>& actions) override;

    std::vector<double> true_state() const override;

    std::string save_state() const override;
    void load_state(const std::string& blob) override;

    // exposed for tests and scripted policies
    const Config& config() const { return cfg_; }
    std::vector<double> observe(int machine) const;
    const std::array<Machine, kMachines>& machines() const { return machines_; }
    double buffer() const { return buffer_; }
    int timestep() const { return t_; }
    int n_randomized() const { return n_randomized_; }

  private:
    double sample_gamma(double mean);
    double state_mean(int health) const;
    EnvStep snapshot(double reward, bool done, const std::vector<int>* actions, int produced,
                     int breakdowns);

    Config cfg_;
    std::array<Machine, kMachines> machines_;
    double buffer_ = 0.0;
    int t_ = 0;
    int n_randomized_ = 0;
    Rng rng_;
};

}  // namespace ccoma::manufacture
