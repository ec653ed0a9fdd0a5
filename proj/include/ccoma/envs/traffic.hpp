#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ccoma/env.hpp"
#include "ccoma/rng.hpp"

// Traffic junction simulator. Cars enter at designated arrival cells with a
// per-point Bernoulli draw each step, follow a pre-assigned route one cell
// per gas action, and are removed on reaching the route's final cell (goal
// cells are never occupied). Cars that end up sharing a cell collide, which
// only affects the reward.

namespace ccoma::traffic {

enum class Mode { Easy, Hard, Harder };

inline constexpr int kGas = 0;
inline constexpr int kBrake = 1;

struct Config {
    Mode mode = Mode::Easy;
    int rows = 7, cols = 7;
    int n_max = 5;
    double p_arrive = 0.30;
    double r_coll = -10.0;
    double r_time = -0.01;
    int horizon = 40;
    int vision = 1;                // 3x3 neighbourhood
    std::string route_file;       // empty: use the built-in table for the mode

    static Config for_mode(Mode m);
};

Mode mode_from_string(const std::string& s);
std::string mode_to_string(Mode m);

// One route per line as comma-separated linear cell indices; lines beginning
// with '#' are comments. The first line must carry the format version.
struct RouteTable {
    int rows = 0, cols = 0;
    std::vector<std::vector<int>> routes;            // cell sequences, consecutive cells adjacent
    std::vector<int> arrival_cells;                  // unique route heads, in file order
    std::vector<std::vector<int>> routes_by_arrival; // route ids per arrival cell

    void index_arrivals();
    void validate() const;
};

RouteTable builtin_routes(Mode m);
RouteTable load_route_table(const std::string& path, int rows, int cols);
void save_route_table(const std::string& path, const RouteTable& table, const std::string& note);

// junction cells = cells crossed by more than one road (used by analyses)
std::vector<int> junction_cells(Mode m);

struct Car {
    int id = 0;        // 1..n_max, slot index + 1
    int route = -1;    // index into the route table
    int cursor = 0;    // position = routes[route][cursor]
    int tau = 0;       // steps since entering the grid
};

class TrafficEnv : public MultiAgentEnv {
  public:
    explicit TrafficEnv(Config cfg);

    int n_slots() const override { return cfg_.n_max; }
    int obs_dim() const override { return 27; }  // 9 cells x 3 features
    int n_actions() const override { return 2; }
    int state_dim() const override { return cfg_.n_max; }  // active-id vector
    int horizon() const override { return cfg_.horizon; }

    EnvStep reset(std::uint64_t seed) override;
    EnvStep step(const std::vector<int>& actions) override;

    std::vector<double> true_state() const override;
    std::optional<bool> episode_success() const override;

    std::string save_state() const override;
    void load_state(const std::string& blob) override;

    // exposed for tests and analyses
    const Config& config() const { return cfg_; }
    const RouteTable& routes() const { return table_; }
    std::vector<double> observe(int slot) const;
    AdjacencyMask build_adjacency() const;
    const std::vector<std::optional<Car>>& cars() const { return slots_; }
    int position_of(int slot) const;  // linear cell index, -1 when inactive
    int last_collisions() const { return last_collisions_; }
    int timestep() const { return t_; }

  private:
    EnvStep snapshot(double reward, bool done, const std::vector<int>* actions);
    int count_active() const;

    Config cfg_;
    RouteTable table_;
    std::vector<std::optional<Car>> slots_;
    Rng rng_;
    int t_ = 0;
    bool any_collision_ = false;
    int last_collisions_ = 0;
};

}  // namespace ccoma::traffic
