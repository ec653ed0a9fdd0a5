#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ccoma/envs/traffic.hpp"
#include "ccoma/trainer.hpp"

// Per-cell accumulators over evaluation episodes: where agents brake and how
// loud the messages they broadcast are at each grid position.

namespace ccoma::analysis {

struct AnalysisGrid {
    int rows = 0, cols = 0;
    std::vector<long long> visits;
    std::vector<long long> brakes;
    std::vector<double> norm_sum;

    void init(int r, int c);
    void add(int cell, bool brake, double message_norm);

    // row-major CSV with a header row of column indices; unvisited cells are
    // empty strings
    std::string brake_probability_csv() const;
    std::string mean_norm_csv() const;

    nlohmann::json summary(const std::vector<int>& junction_cells,
                           const std::vector<int>& approach_cells) const;
};

// Recovers the pre-step cell of an active slot from its observation block
// (the center cell feature carries the normalized linear index).
int cell_from_obs(const std::vector<double>& obs, int slot, int obs_dim, int rows, int cols);

// Accumulates one evaluated episode. Requires messages collected during the
// rollout; brake counting assumes the traffic action layout.
void accumulate_episode(AnalysisGrid& grid, const EpisodeData& ep, int n_slots, int obs_dim,
                        int d_model, int rows, int cols);

// cells from which some route enters a junction on the next step
std::vector<int> junction_approach_cells(const traffic::RouteTable& table,
                                         const std::vector<int>& junctions);

}  // namespace ccoma::analysis
