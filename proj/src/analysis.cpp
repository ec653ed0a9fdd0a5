#include "ccoma/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ccoma/envs/traffic.hpp"

namespace ccoma::analysis {

void AnalysisGrid::init(int r, int c) {
    rows = r;
    cols = c;
    visits.assign(static_cast<std::size_t>(r) * c, 0);
    brakes.assign(static_cast<std::size_t>(r) * c, 0);
    norm_sum.assign(static_cast<std::size_t>(r) * c, 0.0);
}

void AnalysisGrid::add(int cell, bool brake, double message_norm) {
    if (cell < 0 || cell >= rows * cols) throw std::out_of_range("AnalysisGrid: cell out of range");
    ++visits[static_cast<std::size_t>(cell)];
    if (brake) ++brakes[static_cast<std::size_t>(cell)];
    norm_sum[static_cast<std::size_t>(cell)] += message_norm;
}

namespace {

std::string grid_csv(int rows, int cols, const std::vector<long long>& visits,
                     const std::function<double(int)>& value) {
    std::ostringstream out;
    for (int c = 0; c < cols; ++c) out << (c ? "," : "") << c;
    out << "\n";
    char buf[32];
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c) out << ",";
            const int cell = r * cols + c;
            if (visits[static_cast<std::size_t>(cell)] == 0) continue;  // empty value
            std::snprintf(buf, sizeof(buf), "%.10g", value(cell));
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace

std::string AnalysisGrid::brake_probability_csv() const {
    return grid_csv(rows, cols, visits, [this](int cell) {
        return static_cast<double>(brakes[static_cast<std::size_t>(cell)]) /
               static_cast<double>(visits[static_cast<std::size_t>(cell)]);
    });
}

std::string AnalysisGrid::mean_norm_csv() const {
    return grid_csv(rows, cols, visits, [this](int cell) {
        return norm_sum[static_cast<std::size_t>(cell)] /
               static_cast<double>(visits[static_cast<std::size_t>(cell)]);
    });
}

nlohmann::json AnalysisGrid::summary(const std::vector<int>& junction_cells,
                                     const std::vector<int>& approach_cells) const {
    const std::set<int> junctions(junction_cells.begin(), junction_cells.end());
    const std::set<int> approaches(approach_cells.begin(), approach_cells.end());
    double p_approach = 0.0, p_other = 0.0;
    long long n_approach = 0, n_other = 0;
    long long total_visits = 0, total_brakes = 0;
    for (int cell = 0; cell < rows * cols; ++cell) {
        const long long v = visits[static_cast<std::size_t>(cell)];
        if (v == 0) continue;
        total_visits += v;
        total_brakes += brakes[static_cast<std::size_t>(cell)];
        const double p = static_cast<double>(brakes[static_cast<std::size_t>(cell)]) /
                         static_cast<double>(v);
        if (approaches.count(cell) != 0) {
            p_approach += p;
            ++n_approach;
        } else if (junctions.count(cell) == 0) {
            p_other += p;
            ++n_other;
        }
    }
    nlohmann::json j;
    j["total_visits"] = total_visits;
    j["total_brakes"] = total_brakes;
    j["junction_approach_cells_visited"] = n_approach;
    j["other_cells_visited"] = n_other;
    j["mean_brake_prob_junction_approach"] =
        n_approach > 0 ? p_approach / static_cast<double>(n_approach) : 0.0;
    j["mean_brake_prob_elsewhere"] = n_other > 0 ? p_other / static_cast<double>(n_other) : 0.0;
    return j;
}

int cell_from_obs(const std::vector<double>& obs, int slot, int obs_dim, int rows, int cols) {
    // center cell of the 3x3 window is feature block 4; its second entry is
    // linear_index / (rows*cols)
    const double v = obs[static_cast<std::size_t>(slot) * obs_dim + 4 * 3 + 1];
    return static_cast<int>(std::llround(v * rows * cols));
}

void accumulate_episode(AnalysisGrid& grid, const EpisodeData& ep, int n_slots, int obs_dim,
                        int d_model, int rows, int cols) {
    if (ep.messages.size() != ep.obs.size())
        throw std::invalid_argument("accumulate_episode: episode lacks collected messages");
    for (int t = 0; t < ep.length(); ++t) {
        for (int slot = 0; slot < n_slots; ++slot) {
            if (!ep.active[static_cast<std::size_t>(t)][static_cast<std::size_t>(slot)]) continue;
            const int cell = cell_from_obs(ep.obs[static_cast<std::size_t>(t)], slot, obs_dim, rows, cols);
            double sq = 0.0;
            const auto& msg = ep.messages[static_cast<std::size_t>(t)];
            for (int d = 0; d < d_model; ++d) {
                const double x = msg[static_cast<std::size_t>(slot) * d_model + d];
                sq += x * x;
            }
            const bool brake =
                ep.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(slot)] ==
                traffic::kBrake;
            grid.add(cell, brake, std::sqrt(sq));
        }
    }
}

std::vector<int> junction_approach_cells(const traffic::RouteTable& table,
                                         const std::vector<int>& junctions) {
    const std::set<int> jset(junctions.begin(), junctions.end());
    std::set<int> out;
    for (const auto& route : table.routes)
        for (std::size_t i = 0; i + 1 < route.size(); ++i)
            if (jset.count(route[i + 1]) != 0 && jset.count(route[i]) == 0) out.insert(route[i]);
    return {out.begin(), out.end()};
}

}  // namespace ccoma::analysis
