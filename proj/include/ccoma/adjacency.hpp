#pragma once

#include <vector>

namespace ccoma {

// Per-timestep agent graph with self-edges always present: who may exchange
// information this step. Entries are stored as 0.0/1.0 so the matrix can be
// fed straight into the masked attention ops.
struct AdjacencyMask {
    int n = 0;
    std::vector<double> m;  // n x n row-major, {0,1}
    int timestep = 0;

    static AdjacencyMask identity(int n_agents) {
        AdjacencyMask a;
        a.n = n_agents;
        a.m.assign(static_cast<std::size_t>(n_agents) * n_agents, 0.0);
        for (int i = 0; i < n_agents; ++i) a.at(i, i) = 1.0;
        return a;
    }

    double& at(int i, int j) { return m[static_cast<std::size_t>(i) * n + j]; }
    double at(int i, int j) const { return m[static_cast<std::size_t>(i) * n + j]; }

    bool valid() const {
        if (static_cast<std::size_t>(n) * n != m.size()) return false;
        for (int i = 0; i < n; ++i)
            if (at(i, i) != 1.0) return false;
        for (double v : m)
            if (v != 0.0 && v != 1.0) return false;
        return true;
    }
};

}  // namespace ccoma
