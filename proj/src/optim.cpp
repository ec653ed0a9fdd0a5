#include "ccoma/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ccoma {

Value ParamStore::find(const std::string& name) const {
    for (const auto& [n, p] : items)
        if (n == name) return p;
    throw std::out_of_range("ParamStore: no parameter named '" + name + "'");
}

void rmsprop_step(ParamStore& params, RmsPropState& state) {
    if (state.v.size() != params.items.size())
        throw std::invalid_argument("rmsprop_step: state holds " + std::to_string(state.v.size()) +
                                    " accumulators for " + std::to_string(params.items.size()) +
                                    " parameters");
    for (std::size_t pi = 0; pi < params.items.size(); ++pi) {
        auto& p = *params.items[pi].second;
        p.ensure_grad();
        auto& v = state.v[pi];
        if (v.size() != p.numel())
            throw std::invalid_argument("rmsprop_step: accumulator/parameter size mismatch for '" +
                                        params.items[pi].first + "'");
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double g = p.grad[i];
            v[i] = state.alpha * v[i] + (1.0 - state.alpha) * g * g;
            p.data[i] -= state.lr * g / (std::sqrt(v[i]) + state.eps);
        }
    }
}

double clip_global_norm(ParamStore& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, p] : params.items) {
        p->ensure_grad();
        for (double g : p->grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [name, p] : params.items)
            for (double& g : p->grad) g *= s;
    }
    return norm;
}

}  // namespace ccoma
