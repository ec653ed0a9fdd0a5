#pragma once

#include <string>
#include <vector>

#include "ccoma/tensor.hpp"

namespace ccoma {

// A named, ordered parameter collection. Order is the checkpoint record order.
struct ParamStore {
    std::vector<std::pair<std::string, Value>> items;

    Value add(const std::string& name, Value v) {
        v->requires_grad = true;
        items.emplace_back(name, v);
        return items.back().second;
    }
    Value find(const std::string& name) const;
    void zero_grads() {
        for (auto& [name, p] : items) p->zero_grad();
    }
    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, p] : items) n += p->numel();
        return n;
    }
};

struct RmsPropState {
    double lr = 5e-4;
    double alpha = 0.99;
    double eps = 1e-5;
    // second-moment accumulator, one vector per parameter, same element count
    std::vector<std::vector<double>> v;

    void init(const ParamStore& params) {
        v.clear();
        for (const auto& [name, p] : params.items) v.emplace_back(p->numel(), 0.0);
    }
};

// v <- alpha*v + (1-alpha)*g^2 ; p <- p - lr*g/(sqrt(v)+eps)
// Gradients are read from each parameter's grad slot.
void rmsprop_step(ParamStore& params, RmsPropState& state);

// Scales every gradient in place so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(ParamStore& params, double max_norm);

}  // namespace ccoma
