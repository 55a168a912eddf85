#pragma once

// Shared test utilities: finite-difference oracles against the tape.

#include <cmath>
#include <vector>

#include "latentsde/nn.hpp"

namespace testutil {

inline std::vector<std::size_t> slot_offsets(const lsde::nn::ParamStore& store) {
    std::vector<std::size_t> off(store.count());
    std::size_t o = 0;
    for (std::size_t s = 0; s < store.count(); ++s) {
        off[s] = o;
        o += store.values(static_cast<int>(s)).size();
    }
    return off;
}

// Analytic gradient of a scalar loss w.r.t. every parameter, flattened in
// store order. `build` runs a fresh forward pass: (Binding&) -> loss node.
template <typename F>
std::vector<double> tape_grad(const lsde::nn::ParamStore& store, F&& build) {
    lsde::ad::Tape tape;
    lsde::nn::Binding bind(tape, store);
    lsde::ad::NodeId loss = build(bind);
    tape.backward(loss);
    std::vector<double> grad(store.total_size(), 0.0);
    auto off = slot_offsets(store);
    tape.visit_param_grads([&](int slot, const lsde::ad::Tensor& g) {
        for (std::size_t i = 0; i < g.size(); ++i)
            grad[off[static_cast<std::size_t>(slot)] + i] += g.at(i);
    });
    return grad;
}

// Central finite differences of the same loss over the flat parameters.
template <typename F>
std::vector<double> fd_grad(lsde::nn::ParamStore& store, F&& build,
                            double h = 1e-5) {
    auto eval = [&]() {
        lsde::ad::Tape tape;
        lsde::nn::Binding bind(tape, store);
        lsde::ad::NodeId loss = build(bind);
        return tape.value(loss).item();
    };
    std::vector<double> flat = store.flatten();
    std::vector<double> grad(flat.size(), 0.0);
    for (std::size_t i = 0; i < flat.size(); ++i) {
        double keep = flat[i];
        flat[i] = keep + h;
        store.load_flat(flat);
        double up = eval();
        flat[i] = keep - h;
        store.load_flat(flat);
        double dn = eval();
        flat[i] = keep;
        grad[i] = (up - dn) / (2.0 * h);
    }
    store.load_flat(flat);
    return grad;
}

// Largest relative error between two gradient vectors, with an absolute
// floor so near-zero entries compare sanely.
inline double max_rel_err(const std::vector<double>& a,
                          const std::vector<double>& b, double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace testutil
