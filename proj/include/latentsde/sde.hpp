#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "latentsde/tensor.hpp"

namespace lsde::sde {

using ad::NodeId;
using ad::Tape;
using ad::Tensor;

// Fixed-step grid over [t0, t1] in the dataset's native time unit.
struct TimeGrid {
    double t0 = 0.0;
    double t1 = 0.0;
    double dt = 0.01;
    std::size_t steps = 0;

    static TimeGrid from_range(double t0, double t1, double dt);
    double time_at(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
};

// Normal(0, dt) increments on a grid, reproducible from the seed.
struct WienerIncrements {
    std::size_t steps = 0;
    std::size_t dim = 0;
    std::vector<double> increments;  // steps x dim, row-major
    std::uint64_t seed = 0;

    const double* row(std::size_t k) const { return increments.data() + k * dim; }
};

WienerIncrements sample_wiener(const TimeGrid& grid, std::size_t dim,
                               std::uint64_t seed);

// Piecewise-constant (zero-order-hold) control signal. Queries before the
// first event return zeros.
struct ControlSignal {
    std::size_t dim = 0;
    std::vector<double> times;                 // strictly increasing
    std::vector<std::vector<double>> values;   // one R^dim value per time

    void add_event(double t, std::vector<double> value);
};

std::vector<double> query_control(const ControlSignal& control, double t);

// Vector field on the tape: maps (latent state node, control value node,
// time) to an R^{d_x} node. Closures may capture parameter bindings and
// context signals; gradients flow through whatever they touch.
using FieldFn = std::function<NodeId(Tape&, NodeId x, NodeId u, double t)>;

// Discretized latent trajectory. States are tape nodes so downstream
// losses differentiate through the whole unrolled solve.
struct LatentPath {
    TimeGrid grid;
    std::vector<NodeId> states;  // steps + 1 nodes
    std::uint64_t noise_seed = 0;

    NodeId at_step(std::size_t k) const { return states[k]; }
    // Nearest grid node to time t.
    NodeId at_time(double t) const;
    std::size_t step_of(double t) const;
};

// Euler-Maruyama: x_{k+1} = x_k + drift*dt + diffusion (*) dW_k, with
// elementwise (diagonal) noise. Throws with the step index on NaN.
LatentPath integrate_em(Tape& tape, const FieldFn& drift,
                        const FieldFn& diffusion, NodeId x0,
                        const ControlSignal& control, const TimeGrid& grid,
                        const WienerIncrements& noise);

// Deterministic Euler; identical to integrate_em with zero diffusion and
// zero increments.
LatentPath integrate_euler(Tape& tape, const FieldFn& drift, NodeId x0,
                           const ControlSignal& control, const TimeGrid& grid);

// Discretized pathwise KL integrand: sum_k 0.5 * ||(nu - mu) / sigma||^2 dt
// evaluated along the path. Diffusion outputs must already be floored.
NodeId girsanov_kl(Tape& tape, const FieldFn& posterior_drift,
                   const FieldFn& prior_drift, const FieldFn& diffusion,
                   const LatentPath& path, const ControlSignal& control);

}  // namespace lsde::sde
