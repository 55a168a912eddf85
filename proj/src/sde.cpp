#include "latentsde/sde.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lsde::sde {

TimeGrid TimeGrid::from_range(double t0, double t1, double dt) {
    if (dt <= 0.0) throw std::runtime_error("TimeGrid: dt must be positive");
    if (t1 < t0) throw std::runtime_error("TimeGrid: t1 < t0");
    auto steps = static_cast<std::size_t>(std::llround((t1 - t0) / dt));
    double tol = 1e-12 * std::max(1.0, std::abs(t1));
    if (std::abs(t0 + static_cast<double>(steps) * dt - t1) > tol)
        throw std::runtime_error("TimeGrid: (t1 - t0) is not a multiple of dt");
    return TimeGrid{t0, t1, dt, steps};
}

WienerIncrements sample_wiener(const TimeGrid& grid, std::size_t dim,
                               std::uint64_t seed) {
    if (dim < 1) throw std::runtime_error("sample_wiener: dim must be >= 1");
    WienerIncrements w;
    w.steps = grid.steps;
    w.dim = dim;
    w.seed = seed;
    w.increments.resize(grid.steps * dim);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(grid.dt));
    for (double& v : w.increments) v = normal(rng);
    return w;
}

void ControlSignal::add_event(double t, std::vector<double> value) {
    if (value.size() != dim)
        throw std::runtime_error("ControlSignal: event dimension mismatch");
    if (!times.empty() && t <= times.back())
        throw std::runtime_error("ControlSignal: event times must be strictly increasing");
    times.push_back(t);
    values.push_back(std::move(value));
}

std::vector<double> query_control(const ControlSignal& control, double t) {
    // Latest event at or before t; zeros before the first event.
    auto it = std::upper_bound(control.times.begin(), control.times.end(), t);
    if (it == control.times.begin()) return std::vector<double>(control.dim, 0.0);
    return control.values[static_cast<std::size_t>(it - control.times.begin()) - 1];
}

std::size_t LatentPath::step_of(double t) const {
    if (grid.steps == 0) return 0;
    double k = (t - grid.t0) / grid.dt;
    auto idx = static_cast<long long>(std::llround(k));
    idx = std::clamp(idx, 0LL, static_cast<long long>(grid.steps));
    return static_cast<std::size_t>(idx);
}

NodeId LatentPath::at_time(double t) const { return states[step_of(t)]; }

namespace {

NodeId control_node(Tape& tape, const ControlSignal& control, double t) {
    return tape.leaf(Tensor::vec(query_control(control, t)));
}

LatentPath integrate_impl(Tape& tape, const FieldFn& drift,
                          const FieldFn* diffusion, NodeId x0,
                          const ControlSignal& control, const TimeGrid& grid,
                          const WienerIncrements* noise) {
    LatentPath path;
    path.grid = grid;
    path.noise_seed = noise ? noise->seed : 0;
    path.states.reserve(grid.steps + 1);
    path.states.push_back(x0);
    std::size_t dim = tape.value(x0).size();
    if (noise && (noise->steps != grid.steps || noise->dim != dim))
        throw std::runtime_error("integrate_em: increment shape mismatch");
    NodeId x = x0;
    for (std::size_t k = 0; k < grid.steps; ++k) {
        double t = grid.time_at(k);
        try {
            NodeId u = control_node(tape, control, t);
            NodeId x_next = tape.add(x, tape.scale(drift(tape, x, u, t), grid.dt));
            if (diffusion) {
                NodeId dw = tape.leaf(
                    Tensor({dim}, std::vector<double>(noise->row(k), noise->row(k) + dim)));
                x_next = tape.add(x_next, tape.mul((*diffusion)(tape, x, u, t), dw));
            }
            x = x_next;
        } catch (const std::exception& e) {
            throw std::runtime_error("integration failed at step " + std::to_string(k) +
                                     ": " + e.what());
        }
        path.states.push_back(x);
    }
    return path;
}

}  // namespace

LatentPath integrate_em(Tape& tape, const FieldFn& drift,
                        const FieldFn& diffusion, NodeId x0,
                        const ControlSignal& control, const TimeGrid& grid,
                        const WienerIncrements& noise) {
    return integrate_impl(tape, drift, &diffusion, x0, control, grid, &noise);
}

LatentPath integrate_euler(Tape& tape, const FieldFn& drift, NodeId x0,
                           const ControlSignal& control, const TimeGrid& grid) {
    return integrate_impl(tape, drift, nullptr, x0, control, grid, nullptr);
}

NodeId girsanov_kl(Tape& tape, const FieldFn& posterior_drift,
                   const FieldFn& prior_drift, const FieldFn& diffusion,
                   const LatentPath& path, const ControlSignal& control) {
    NodeId acc = tape.leaf(Tensor::scalar(0.0));
    const TimeGrid& grid = path.grid;
    for (std::size_t k = 0; k < grid.steps; ++k) {
        double t = grid.time_at(k);
        NodeId x = path.states[k];
        NodeId u = control_node(tape, control, t);
        NodeId nu = posterior_drift(tape, x, u, t);
        NodeId mu = prior_drift(tape, x, u, t);
        NodeId sigma = diffusion(tape, x, u, t);
        NodeId delta = tape.div(tape.sub(nu, mu), sigma);
        acc = tape.add(acc, tape.scale(tape.sum(tape.square(delta)), 0.5 * grid.dt));
    }
    return acc;
}

}  // namespace lsde::sde
