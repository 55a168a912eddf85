#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latentsde/dataset.hpp"
#include "latentsde/model.hpp"

namespace lsde::train {

struct ElboBreakdown {
    double recon = 0.0;
    double kl0 = 0.0;
    double path_kl = 0.0;
    double beta = 0.0;
    double objective() const { return recon - beta * (kl0 + path_kl); }
};

// Cyclic annealing weight: linear ramp 0 -> beta_max over the first half
// of each cycle, flat at beta_max over the second half.
double anneal_beta(std::size_t step, std::size_t total_steps,
                   std::size_t cycles = 4, double beta_max = 10.0);

double exp_lr(std::size_t epoch, double lr0, double decay);

struct AdamWState {
    std::vector<double> m, v;
    std::size_t t = 0;
};

// Decoupled weight decay: theta <- theta - lr*(m_hat/(sqrt(v_hat)+eps) + wd*theta).
void adamw_step(std::vector<double>& params, const std::vector<double>& grads,
                AdamWState& state, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8, double wd = 0.01);

struct TrainConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 32;
    double lr0 = 1e-3;
    double lr_decay = 0.97;
    double weight_decay = 0.01;
    std::size_t anneal_cycles = 4;
    double anneal_max = 10.0;
    std::uint64_t seed = 1;
    std::size_t posterior_samples = 1;
    double grad_clip = 10.0;
    std::size_t val_samples = 10;  // forecast ensemble size for validation
};

struct EpochRow {
    std::size_t epoch = 0;
    double objective = 0.0, recon = 0.0, kl0 = 0.0, path_kl = 0.0;
    double beta = 0.0, lr = 0.0;
    double val_rmse = 0.0, val_crps = 0.0;
    double wall_seconds = 0.0;  // kept at 0 in the log for byte-stable reruns
};

struct TrainResult {
    model::LatentModel model;
    std::vector<EpochRow> log;
    bool diverged = false;
    std::size_t best_epoch = 0;
};

// Full training loop: seeded shuffling, minibatch gradient averaging,
// global-norm clipping, best-validation checkpoint retention. Aborts on
// a non-finite objective, keeping the last good parameters.
TrainResult train(model::LatentModel model, const data::Dataset& ds,
                  const TrainConfig& cfg);

void write_metrics_log(const std::vector<EpochRow>& rows, const std::string& path);

}  // namespace lsde::train
