#include "latentsde/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include "latentsde/metrics.hpp"
#include "latentsde/rng.hpp"

namespace lsde::train {

double anneal_beta(std::size_t step, std::size_t total_steps, std::size_t cycles,
                   double beta_max) {
    if (total_steps == 0 || cycles == 0)
        throw std::runtime_error("anneal_beta: total_steps and cycles must be positive");
    if (step >= total_steps) throw std::runtime_error("anneal_beta: step out of range");
    double L = static_cast<double>(total_steps) / static_cast<double>(cycles);
    double p = std::fmod(static_cast<double>(step), L) / L;
    return beta_max * std::min(1.0, 2.0 * p);
}

double exp_lr(std::size_t epoch, double lr0, double decay) {
    return lr0 * std::pow(decay, static_cast<double>(epoch));
}

void adamw_step(std::vector<double>& params, const std::vector<double>& grads,
                AdamWState& state, double lr, double beta1, double beta2,
                double eps, double wd) {
    if (params.size() != grads.size())
        throw std::runtime_error("adamw_step: shape mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size())
        throw std::runtime_error("adamw_step: state shape mismatch");
    ++state.t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        double m_hat = state.m[i] / bc1;
        double v_hat = state.v[i] / bc2;
        params[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * params[i]);
    }
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x9E3779B97F4A7C15ULL));
}

struct ValScores {
    double rmse = 0.0;
    double crps = 0.0;
    bool present = false;
};

// Forecast quality on the validation split: each record is conditioned on
// its observation window and scored on observed points past the split.
ValScores validate(const model::LatentModel& m, const data::Dataset& ds,
                   const data::NormStats& stats,
                   const std::vector<std::size_t>& val_idx, std::size_t n_samples,
                   std::uint64_t seed) {
    ValScores out;
    double se = 0.0, crps = 0.0;
    std::size_t n = 0;
    for (std::size_t ri : val_idx) {
        const auto& rec = ds.records[ri];
        model::Task obs_task = model::build_task(rec, ds.meta, stats, m.config(), true);
        model::Task full = model::build_task(rec, ds.meta, stats, m.config(), false);
        std::vector<double> decode_times;
        std::vector<std::size_t> steps;
        for (std::size_t i = 0; i < full.times.size(); ++i) {
            if (full.times[i] <= obs_task.obs_end + 1e-9) continue;
            bool any = false;
            for (const auto& mk : full.masks) any = any || mk[i];
            if (any) {
                decode_times.push_back(full.times[i]);
                steps.push_back(i);
            }
        }
        if (decode_times.empty()) continue;
        auto fc = m.forecast(obs_task, decode_times, n_samples, mix(seed, ri));
        for (std::size_t j = 0; j < m.config().vars.size(); ++j) {
            const auto& vf = fc.vars[j];
            for (std::size_t k = 0; k < steps.size(); ++k) {
                if (!full.masks[j][steps[k]]) continue;
                double y = full.values[j][steps[k]];
                double e = vf.mean[k] - y;
                se += e * e;
                crps += metrics::crps_ensemble(vf.samples[k], y);
                ++n;
            }
        }
    }
    if (n == 0) return out;
    out.rmse = std::sqrt(se / static_cast<double>(n));
    out.crps = crps / static_cast<double>(n);
    out.present = true;
    return out;
}

bool is_nonfinite_error(const std::exception& e) {
    return std::string(e.what()).find("non-finite") != std::string::npos ||
           std::string(e.what()).find("integration failed") != std::string::npos;
}

}  // namespace

TrainResult train(model::LatentModel model, const data::Dataset& ds,
                  const TrainConfig& cfg) {
    if (ds.records.empty()) throw std::runtime_error("train: empty dataset");
    if (cfg.epochs == 0 || cfg.batch_size == 0)
        throw std::runtime_error("train: epochs and batch size must be positive");

    if (model.norm_stats.by_var.empty()) {
        // Only gaussian channels get z-scored; discrete heads may be constant.
        std::vector<std::string> gaussian_vars;
        for (const auto& v : model.config().vars)
            if (v.head == model::HeadKind::gaussian) gaussian_vars.push_back(v.name);
        model.norm_stats = data::fit_normalizer(ds, &gaussian_vars);
    }
    const auto& stats = model.norm_stats;

    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        auto s = data::split_of(ds.records[i].id);
        if (s == data::Split::train) train_idx.push_back(i);
        else if (s == data::Split::val) val_idx.push_back(i);
    }
    if (train_idx.empty())  // tiny toy sets: train on everything
        for (std::size_t i = 0; i < ds.records.size(); ++i) train_idx.push_back(i);

    std::vector<model::Task> tasks;
    tasks.reserve(train_idx.size());
    for (std::size_t i : train_idx)
        tasks.push_back(model::build_task(ds.records[i], ds.meta, stats,
                                          model.config(), false));

    std::size_t n_batches = (tasks.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::size_t total_steps = cfg.epochs * n_batches;

    AdamWState opt;
    TrainResult result{std::move(model), {}, false, 0};
    auto& m = result.model;
    auto& store = m.params();
    std::vector<double> best_params = store.flatten();
    double best_score = std::numeric_limits<double>::infinity();
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
        double lr = exp_lr(epoch, cfg.lr0, cfg.lr_decay);
        std::vector<std::size_t> order(tasks.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::mt19937_64 shuffle_rng(mix(cfg.seed, 0x5158 + epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        ElboBreakdown epoch_mean;
        std::size_t epoch_count = 0;
        double last_beta = 0.0;

        for (std::size_t b = 0; b < n_batches && !result.diverged; ++b) {
            double beta = anneal_beta(step, total_steps, cfg.anneal_cycles,
                                      cfg.anneal_max);
            last_beta = beta;
            std::size_t lo = b * cfg.batch_size;
            std::size_t hi = std::min(lo + cfg.batch_size, order.size());
            std::vector<double> grad(store.total_size(), 0.0);
            double denom = static_cast<double>((hi - lo) * cfg.posterior_samples);
            try {
                for (std::size_t k = lo; k < hi; ++k) {
                    for (std::size_t ps = 0; ps < cfg.posterior_samples; ++ps) {
                        std::uint64_t ns = mix(cfg.seed, step * 7919 + order[k] * 31 + ps);
                        auto parts = m.elbo(tasks[order[k]], ns, beta, &grad);
                        epoch_mean.recon += parts.recon;
                        epoch_mean.kl0 += parts.kl0;
                        epoch_mean.path_kl += parts.path_kl;
                        ++epoch_count;
                    }
                }
            } catch (const std::exception& e) {
                if (!is_nonfinite_error(e)) throw;
                result.diverged = true;
                break;
            }
            for (auto& g : grad) g /= denom;
            double norm2 = 0.0;
            for (double g : grad) norm2 += g * g;
            if (!std::isfinite(norm2)) {
                result.diverged = true;
                break;
            }
            double norm = std::sqrt(norm2);
            if (norm > cfg.grad_clip)
                for (auto& g : grad) g *= cfg.grad_clip / norm;
            auto flat = store.flatten();
            adamw_step(flat, grad, opt, lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
            store.load_flat(flat);
            ++step;
        }

        if (epoch_count == 0) {
            result.diverged = true;
            break;
        }
        epoch_mean.recon /= static_cast<double>(epoch_count);
        epoch_mean.kl0 /= static_cast<double>(epoch_count);
        epoch_mean.path_kl /= static_cast<double>(epoch_count);
        epoch_mean.beta = last_beta;

        ValScores val = validate(m, ds, stats, val_idx, cfg.val_samples,
                                 mix(cfg.seed, 0x7A1 + epoch));

        EpochRow row;
        row.epoch = epoch;
        row.objective = epoch_mean.objective();
        row.recon = epoch_mean.recon;
        row.kl0 = epoch_mean.kl0;
        row.path_kl = epoch_mean.path_kl;
        row.beta = epoch_mean.beta;
        row.lr = lr;
        row.val_rmse = val.rmse;
        row.val_crps = val.crps;
        result.log.push_back(row);

        double score = val.present ? val.crps : -row.objective;
        if (!std::isfinite(score)) {
            result.diverged = true;
            break;
        }
        if (score < best_score) {
            best_score = score;
            best_params = store.flatten();
            result.best_epoch = epoch;
        }
    }

    store.load_flat(best_params);
    m.rng_state = "seed=" + std::to_string(cfg.seed) +
                  ";best_epoch=" + std::to_string(result.best_epoch);
    return result;
}

void write_metrics_log(const std::vector<EpochRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "epoch,objective,recon,kl0,path_kl,beta,lr,val_rmse,val_crps,wall_seconds\n";
    out.precision(10);
    for (const auto& r : rows)
        out << r.epoch << ',' << r.objective << ',' << r.recon << ',' << r.kl0 << ','
            << r.path_kl << ',' << r.beta << ',' << r.lr << ',' << r.val_rmse << ','
            << r.val_crps << ',' << r.wall_seconds << "\n";
}

}  // namespace lsde::train
