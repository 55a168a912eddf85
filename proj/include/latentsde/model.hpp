#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "latentsde/dataset.hpp"
#include "latentsde/nn.hpp"
#include "latentsde/sde.hpp"

namespace lsde::model {

enum class ModelKind { sde, ode, lstm };
enum class HeadKind { gaussian, poisson, categorical };

std::string to_string(ModelKind k);
ModelKind kind_from_string(const std::string& s);

struct VarSpec {
    std::string name;
    HeadKind head = HeadKind::gaussian;
    std::size_t classes = 6;  // categorical only
};

struct ModelConfig {
    ModelKind kind = ModelKind::sde;
    std::size_t d_x = 8;
    std::size_t d_u = 0;
    std::size_t enc_hidden = 64;
    std::size_t enc_layers = 2;
    std::size_t drift_hidden = 64;
    std::size_t lstm_hidden = 64;
    std::size_t lstm_layers = 2;
    double dt = 0.01;           // normalized-time step
    double sigma_floor = 1e-4;  // diffusion floor after softplus
    double prefix_fraction = 0.25;
    bool latent_readout = false;  // supervised tumor-volume probe
    std::vector<VarSpec> vars;
    std::vector<std::string> covariate_names;
    std::uint64_t init_seed = 1;
};

// Sensible per-dataset defaults (variable heads, covariates, controls).
ModelConfig default_config(const data::Dataset& ds, ModelKind kind);

// One patient prepared for the model: time axis normalized to [0, 1],
// encoder inputs z-scored, control signal resampled onto normalized time.
struct Task {
    std::string id;
    std::vector<double> times;  // normalized, sorted
    std::vector<std::vector<double>> values;      // per var, raw (head targets)
    std::vector<std::vector<double>> enc_values;  // per var, z-scored
    std::vector<std::vector<bool>> masks;
    std::vector<double> covariates;  // z-scored (binary pass through)
    sde::ControlSignal control;
    double obs_end = 1.0;  // grid-aligned boundary in normalized time
    std::vector<double> truth_times;   // normalized; latent readout target
    std::vector<double> truth_values;  // raw units
};

// forecast_mode hides everything past the split boundary from the model.
Task build_task(const data::PatientRecord& rec, const data::DatasetMeta& meta,
                const data::NormStats& stats, const ModelConfig& cfg,
                bool forecast_mode);

struct ElboParts {
    double recon = 0.0;     // sum of head log-densities over observed points
    double kl0 = 0.0;       // KL(Q_0 || P_0), closed form
    double path_kl = 0.0;   // pathwise KL (SDE only)
    double readout_nll = 0.0;
    double objective(double beta) const { return recon - beta * (kl0 + path_kl); }
};

struct VarForecast {
    std::string name;
    std::vector<double> times;  // normalized
    std::vector<double> mean, sd, q025, q975;  // quantiles over path decodes
    std::vector<std::vector<double>> samples;  // time x n_samples predictive draws
    std::vector<std::vector<double>> class_probs;  // categorical, ensemble-avg
    std::vector<double> lambda_mean;               // poisson
};

struct Forecast {
    std::vector<VarForecast> vars;
};

class LatentModel {
public:
    struct Components;

    explicit LatentModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    data::NormStats norm_stats;
    std::string rng_state;  // training rng snapshot, checkpointed verbatim

    // Single-sample ELBO for one record. When grad_flat is non-null the
    // gradient of [-objective(beta) + readout_nll] is accumulated into it
    // (layout matches ParamStore::flatten()).
    ElboParts elbo(const Task& task, std::uint64_t noise_seed, double beta,
                   std::vector<double>* grad_flat) const;

    // Conditions on the task's observation window, continues each sampled
    // path over the forecast window and decodes at decode_times.
    Forecast forecast(const Task& task, const std::vector<double>& decode_times,
                      std::size_t n_samples, std::uint64_t seed) const;

    void save(const std::string& path) const;
    static LatentModel load(const std::string& path);

private:
    ModelConfig cfg_;
    nn::ParamStore store_;
    std::unique_ptr<Components> comp_;

    void build_components();

public:
    ~LatentModel();
    LatentModel(LatentModel&&) noexcept;
    LatentModel& operator=(LatentModel&&) noexcept;
};

}  // namespace lsde::model
