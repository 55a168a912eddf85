#include "latentsde/pkpd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace lsde::pkpd {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Normal(mu, sd) rejected below 10% of the mean; optional upper cap.
double trunc_normal(std::mt19937_64& rng, double mu, double sd,
                    double upper = std::numeric_limits<double>::infinity()) {
    std::normal_distribution<double> dist(mu, sd);
    for (int i = 0; i < 10000; ++i) {
        double v = dist(rng);
        if (v >= 0.1 * mu && v <= upper) return v;
    }
    throw std::runtime_error("trunc_normal: rejection sampling failed");
}

}  // namespace

double BaselineCovariates::bsa() const {
    return std::sqrt(height * weight / 3600.0);
}

BaselineCovariates sample_covariates(std::mt19937_64& rng) {
    BaselineCovariates c;
    c.age = std::uniform_real_distribution<double>(80.0, 120.0)(rng);
    c.weight = std::uniform_real_distribution<double>(70.0, 150.0)(rng);
    c.height = std::uniform_real_distribution<double>(100.0, 200.0)(rng);
    c.male = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    c.small_cell = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    return c;
}

PKPDParams sample_params(std::mt19937_64& rng, const BaselineCovariates& cov) {
    PKPDParams p;
    p.rho = trunc_normal(rng, 0.08, 0.001);
    p.K = trunc_normal(rng, 100.0, 10.0);
    p.alpha_r = trunc_normal(rng, 0.1, 0.05);
    p.beta_r = trunc_normal(rng, 0.1, 0.05);
    p.alpha_c = trunc_normal(rng, 0.1, 0.05);
    p.beta_c = trunc_normal(rng, 0.1, 0.05);
    p.phi_d = trunc_normal(rng, 0.1, 0.05);  // radiotherapy clearance
    p.phi_c = trunc_normal(rng, 0.1, 0.05);
    p.delta = trunc_normal(rng, 0.013, 0.005);
    p.I_max = trunc_normal(rng, 0.95, 0.4, 2.0);
    p.beta_I = trunc_normal(rng, 0.1, 0.05);
    p.alpha_I = trunc_normal(rng, 0.1, 0.05);
    p.theta_I = trunc_normal(rng, 0.08, 0.04);
    p.lambda_I = trunc_normal(rng, 0.005, 0.002);
    p.omega_I = trunc_normal(rng, 0.15, 0.05);
    p.gamma_I = trunc_normal(rng, 0.008, 0.005);
    p.theta_S = trunc_normal(rng, 100.0, 10.0);
    p.lambda_S = trunc_normal(rng, 200.0, 20.0);

    // Covariate modulation (simulator conventions, not part of the core
    // dynamics): older patients clear drugs more slowly, larger body
    // surface area recovers health faster, small-cell tumors grow faster.
    double clearance_scale = 1.0 - 0.002 * (cov.age - 80.0);
    p.phi_c *= clearance_scale;
    p.phi_d *= clearance_scale;
    p.theta_S *= cov.bsa() / 1.9;
    if (cov.small_cell) p.rho *= 1.2;
    return p;
}

TreatmentSchedule sample_schedule(std::mt19937_64& rng, double horizon_weeks) {
    TreatmentSchedule s;
    // Individualized dosing intervals in whole weeks.
    int chemo_iv = std::uniform_int_distribution<int>(2, 5)(rng);
    int radio_iv = std::uniform_int_distribution<int>(2, 5)(rng);
    for (double t = chemo_iv; t <= horizon_weeks; t += chemo_iv)
        s.chemo_times.push_back(t);
    for (double t = radio_iv; t <= horizon_weeks; t += radio_iv)
        s.radio_times.push_back(t);
    return s;
}

int ecog_from_health(double s) {
    int e = static_cast<int>(std::floor(6.0 * (1.0 - s)));
    return std::clamp(e, 0, 5);
}

double MechanisticTrajectory::tumor_at(double t) const {
    auto k = static_cast<std::size_t>(std::llround(t / dt));
    return tumor[std::min(k, tumor.size() - 1)];
}

double MechanisticTrajectory::health_at(double t) const {
    auto k = static_cast<std::size_t>(std::llround(t / dt));
    return health[std::min(k, health.size() - 1)];
}

MechanisticTrajectory simulate(const PKPDParams& p, const TreatmentSchedule& sched,
                               double x0, double horizon_weeks, double dt,
                               double sigma_proc, std::mt19937_64& rng) {
    if (x0 <= 0.0) throw std::runtime_error("simulate: x0 must be positive");
    auto steps = static_cast<std::size_t>(std::llround(horizon_weeks / dt));
    MechanisticTrajectory traj;
    traj.dt = dt;
    traj.times.reserve(steps + 1);
    traj.tumor.reserve(steps + 1);

    // Unit-dose impulses land on the step whose grid time matches the event.
    std::vector<double> chemo_dose(steps + 1, 0.0), radio_dose(steps + 1, 0.0);
    for (double t : sched.chemo_times)
        chemo_dose[static_cast<std::size_t>(std::llround(t / dt))] += 1.0;
    for (double t : sched.radio_times)
        radio_dose[static_cast<std::size_t>(std::llround(t / dt))] += 1.0;

    std::normal_distribution<double> normal(0.0, std::sqrt(dt));
    double x = x0, c = 0.0, d = 0.0, I = p.I_max, S = 1.0;
    for (std::size_t k = 0; k <= steps; ++k) {
        c += chemo_dose[k];
        d += radio_dose[k];
        traj.times.push_back(static_cast<double>(k) * dt);
        traj.tumor.push_back(x);
        traj.chemo.push_back(c);
        traj.radio.push_back(d);
        traj.immune.push_back(I);
        traj.health.push_back(S);
        if (k == steps) break;

        double growth = p.rho * std::log(p.K / x) - p.beta_c * c -
                        (p.alpha_r * d + p.beta_r * d * d);
        double dw = sigma_proc > 0.0 ? normal(rng) : 0.0;
        double x_next = x + growth * x * dt + sigma_proc * x * dw;
        double c_next = c - p.phi_c * c * dt;
        double d_next = d - p.phi_d * d * dt;
        double immune_drift = p.delta * (1.0 - I / p.I_max) * I - p.beta_I * c -
                              p.alpha_I * d +
                              p.theta_I * (p.I_max - I) / (1.0 + p.lambda_I * x) -
                              p.omega_I * I;
        double I_next = I + immune_drift * dt;
        double health_drift = p.theta_S * (1.0 - S) / (1.0 + p.lambda_S * x) -
                              p.gamma_I * std::pow(I / p.I_max - 1.0, 2);
        double S_next = S + health_drift * dt;

        x = std::max(x_next, 1e-6);
        c = std::max(c_next, 0.0);
        d = std::max(d_next, 0.0);
        I = std::max(I_next, 0.0);
        S = std::clamp(S_next, 0.0, 1.0);
        if (!std::isfinite(x) || !std::isfinite(I) || !std::isfinite(S))
            throw std::runtime_error("simulate: NaN state at step " + std::to_string(k));
    }
    return traj;
}

ClinicalObservations observe(const MechanisticTrajectory& traj,
                             std::mt19937_64& rng) {
    ClinicalObservations obs;
    double horizon = traj.times.back();
    for (double t = 1.0; t <= horizon + 1e-9; t += 1.0) {
        double x = traj.tumor_at(t);
        double s = traj.health_at(t);
        obs.times.push_back(t);
        obs.cell_count.push_back(
            x > 0.0 ? std::poisson_distribution<long>(x)(rng) : 0L);
        obs.ecog.push_back(ecog_from_health(s));
        obs.observed.push_back(1);
    }
    return obs;
}

void subsample(ClinicalObservations& obs, double missing_frac,
               std::mt19937_64& rng) {
    if (missing_frac < 0.0 || missing_frac >= 1.0)
        throw std::runtime_error("subsample: missing_frac must be in [0, 1)");
    std::size_t n = obs.times.size();
    auto n_remove = static_cast<std::size_t>(
        std::floor(missing_frac * static_cast<double>(n)));
    n_remove = std::min(n_remove, n - 1);  // first observation is the anchor
    std::vector<std::size_t> idx(n - 1);
    std::iota(idx.begin(), idx.end(), 1);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < n_remove; ++i) obs.observed[idx[i]] = 0;
}

data::Dataset generate_cohort(const CohortConfig& cfg) {
    if (cfg.n_patients < 1) throw std::runtime_error("generate_cohort: n_patients >= 1");
    data::Dataset ds;
    ds.meta.kind = "pkpd";
    ds.meta.horizon = cfg.horizon_weeks;
    ds.meta.split_time = cfg.horizon_weeks / 2.0;
    ds.meta.extra = {{"sigma_proc", cfg.sigma_proc},
                     {"missing_frac", cfg.missing_frac},
                     {"seed", static_cast<double>(cfg.seed)},
                     {"n_patients", static_cast<double>(cfg.n_patients)}};
    for (std::size_t i = 0; i < cfg.n_patients; ++i) {
        std::mt19937_64 rng(splitmix64(cfg.seed ^ (0xC0FFEEULL + i)));
        BaselineCovariates cov = sample_covariates(rng);
        PKPDParams p = sample_params(rng, cov);
        TreatmentSchedule sched = sample_schedule(rng, cfg.horizon_weeks);
        double x0 = std::uniform_real_distribution<double>(5.0, 30.0)(rng);
        MechanisticTrajectory traj = simulate(p, sched, x0, cfg.horizon_weeks,
                                              cfg.dt, cfg.sigma_proc, rng);
        ClinicalObservations obs = observe(traj, rng);
        subsample(obs, cfg.missing_frac, rng);

        data::PatientRecord rec;
        rec.id = "pkpd-" + std::to_string(cfg.seed) + "-" + std::to_string(i);
        rec.covariates = {{"age", cov.age},
                          {"weight", cov.weight},
                          {"height", cov.height},
                          {"gender", cov.male ? 1.0 : 0.0},
                          {"tumor_type", cov.small_cell ? 1.0 : 0.0},
                          {"bmi", cov.bmi()},
                          {"bsa", cov.bsa()}};
        rec.params = {{"rho", p.rho}, {"K", p.K}, {"alpha_r", p.alpha_r},
                      {"beta_r", p.beta_r}, {"alpha_c", p.alpha_c},
                      {"beta_c", p.beta_c}, {"phi_c", p.phi_c}, {"phi_d", p.phi_d},
                      {"delta", p.delta}, {"I_max", p.I_max}, {"beta_I", p.beta_I},
                      {"alpha_I", p.alpha_I}, {"theta_I", p.theta_I},
                      {"lambda_I", p.lambda_I}, {"omega_I", p.omega_I},
                      {"gamma_I", p.gamma_I}, {"theta_S", p.theta_S},
                      {"lambda_S", p.lambda_S}};
        rec.chemo_times = sched.chemo_times;
        rec.radio_times = sched.radio_times;
        rec.obs_times = obs.times;
        rec.variables = {"cell_count", "ecog"};
        rec.values.resize(2);
        rec.masks.resize(2);
        for (std::size_t k = 0; k < obs.times.size(); ++k) {
            rec.values[0].push_back(static_cast<double>(obs.cell_count[k]));
            rec.values[1].push_back(static_cast<double>(obs.ecog[k]));
            rec.masks[0].push_back(obs.observed[k]);
            rec.masks[1].push_back(obs.observed[k]);
        }
        for (double t = 0.0; t <= cfg.horizon_weeks + 1e-9; t += 1.0) {
            rec.truth_grid.push_back(t);
            rec.truth_tumor_volume.push_back(traj.tumor_at(t));
        }
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

}  // namespace lsde::pkpd
