#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "latentsde/dataset.hpp"

namespace lsde::pkpd {

// One patient's sampled mechanistic constants. All positive; drawn from
// per-parameter normal distributions truncated below at 10% of the mean.
struct PKPDParams {
    double rho, K;                    // tumor growth
    double alpha_r, beta_r;           // radiotherapy effect
    double alpha_c, beta_c;           // chemotherapy effect (alpha_c sampled but unused)
    double phi_c, phi_d;              // drug clearance rates
    double delta, I_max, beta_I, alpha_I, theta_I, lambda_I, omega_I;  // immune
    double gamma_I, theta_S, lambda_S;  // health
};

struct BaselineCovariates {
    double age = 0.0;     // years
    double weight = 0.0;  // kg
    double height = 0.0;  // cm
    bool male = true;
    bool small_cell = true;

    double bmi() const { return weight / ((height / 100.0) * (height / 100.0)); }
    double bsa() const;  // Mosteller
};

struct TreatmentSchedule {
    std::vector<double> chemo_times;  // weeks; unit-dose pulses
    std::vector<double> radio_times;
};

// 5-state trajectory on the integration grid (dt in weeks).
struct MechanisticTrajectory {
    double dt = 0.01;
    std::vector<double> times;
    std::vector<double> tumor;   // x >= 0
    std::vector<double> chemo;   // c >= 0
    std::vector<double> radio;   // d >= 0
    std::vector<double> immune;  // I >= 0
    std::vector<double> health;  // S in [0, 1]

    double tumor_at(double t) const;
    double health_at(double t) const;
};

struct ClinicalObservations {
    std::vector<double> times;           // weekly
    std::vector<long> cell_count;        // Poisson(x)
    std::vector<int> ecog;               // 0..5, non-increasing in S
    std::vector<std::uint8_t> observed;  // subsampling mask
};

struct CohortConfig {
    std::size_t n_patients = 1;
    double sigma_proc = 0.1;      // process noise level {0.01, 0.1, 0.5}
    double missing_frac = 0.5;    // {0.2, 0.5, 0.8}
    std::uint64_t seed = 0;
    double horizon_weeks = 52.0;
    double dt = 0.01;
};

BaselineCovariates sample_covariates(std::mt19937_64& rng);
PKPDParams sample_params(std::mt19937_64& rng, const BaselineCovariates& cov);
TreatmentSchedule sample_schedule(std::mt19937_64& rng, double horizon_weeks);

int ecog_from_health(double s);

MechanisticTrajectory simulate(const PKPDParams& p, const TreatmentSchedule& sched,
                               double x0, double horizon_weeks, double dt,
                               double sigma_proc, std::mt19937_64& rng);

ClinicalObservations observe(const MechanisticTrajectory& traj,
                             std::mt19937_64& rng);

void subsample(ClinicalObservations& obs, double missing_frac,
               std::mt19937_64& rng);

data::Dataset generate_cohort(const CohortConfig& cfg);

}  // namespace lsde::pkpd
