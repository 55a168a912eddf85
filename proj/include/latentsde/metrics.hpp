#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace lsde::metrics {

// All metrics skip masked-out points; inserting masked entries never
// changes a value.

double rmse(const std::vector<double>& preds, const std::vector<double>& truth,
            const std::vector<bool>& mask);

double accuracy(const std::vector<int>& pred_class, const std::vector<int>& truth,
                const std::vector<bool>& mask);

// Natural-log entropy of per-point class distributions. `summed` selects
// the summed-over-horizon aggregation instead of the per-point mean.
double predictive_entropy(const std::vector<std::vector<double>>& class_probs,
                          const std::vector<bool>& mask, bool summed = false);

// Closed-form CRPS of a Gaussian forecast, non-negative convention:
//   sigma * [ z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi) ],  z = (y - mu)/sigma.
// Degenerates to |y - mu| as sigma -> 0.
double crps_gaussian(double mu, double sigma, double y);

// Energy form mean|X - y| - 0.5 mean|X - X'| over an ensemble of samples.
double crps_ensemble(const std::vector<double>& samples, double y);

// Mean over observed points of lambda - y log(lambda) + log(y!); `summed`
// switches to the summed aggregation.
double poisson_nll(const std::vector<double>& lambdas,
                   const std::vector<double>& counts,
                   const std::vector<bool>& mask, bool summed = false);

double coverage95(const std::vector<double>& lo, const std::vector<double>& hi,
                  const std::vector<double>& truth, const std::vector<bool>& mask);

struct MetricRow {
    std::string variable;
    std::string metric;
    std::string model;
    std::string condition;
    double mean = 0.0;
    double stddev = 0.0;  // over seeds
};

void write_report(const std::vector<MetricRow>& rows, const std::string& path);

}  // namespace lsde::metrics
