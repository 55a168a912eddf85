#include "latentsde/metrics.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace lsde::metrics {

namespace {

void check_mask(std::size_t n, const std::vector<bool>& mask, const char* fn) {
    if (mask.size() != n)
        throw std::runtime_error(std::string(fn) + ": mask length mismatch");
}

double norm_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

double rmse(const std::vector<double>& preds, const std::vector<double>& truth,
            const std::vector<bool>& mask) {
    check_mask(preds.size(), mask, "rmse");
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!mask[i]) continue;
        double e = preds[i] - truth[i];
        sq += e * e;
        ++n;
    }
    if (n == 0) throw std::runtime_error("rmse: no observed points");
    return std::sqrt(sq / static_cast<double>(n));
}

double accuracy(const std::vector<int>& pred_class, const std::vector<int>& truth,
                const std::vector<bool>& mask) {
    check_mask(pred_class.size(), mask, "accuracy");
    std::size_t n = 0, hit = 0;
    for (std::size_t i = 0; i < pred_class.size(); ++i) {
        if (!mask[i]) continue;
        ++n;
        if (pred_class[i] == truth[i]) ++hit;
    }
    if (n == 0) throw std::runtime_error("accuracy: no observed points");
    return static_cast<double>(hit) / static_cast<double>(n);
}

double predictive_entropy(const std::vector<std::vector<double>>& class_probs,
                          const std::vector<bool>& mask, bool summed) {
    check_mask(class_probs.size(), mask, "predictive_entropy");
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < class_probs.size(); ++i) {
        if (!mask[i]) continue;
        double h = 0.0;
        for (double p : class_probs[i])
            if (p > 0.0) h -= p * std::log(p);
        total += h;
        ++n;
    }
    if (n == 0) throw std::runtime_error("predictive_entropy: no observed points");
    return summed ? total : total / static_cast<double>(n);
}

double crps_gaussian(double mu, double sigma, double y) {
    if (sigma < 0.0) throw std::runtime_error("crps_gaussian: negative sigma");
    if (sigma < 1e-12) return std::abs(y - mu);  // point-mass limit
    double z = (y - mu) / sigma;
    return sigma * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) -
                    1.0 / std::sqrt(std::numbers::pi));
}

double crps_ensemble(const std::vector<double>& samples, double y) {
    if (samples.empty()) throw std::runtime_error("crps_ensemble: no samples");
    std::size_t m = samples.size();
    double term1 = 0.0;
    for (double s : samples) term1 += std::abs(s - y);
    term1 /= static_cast<double>(m);
    double term2 = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            term2 += std::abs(samples[i] - samples[j]);
    term2 /= static_cast<double>(m) * static_cast<double>(m);
    return term1 - 0.5 * term2;
}

double poisson_nll(const std::vector<double>& lambdas,
                   const std::vector<double>& counts,
                   const std::vector<bool>& mask, bool summed) {
    check_mask(lambdas.size(), mask, "poisson_nll");
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        if (!mask[i]) continue;
        double lam = std::max(lambdas[i], 1e-10);
        total += lam - counts[i] * std::log(lam) + std::lgamma(counts[i] + 1.0);
        ++n;
    }
    if (n == 0) throw std::runtime_error("poisson_nll: no observed points");
    return summed ? total : total / static_cast<double>(n);
}

double coverage95(const std::vector<double>& lo, const std::vector<double>& hi,
                  const std::vector<double>& truth, const std::vector<bool>& mask) {
    check_mask(lo.size(), mask, "coverage95");
    std::size_t n = 0, in = 0;
    for (std::size_t i = 0; i < lo.size(); ++i) {
        if (!mask[i]) continue;
        ++n;
        if (truth[i] >= lo[i] && truth[i] <= hi[i]) ++in;
    }
    if (n == 0) throw std::runtime_error("coverage95: no observed points");
    return static_cast<double>(in) / static_cast<double>(n);
}

void write_report(const std::vector<MetricRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    // CRPS uses the standard non-negative closed form; some texts print
    // the negated variant.
    out << "variable,metric,model,condition,mean,std\n";
    out.precision(10);
    for (const auto& r : rows)
        out << r.variable << ',' << r.metric << ',' << r.model << ','
            << r.condition << ',' << r.mean << ',' << r.stddev << "\n";
}

}  // namespace lsde::metrics
