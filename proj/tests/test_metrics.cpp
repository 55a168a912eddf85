#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <vector>

#include "latentsde/metrics.hpp"

using namespace lsde::metrics;

namespace {

// Quadrature oracle: CRPS = integral of (F(t) - 1{t >= y})^2 dt.
double crps_quadrature(double mu, double sigma, double y) {
    auto F = [&](double t) { return 0.5 * std::erfc(-(t - mu) / (sigma * std::sqrt(2.0))); };
    double lo = std::min(mu, y) - 12.0 * sigma;
    double hi = std::max(mu, y) + 12.0 * sigma;
    // The integrand jumps at t = y, so integrate the two smooth pieces
    // separately; trapezoid error is then O(h^2).
    auto piece = [&](double a, double b, double shift) {
        const int n = 200000;
        double h = (b - a) / n;
        double acc = 0.0;
        for (int i = 0; i <= n; ++i) {
            double d = F(a + i * h) - shift;
            acc += ((i == 0 || i == n) ? 0.5 : 1.0) * d * d;
        }
        return acc * h;
    };
    return piece(lo, y, 0.0) + piece(y, hi, 1.0);
}

}  // namespace

TEST_CASE("rmse") {
    CHECK(rmse({1, 2, 3}, {1, 2, 3}, {true, true, true}) == 0.0);
    CHECK(rmse({3, 5}, {1, 3}, {true, true}) == doctest::Approx(2.0));
    CHECK(rmse({3, 4}, {0, 0}, {true, true}) == doctest::Approx(std::sqrt(12.5)));
    SUBCASE("masked points are ignored") {
        CHECK(rmse({3, 999, 4}, {0, 0, 0}, {true, false, true}) ==
              doctest::Approx(std::sqrt(12.5)));
    }
}

TEST_CASE("accuracy") {
    CHECK(accuracy({0, 1, 2}, {0, 1, 2}, {true, true, true}) == 1.0);
    CHECK(accuracy({1, 2, 3}, {0, 1, 2}, {true, true, true}) == 0.0);
    CHECK(accuracy({0, 1, 2, 3}, {0, 1, 2, 4}, {true, true, true, true}) == 0.75);
    CHECK(accuracy({0, 9}, {0, 1}, {true, false}) == 1.0);
}

TEST_CASE("predictive entropy") {
    std::vector<std::vector<double>> onehot = {{1, 0, 0, 0, 0, 0}};
    std::vector<std::vector<double>> uniform = {
        {1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6}};
    std::vector<std::vector<double>> binary = {{0.5, 0.5, 0, 0, 0, 0}};
    CHECK(predictive_entropy(onehot, {true}) == doctest::Approx(0.0));
    CHECK(predictive_entropy(uniform, {true}) == doctest::Approx(std::log(6.0)));
    CHECK(predictive_entropy(binary, {true}) == doctest::Approx(std::log(2.0)));

    SUBCASE("summed aggregation adds per-point entropies") {
        std::vector<std::vector<double>> three = {uniform[0], uniform[0], uniform[0]};
        std::vector<bool> m = {true, true, true};
        CHECK(predictive_entropy(three, m) == doctest::Approx(std::log(6.0)));
        CHECK(predictive_entropy(three, m, true) == doctest::Approx(3.0 * std::log(6.0)));
    }

    SUBCASE("masked points are ignored") {
        std::vector<std::vector<double>> mix = {uniform[0], onehot[0]};
        CHECK(predictive_entropy(mix, {true, false}) == doctest::Approx(std::log(6.0)));
    }
}

TEST_CASE("gaussian CRPS") {
    SUBCASE("centered unit-variance value") {
        double expect = std::sqrt(2.0 / M_PI) - 1.0 / std::sqrt(M_PI);
        CHECK(crps_gaussian(0.0, 1.0, 0.0) == doctest::Approx(expect));
        CHECK(crps_gaussian(0.0, 1.0, 0.0) == doctest::Approx(0.23370).epsilon(1e-4));
        CHECK(crps_gaussian(0.0, 1.0, 0.0) ==
              doctest::Approx(crps_quadrature(0.0, 1.0, 0.0)).epsilon(1e-6));
    }

    SUBCASE("degenerate sigma gives absolute error") {
        CHECK(crps_gaussian(2.0, 0.0, 5.0) == doctest::Approx(3.0));
        CHECK(crps_gaussian(2.0, 1e-15, 5.0) == doctest::Approx(3.0));
    }

    SUBCASE("negative sigma throws") { CHECK_THROWS(crps_gaussian(0.0, -1.0, 0.0)); }

    SUBCASE("matches the quadrature oracle on random inputs") {
        std::mt19937_64 rng(13);
        std::uniform_real_distribution<double> mu(-5.0, 5.0), sd(0.1, 3.0), y(-8.0, 8.0);
        for (int i = 0; i < 200; ++i) {
            double m = mu(rng), s = sd(rng), v = y(rng);
            double got = crps_gaussian(m, s, v);
            CHECK(got >= 0.0);
            CHECK(std::abs(got - crps_quadrature(m, s, v)) < 1e-6);
            CHECK(got == doctest::Approx(crps_gaussian(2.0 * m - v, s, m)).epsilon(1e-12));
        }
    }

    SUBCASE("minimized over mu at mu equal to the outcome") {
        double best = crps_gaussian(1.7, 0.8, 1.7);
        for (double mu = -2.0; mu <= 5.0; mu += 0.05)
            CHECK(crps_gaussian(mu, 0.8, 1.7) >= best - 1e-12);
    }
}

TEST_CASE("ensemble CRPS") {
    CHECK(crps_ensemble({3.0, 3.0, 3.0}, 3.0) == doctest::Approx(0.0));
    CHECK(crps_ensemble({5.0}, 3.0) == doctest::Approx(2.0));

    SUBCASE("gaussian ensemble matches the closed form") {
        std::mt19937_64 rng(21);
        std::normal_distribution<double> normal(1.0, 2.0);
        std::vector<double> samples(100000);
        for (auto& s : samples) s = normal(rng);
        double got = crps_ensemble(samples, 1.6);
        CHECK(got == doctest::Approx(crps_gaussian(1.0, 2.0, 1.6)).epsilon(0.01));
    }
}

TEST_CASE("poisson NLL") {
    CHECK(poisson_nll({1.0}, {0.0}, {true}) == doctest::Approx(1.0));
    CHECK(poisson_nll({2.0}, {2.0}, {true}) == doctest::Approx(2.0 - std::log(2.0)));

    SUBCASE("Stirling growth at the optimum") {
        double y = 100.0;
        double nll = poisson_nll({y}, {y}, {true});
        CHECK(nll == doctest::Approx(0.5 * std::log(2.0 * M_PI * y)).epsilon(0.01));
    }

    SUBCASE("summed and mean aggregations") {
        std::vector<double> lam = {1.0, 1.0}, y = {0.0, 0.0};
        std::vector<bool> m = {true, true};
        CHECK(poisson_nll(lam, y, m) == doctest::Approx(1.0));
        CHECK(poisson_nll(lam, y, m, true) == doctest::Approx(2.0));
    }

    SUBCASE("minimized at lambda equal to the count") {
        double best = poisson_nll({7.0}, {7.0}, {true});
        for (double lam = 0.5; lam <= 20.0; lam += 0.1)
            CHECK(poisson_nll({lam}, {7.0}, {true}) >= best - 1e-12);
    }

    SUBCASE("masked points are ignored") {
        CHECK(poisson_nll({1.0, 500.0}, {0.0, 3.0}, {true, false}) == doctest::Approx(1.0));
    }
}

TEST_CASE("interval coverage") {
    CHECK(coverage95({0, 0}, {10, 10}, {5, 5}, {true, true}) == 1.0);
    CHECK(coverage95({5, 5}, {5, 5}, {6, 7}, {true, true}) == 0.0);
    CHECK(coverage95({0, 0}, {10, 10}, {5, 50}, {true, true}) == 0.5);

    SUBCASE("calibrated gaussian predictions cover 95 percent") {
        std::mt19937_64 rng(33);
        std::normal_distribution<double> normal(0.0, 1.0);
        const int n = 10000;
        std::vector<double> lo(n), hi(n), truth(n);
        std::vector<bool> mask(n, true);
        const double q = 1.959963984540054;
        for (int i = 0; i < n; ++i) {
            double mu = 3.0 * normal(rng);
            lo[i] = mu - q;
            hi[i] = mu + q;
            truth[i] = mu + normal(rng);
        }
        CHECK(coverage95(lo, hi, truth, mask) == doctest::Approx(0.95).epsilon(0.011));
    }
}

TEST_CASE("report writing") {
    std::vector<MetricRow> rows = {{"hr", "rmse", "sde", "noise=0.1", 1.25, 0.05}};
    const std::string path = "test_report.csv";
    write_report(rows, path);
    std::ifstream in(path);
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    CHECK(header.find("variable") != std::string::npos);
    CHECK(line.find("hr") != std::string::npos);
    CHECK(line.find("rmse") != std::string::npos);
    std::remove(path.c_str());
}
