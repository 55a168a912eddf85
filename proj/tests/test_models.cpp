#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "helpers.h"
#include "latentsde/model.hpp"
#include "latentsde/pkpd.hpp"

using namespace lsde;
using namespace lsde::model;

namespace {

ModelConfig tiny_config(ModelKind kind) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.d_x = 2;
    cfg.d_u = 0;
    cfg.enc_hidden = 4;
    cfg.enc_layers = 1;
    cfg.drift_hidden = 4;
    cfg.lstm_hidden = 4;
    cfg.lstm_layers = 1;
    cfg.dt = 0.2;
    cfg.vars = {{"y", HeadKind::gaussian, 0}};
    cfg.init_seed = 3;
    return cfg;
}

Task tiny_task() {
    Task task;
    task.id = "t0";
    task.times = {0.1, 0.3, 0.5, 0.7, 0.9};
    task.values = {{0.4, -0.2, 0.9, 0.1, -0.5}};
    task.enc_values = task.values;
    task.masks = {{true, true, true, false, true}};
    task.control.dim = 0;
    task.obs_end = 1.0;
    return task;
}

void set_param(nn::ParamStore& store, const std::string& name,
               const std::vector<double>& data) {
    int slot = store.find(name);
    REQUIRE(slot >= 0);
    REQUIRE(store.values(slot).size() == data.size());
    store.values(slot).data = data;
}

// Zero the initial-state encoder head so q0 = N(mean_val, std_val) exactly.
void pin_initial(LatentModel& m, double mean_val, double std_val) {
    auto& store = m.params();
    std::size_t dx = m.config().d_x;
    std::size_t eh = m.config().enc_hidden;
    set_param(store, "init_head.l0.w", std::vector<double>(2 * dx * eh, 0.0));
    std::vector<double> b(2 * dx, 0.0);
    double raw = std_val > 2e-6 ? std::log(std::expm1(std_val - 1e-6)) : -40.0;
    for (std::size_t i = 0; i < dx; ++i) {
        b[i] = mean_val;
        b[dx + i] = raw;
    }
    set_param(store, "init_head.l0.b", b);
}

}  // namespace

TEST_CASE("default configs per dataset kind") {
    data::Dataset pk;
    pk.meta.kind = "pkpd";
    ModelConfig cp = default_config(pk, ModelKind::sde);
    REQUIRE(cp.vars.size() == 2);
    CHECK(cp.vars[0].name == "cell_count");
    CHECK(cp.vars[0].head == HeadKind::poisson);
    CHECK(cp.vars[1].head == HeadKind::categorical);
    CHECK(cp.vars[1].classes == 6);
    CHECK(cp.d_u == 2);
    CHECK(cp.latent_readout);

    data::Dataset icu;
    icu.meta.kind = "icu";
    ModelConfig ci = default_config(icu, ModelKind::ode);
    REQUIRE(ci.vars.size() == 3);
    for (const auto& v : ci.vars) CHECK(v.head == HeadKind::gaussian);
    CHECK(ci.d_u == 0);
    CHECK(!ci.latent_readout);
}

TEST_CASE("task construction from a synthetic record") {
    pkpd::CohortConfig cc;
    cc.n_patients = 6;
    cc.seed = 9;
    auto ds = pkpd::generate_cohort(cc);
    // Both synthetic channels are discrete heads; only covariates get stats.
    std::vector<std::string> none;
    auto stats = data::fit_normalizer(ds, &none);
    ModelConfig cfg = default_config(ds, ModelKind::sde);

    SUBCASE("forecast mode hides the second half and aligns the boundary") {
        Task t = model::build_task(ds.records[0], ds.meta, stats, cfg, true);
        CHECK(t.obs_end == doctest::Approx(0.5).epsilon(1e-12));
        for (std::size_t i = 0; i < t.times.size(); ++i) {
            CHECK(t.times[i] >= 0.0);
            CHECK(t.times[i] <= 1.0 + 1e-12);
            if (t.times[i] > t.obs_end + 1e-9)
                for (std::size_t v = 0; v < t.masks.size(); ++v)
                    CHECK(!t.masks[v][i]);
        }
        CHECK(t.covariates.size() == cfg.covariate_names.size());
        CHECK(t.truth_times.size() == 53);
    }

    SUBCASE("full mode keeps the simulator's masks") {
        Task t = model::build_task(ds.records[0], ds.meta, stats, cfg, false);
        CHECK(t.obs_end == 1.0);
        std::size_t n_obs = 0;
        for (std::size_t i = 0; i < t.times.size(); ++i)
            if (t.masks[0][i]) ++n_obs;
        std::size_t rec_obs = 0;
        for (auto m : ds.records[0].masks[0])
            if (m) ++rec_obs;
        CHECK(n_obs == rec_obs);
    }

    SUBCASE("treatment pulses become unit control events") {
        std::size_t treated = ds.records.size();
        for (std::size_t i = 0; i < ds.records.size(); ++i)
            if (!ds.records[i].chemo_times.empty()) {
                treated = i;
                break;
            }
        REQUIRE(treated < ds.records.size());
        Task t = model::build_task(ds.records[treated], ds.meta, stats, cfg, false);
        REQUIRE(t.control.dim == 2);
        double first = ds.records[treated].chemo_times.front();
        auto before = sde::query_control(t.control, (first - 0.5) / 52.0);
        auto during = sde::query_control(t.control, (first + 0.5) / 52.0);
        CHECK(before[0] == 0.0);
        CHECK(during[0] == 1.0);
    }

    SUBCASE("a record with nothing visible is rejected") {
        auto rec = ds.records[0];
        for (auto& m : rec.masks)
            for (auto& b : m) b = 0;
        CHECK_THROWS_WITH_AS(model::build_task(rec, ds.meta, stats, cfg, false),
                             doctest::Contains("no visible observations"),
                             std::runtime_error);
    }

    SUBCASE("a record missing a configured variable is rejected") {
        auto rec = ds.records[0];
        rec.variables[0] = "something_else";
        CHECK_THROWS(model::build_task(rec, ds.meta, stats, cfg, false));
    }
}

TEST_CASE("elbo ignores values hidden behind the mask") {
    for (ModelKind kind : {ModelKind::sde, ModelKind::ode, ModelKind::lstm}) {
        CAPTURE(to_string(kind));
        LatentModel m(tiny_config(kind));
        Task a = tiny_task();
        Task b = a;
        b.values[0][3] = 123.0;  // masked slot
        b.enc_values[0][3] = -77.0;
        auto pa = m.elbo(a, 42, 1.0, nullptr);
        auto pb = m.elbo(b, 42, 1.0, nullptr);
        CHECK(pa.recon == pb.recon);
        CHECK(pa.kl0 == pb.kl0);
        CHECK(pa.path_kl == pb.path_kl);
    }
}

TEST_CASE("initial-state KL matches the closed form") {
    SUBCASE("matching standard normals give zero") {
        LatentModel m(tiny_config(ModelKind::ode));
        pin_initial(m, 0.0, 1.0);
        auto p = m.elbo(tiny_task(), 1, 1.0, nullptr);
        CHECK(std::abs(p.kl0) < 1e-9);
    }
    SUBCASE("unit mean shift costs one half per dimension") {
        LatentModel m(tiny_config(ModelKind::ode));
        pin_initial(m, 1.0, 1.0);
        auto p = m.elbo(tiny_task(), 1, 1.0, nullptr);
        CHECK(p.kl0 == doctest::Approx(0.5 * 2).epsilon(1e-9));
    }
}

TEST_CASE("path KL vanishes when posterior and prior drifts are tied") {
    ModelConfig cfg = tiny_config(ModelKind::sde);
    LatentModel m(cfg);
    auto& store = m.params();
    std::size_t dx = cfg.d_x, h = cfg.drift_hidden, eh = cfg.enc_hidden;

    // Copy the prior weights into the posterior net and zero its context
    // columns, making the two drifts identical functions of the state.
    auto copy_l0 = [&] {
        const auto& pw = store.values(store.find("drift_prior.l0.w")).data;
        std::vector<double> qw(h * (dx + eh), 0.0);
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t cidx = 0; cidx < dx; ++cidx)
                qw[r * (dx + eh) + cidx] = pw[r * dx + cidx];
        set_param(store, "drift_post.l0.w", qw);
        set_param(store, "drift_post.l0.b",
                  store.values(store.find("drift_prior.l0.b")).data);
    };
    copy_l0();
    for (int l : {1, 2}) {
        std::string pl = "drift_prior.l" + std::to_string(l);
        std::string ql = "drift_post.l" + std::to_string(l);
        set_param(store, ql + ".w", store.values(store.find(pl + ".w")).data);
        set_param(store, ql + ".b", store.values(store.find(pl + ".b")).data);
    }

    auto p = m.elbo(tiny_task(), 7, 1.0, nullptr);
    CHECK(p.path_kl == 0.0);

    SUBCASE("untied drifts give strictly positive path KL") {
        LatentModel fresh(cfg);
        auto q = fresh.elbo(tiny_task(), 7, 1.0, nullptr);
        CHECK(q.path_kl > 0.0);
    }
}

TEST_CASE("deterministic kinds have zero path KL and reproducible values") {
    for (ModelKind kind : {ModelKind::ode, ModelKind::lstm}) {
        CAPTURE(to_string(kind));
        LatentModel m(tiny_config(kind));
        auto a = m.elbo(tiny_task(), 5, 2.0, nullptr);
        auto b = m.elbo(tiny_task(), 5, 2.0, nullptr);
        CHECK(a.path_kl == 0.0);
        CHECK(a.recon == b.recon);
        CHECK(a.kl0 == b.kl0);
        CHECK(a.objective(2.0) == b.objective(2.0));
    }
}

TEST_CASE("elbo gradient matches finite differences") {
    Task task = tiny_task();
    double beta = 0.7;
    for (ModelKind kind : {ModelKind::sde, ModelKind::ode, ModelKind::lstm}) {
        CAPTURE(to_string(kind));
        LatentModel m(tiny_config(kind));
        auto& store = m.params();

        std::vector<double> grad(store.total_size(), 0.0);
        m.elbo(task, 11, beta, &grad);

        auto loss_of = [&] {
            auto p = m.elbo(task, 11, beta, nullptr);
            return -p.objective(beta) + p.readout_nll;
        };
        std::vector<double> flat = store.flatten();
        std::vector<double> fd(flat.size(), 0.0);
        const double hstep = 1e-5;
        for (std::size_t i = 0; i < flat.size(); ++i) {
            double keep = flat[i];
            flat[i] = keep + hstep;
            store.load_flat(flat);
            double up = loss_of();
            flat[i] = keep - hstep;
            store.load_flat(flat);
            double dn = loss_of();
            flat[i] = keep;
            fd[i] = (up - dn) / (2.0 * hstep);
        }
        store.load_flat(flat);
        CHECK(testutil::max_rel_err(grad, fd, 1e-4) < 2e-3);
    }
}

TEST_CASE("forecast output invariants") {
    ModelConfig cfg = tiny_config(ModelKind::sde);
    cfg.vars = {{"y", HeadKind::gaussian, 0},
                {"count", HeadKind::poisson, 0},
                {"grade", HeadKind::categorical, 6}};
    LatentModel m(cfg);
    Task task = tiny_task();
    task.values.push_back({3, 5, 2, 4, 6});
    task.enc_values.push_back({0.3, 0.5, 0.2, 0.4, 0.6});
    task.masks.push_back({true, false, true, true, false});
    task.values.push_back({0, 1, 1, 2, 3});
    task.enc_values.push_back({0, 1, 1, 2, 3});
    task.masks.push_back({true, true, false, true, true});
    task.obs_end = 0.6;  // multiple of dt = 0.2

    std::vector<double> when = {0.2, 0.6, 0.8, 1.0};
    Forecast fc = m.forecast(task, when, 8, 77);
    REQUIRE(fc.vars.size() == 3);
    for (const auto& vf : fc.vars) {
        CHECK(vf.times == when);
        for (std::size_t t = 0; t < when.size(); ++t) {
            CHECK(vf.sd[t] >= 0.0);
            CHECK(vf.q025[t] <= vf.mean[t] + 1e-12);
            CHECK(vf.q975[t] >= vf.mean[t] - 1e-12);
            CHECK(vf.samples[t].size() == 8);
        }
    }
    const auto& cat = fc.vars[2];
    REQUIRE(cat.class_probs.size() == when.size());
    for (const auto& p : cat.class_probs) {
        double sum = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto& poi = fc.vars[1];
    REQUIRE(poi.lambda_mean.size() == when.size());
    for (std::size_t t = 0; t < when.size(); ++t) {
        CHECK(poi.lambda_mean[t] > 0.0);
        for (double d : poi.samples[t]) CHECK(d >= 0.0);
    }

    SUBCASE("single sample collapses the quantile band") {
        Forecast one = m.forecast(task, when, 1, 3);
        const auto& vf = one.vars[0];
        for (std::size_t t = 0; t < when.size(); ++t) {
            CHECK(vf.q025[t] == vf.mean[t]);
            CHECK(vf.q975[t] == vf.mean[t]);
        }
    }

    SUBCASE("same seed reproduces the forecast exactly") {
        Forecast a = m.forecast(task, when, 4, 123);
        Forecast b = m.forecast(task, when, 4, 123);
        CHECK(a.vars[0].mean == b.vars[0].mean);
        CHECK(a.vars[0].samples == b.vars[0].samples);
        CHECK(a.vars[2].class_probs == b.vars[2].class_probs);
    }

    SUBCASE("input validation") {
        CHECK_THROWS(m.forecast(task, {1.5}, 4, 1));
        CHECK_THROWS(m.forecast(task, when, 0, 1));
    }
}

TEST_CASE("gaussian forecasts are reported in raw units") {
    ModelConfig cfg = tiny_config(ModelKind::ode);
    LatentModel plain(cfg);
    LatentModel scaled(cfg);  // same init_seed -> identical parameters
    scaled.norm_stats.by_var["y"] = {10.0, 2.0};
    Task task = tiny_task();
    std::vector<double> when = {0.5, 1.0};
    Forecast a = plain.forecast(task, when, 3, 5);
    Forecast b = scaled.forecast(task, when, 3, 5);
    for (std::size_t t = 0; t < when.size(); ++t) {
        CHECK(b.vars[0].mean[t] ==
              doctest::Approx(10.0 + 2.0 * a.vars[0].mean[t]).epsilon(1e-12));
        CHECK(b.vars[0].sd[t] == doctest::Approx(2.0 * a.vars[0].sd[t]).epsilon(1e-12));
    }
}

TEST_CASE("a pinned initial state makes the deterministic rollout ensemble collapse") {
    LatentModel m(tiny_config(ModelKind::ode));
    pin_initial(m, 0.3, 1e-6);
    Forecast fc = m.forecast(tiny_task(), {0.4, 0.8}, 6, 9);
    for (std::size_t t = 0; t < 2; ++t)
        CHECK(fc.vars[0].q975[t] - fc.vars[0].q025[t] < 1e-4);
}

TEST_CASE("checkpoint round trip preserves behavior bit for bit") {
    ModelConfig cfg = tiny_config(ModelKind::sde);
    cfg.vars.push_back({"grade", HeadKind::categorical, 6});
    cfg.covariate_names = {"age"};
    LatentModel m(cfg);
    m.norm_stats.by_var["y"] = {1.5, 0.5};
    m.norm_stats.by_var["cov:age"] = {60.0, 10.0};
    m.rng_state = "seed=9;best_epoch=3";

    Task task = tiny_task();
    task.values.push_back({0, 1, 2, 3, 4});
    task.enc_values.push_back({0, 1, 2, 3, 4});
    task.masks.push_back({true, true, true, true, true});
    task.covariates = {0.2};

    const std::string path = "test_ckpt.json";
    m.save(path);
    LatentModel back = LatentModel::load(path);
    std::remove(path.c_str());

    CHECK(back.config().kind == cfg.kind);
    CHECK(back.config().vars.size() == cfg.vars.size());
    CHECK(back.config().covariate_names == cfg.covariate_names);
    CHECK(back.norm_stats.by_var == m.norm_stats.by_var);
    CHECK(back.rng_state == m.rng_state);
    CHECK(back.params().flatten() == m.params().flatten());

    auto pa = m.elbo(task, 31, 1.5, nullptr);
    auto pb = back.elbo(task, 31, 1.5, nullptr);
    CHECK(pa.recon == pb.recon);
    CHECK(pa.kl0 == pb.kl0);
    CHECK(pa.path_kl == pb.path_kl);

    Forecast fa = m.forecast(task, {0.5, 1.0}, 3, 8);
    Forecast fb = back.forecast(task, {0.5, 1.0}, 3, 8);
    for (std::size_t j = 0; j < fa.vars.size(); ++j) {
        CHECK(fa.vars[j].mean == fb.vars[j].mean);
        CHECK(fa.vars[j].sd == fb.vars[j].sd);
        CHECK(fa.vars[j].samples == fb.vars[j].samples);
    }

    SUBCASE("corrupt checkpoints are rejected") {
        CHECK_THROWS(LatentModel::load("no_such_checkpoint.json"));
    }
}

TEST_CASE("model kind names round trip") {
    for (ModelKind k : {ModelKind::sde, ModelKind::ode, ModelKind::lstm})
        CHECK(kind_from_string(to_string(k)) == k);
    CHECK_THROWS(kind_from_string("transformer"));
}
