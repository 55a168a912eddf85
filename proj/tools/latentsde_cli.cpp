// Command-line entry point: simulate / ingest / train / forecast /
// evaluate / sweep. Every command is deterministic given (config, seed)
// and writes its fully-resolved config next to its outputs.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latentsde/dataset.hpp"
#include "latentsde/metrics.hpp"
#include "latentsde/model.hpp"
#include "latentsde/physionet.hpp"
#include "latentsde/pkpd.hpp"
#include "latentsde/rng.hpp"
#include "latentsde/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace lsde;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x9E3779B97F4A7C15ULL));
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(1) << "\n";
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return json::parse(in);
}

double noise_sigma(const std::string& level) {
    if (level == "low") return 0.01;
    if (level == "moderate") return 0.1;
    if (level == "high") return 0.5;
    throw std::runtime_error("unknown noise level: " + level);
}

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

std::string condition_of(const data::DatasetMeta& meta) {
    if (meta.kind == "pkpd") {
        double sg = meta.extra.count("sigma_proc") ? meta.extra.at("sigma_proc") : 0.0;
        double mf = meta.extra.count("missing_frac") ? meta.extra.at("missing_frac") : 0.0;
        return "noise=" + fmt(sg) + ";missing=" + fmt(mf);  // no comma: CSV cell
    }
    return meta.kind;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::size_t n = 100;
    std::string noise = "moderate";
    int missing = 50;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
    if (a.missing != 20 && a.missing != 50 && a.missing != 80)
        throw std::runtime_error("--missing must be 20, 50 or 80");
    pkpd::CohortConfig cc;
    cc.n_patients = a.n;
    cc.sigma_proc = noise_sigma(a.noise);
    cc.missing_frac = a.missing / 100.0;
    cc.seed = a.seed;
    auto ds = pkpd::generate_cohort(cc);
    fs::create_directories(a.out);
    data::save_dataset(ds, a.out + "/dataset.jsonl");
    json cfg = {{"command", "simulate"},
                {"n", a.n},
                {"noise", a.noise},
                {"sigma_proc", cc.sigma_proc},
                {"missing", a.missing},
                {"missing_frac", cc.missing_frac},
                {"seed", a.seed},
                {"out", a.out}};
    write_json_file(cfg, a.out + "/simulate.config.json");
    std::size_t observed = 0, total = 0;
    for (const auto& r : ds.records)
        for (const auto& m : r.masks)
            for (auto b : m) {
                ++total;
                observed += b;
            }
    std::cout << "simulated " << ds.records.size() << " patients (noise=" << a.noise
              << ", sigma=" << cc.sigma_proc << ", missing=" << a.missing
              << "%), observed " << observed << "/" << total
              << " points -> " << a.out << "/dataset.jsonl\n";
    return kExitOk;
}

// ------------------------------------------------------------------ ingest

struct IngestArgs {
    std::string records_dir;
    std::string out;
};

int cmd_ingest(const IngestArgs& a) {
    auto result = icu::ingest_directory(a.records_dir);
    fs::create_directories(a.out);
    data::save_dataset(result.dataset, a.out + "/dataset.jsonl");
    {
        std::ofstream ex(a.out + "/exclusions.txt");
        for (const auto& line : result.exclusion_log) ex << line << "\n";
    }
    auto stats = data::fit_normalizer(result.dataset);
    data::save_norm_stats(stats, a.out + "/norm_stats.json");
    json cfg = {{"command", "ingest"},
                {"records_dir", a.records_dir},
                {"out", a.out}};
    write_json_file(cfg, a.out + "/ingest.config.json");
    std::cout << "parsed " << result.parsed << " records, kept "
              << result.dataset.records.size() << ", excluded " << result.excluded
              << " -> " << a.out << "/dataset.jsonl\n";
    return kExitOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
    std::string model = "sde";
    std::string data;
    std::string config;  // optional JSON overrides
    std::uint64_t seed = 1;
    std::string out;
};

void apply_overrides(const json& j, model::ModelConfig& mc, train::TrainConfig& tc) {
    if (j.contains("model")) {
        const json& m = j.at("model");
        if (m.contains("d_x")) mc.d_x = m.at("d_x").get<std::size_t>();
        if (m.contains("enc_hidden")) mc.enc_hidden = m.at("enc_hidden").get<std::size_t>();
        if (m.contains("enc_layers")) mc.enc_layers = m.at("enc_layers").get<std::size_t>();
        if (m.contains("drift_hidden"))
            mc.drift_hidden = m.at("drift_hidden").get<std::size_t>();
        if (m.contains("lstm_hidden")) mc.lstm_hidden = m.at("lstm_hidden").get<std::size_t>();
        if (m.contains("lstm_layers")) mc.lstm_layers = m.at("lstm_layers").get<std::size_t>();
        if (m.contains("dt")) mc.dt = m.at("dt").get<double>();
        if (m.contains("prefix_fraction"))
            mc.prefix_fraction = m.at("prefix_fraction").get<double>();
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        if (t.contains("epochs")) tc.epochs = t.at("epochs").get<std::size_t>();
        if (t.contains("batch_size")) tc.batch_size = t.at("batch_size").get<std::size_t>();
        if (t.contains("lr0")) tc.lr0 = t.at("lr0").get<double>();
        if (t.contains("lr_decay")) tc.lr_decay = t.at("lr_decay").get<double>();
        if (t.contains("weight_decay"))
            tc.weight_decay = t.at("weight_decay").get<double>();
        if (t.contains("anneal_cycles"))
            tc.anneal_cycles = t.at("anneal_cycles").get<std::size_t>();
        if (t.contains("anneal_max")) tc.anneal_max = t.at("anneal_max").get<double>();
        if (t.contains("posterior_samples"))
            tc.posterior_samples = t.at("posterior_samples").get<std::size_t>();
        if (t.contains("grad_clip")) tc.grad_clip = t.at("grad_clip").get<double>();
        if (t.contains("val_samples"))
            tc.val_samples = t.at("val_samples").get<std::size_t>();
    }
}

json resolved_config(const model::ModelConfig& mc, const train::TrainConfig& tc) {
    json vars = json::array();
    for (const auto& v : mc.vars)
        vars.push_back({{"name", v.name}, {"classes", v.classes}});
    return {{"model",
             {{"kind", model::to_string(mc.kind)},
              {"d_x", mc.d_x},
              {"d_u", mc.d_u},
              {"enc_hidden", mc.enc_hidden},
              {"enc_layers", mc.enc_layers},
              {"drift_hidden", mc.drift_hidden},
              {"lstm_hidden", mc.lstm_hidden},
              {"lstm_layers", mc.lstm_layers},
              {"dt", mc.dt},
              {"sigma_floor", mc.sigma_floor},
              {"prefix_fraction", mc.prefix_fraction},
              {"latent_readout", mc.latent_readout},
              {"init_seed", mc.init_seed},
              {"vars", vars},
              {"covariate_names", mc.covariate_names}}},
            {"train",
             {{"epochs", tc.epochs},
              {"batch_size", tc.batch_size},
              {"lr0", tc.lr0},
              {"lr_decay", tc.lr_decay},
              {"weight_decay", tc.weight_decay},
              {"anneal_cycles", tc.anneal_cycles},
              {"anneal_max", tc.anneal_max},
              {"seed", tc.seed},
              {"posterior_samples", tc.posterior_samples},
              {"grad_clip", tc.grad_clip},
              {"val_samples", tc.val_samples}}}};
}

int cmd_train(const TrainArgs& a) {
    auto ds = data::load_dataset(a.data);
    model::ModelConfig mc = model::default_config(ds, model::kind_from_string(a.model));
    train::TrainConfig tc;
    tc.epochs = ds.meta.kind == "icu" ? 100 : 300;
    tc.seed = a.seed;
    mc.init_seed = mix(a.seed, 0x1417);
    if (!a.config.empty()) apply_overrides(read_json_file(a.config), mc, tc);

    fs::create_directories(a.out);
    json cfg = resolved_config(mc, tc);
    cfg["command"] = "train";
    cfg["data"] = a.data;
    write_json_file(cfg, a.out + "/train.config.json");

    auto t0 = std::chrono::steady_clock::now();
    auto result = train::train(model::LatentModel(mc), ds, tc);
    auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    train::write_metrics_log(result.log, a.out + "/metrics.csv");
    result.model.save(a.out + "/checkpoint.json");
    std::cerr << "training wall time: " << secs << " s\n";
    if (result.diverged) {
        std::cerr << "training diverged; kept last good checkpoint (epoch "
                  << result.best_epoch << ")\n";
        return kExitDiverged;
    }
    std::cout << "trained " << a.model << " for " << result.log.size()
              << " epochs (best epoch " << result.best_epoch << ") -> " << a.out
              << "/checkpoint.json\n";
    return kExitOk;
}

// ---------------------------------------------------------------- forecast

struct ForecastArgs {
    std::string ckpt;
    std::string data;
    std::size_t n_samples = 100;
    std::uint64_t seed = 1;
    std::string split = "test";
    std::string out;
};

int cmd_forecast(const ForecastArgs& a) {
    auto m = model::LatentModel::load(a.ckpt);
    auto ds = data::load_dataset(a.data);
    if (m.norm_stats.by_var.empty()) {
        std::vector<std::string> gaussian_vars;
        for (const auto& v : m.config().vars)
            if (v.head == model::HeadKind::gaussian) gaussian_vars.push_back(v.name);
        m.norm_stats = data::fit_normalizer(ds, &gaussian_vars);
    }
    const auto& cfg = m.config();

    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        auto s = data::split_of(ds.records[i].id);
        bool take = a.split == "all" ||
                    (a.split == "train" && s == data::Split::train) ||
                    (a.split == "val" && s == data::Split::val) ||
                    (a.split == "test" && s == data::Split::test);
        if (take) idx.push_back(i);
    }
    if (idx.empty())
        for (std::size_t i = 0; i < ds.records.size(); ++i) idx.push_back(i);

    fs::create_directories(a.out);
    std::ofstream csv(a.out + "/forecasts.csv");
    csv.precision(10);
    csv << "patient,time,variable,mean,std,q2.5,q97.5,truth\n";

    json pred;
    pred["schema_version"] = 1;
    pred["model"] = model::to_string(cfg.kind);
    pred["condition"] = condition_of(ds.meta);
    pred["seed"] = a.seed;
    pred["n_samples"] = a.n_samples;
    json records = json::array();

    double H = ds.meta.horizon;
    for (std::size_t i : idx) {
        const auto& rec = ds.records[i];
        model::Task obs = model::build_task(rec, ds.meta, m.norm_stats, cfg, true);
        model::Task full = model::build_task(rec, ds.meta, m.norm_stats, cfg, false);

        std::set<double> dt_set;
        for (std::size_t k = 0; k < full.times.size(); ++k) {
            if (full.times[k] <= obs.obs_end + 1e-9) continue;
            for (const auto& mk : full.masks)
                if (mk[k]) dt_set.insert(full.times[k]);
        }
        if (cfg.latent_readout)
            for (double t : full.truth_times)
                if (t > obs.obs_end + 1e-9) dt_set.insert(t);
        if (dt_set.empty()) continue;
        std::vector<double> decode_times(dt_set.begin(), dt_set.end());

        auto fc = m.forecast(obs, decode_times, a.n_samples, mix(a.seed, i));

        json jrec;
        jrec["id"] = rec.id;
        json jvars = json::array();
        for (const auto& vf : fc.vars) {
            // Truth lookup per decode time: observation variables use the
            // record's masked values, the latent readout uses truth_grid.
            std::vector<double> truth(decode_times.size(), 0.0);
            std::vector<int> truth_mask(decode_times.size(), 0);
            if (vf.name == "tumor_volume") {
                for (std::size_t k = 0; k < decode_times.size(); ++k)
                    for (std::size_t q = 0; q < full.truth_times.size(); ++q)
                        if (std::abs(full.truth_times[q] - decode_times[k]) < 1e-9) {
                            truth[k] = full.truth_values[q];
                            truth_mask[k] = 1;
                        }
            } else {
                std::size_t j = 0;
                while (cfg.vars[j].name != vf.name) ++j;
                for (std::size_t k = 0; k < decode_times.size(); ++k)
                    for (std::size_t q = 0; q < full.times.size(); ++q)
                        if (std::abs(full.times[q] - decode_times[k]) < 1e-9 &&
                            full.masks[j][q]) {
                            truth[k] = full.values[j][q];
                            truth_mask[k] = 1;
                        }
            }
            for (std::size_t k = 0; k < decode_times.size(); ++k) {
                csv << rec.id << ',' << decode_times[k] * H << ',' << vf.name << ','
                    << vf.mean[k] << ',' << vf.sd[k] << ',' << vf.q025[k] << ','
                    << vf.q975[k] << ',';
                if (truth_mask[k]) csv << truth[k];
                csv << "\n";
            }
            json jv;
            jv["name"] = vf.name;
            jv["times"] = vf.times;
            jv["mean"] = vf.mean;
            jv["sd"] = vf.sd;
            jv["q025"] = vf.q025;
            jv["q975"] = vf.q975;
            jv["truth"] = truth;
            jv["truth_mask"] = truth_mask;
            jv["samples"] = vf.samples;
            if (!vf.class_probs.empty()) jv["class_probs"] = vf.class_probs;
            if (!vf.lambda_mean.empty()) jv["lambda"] = vf.lambda_mean;
            jvars.push_back(std::move(jv));
        }
        jrec["vars"] = std::move(jvars);
        records.push_back(std::move(jrec));
    }
    pred["records"] = std::move(records);
    write_json_file(pred, a.out + "/forecasts.pred.json");
    json rcfg = {{"command", "forecast"}, {"ckpt", a.ckpt},    {"data", a.data},
                 {"n_samples", a.n_samples}, {"seed", a.seed}, {"split", a.split},
                 {"out", a.out}};
    write_json_file(rcfg, a.out + "/forecast.config.json");
    std::cout << "forecast " << pred["records"].size() << " patients -> " << a.out
              << "/forecasts.csv\n";
    return kExitOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::vector<std::string> forecasts;
    std::string out;
};

int cmd_evaluate(const EvaluateArgs& a) {
    if (a.forecasts.empty()) throw std::runtime_error("no forecast files given");
    // (variable, metric, model, condition) -> per-run (per-seed) values
    std::map<std::array<std::string, 4>, std::vector<double>> cells;

    for (const auto& path : a.forecasts) {
        if (!fs::exists(path)) throw std::runtime_error("missing forecast file: " + path);
        json pred = read_json_file(path);
        std::string mdl = pred.at("model").get<std::string>();
        std::string cond = pred.at("condition").get<std::string>();

        struct Acc {
            std::vector<double> truth, mean, lambda;
            std::vector<double> lo, hi;
            std::vector<std::vector<double>> samples, probs;
        };
        std::map<std::string, Acc> by_var;
        for (const auto& jrec : pred.at("records")) {
            for (const auto& jv : jrec.at("vars")) {
                auto& acc = by_var[jv.at("name").get<std::string>()];
                auto tm = jv.at("truth_mask").get<std::vector<int>>();
                auto tr = jv.at("truth").get<std::vector<double>>();
                auto mn = jv.at("mean").get<std::vector<double>>();
                auto lo = jv.at("q025").get<std::vector<double>>();
                auto hi = jv.at("q975").get<std::vector<double>>();
                auto sm = jv.at("samples").get<std::vector<std::vector<double>>>();
                for (std::size_t k = 0; k < tm.size(); ++k) {
                    if (!tm[k]) continue;
                    acc.truth.push_back(tr[k]);
                    acc.mean.push_back(mn[k]);
                    acc.lo.push_back(lo[k]);
                    acc.hi.push_back(hi[k]);
                    acc.samples.push_back(sm[k]);
                    if (jv.contains("lambda"))
                        acc.lambda.push_back(jv.at("lambda")[k].get<double>());
                    if (jv.contains("class_probs"))
                        acc.probs.push_back(
                            jv.at("class_probs")[k].get<std::vector<double>>());
                }
            }
        }
        for (const auto& [var, acc] : by_var) {
            if (acc.truth.empty()) continue;
            std::vector<bool> mask(acc.truth.size(), true);
            auto put = [&](const std::string& metric, double v) {
                cells[{var, metric, mdl, cond}].push_back(v);
            };
            put("rmse", metrics::rmse(acc.mean, acc.truth, mask));
            double crps = 0.0;
            for (std::size_t k = 0; k < acc.truth.size(); ++k)
                crps += metrics::crps_ensemble(acc.samples[k], acc.truth[k]);
            put("crps", crps / static_cast<double>(acc.truth.size()));
            put("coverage95", metrics::coverage95(acc.lo, acc.hi, acc.truth, mask));
            if (!acc.lambda.empty())
                put("nll", metrics::poisson_nll(acc.lambda, acc.truth, mask));
            if (!acc.probs.empty()) {
                std::vector<int> pred_class, truth_class;
                for (std::size_t k = 0; k < acc.probs.size(); ++k) {
                    const auto& p = acc.probs[k];
                    pred_class.push_back(static_cast<int>(
                        std::max_element(p.begin(), p.end()) - p.begin()));
                    truth_class.push_back(static_cast<int>(std::llround(acc.truth[k])));
                }
                put("accuracy", metrics::accuracy(pred_class, truth_class, mask));
                put("entropy", metrics::predictive_entropy(acc.probs, mask));
            }
        }
    }

    std::vector<metrics::MetricRow> rows;
    for (const auto& [key, vals] : cells) {
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double sd = 0.0;
        for (double v : vals) sd += (v - mean) * (v - mean);
        sd = vals.size() > 1 ? std::sqrt(sd / static_cast<double>(vals.size() - 1)) : 0.0;
        rows.push_back({key[0], key[1], key[2], key[3], mean, sd});
    }
    fs::create_directories(fs::path(a.out).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(a.out).parent_path());
    metrics::write_report(rows, a.out);
    json rcfg = {{"command", "evaluate"}, {"forecasts", a.forecasts}, {"out", a.out}};
    write_json_file(rcfg, a.out + ".config.json");
    std::cout << "evaluated " << a.forecasts.size() << " forecast files, "
              << rows.size() << " table cells -> " << a.out << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------- sweep

struct SweepArgs {
    std::string axis = "noise";
    std::size_t n = 200;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::vector<std::string> models = {"sde", "ode"};
    std::string config;
    std::size_t parallel = 1;
    std::size_t n_samples = 50;
    std::string out;
};

int cmd_sweep(const SweepArgs& a) {
    std::vector<std::string> noise_levels, missing_levels;
    if (a.axis == "noise") {
        noise_levels = {"low", "moderate", "high"};
        missing_levels = {"50"};
    } else if (a.axis == "missing") {
        noise_levels = {"moderate"};
        missing_levels = {"20", "50", "80"};
    } else {
        throw std::runtime_error("--axis must be noise or missing");
    }

    struct Run {
        std::string noise, missing;
        std::uint64_t seed;
        std::string dir;
    };
    std::vector<Run> runs;
    for (const auto& nl : noise_levels)
        for (const auto& ml : missing_levels)
            for (auto seed : a.seeds) {
                std::string dir = a.out + "/" + a.axis + "_" +
                                  (a.axis == "noise" ? nl : ml) + "/seed_" +
                                  std::to_string(seed);
                runs.push_back({nl, ml, seed, dir});
            }

    std::vector<std::string> pred_files;
    std::vector<std::exception_ptr> errors(runs.size());
    auto do_run = [&](const Run& r, std::size_t ri) {
        try {
            SimulateArgs sim{a.n, r.noise, std::stoi(r.missing), r.seed, r.dir + "/data"};
            cmd_simulate(sim);
            for (const auto& mdl : a.models) {
                TrainArgs tr{mdl, r.dir + "/data/dataset.jsonl", a.config, r.seed,
                             r.dir + "/" + mdl};
                if (cmd_train(tr) == kExitDiverged)
                    throw std::runtime_error("training diverged in " + r.dir + "/" + mdl);
                ForecastArgs fcst{r.dir + "/" + mdl + "/checkpoint.json",
                                  r.dir + "/data/dataset.jsonl",
                                  a.n_samples,
                                  r.seed,
                                  "test",
                                  r.dir + "/" + mdl + "/forecast"};
                cmd_forecast(fcst);
            }
        } catch (...) {
            errors[ri] = std::current_exception();
        }
    };

    // Independent pipelines; optional thread-level fan-out. Outputs land in
    // disjoint directories, so aggregation order stays fixed.
    for (std::size_t base = 0; base < runs.size(); base += std::max<std::size_t>(a.parallel, 1)) {
        std::vector<std::thread> pool;
        std::size_t hi = std::min(runs.size(), base + std::max<std::size_t>(a.parallel, 1));
        for (std::size_t ri = base; ri < hi; ++ri)
            pool.emplace_back(do_run, std::cref(runs[ri]), ri);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    for (const auto& r : runs)
        for (const auto& mdl : a.models)
            pred_files.push_back(r.dir + "/" + mdl + "/forecast/forecasts.pred.json");
    EvaluateArgs ev{pred_files, a.out + "/report.csv"};
    cmd_evaluate(ev);
    json rcfg = {{"command", "sweep"},   {"axis", a.axis},      {"n", a.n},
                 {"seeds", a.seeds},     {"models", a.models},  {"config", a.config},
                 {"parallel", a.parallel}, {"n_samples", a.n_samples}, {"out", a.out}};
    write_json_file(rcfg, a.out + "/sweep.config.json");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent SDE / ODE / LSTM models for clinical time-series forecasting"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "generate a synthetic oncology cohort");
    c_sim->add_option("--n", sim.n, "number of patients")->required();
    c_sim->add_option("--noise", sim.noise, "process noise level: low|moderate|high");
    c_sim->add_option("--missing", sim.missing, "percent of points removed: 20|50|80");
    c_sim->add_option("--seed", sim.seed, "master seed");
    c_sim->add_option("--out", sim.out, "output directory")->required();

    IngestArgs ing;
    auto* c_ing = app.add_subcommand("ingest", "ingest ICU record files");
    c_ing->add_option("--records-dir", ing.records_dir, "directory of .txt records")
        ->required();
    c_ing->add_option("--out", ing.out, "output directory")->required();

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "train a model on a dataset");
    c_tr->add_option("--model", tr.model, "sde|ode|lstm")->required();
    c_tr->add_option("--data", tr.data, "dataset.jsonl path")->required();
    c_tr->add_option("--config", tr.config, "JSON config overrides");
    c_tr->add_option("--seed", tr.seed, "training seed");
    c_tr->add_option("--out", tr.out, "output directory")->required();

    ForecastArgs fc;
    auto* c_fc = app.add_subcommand("forecast", "forecast from a checkpoint");
    c_fc->add_option("--ckpt", fc.ckpt, "checkpoint path")->required();
    c_fc->add_option("--data", fc.data, "dataset.jsonl path")->required();
    c_fc->add_option("--n-samples", fc.n_samples, "ensemble size");
    c_fc->add_option("--seed", fc.seed, "sampling seed");
    c_fc->add_option("--split", fc.split, "train|val|test|all");
    c_fc->add_option("--out", fc.out, "output directory")->required();

    EvaluateArgs ev;
    auto* c_ev = app.add_subcommand("evaluate", "aggregate forecasts into a metric table");
    c_ev->add_option("--forecasts", ev.forecasts, "forecasts.pred.json paths")
        ->required();
    c_ev->add_option("--out", ev.out, "report CSV path")->required();

    SweepArgs sw;
    auto* c_sw = app.add_subcommand("sweep", "robustness sweep over noise or missingness");
    c_sw->add_option("--axis", sw.axis, "noise|missing");
    c_sw->add_option("--n", sw.n, "patients per cohort");
    c_sw->add_option("--seeds", sw.seeds, "seeds");
    c_sw->add_option("--models", sw.models, "models to train");
    c_sw->add_option("--config", sw.config, "JSON config overrides for training");
    c_sw->add_option("--parallel", sw.parallel, "concurrent pipelines");
    c_sw->add_option("--n-samples", sw.n_samples, "forecast ensemble size");
    c_sw->add_option("--out", sw.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (c_sim->parsed()) return cmd_simulate(sim);
        if (c_ing->parsed()) return cmd_ingest(ing);
        if (c_tr->parsed()) return cmd_train(tr);
        if (c_fc->parsed()) return cmd_forecast(fc);
        if (c_ev->parsed()) return cmd_evaluate(ev);
        if (c_sw->parsed()) return cmd_sweep(sw);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::string what = e.what();
        if (what.find("non-finite") != std::string::npos ||
            what.find("diverged") != std::string::npos)
            return kExitDiverged;
        return kExitUsage;
    }
    return kExitUsage;
}
