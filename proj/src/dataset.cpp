#include "latentsde/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace lsde::data {

using nlohmann::json;

double NormStats::normalize(const std::string& var, double v) const {
    auto it = by_var.find(var);
    if (it == by_var.end()) throw std::runtime_error("no norm stats for " + var);
    return (v - it->second.first) / it->second.second;
}

double NormStats::denormalize(const std::string& var, double v) const {
    auto it = by_var.find(var);
    if (it == by_var.end()) throw std::runtime_error("no norm stats for " + var);
    return v * it->second.second + it->second.first;
}

Split split_of(const std::string& record_id) {
    // FNV-1a over the salted id; stable across platforms.
    const std::string salted = "lsde-split-v1:" + record_id;
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : salted) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::uint64_t bucket = h % 10;
    if (bucket < 8) return Split::train;
    return bucket == 8 ? Split::val : Split::test;
}

NormStats fit_normalizer(const Dataset& ds, const std::vector<std::string>* only) {
    struct Acc {
        double sum = 0.0, sumsq = 0.0;
        std::size_t n = 0;
    };
    auto wanted = [&](const std::string& name) {
        return only == nullptr ||
               std::find(only->begin(), only->end(), name) != only->end();
    };
    std::map<std::string, Acc> acc;
    auto accumulate = [&](bool train_only) {
        for (const auto& rec : ds.records) {
            if (train_only && split_of(rec.id) != Split::train) continue;
            for (std::size_t v = 0; v < rec.variables.size(); ++v) {
                if (!wanted(rec.variables[v])) continue;
                for (std::size_t i = 0; i < rec.obs_times.size(); ++i)
                    if (rec.masks[v][i]) {
                        auto& a = acc[rec.variables[v]];
                        a.sum += rec.values[v][i];
                        a.sumsq += rec.values[v][i] * rec.values[v][i];
                        ++a.n;
                    }
            }
            for (const auto& [name, value] : rec.covariates) {
                auto& a = acc["cov:" + name];
                a.sum += value;
                a.sumsq += value * value;
                ++a.n;
            }
        }
    };
    accumulate(true);
    if (acc.empty()) accumulate(false);  // tiny sets may hash to no train records
    if (acc.empty()) throw std::runtime_error("fit_normalizer: no observed data");
    NormStats stats;
    for (const auto& [name, a] : acc) {
        double mean = a.sum / static_cast<double>(a.n);
        double var = a.sumsq / static_cast<double>(a.n) - mean * mean;
        double sd = std::sqrt(std::max(var, 0.0));
        if (sd <= 0.0) {
            // Binary covariates (gender) pass through un-scaled.
            if (name.rfind("cov:", 0) == 0)
                sd = 1.0;
            else
                throw std::runtime_error("fit_normalizer: zero variance in " + name);
        }
        stats.by_var[name] = {mean, sd};
    }
    return stats;
}

namespace {

json record_to_json(const PatientRecord& r) {
    json j;
    j["id"] = r.id;
    j["covariates"] = r.covariates;
    if (!r.params.empty()) j["params"] = r.params;
    if (!r.chemo_times.empty() || !r.radio_times.empty())
        j["schedule"] = {{"chemo", r.chemo_times}, {"radio", r.radio_times}};
    j["obs_times"] = r.obs_times;
    json values = json::object(), masks = json::object();
    for (std::size_t v = 0; v < r.variables.size(); ++v) {
        values[r.variables[v]] = r.values[v];
        masks[r.variables[v]] = r.masks[v];
    }
    j["values"] = values;
    j["masks"] = masks;
    if (!r.truth_grid.empty()) {
        j["truth_grid"] = r.truth_grid;
        j["truth_tumor_volume"] = r.truth_tumor_volume;
    }
    return j;
}

PatientRecord record_from_json(const json& j) {
    PatientRecord r;
    r.id = j.at("id").get<std::string>();
    r.covariates = j.at("covariates").get<std::map<std::string, double>>();
    if (j.contains("params")) r.params = j["params"].get<std::map<std::string, double>>();
    if (j.contains("schedule")) {
        r.chemo_times = j["schedule"].at("chemo").get<std::vector<double>>();
        r.radio_times = j["schedule"].at("radio").get<std::vector<double>>();
    }
    r.obs_times = j.at("obs_times").get<std::vector<double>>();
    for (auto it = j.at("values").begin(); it != j.at("values").end(); ++it) {
        r.variables.push_back(it.key());
        r.values.push_back(it.value().get<std::vector<double>>());
        r.masks.push_back(j.at("masks").at(it.key()).get<std::vector<std::uint8_t>>());
    }
    if (j.contains("truth_grid")) {
        r.truth_grid = j["truth_grid"].get<std::vector<double>>();
        r.truth_tumor_volume = j["truth_tumor_volume"].get<std::vector<double>>();
    }
    return r;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    json meta;
    meta["schema_version"] = ds.meta.schema_version;
    meta["kind"] = ds.meta.kind;
    meta["horizon"] = ds.meta.horizon;
    meta["split_time"] = ds.meta.split_time;
    meta["extra"] = ds.meta.extra;
    out << meta.dump() << "\n";
    for (const auto& r : ds.records) out << record_to_json(r).dump() << "\n";
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    Dataset ds;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty dataset file: " + path);
    json meta = json::parse(line);
    ds.meta.schema_version = meta.at("schema_version").get<int>();
    if (ds.meta.schema_version != kSchemaVersion)
        throw std::runtime_error("unsupported schema_version in " + path);
    ds.meta.kind = meta.at("kind").get<std::string>();
    ds.meta.horizon = meta.at("horizon").get<double>();
    ds.meta.split_time = meta.at("split_time").get<double>();
    ds.meta.extra = meta.at("extra").get<std::map<std::string, double>>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ds.records.push_back(record_from_json(json::parse(line)));
    }
    return ds;
}

void save_norm_stats(const NormStats& stats, const std::string& path) {
    json j = json::object();
    for (const auto& [name, ms] : stats.by_var)
        j[name] = {{"mean", ms.first}, {"std", ms.second}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

NormStats load_norm_stats(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open norm stats file: " + path);
    json j = json::parse(in);
    NormStats stats;
    for (auto it = j.begin(); it != j.end(); ++it)
        stats.by_var[it.key()] = {it.value().at("mean").get<double>(),
                                  it.value().at("std").get<double>()};
    return stats;
}

}  // namespace lsde::data
