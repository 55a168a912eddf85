#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lsde::data {

inline constexpr int kSchemaVersion = 1;

// One patient: irregular multivariate observations on a shared time grid,
// baseline covariates, treatment events, and (synthetic only) ground-truth
// latents. Values at masked-out points may still be populated (the
// simulator knows them); masks say what the model is allowed to see.
struct PatientRecord {
    std::string id;
    std::map<std::string, double> covariates;
    std::map<std::string, double> params;    // mechanistic constants, synthetic only
    std::vector<double> chemo_times;
    std::vector<double> radio_times;
    std::vector<double> obs_times;
    std::vector<std::string> variables;
    std::vector<std::vector<double>> values;   // variable x time
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<double> truth_grid;
    std::vector<double> truth_tumor_volume;
};

struct DatasetMeta {
    int schema_version = kSchemaVersion;
    std::string kind;      // "pkpd" or "icu"
    double horizon = 0.0;  // native time units
    double split_time = 0.0;
    std::map<std::string, double> extra;  // noise level, missing fraction, seed
};

struct Dataset {
    DatasetMeta meta;
    std::vector<PatientRecord> records;
};

// Per-variable z-score statistics fitted on a training split.
struct NormStats {
    std::map<std::string, std::pair<double, double>> by_var;  // mean, std

    double normalize(const std::string& var, double v) const;
    double denormalize(const std::string& var, double v) const;
    bool has(const std::string& var) const { return by_var.count(var) > 0; }
};

enum class Split { train, val, test };

// Deterministic 80/10/10 assignment by record-id hash with a fixed salt.
Split split_of(const std::string& record_id);

// Mean/std over observed entries of every variable (and the covariates,
// prefixed "cov:"), train split only. Throws on zero variance. When `only`
// is given, variable stats are fitted for the listed names alone; discrete
// channels that never get z-scored can be left out.
NormStats fit_normalizer(const Dataset& ds,
                         const std::vector<std::string>* only = nullptr);

// Newline-delimited JSON: first line is the meta object, one record per
// following line. Serialization is byte-stable for identical inputs.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

void save_norm_stats(const NormStats& stats, const std::string& path);
NormStats load_norm_stats(const std::string& path);

}  // namespace lsde::data
