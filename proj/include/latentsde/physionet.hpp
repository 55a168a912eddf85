#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "latentsde/dataset.hpp"

namespace lsde::icu {

struct RawSample {
    double time_hours;  // since admission, within [0, 48]
    std::string parameter;
    double value;
};

struct RawRecord {
    std::string record_id;
    std::map<std::string, double> descriptors;  // Age, Gender, Height, ...
    std::vector<RawSample> samples;             // time series rows only
    std::size_t unknown_rows = 0;               // warn-and-skip count
};

// Parses one "Time,Parameter,Value" record file body. Throws on malformed
// times; unknown parameter names are counted and skipped.
RawRecord parse_record(const std::string& text);

// Re-serializes the retained time-series rows; with parse_record this is
// lossless for retained variables.
std::string serialize_record(const RawRecord& rec);

struct IngestResult {
    data::Dataset dataset;
    std::size_t parsed = 0;
    std::size_t excluded = 0;
    std::vector<std::string> exclusion_log;  // "record_id: reason"
};

// Target selection + 24h/24h split. Returns nothing when a target variable
// has no sample in the observation window.
std::optional<data::PatientRecord> build_task(const RawRecord& rec,
                                              std::string* exclusion_reason);

IngestResult ingest_directory(const std::string& dir);

}  // namespace lsde::icu
