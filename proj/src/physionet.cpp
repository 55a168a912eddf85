#include "latentsde/physionet.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace lsde::icu {

namespace {

const std::set<std::string>& timeseries_vocab() {
    static const std::set<std::string> v = {
        "Albumin", "ALP", "ALT", "AST", "Bilirubin", "BUN", "Cholesterol",
        "Creatinine", "DiasABP", "FiO2", "GCS", "Glucose", "HCO3", "HCT",
        "HR", "K", "Lactate", "MAP", "MechVent", "Mg", "Na", "NIDiasABP",
        "NIMeanABP", "NISysABP", "PaCO2", "PaO2", "pH", "Platelets",
        "RespRate", "SaO2", "SpO2", "SysABP", "Temp", "TroponinI",
        "TroponinT", "Urine", "WBC", "Weight"};
    return v;
}

const std::set<std::string>& descriptor_vocab() {
    static const std::set<std::string> v = {"RecordID", "Age", "Gender",
                                            "Height", "ICUType", "Weight"};
    return v;
}

double parse_time(const std::string& s) {
    auto colon = s.find(':');
    if (colon == std::string::npos)
        throw std::runtime_error("malformed time field: " + s);
    int hh = 0, mm = 0;
    try {
        hh = std::stoi(s.substr(0, colon));
        mm = std::stoi(s.substr(colon + 1));
    } catch (...) {
        throw std::runtime_error("malformed time field: " + s);
    }
    if (hh < 0 || mm < 0 || mm >= 60)
        throw std::runtime_error("malformed time field: " + s);
    double t = hh + mm / 60.0;
    if (t > 48.0 + 1e-9)
        throw std::runtime_error("time outside [00:00, 48:00]: " + s);
    return t;
}

std::string format_time(double hours) {
    int total_min = static_cast<int>(std::llround(hours * 60.0));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d:%02d", total_min / 60, total_min % 60);
    return buf;
}

std::string format_value(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

bool plausible(const std::string& var, double v) {
    // Raw PhysioNet files contain sensor artifacts; drop the physically
    // impossible ones for the selected targets.
    if (var == "HR") return v >= 10.0 && v <= 300.0;
    if (var == "Temp") return v >= 25.0 && v <= 45.0;
    if (var == "MAP") return v >= 10.0 && v <= 250.0;
    return true;
}

}  // namespace

RawRecord parse_record(const std::string& text) {
    RawRecord rec;
    std::istringstream in(text);
    std::string line;
    bool first_data = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line == "Time,Parameter,Value") continue;
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw std::runtime_error("malformed row: " + line);
        std::string time_str = line.substr(0, c1);
        std::string param = line.substr(c1 + 1, c2 - c1 - 1);
        std::string value_str = line.substr(c2 + 1);
        double t = parse_time(time_str);
        double value = 0.0;
        try {
            value = std::stod(value_str);
        } catch (...) {
            throw std::runtime_error("malformed value: " + line);
        }
        if (first_data) {
            if (param != "RecordID")
                throw std::runtime_error("first data row must carry RecordID");
            rec.record_id = std::to_string(static_cast<long long>(value));
            first_data = false;
            continue;
        }
        if (t == 0.0 && descriptor_vocab().count(param)) {
            if (value != -1.0) rec.descriptors[param] = value;  // -1 == missing
            continue;
        }
        if (timeseries_vocab().count(param)) {
            rec.samples.push_back({t, param, value});
        } else {
            ++rec.unknown_rows;
        }
    }
    if (first_data) throw std::runtime_error("record has no RecordID row");
    return rec;
}

std::string serialize_record(const RawRecord& rec) {
    std::ostringstream out;
    out << "Time,Parameter,Value\n";
    out << "00:00,RecordID," << rec.record_id << "\n";
    for (const auto& [name, value] : rec.descriptors)
        out << "00:00," << name << "," << format_value(value) << "\n";
    for (const auto& s : rec.samples)
        out << format_time(s.time_hours) << "," << s.parameter << ","
            << format_value(s.value) << "\n";
    return out.str();
}

std::optional<data::PatientRecord> build_task(const RawRecord& rec,
                                              std::string* exclusion_reason) {
    // Invasive MAP channel, not the non-invasive NIMeanABP one.
    static const std::vector<std::pair<std::string, std::string>> targets = {
        {"HR", "HR"}, {"MAP", "MAP"}, {"Temp", "BT"}};

    std::map<std::string, std::vector<std::pair<double, double>>> series;
    for (const auto& s : rec.samples) {
        for (const auto& [raw, out] : targets)
            if (s.parameter == raw && plausible(raw, s.value))
                series[out].emplace_back(s.time_hours, s.value);
    }
    for (const auto& [raw, out] : targets) {
        auto& v = series[out];
        std::stable_sort(v.begin(), v.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        // Boundary samples at exactly 24:00 belong to the observation window.
        bool any_obs = std::any_of(v.begin(), v.end(),
                                   [](const auto& s) { return s.first <= 24.0; });
        if (!any_obs) {
            if (exclusion_reason)
                *exclusion_reason = "no " + out + " sample in the first 24h";
            return std::nullopt;
        }
    }

    std::vector<double> union_times;
    for (const auto& [name, v] : series)
        for (const auto& [t, _] : v) union_times.push_back(t);
    std::sort(union_times.begin(), union_times.end());
    union_times.erase(std::unique(union_times.begin(), union_times.end()),
                      union_times.end());

    data::PatientRecord out;
    out.id = rec.record_id;
    if (auto it = rec.descriptors.find("Age"); it != rec.descriptors.end())
        out.covariates["age"] = it->second;
    if (auto it = rec.descriptors.find("Gender"); it != rec.descriptors.end())
        out.covariates["gender"] = it->second;
    if (auto it = rec.descriptors.find("Height"); it != rec.descriptors.end())
        out.covariates["height"] = it->second;
    out.obs_times = union_times;
    for (const auto& [name, v] : series) {
        out.variables.push_back(name);
        std::vector<double> col(union_times.size(), 0.0);
        std::vector<std::uint8_t> mask(union_times.size(), 0);
        for (const auto& [t, value] : v) {
            auto it = std::lower_bound(union_times.begin(), union_times.end(), t);
            auto idx = static_cast<std::size_t>(it - union_times.begin());
            col[idx] = value;  // last measurement wins on duplicate stamps
            mask[idx] = 1;
        }
        out.values.push_back(std::move(col));
        out.masks.push_back(std::move(mask));
    }
    return out;
}

IngestResult ingest_directory(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
        throw std::runtime_error("not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".txt")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .txt record files in " + dir);

    IngestResult result;
    result.dataset.meta.kind = "icu";
    result.dataset.meta.horizon = 48.0;
    result.dataset.meta.split_time = 24.0;
    for (const auto& f : files) {
        std::ifstream in(f);
        std::stringstream buf;
        buf << in.rdbuf();
        RawRecord raw = parse_record(buf.str());
        ++result.parsed;
        std::string reason;
        if (auto rec = build_task(raw, &reason)) {
            result.dataset.records.push_back(std::move(*rec));
        } else {
            ++result.excluded;
            result.exclusion_log.push_back(raw.record_id + ": " + reason);
        }
    }
    result.dataset.meta.extra = {
        {"parsed", static_cast<double>(result.parsed)},
        {"excluded", static_cast<double>(result.excluded)}};
    return result;
}

}  // namespace lsde::icu
