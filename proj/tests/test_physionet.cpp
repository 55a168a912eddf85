#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "latentsde/physionet.hpp"

using namespace lsde::icu;

namespace {

const char* kBasic =
    "Time,Parameter,Value\n"
    "00:00,RecordID,140001\n"
    "00:00,Age,54\n"
    "00:00,Gender,1\n"
    "00:00,Height,175.3\n"
    "00:07,HR,84\n"
    "02:30,MAP,92\n"
    "03:00,Temp,36.8\n"
    "30:00,HR,80\n";

std::string fixture_dir() { return std::string(LSDE_SOURCE_DIR) + "/data/physionet_fixtures"; }

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("parsing a basic record") {
    RawRecord rec = parse_record(kBasic);
    CHECK(rec.record_id == "140001");
    CHECK(rec.descriptors.at("Age") == 54.0);
    CHECK(rec.descriptors.at("Gender") == 1.0);
    CHECK(rec.descriptors.at("Height") == doctest::Approx(175.3));
    REQUIRE(rec.samples.size() == 4);
    CHECK(rec.samples[0].time_hours == doctest::Approx(7.0 / 60.0));
    CHECK(rec.samples[0].parameter == "HR");
    CHECK(rec.samples[0].value == 84.0);
    CHECK(rec.unknown_rows == 0);
}

TEST_CASE("descriptor sentinel -1 means missing") {
    RawRecord rec = parse_record(
        "Time,Parameter,Value\n"
        "00:00,RecordID,140002\n"
        "00:00,Height,-1\n"
        "00:00,Gender,0\n"
        "00:30,HR,70\n"
        "00:30,MAP,80\n"
        "00:30,Temp,36\n");
    CHECK(rec.descriptors.count("Height") == 0);
    CHECK(rec.descriptors.at("Gender") == 0.0);
}

TEST_CASE("unknown parameters are counted and skipped") {
    RawRecord rec = parse_record(
        "Time,Parameter,Value\n"
        "00:00,RecordID,140003\n"
        "01:00,NotAVariable,5\n"
        "01:00,HR,72\n");
    CHECK(rec.unknown_rows == 1);
    CHECK(rec.samples.size() == 1);
}

TEST_CASE("malformed inputs throw") {
    CHECK_THROWS_WITH_AS(parse_record("Time,Parameter,Value\n00:00,RecordID,1\nbadrow\n"),
                         doctest::Contains("malformed row"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_record("Time,Parameter,Value\n00:00,RecordID,1\nxx:70,HR,80\n"),
                         doctest::Contains("malformed time"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_record("Time,Parameter,Value\n00:00,RecordID,1\n01:70,HR,80\n"),
                         doctest::Contains("malformed time"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_record("Time,Parameter,Value\n00:00,RecordID,1\n49:00,HR,80\n"),
                         doctest::Contains("outside"), std::runtime_error);
    CHECK_THROWS(parse_record("Time,Parameter,Value\n00:07,HR,84\n"));  // no RecordID
    CHECK_THROWS_WITH_AS(parse_record("Time,Parameter,Value\n00:00,RecordID,1\n01:00,HR,abc\n"),
                         doctest::Contains("malformed value"), std::runtime_error);
}

TEST_CASE("parse then serialize then parse is lossless") {
    for (const auto& name : {"132501", "132502", "132503", "132504", "132505"}) {
        RawRecord a = parse_record(slurp(fixture_dir() + "/" + name + ".txt"));
        RawRecord b = parse_record(serialize_record(a));
        CHECK(a.record_id == b.record_id);
        CHECK(a.descriptors == b.descriptors);
        REQUIRE(a.samples.size() == b.samples.size());
        for (std::size_t i = 0; i < a.samples.size(); ++i) {
            CHECK(a.samples[i].time_hours == b.samples[i].time_hours);
            CHECK(a.samples[i].parameter == b.samples[i].parameter);
            CHECK(a.samples[i].value == b.samples[i].value);
        }
        // Serialization itself is a fixed point.
        CHECK(serialize_record(a) == serialize_record(b));
    }
}

TEST_CASE("task construction") {
    SUBCASE("basic record builds with all three targets") {
        auto task = build_task(parse_record(kBasic), nullptr);
        REQUIRE(task.has_value());
        CHECK(task->id == "140001");
        CHECK(task->covariates.at("age") == 54.0);
        CHECK(task->covariates.at("gender") == 1.0);
        CHECK(task->variables == std::vector<std::string>{"BT", "HR", "MAP"});
        REQUIRE(task->obs_times.size() == 4);
        CHECK(std::is_sorted(task->obs_times.begin(), task->obs_times.end()));
        // HR has samples at 00:07 and 30:00, masked elsewhere.
        auto hr = std::find(task->variables.begin(), task->variables.end(), "HR") -
                  task->variables.begin();
        CHECK(task->masks[hr] == std::vector<std::uint8_t>{1, 0, 0, 1});
        CHECK(task->values[hr][0] == 84.0);
        CHECK(task->values[hr][3] == 80.0);
    }

    SUBCASE("missing target in the first 24h excludes the record") {
        std::string reason;
        auto task = build_task(
            parse_record(slurp(fixture_dir() + "/132502.txt")), &reason);
        CHECK(!task.has_value());
        CHECK(reason == "no BT sample in the first 24h");
    }

    SUBCASE("a sample at exactly 24:00 counts as observed") {
        auto task = build_task(
            parse_record(slurp(fixture_dir() + "/132503.txt")), nullptr);
        REQUIRE(task.has_value());
        auto map = std::find(task->variables.begin(), task->variables.end(), "MAP") -
                   task->variables.begin();
        bool has_24h = false;
        for (std::size_t i = 0; i < task->obs_times.size(); ++i)
            if (task->masks[map][i] && task->obs_times[i] == 24.0) has_24h = true;
        CHECK(has_24h);
    }

    SUBCASE("implausible values are dropped, non-invasive MAP is not MAP") {
        auto task = build_task(
            parse_record(slurp(fixture_dir() + "/132504.txt")), nullptr);
        REQUIRE(task.has_value());
        auto hr = std::find(task->variables.begin(), task->variables.end(), "HR") -
                  task->variables.begin();
        for (std::size_t i = 0; i < task->obs_times.size(); ++i)
            if (task->masks[hr][i]) CHECK(task->values[hr][i] <= 300.0);
        CHECK(task->covariates.count("height") == 0);  // -1 sentinel

        auto t1 = build_task(parse_record(slurp(fixture_dir() + "/132501.txt")), nullptr);
        REQUIRE(t1.has_value());
        // NIMeanABP row at 02:15 must not appear as a MAP sample.
        auto map = std::find(t1->variables.begin(), t1->variables.end(), "MAP") -
                   t1->variables.begin();
        for (std::size_t i = 0; i < t1->obs_times.size(); ++i)
            if (t1->obs_times[i] == doctest::Approx(2.25))
                CHECK(t1->masks[map][i] == 0);
    }

    SUBCASE("duplicate timestamps keep the last measurement") {
        auto task = build_task(
            parse_record(slurp(fixture_dir() + "/132505.txt")), nullptr);
        REQUIRE(task.has_value());
        auto hr = std::find(task->variables.begin(), task->variables.end(), "HR") -
                  task->variables.begin();
        CHECK(task->values[hr][0] == 108.0);
    }
}

TEST_CASE("directory ingest over the bundled fixtures") {
    IngestResult res = ingest_directory(fixture_dir());
    CHECK(res.parsed == 5);
    CHECK(res.excluded == 1);
    REQUIRE(res.exclusion_log.size() == 1);
    CHECK(res.exclusion_log[0] == "132502: no BT sample in the first 24h");
    CHECK(res.dataset.records.size() == 4);
    CHECK(res.dataset.meta.kind == "icu");
    CHECK(res.dataset.meta.horizon == 48.0);
    CHECK(res.dataset.meta.split_time == 24.0);
    for (const auto& rec : res.dataset.records) {
        // Disjoint windows: every stamp lives in exactly one window.
        for (double t : rec.obs_times) {
            CHECK(t >= 0.0);
            CHECK(t <= 48.0);
        }
        for (const auto& mask : rec.masks) {
            int obs_window = 0;
            for (std::size_t i = 0; i < rec.obs_times.size(); ++i)
                if (mask[i] && rec.obs_times[i] <= 24.0) ++obs_window;
            CHECK(obs_window >= 1);
        }
    }

    SUBCASE("ingest errors") {
        CHECK_THROWS(ingest_directory(fixture_dir() + "/nonexistent"));
    }
}
