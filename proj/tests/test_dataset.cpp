#include "doctest.h"

#include "qpkpd/dataset.hpp"
#include "qpkpd/errors.hpp"

#include <string>

using namespace qpkpd;

namespace {
const char* kHeader = "ID,BW,COMED,DOSE,TIME,DV,EVID,MDV,AMT,CMT,DVID\n";

std::string with_header(const std::string& rows) { return kHeader + rows; }
}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("a dosing row parses with absent DV and DVID") {
    auto result = parse_dataset(with_header("1,72.5,0,10,0,.,1,1,10,1,.\n"));
    REQUIRE(result.records.size() == 1);
    const DatasetRecord& r = result.records[0];
    CHECK(r.id == 1);
    CHECK(r.bw == 72.5);
    CHECK(r.comed == 0);
    CHECK(r.dose == 10.0);
    CHECK(r.time == 0.0);
    CHECK(!r.dv.has_value());
    CHECK(r.evid == 1);
    CHECK(r.mdv == 1);
    CHECK(r.amt == 10.0);
    CHECK(r.cmt == 1);
    CHECK(!r.dvid.has_value());
}

TEST_CASE("an observation row parses as PK when DVID=1") {
    auto result = parse_dataset(with_header("1,72.5,0,10,24,5.2,0,0,0,2,1\n"));
    REQUIRE(result.records.size() == 1);
    const DatasetRecord& r = result.records[0];
    CHECK(r.evid == 0);
    CHECK(r.mdv == 0);
    REQUIRE(r.dv.has_value());
    CHECK(*r.dv == 5.2);
    REQUIRE(r.dvid.has_value());
    CHECK(*r.dvid == 1);
}

TEST_CASE("a header missing DVID is rejected by name") {
    std::string text = "ID,BW,COMED,DOSE,TIME,DV,EVID,MDV,AMT,CMT\n1,70,0,5,0,.,1,1,5,1\n";
    CHECK_THROWS_WITH_AS(parse_dataset(text),
                         doctest::Contains("DVID"), SchemaError);
}

TEST_CASE("header is case-insensitive and order-free") {
    std::string text =
        "time,dvid,id,bw,comed,dose,dv,evid,mdv,amt,cmt\n"
        "24,2,3,80,1,5,41.5,0,0,0,4\n";
    auto result = parse_dataset(text);
    REQUIRE(result.records.size() == 1);
    CHECK(result.records[0].id == 3);
    CHECK(result.records[0].time == 24.0);
    CHECK(*result.records[0].dvid == 2);
}

TEST_CASE("unknown columns are ignored with a warning") {
    std::string text =
        "ID,BW,COMED,DOSE,TIME,DV,EVID,MDV,AMT,CMT,DVID,STUDY\n"
        "1,70,0,5,0,.,1,1,5,1,.,7\n";
    auto result = parse_dataset(text);
    REQUIRE(result.records.size() == 1);
    REQUIRE(result.warnings.size() == 1);
    CHECK(result.warnings[0].find("STUDY") != std::string::npos);
}

TEST_CASE("missing-DV placeholders: '.', empty, and NA") {
    auto result = parse_dataset(with_header("1,70,0,5,0,.,1,1,5,1,.\n"
                                            "1,70,0,5,1,,1,1,5,1,\n"
                                            "1,70,0,5,2,NA,1,1,5,1,NA\n"));
    REQUIRE(result.records.size() == 3);
    for (const auto& r : result.records) {
        CHECK(!r.dv.has_value());
        CHECK(!r.dvid.has_value());
    }
}

TEST_CASE("a non-numeric cell reports its row and column") {
    try {
        parse_dataset(with_header("1,seventy,0,5,0,.,1,1,5,1,.\n"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        std::string msg = e.what();
        CHECK(msg.find("BW") != std::string::npos);
        CHECK(msg.find("2") != std::string::npos);  // 1-based line number
    }
}

TEST_CASE("whitespace-only input is an empty-input error") {
    CHECK_THROWS_AS(parse_dataset("  \n \n"), EmptyInputError);
    CHECK_THROWS_AS(parse_dataset(""), EmptyInputError);
}

TEST_CASE("header with no data rows is an empty-input error") {
    CHECK_THROWS_AS(parse_dataset(kHeader), EmptyInputError);
}

TEST_CASE("record invariants are enforced") {
    // Dose row must carry amt > 0 and mdv = 1.
    CHECK_THROWS_AS(parse_dataset(with_header("1,70,0,5,0,.,1,1,0,1,.\n")),
                    ValidationError);
    CHECK_THROWS_AS(parse_dataset(with_header("1,70,0,5,0,1.0,1,0,5,1,.\n")),
                    ValidationError);
    // Observation rows must have amt = 0.
    CHECK_THROWS_AS(parse_dataset(with_header("1,70,0,5,1,2.0,0,0,3,2,1\n")),
                    ValidationError);
    // mdv=0 needs a DV value.
    CHECK_THROWS_AS(parse_dataset(with_header("1,70,0,5,1,.,0,0,0,2,1\n")),
                    ValidationError);
    // Observation with mdv=0 needs dvid in {1,2}.
    CHECK_THROWS_AS(parse_dataset(with_header("1,70,0,5,1,2.0,0,0,0,2,3\n")),
                    ValidationError);
    // Negative time, non-positive weight, comed outside {0,1}.
    CHECK_THROWS_AS(parse_dataset(with_header("1,70,0,5,-1,2.0,0,0,0,2,1\n")),
                    ValidationError);
    CHECK_THROWS_AS(parse_dataset(with_header("1,0,0,5,1,2.0,0,0,0,2,1\n")),
                    ValidationError);
    CHECK_THROWS_AS(parse_dataset(with_header("1,70,2,5,1,2.0,0,0,0,2,1\n")),
                    ValidationError);
}

TEST_CASE("build_subjects groups, sorts, and routes by DVID") {
    auto result = parse_dataset(with_header("1,70,0,10,0,.,1,1,10,1,.\n"
                                            "1,70,0,10,24,3.1,0,0,0,4,2\n"
                                            "1,70,0,10,12,5.2,0,0,0,2,1\n"
                                            "2,80,1,5,0,.,1,1,5,1,.\n"
                                            "2,80,1,5,6,9.9,0,0,0,2,1\n"));
    auto subjects = build_subjects(result.records);
    REQUIRE(subjects.size() == 2);

    const Subject& s1 = subjects[0];
    CHECK(s1.id == 1);
    CHECK(s1.bw == 70.0);
    CHECK(s1.comed == 0);
    REQUIRE(s1.dose_events.size() == 1);
    CHECK(s1.dose_events[0].amount == 10.0);
    REQUIRE(s1.pk_observations.size() == 1);
    CHECK(s1.pk_observations[0].time == 12.0);
    REQUIRE(s1.pd_observations.size() == 1);
    CHECK(s1.pd_observations[0].time == 24.0);

    CHECK(subjects[1].id == 2);
    CHECK(subjects[1].comed == 1);
}

TEST_CASE("subject order follows first appearance, not id value") {
    auto result = parse_dataset(with_header("9,70,0,5,0,.,1,1,5,1,.\n"
                                            "2,70,0,5,0,.,1,1,5,1,.\n"));
    auto subjects = build_subjects(result.records);
    REQUIRE(subjects.size() == 2);
    CHECK(subjects[0].id == 9);
    CHECK(subjects[1].id == 2);
}

TEST_CASE("observations without any dose are rejected") {
    auto result = parse_dataset(with_header("1,70,0,0,1,2.0,0,0,0,2,1\n"));
    CHECK_THROWS_AS(build_subjects(result.records), ValidationError);
}

TEST_CASE("conflicting covariates within a subject are rejected") {
    auto bw_conflict = parse_dataset(with_header("1,70,0,5,0,.,1,1,5,1,.\n"
                                                 "1,71,0,5,1,2.0,0,0,0,2,1\n"));
    CHECK_THROWS_AS(build_subjects(bw_conflict.records), ValidationError);
    auto comed_conflict = parse_dataset(with_header("1,70,0,5,0,.,1,1,5,1,.\n"
                                                    "1,70,1,5,1,2.0,0,0,0,2,1\n"));
    CHECK_THROWS_AS(build_subjects(comed_conflict.records), ValidationError);
}

TEST_CASE("empty record list gives an empty subject list") {
    CHECK(build_subjects({}).empty());
}

TEST_CASE("mdv=1 observation rows are counted but not routed") {
    auto result = parse_dataset(with_header("1,70,0,5,0,.,1,1,5,1,.\n"
                                            "1,70,0,5,3,.,0,1,0,2,.\n"));
    auto subjects = build_subjects(result.records);
    REQUIRE(subjects.size() == 1);
    CHECK(subjects[0].pk_observations.empty());
    CHECK(subjects[0].pd_observations.empty());
    CHECK(subjects[0].n_ignored_rows == 1);
}

TEST_CASE("round trip: write then parse reproduces the records") {
    std::string text = with_header(
        "1,72.5,0,10,0,.,1,1,10,1,.\n"
        "1,72.5,0,10,0.25,0.0481,0,0,0,2,1\n"
        "1,72.5,0,10,24,5.2,0,0,0,2,1\n"
        "1,72.5,0,10,24,41.25,0,0,0,4,2\n"
        "2,101.33,1,5,0,.,1,1,5,1,.\n"
        "2,101.33,1,5,6,.,0,1,0,2,.\n");
    auto first = parse_dataset(text);
    std::string rewritten = write_records_csv(first.records);
    auto second = parse_dataset(rewritten);
    REQUIRE(second.records.size() == first.records.size());
    for (std::size_t i = 0; i < first.records.size(); ++i)
        CHECK(first.records[i] == second.records[i]);
}

TEST_CASE("count conservation across the subject build") {
    auto result = parse_dataset(with_header("1,70,0,5,0,.,1,1,5,1,.\n"
                                            "1,70,0,5,1,2.0,0,0,0,2,1\n"
                                            "1,70,0,5,2,.,0,1,0,2,.\n"
                                            "2,80,0,5,0,.,1,1,5,1,.\n"
                                            "2,80,0,5,4,30.0,0,0,0,4,2\n"));
    auto subjects = build_subjects(result.records);
    std::size_t total = 0;
    for (const auto& s : subjects)
        total += s.dose_events.size() + s.pk_observations.size() +
                 s.pd_observations.size() + s.n_ignored_rows;
    CHECK(total == result.records.size());
}

TEST_CASE("per-subject lists come out time-sorted even from shuffled input") {
    auto result = parse_dataset(with_header("1,70,0,5,48,1.0,0,0,0,2,1\n"
                                            "1,70,0,5,0,.,1,1,5,1,.\n"
                                            "1,70,0,5,12,2.0,0,0,0,2,1\n"
                                            "1,70,0,5,24,1.5,0,0,0,2,1\n"));
    auto subjects = build_subjects(result.records);
    REQUIRE(subjects.size() == 1);
    const auto& pk = subjects[0].pk_observations;
    REQUIRE(pk.size() == 3);
    CHECK(pk[0].time < pk[1].time);
    CHECK(pk[1].time < pk[2].time);
}

TEST_CASE("parse_dataset_file rejects a nonexistent path") {
    CHECK_THROWS_AS(parse_dataset_file("/nonexistent/path/data.csv"), ParseError);
}

}  // TEST_SUITE
