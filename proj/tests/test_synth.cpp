#include "doctest.h"
#include "test_utils.hpp"

#include "qpkpd/errors.hpp"
#include "qpkpd/synth.hpp"

#include <algorithm>
#include <cmath>

using namespace qpkpd;

namespace {

SynthDesign small_design(int n_subjects) {
    SynthDesign design;
    design.n_subjects = n_subjects;
    design.pk_times = {2.0, 12.0, 24.0};
    design.pd_times = {0.0, 24.0};
    return design;
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("design validation") {
    SynthDesign ok;
    CHECK_NOTHROW(ok.validate());

    SynthDesign no_people = ok;
    no_people.n_subjects = 0;
    CHECK_THROWS(no_people.validate());

    SynthDesign predose = ok;
    predose.pk_times = {0.0, 2.0};  // zero concentration cannot carry log noise
    CHECK_THROWS(predose.validate());

    SynthDesign inverted = ok;
    inverted.bw_low = 120.0;
    CHECK_THROWS(inverted.validate());
}

TEST_CASE("structure: one dose row plus one row per nominal sample") {
    FixedEffects theta;
    OmegaMatrix omega = OmegaMatrix::diagonal(Eigen::VectorXd::Constant(6, 0.09));
    ResidualModel residual;
    SimulationContext ctx = testutil::plain_context();

    const int n = 7;
    SyntheticDataset data = synthesize_dataset(small_design(n), theta, omega,
                                               residual, 99, ctx);
    CHECK(data.truth.size() == static_cast<std::size_t>(n));
    CHECK(data.records.size() == static_cast<std::size_t>(n) * (1 + 3 + 2));

    // The records pass the shared schema checks and regroup into n subjects.
    CHECK_NOTHROW(validate_records(data.records));
    auto subjects = build_subjects(data.records);
    REQUIRE(subjects.size() == static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Subject& s = subjects[static_cast<std::size_t>(i)];
        CHECK(s.id == i + 1);
        CHECK(s.dose_events.size() == 1);
        CHECK(s.dose_events[0].time == 0.0);
        CHECK(s.dose_events[0].amount == 5.0);
        CHECK(s.pk_observations.size() == 3);
        CHECK(s.pd_observations.size() == 2);
        CHECK(s.bw >= 50.0);
        CHECK(s.bw <= 100.0);
        for (const Observation& obs : s.pk_observations)
            CHECK(obs.value > 0.0);  // log-normal noise keeps PK positive
    }

    // Truth rows mirror the covariates embedded in the records.
    for (int i = 0; i < n; ++i) {
        CHECK(data.truth[static_cast<std::size_t>(i)].id == i + 1);
        CHECK(data.truth[static_cast<std::size_t>(i)].bw ==
              subjects[static_cast<std::size_t>(i)].bw);
        CHECK(data.truth[static_cast<std::size_t>(i)].comed ==
              subjects[static_cast<std::size_t>(i)].comed);
        CHECK(data.truth[static_cast<std::size_t>(i)].eta.size() == 6);
    }
}

TEST_CASE("generation is reproducible and seed-sensitive") {
    FixedEffects theta;
    OmegaMatrix omega = OmegaMatrix::diagonal(Eigen::VectorXd::Constant(6, 0.09));
    ResidualModel residual;
    SimulationContext ctx = testutil::plain_context();
    SynthDesign design = small_design(5);

    SyntheticDataset a = synthesize_dataset(design, theta, omega, residual, 42, ctx);
    SyntheticDataset b = synthesize_dataset(design, theta, omega, residual, 42, ctx);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i)
        CHECK(a.records[i] == b.records[i]);
    for (std::size_t i = 0; i < a.truth.size(); ++i) {
        CHECK(a.truth[i].bw == b.truth[i].bw);
        CHECK(a.truth[i].eta == b.truth[i].eta);
    }

    SyntheticDataset c = synthesize_dataset(design, theta, omega, residual, 43, ctx);
    bool any_difference = false;
    for (std::size_t i = 0; i < a.records.size() && !any_difference; ++i)
        any_difference = !(a.records[i] == c.records[i]);
    CHECK(any_difference);
}

TEST_CASE("a frozen covariance yields exactly zero random effects") {
    FixedEffects theta;
    OmegaMatrix omega = OmegaMatrix::zero(6);
    ResidualModel residual;
    SimulationContext ctx = testutil::plain_context();

    SyntheticDataset data = synthesize_dataset(small_design(3), theta, omega,
                                               residual, 7, ctx);
    for (const SyntheticSubject& s : data.truth)
        CHECK(s.eta.isZero(0.0));
}

TEST_CASE("the pre-dose PD sample carries noisy baseline, never zero") {
    FixedEffects theta;
    OmegaMatrix omega = OmegaMatrix::zero(6);
    ResidualModel residual;
    SimulationContext ctx = testutil::plain_context();

    SyntheticDataset data = synthesize_dataset(small_design(4), theta, omega,
                                               residual, 15, ctx);
    auto subjects = build_subjects(data.records);
    for (const Subject& s : subjects) {
        REQUIRE(s.pd_observations.size() == 2);
        CHECK(s.pd_observations[0].time == 0.0);
        // eta = 0: baseline is kin_i/kout (50 or 55 with comed), the sample
        // scatters around it with 15% proportional noise.
        const double baseline = s.comed == 1 ? 55.0 : 50.0;
        CHECK(s.pd_observations[0].value ==
              doctest::Approx(baseline).epsilon(0.75));
        CHECK(s.pd_observations[0].value > 0.0);
    }
}

}  // TEST_SUITE
