#include "doctest.h"

#include "qpkpd/errors.hpp"
#include "qpkpd/model.hpp"
#include "qpkpd/ode.hpp"

#include <cmath>
#include <limits>
#include <vector>

using namespace qpkpd;

namespace {

IndividualParameters default_params() {
    IndividualParameters p;
    p.cl_i = 2.0;
    p.v1_i = 10.0;
    p.q = 1.0;
    p.v2 = 20.0;
    p.ka = 0.5;
    p.ke0 = 0.1;
    p.imax = 0.8;
    p.ic50 = 2.0;
    p.kin_i = 5.0;
    p.kout = 0.1;
    return p;
}

DoseRateGrid empty_grid(double t_end) {
    return build_dose_rate_grid({}, 0.0, t_end, 0.5);
}

// a1(t) of the closed two-compartment system (rate = 0), from the explicit
// eigen-decomposition of [[-(k10+k12), k21], [k12, -k21]].  Written out by
// hand so the solver is checked against independent algebra, not against
// itself.
double biexponential_a1(double a1_0, double k10, double k12, double k21, double t) {
    double tr = -(k10 + k12) - k21;
    double det = (k10 + k12) * k21 - k12 * k21;  // = k10*k21
    double disc = std::sqrt(tr * tr - 4.0 * det);
    double l1 = 0.5 * (tr + disc);
    double l2 = 0.5 * (tr - disc);
    // Eigenvector for l: (k21 + l, k12) normalized on the first component;
    // decompose (a1_0, 0) = c1*v1 + c2*v2 with v_i = (1, k12/(k21+l_i)).
    double w1 = k12 / (k21 + l1);
    double w2 = k12 / (k21 + l2);
    double c2 = a1_0 * w1 / (w1 - w2);
    double c1 = a1_0 - c2;
    return c1 * std::exp(l1 * t) + c2 * std::exp(l2 * t);
}

}  // namespace

TEST_SUITE("ode") {

TEST_CASE("mono-exponential bolus decay matches the analytic form") {
    IndividualParameters p = default_params();
    p.q = 0.0;  // no peripheral exchange: a1 decays at cl/v1
    CompartmentState y0 = {100.0, 0.0, 0.0, 0.0};
    SolveSettings settings;
    for (int i = 1; i <= 50; ++i)
        settings.dense_grid.push_back(24.0 * i / 50.0);
    Trajectory traj = solve_trajectory(y0, {0.0, 24.0}, p, empty_grid(24.0), settings);

    REQUIRE(traj.sampled_states.size() == 50);
    const double k = p.cl_i / p.v1_i;
    for (std::size_t i = 0; i < traj.sampled_times.size(); ++i) {
        double expected = 100.0 * std::exp(-k * traj.sampled_times[i]);
        double rel = std::fabs(traj.sampled_states[i][0] - expected) / expected;
        CHECK(rel < 1e-6);
    }
    // The end point of the worked case: 100*e^(-4.8).
    CHECK(traj.sampled_states.back()[0] == doctest::Approx(0.8230).epsilon(1e-3));
    CHECK(traj.stats.rhs_evaluations > 0);
    CHECK(traj.stats.accepted_steps > 0);
}

TEST_CASE("two-compartment bolus matches the eigen-decomposition closed form") {
    IndividualParameters p = default_params();
    CompartmentState y0 = {100.0, 0.0, 0.0, 0.0};
    SolveSettings settings;
    Trajectory traj = solve_trajectory(y0, {0.0, 72.0}, p, empty_grid(72.0), settings);

    const double k10 = p.cl_i / p.v1_i;
    const double k12 = p.q / p.v1_i;
    const double k21 = p.q / p.v2;
    for (double t : {0.5, 1.0, 2.0, 6.0, 12.0, 24.0, 48.0, 71.5}) {
        double expected = biexponential_a1(100.0, k10, k12, k21, t);
        double got = interpolate_solution(traj, t)[0];
        CHECK(std::fabs(got - expected) / expected < 1e-5);
    }
}

TEST_CASE("zero clearance conserves a1+a2 over 1000 hours") {
    IndividualParameters p = default_params();
    p.cl_i = 0.0;
    CompartmentState y0 = {60.0, 40.0, 0.0, 50.0};
    SolveSettings settings;
    settings.max_step = 1.0;
    for (int i = 1; i <= 20; ++i) settings.dense_grid.push_back(50.0 * i);
    Trajectory traj = solve_trajectory(y0, {0.0, 1000.0}, p, empty_grid(1000.0), settings);
    for (const CompartmentState& y : traj.sampled_states) {
        CHECK(std::fabs(y[0] + y[1] - 100.0) / 100.0 < 1e-8);
    }
}

TEST_CASE("response relaxes to kin/kout from zero along the first-order curve") {
    IndividualParameters p = default_params();
    CompartmentState y0 = {0.0, 0.0, 0.0, 0.0};
    SolveSettings settings;
    Trajectory traj = solve_trajectory(y0, {0.0, 200.0}, p, empty_grid(200.0), settings);
    for (double t : {1.0, 5.0, 10.0, 23.0, 60.0, 199.0}) {
        CompartmentState y = interpolate_solution(traj, t);
        double expected = 50.0 * (1.0 - std::exp(-0.1 * t));
        CHECK(y[3] == doctest::Approx(expected).epsilon(1e-6));
        // Nothing was dosed: the drug states stay identically zero.
        CHECK(std::fabs(y[0]) < 1e-12);
        CHECK(std::fabs(y[1]) < 1e-12);
        CHECK(std::fabs(y[2]) < 1e-12);
    }
    // Convergence to the steady state itself.
    CHECK(interpolate_solution(traj, 200.0)[3] ==
          doctest::Approx(50.0).epsilon(1e-6));
}

TEST_CASE("a reversed time span is rejected up front") {
    IndividualParameters p = default_params();
    CompartmentState y0 = {0, 0, 0, 0};
    CHECK_THROWS_AS(
        solve_trajectory(y0, {24.0, 0.0}, p, empty_grid(24.0), SolveSettings{}),
        DomainError);
}

TEST_CASE("bad tolerances and non-finite initial states are rejected") {
    IndividualParameters p = default_params();
    SolveSettings bad;
    bad.rel_tol = 0.0;
    CHECK_THROWS_AS(
        solve_trajectory({0, 0, 0, 0}, {0.0, 1.0}, p, empty_grid(1.0), bad),
        DomainError);
    CompartmentState y0 = {std::numeric_limits<double>::quiet_NaN(), 0, 0, 0};
    CHECK_THROWS_AS(
        solve_trajectory(y0, {0.0, 1.0}, p, empty_grid(1.0), SolveSettings{}),
        DomainError);
}

TEST_CASE("a pathologically stiff system raises a solver error, not a hang") {
    IndividualParameters p = default_params();
    p.cl_i = 1e13;
    p.v1_i = 1.0;
    CompartmentState y0 = {100.0, 0.0, 0.0, 0.0};
    try {
        solve_trajectory(y0, {0.0, 10.0}, p, empty_grid(10.0), SolveSettings{});
        FAIL("expected SolverError");
    } catch (const SolverError& e) {
        CHECK(std::string(e.what()).find("stiff") != std::string::npos);
        CHECK(e.last_time >= 0.0);
        CHECK(e.last_time < 10.0);
    }
}

TEST_CASE("interpolation is exact at stored nodes") {
    IndividualParameters p = default_params();
    Trajectory traj = solve_trajectory({100, 0, 0, 0}, {0.0, 24.0}, p,
                                       empty_grid(24.0), SolveSettings{});
    REQUIRE(traj.times.size() >= 2);
    for (std::size_t i = 0; i < traj.times.size(); i += 3) {
        CompartmentState y = interpolate_solution(traj, traj.times[i]);
        for (int c = 0; c < 4; ++c) CHECK(y[c] == traj.states[i][c]);
    }
}

TEST_CASE("interpolation between nodes tracks the analytic curve") {
    IndividualParameters p = default_params();
    p.q = 0.0;
    SolveSettings settings;  // rel_tol 1e-6
    Trajectory traj = solve_trajectory({100, 0, 0, 0}, {0.0, 24.0}, p,
                                       empty_grid(24.0), settings);
    const double k = p.cl_i / p.v1_i;
    // Probe strictly between stored nodes.
    for (std::size_t i = 0; i + 1 < traj.times.size(); ++i) {
        double t = 0.5 * (traj.times[i] + traj.times[i + 1]);
        double expected = 100.0 * std::exp(-k * t);
        double got = interpolate_solution(traj, t)[0];
        CHECK(std::fabs(got - expected) <= 10.0 * settings.rel_tol * expected +
                                               settings.abs_tol);
    }
}

TEST_CASE("interpolation outside the covered span is a range error") {
    IndividualParameters p = default_params();
    Trajectory traj = solve_trajectory({100, 0, 0, 0}, {0.0, 24.0}, p,
                                       empty_grid(24.0), SolveSettings{});
    CHECK_THROWS_AS(interpolate_solution(traj, -0.001), RangeError);
    CHECK_THROWS_AS(interpolate_solution(traj, 24.001), RangeError);
}

TEST_CASE("tightening tolerances by decades shrinks the oracle error") {
    IndividualParameters p = default_params();
    p.q = 0.0;
    const double k = p.cl_i / p.v1_i;
    auto max_err = [&](double rel, double abs) {
        SolveSettings s;
        s.rel_tol = rel;
        s.abs_tol = abs;
        for (int i = 1; i <= 24; ++i) s.dense_grid.push_back(i * 1.0);
        Trajectory traj =
            solve_trajectory({100, 0, 0, 0}, {0.0, 24.0}, p, empty_grid(24.0), s);
        double worst = 0.0;
        for (std::size_t i = 0; i < traj.sampled_times.size(); ++i) {
            double expected = 100.0 * std::exp(-k * traj.sampled_times[i]);
            worst = std::max(worst,
                             std::fabs(traj.sampled_states[i][0] - expected) / expected);
        }
        return worst;
    };
    // Adjacent tolerances can land on step sequences with near-identical
    // luck, so the comparison is across two decades, where the ordering is
    // robust; each run must also respect its own requested accuracy with a
    // modest global-error allowance.
    double coarse = max_err(1e-4, 1e-7);
    double fine = max_err(1e-6, 1e-9);
    double finest = max_err(1e-8, 1e-11);
    CHECK(fine < coarse);
    CHECK(finest < fine);
    CHECK(coarse < 1e-4 * 10);
    CHECK(fine < 1e-6 * 10);
    CHECK(finest < 1e-8 * 10);
}

TEST_CASE("dosed input is captured in full: a1 gains ka times the total") {
    IndividualParameters p = default_params();
    p.cl_i = 0.0;
    p.q = 0.0;
    p.ke0 = 0.0;
    std::vector<std::pair<double, double>> doses = {
        {0.0, 10.0}, {7.3, 2.5}, {7.4, 2.5}, {16.001, 5.0}};
    DoseRateGrid grid = build_dose_rate_grid(doses, 0.0, 24.0, 0.5);
    Trajectory traj =
        solve_trajectory({0, 0, 0, 0}, {0.0, 30.0}, p, grid, SolveSettings{});
    double expected = 0.5 * 20.0;  // ka * total dosed
    double got = interpolate_solution(traj, 30.0)[0];
    CHECK(std::fabs(got - expected) / expected < 1e-9);
}

TEST_CASE("trajectory times are strictly increasing and start at the initial state") {
    IndividualParameters p = default_params();
    DoseRateGrid grid = build_dose_rate_grid({{0.0, 10.0}}, 0.0, 24.0, 0.5);
    CompartmentState y0 = {0.0, 0.0, 0.0, 50.0};
    Trajectory traj = solve_trajectory(y0, {0.0, 24.0}, p, grid, SolveSettings{});
    REQUIRE(!traj.times.empty());
    CHECK(traj.times.front() == 0.0);
    for (int c = 0; c < 4; ++c) CHECK(traj.states.front()[c] == y0[c]);
    for (std::size_t i = 1; i < traj.times.size(); ++i)
        CHECK(traj.times[i] > traj.times[i - 1]);
}

TEST_CASE("quantize_sig4 rounds to four significant digits") {
    CHECK(quantize_sig4(2.00004) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(quantize_sig4(123456.0) == doctest::Approx(123500.0).epsilon(1e-12));
    CHECK(quantize_sig4(0.00012344) == doctest::Approx(0.0001234).epsilon(1e-9));
    CHECK(quantize_sig4(-9.87651) == doctest::Approx(-9.877).epsilon(1e-12));
    CHECK(quantize_sig4(0.0) == 0.0);
}

TEST_CASE("cache: identical consecutive calls cost no new RHS evaluations") {
    TrajectoryCache cache(100);
    IndividualParameters p = default_params();
    DoseRateGrid grid = build_dose_rate_grid({{0.0, 10.0}}, 0.0, 24.0, 0.5);
    CompartmentState y0 = {0, 0, 0, 50.0};

    auto first = solve_cached(y0, {0.0, 24.0}, p, grid, SolveSettings{}, cache);
    CacheCounters after_first = cache.counters();
    CHECK(after_first.misses == 1);
    CHECK(after_first.hits == 0);
    CHECK(after_first.rhs_evaluations > 0);

    auto second = solve_cached(y0, {0.0, 24.0}, p, grid, SolveSettings{}, cache);
    CacheCounters after_second = cache.counters();
    CHECK(after_second.hits == 1);
    CHECK(after_second.misses == 1);
    // No new work: the RHS counter did not move, and the very same
    // trajectory object came back.
    CHECK(after_second.rhs_evaluations == after_first.rhs_evaluations);
    CHECK(second.get() == first.get());
}

TEST_CASE("cache: perturbations inside the quantization step still hit") {
    TrajectoryCache cache(100);
    IndividualParameters p = default_params();
    DoseRateGrid grid = build_dose_rate_grid({{0.0, 10.0}}, 0.0, 24.0, 0.5);
    CompartmentState y0 = {0, 0, 0, 50.0};

    auto first = solve_cached(y0, {0.0, 24.0}, p, grid, SolveSettings{}, cache);
    IndividualParameters nearby = p;
    nearby.cl_i = 2.00004;  // rounds back to 2.000 at 4 significant digits
    auto second = solve_cached(y0, {0.0, 24.0}, nearby, grid, SolveSettings{}, cache);
    CHECK(cache.counters().hits == 1);
    CHECK(second.get() == first.get());
}

TEST_CASE("cache: differences beyond the quantization step miss") {
    TrajectoryCache cache(100);
    IndividualParameters p = default_params();
    DoseRateGrid grid = build_dose_rate_grid({{0.0, 10.0}}, 0.0, 24.0, 0.5);
    CompartmentState y0 = {0, 0, 0, 50.0};

    solve_cached(y0, {0.0, 24.0}, p, grid, SolveSettings{}, cache);
    IndividualParameters far = p;
    far.cl_i = 2.001;
    solve_cached(y0, {0.0, 24.0}, far, grid, SolveSettings{}, cache);
    CHECK(cache.counters().misses == 2);
    CHECK(cache.counters().hits == 0);

    // A different schedule also misses even with identical parameters.
    DoseRateGrid other = build_dose_rate_grid({{0.0, 12.0}}, 0.0, 24.0, 0.5);
    solve_cached(y0, {0.0, 24.0}, p, other, SolveSettings{}, cache);
    CHECK(cache.counters().misses == 3);
}

TEST_CASE("cache eviction respects the capacity bound") {
    TrajectoryCache cache(2);
    IndividualParameters p = default_params();
    DoseRateGrid grid = build_dose_rate_grid({}, 0.0, 4.0, 0.5);
    for (int i = 0; i < 5; ++i) {
        CompartmentState y0 = {10.0 + i, 0, 0, 50.0};
        solve_cached(y0, {0.0, 4.0}, p, grid, SolveSettings{}, cache);
    }
    CacheCounters counters = cache.counters();
    CHECK(counters.entries <= 2);
    CHECK(counters.misses == 5);
    CHECK(counters.peak_memory_bytes >= counters.memory_bytes);
}

TEST_CASE("cached solves at quantized inputs equal direct solves there") {
    // The cache solves at the quantized key, so a hit and a miss can never
    // disagree; spot-check that the quantized solve is what comes back.
    TrajectoryCache cache(10);
    IndividualParameters p = default_params();
    p.cl_i = 2.000049;  // quantizes to 2.0
    DoseRateGrid grid = build_dose_rate_grid({}, 0.0, 4.0, 0.5);
    CompartmentState y0 = {100, 0, 0, 50.0};
    auto cached = solve_cached(y0, {0.0, 4.0}, p, grid, SolveSettings{}, cache);

    IndividualParameters q = p;
    q.cl_i = 2.0;
    Trajectory direct = solve_trajectory(y0, {0.0, 4.0}, q, grid, SolveSettings{});
    REQUIRE(cached->times.size() == direct.times.size());
    for (std::size_t i = 0; i < direct.times.size(); ++i)
        CHECK(cached->states[i][0] == direct.states[i][0]);
}

}  // TEST_SUITE
