#include "doctest.h"
#include "test_utils.hpp"

#include "qpkpd/errors.hpp"
#include "qpkpd/likelihood.hpp"
#include "qpkpd/omega.hpp"
#include "qpkpd/rng.hpp"

#include <cmath>
#include <limits>

using namespace qpkpd;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_SUITE("likelihood") {

TEST_CASE("log-normal PK density at its mode") {
    // obs = pred = 1: the Jacobian term vanishes and only the normalization
    // constant -0.5*ln(2*pi*sigma^2) remains.
    double expected = -0.5 * std::log(2.0 * M_PI * 0.04);
    CHECK(pk_loglik_point(1.0, 1.0, 0.2) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(pk_loglik_point(1.0, 1.0, 0.2) == doctest::Approx(0.6905).epsilon(1e-4));
}

TEST_CASE("the Jacobian term subtracts log obs") {
    double e = std::exp(1.0);
    CHECK(pk_loglik_point(e, e, 0.2) ==
          doctest::Approx(-0.5 * std::log(2.0 * M_PI * 0.04) - 1.0).epsilon(1e-12));
}

TEST_CASE("doubling sigma drops the at-mode value by ln 2") {
    double drop = pk_loglik_point(1.0, 1.0, 0.2) - pk_loglik_point(1.0, 1.0, 0.4);
    CHECK(drop == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("log-normal PK guards its domain") {
    CHECK_THROWS_AS(pk_loglik_point(0.0, 1.0, 0.2), DomainError);
    CHECK_THROWS_AS(pk_loglik_point(-1.0, 1.0, 0.2), DomainError);
    CHECK_THROWS_AS(pk_loglik_point(1.0, 0.0, 0.2), DegeneracyError);
    CHECK_THROWS_AS(pk_loglik_point(1.0, 1e-13, 0.2), DegeneracyError);
}

TEST_CASE("proportional PD density at its mode") {
    // sd = 0.15 * 10 = 1.5.
    double expected = -0.5 * std::log(2.0 * M_PI * 2.25);
    CHECK(pd_loglik_point(10.0, 10.0, 0.15) ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(pd_loglik_point(10.0, 10.0, 0.15) == doctest::Approx(-1.3244).epsilon(1e-4));
}

TEST_CASE("the PD mode is at obs = pred") {
    double at_mode = pd_loglik_point(10.0, 10.0, 0.15);
    for (double obs : {8.0, 9.9, 10.1, 12.0}) {
        CHECK(pd_loglik_point(obs, 10.0, 0.15) < at_mode);
    }
}

TEST_CASE("PD with a collapsed prediction is degenerate") {
    CHECK_THROWS_AS(pd_loglik_point(1.0, 0.0, 0.15), DegeneracyError);
    CHECK_THROWS_AS(pd_loglik_point(1.0, -2.0, 0.15), DegeneracyError);
}

TEST_CASE("both point densities integrate to one over obs") {
    // Simpson's rule; the tails cut off here carry less mass than 1e-12.
    auto simpson = [](double a, double b, int n, const std::function<double(double)>& f) {
        double h = (b - a) / n;
        double acc = f(a) + f(b);
        for (int i = 1; i < n; ++i) acc += f(a + i * h) * ((i % 2) ? 4.0 : 2.0);
        return acc * h / 3.0;
    };
    double pk_mass = simpson(std::exp(-8.0 * 0.2), std::exp(8.0 * 0.2), 20000,
                             [](double o) { return std::exp(pk_loglik_point(o, 1.0, 0.2)); });
    CHECK(pk_mass == doctest::Approx(1.0).epsilon(1e-6));
    double pd_mass = simpson(10.0 - 9.0, 10.0 + 9.0, 20000, [](double o) {
        return std::exp(pd_loglik_point(o, 10.0, 0.15));
    });
    CHECK(pd_mass == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("a subject with no usable observations contributes zero") {
    Subject s = testutil::make_subject(1, 70.0, 0, 5.0, {}, {});
    SimulationContext ctx = testutil::plain_context();
    double ll = individual_loglik(s, FixedEffects{}, RandomEffects::Zero(6),
                                  ResidualModel{}, ctx);
    CHECK(ll == 0.0);
}

TEST_CASE("one observation sitting on the prediction reduces to the point value") {
    FixedEffects theta;
    SimulationContext ctx = testutil::plain_context();
    RandomEffects eta = RandomEffects::Zero(6);

    // First pass recovers the model prediction at 12 h; the second scores an
    // observation placed exactly there.
    IndividualParameters p = adjust_parameters(theta, eta, 70.0, 0);
    Subject probe = testutil::make_subject(1, 70.0, 0, 5.0, {{12.0, 1.0}}, {});
    Trajectory traj = simulate_subject(probe, p, 12.0, ctx);
    double pred = predict_pk(interpolate_solution(traj, 12.0), p);
    REQUIRE(pred > 0.0);

    Subject s = testutil::make_subject(1, 70.0, 0, 5.0, {{12.0, pred}}, {});
    double ll = individual_loglik(s, theta, eta, ResidualModel{}, ctx);
    CHECK(ll == doctest::Approx(pk_loglik_point(pred, pred, 0.2)).epsilon(1e-9));
}

TEST_CASE("duplicating the observations doubles the log-likelihood") {
    FixedEffects theta;
    SimulationContext ctx = testutil::plain_context();
    RandomEffects eta = RandomEffects::Zero(6);
    Subject once = testutil::make_subject(1, 70.0, 0, 5.0, {{2.0, 3.0}, {12.0, 1.5}},
                                          {{24.0, 40.0}});
    Subject twice = once;
    twice.pk_observations.insert(twice.pk_observations.end(),
                                 once.pk_observations.begin(),
                                 once.pk_observations.end());
    twice.pd_observations.insert(twice.pd_observations.end(),
                                 once.pd_observations.begin(),
                                 once.pd_observations.end());
    double ll1 = individual_loglik(once, theta, eta, ResidualModel{}, ctx);
    double ll2 = individual_loglik(twice, theta, eta, ResidualModel{}, ctx);
    CHECK(ll2 == doctest::Approx(2.0 * ll1).epsilon(1e-9));
}

TEST_CASE("non-positive PK observations are skipped with a warning under log-normal") {
    FixedEffects theta;
    std::vector<std::string> warnings;
    SimulationContext ctx = testutil::plain_context();
    ctx.warnings = &warnings;
    RandomEffects eta = RandomEffects::Zero(6);
    Subject good = testutil::make_subject(1, 70.0, 0, 5.0, {{2.0, 3.0}}, {});
    Subject with_bad = testutil::make_subject(1, 70.0, 0, 5.0,
                                              {{2.0, 3.0}, {4.0, -0.5}}, {});
    double ll_good = individual_loglik(good, theta, eta, ResidualModel{}, ctx);
    double ll_with_bad = individual_loglik(with_bad, theta, eta, ResidualModel{}, ctx);
    // The skipped observation still extends the simulation horizon, so the
    // shared t=2 prediction matches only to solver accuracy, not exactly.
    CHECK(ll_with_bad == doctest::Approx(ll_good).epsilon(1e-6));
    CHECK(!warnings.empty());
}

TEST_CASE("proportional PK form scores non-positive observations normally") {
    FixedEffects theta;
    SimulationContext ctx = testutil::plain_context();
    RandomEffects eta = RandomEffects::Zero(6);
    ResidualModel residual;
    residual.pk_form = ResidualModel::PkForm::Proportional;
    Subject s = testutil::make_subject(1, 70.0, 0, 5.0, {{2.0, -0.5}}, {});
    double ll = individual_loglik(s, theta, eta, residual, ctx);
    CHECK(std::isfinite(ll));
    CHECK(ll < 0.0);  // an impossible-under-lognormal value is just unlikely here
}

TEST_CASE("solver failures carry the subject id") {
    FixedEffects theta;
    theta.cl = 1e13;
    theta.v1 = 1e-6;
    SimulationContext ctx = testutil::plain_context();
    Subject s = testutil::make_subject(77, 70.0, 0, 5.0, {{2.0, 3.0}}, {});
    try {
        individual_loglik(s, theta, RandomEffects::Zero(6), ResidualModel{}, ctx);
        FAIL("expected SolverError");
    } catch (const SolverError& e) {
        CHECK(std::string(e.what()).find("77") != std::string::npos);
    }
}

TEST_CASE("log_mean_exp_marginal matches the conjugate closed form") {
    // One linear-Gaussian observation y = eta + noise: the marginal of y is
    // N(0, omega^2 + sigma^2), so the Monte Carlo estimate has an exact
    // target to land on.
    const double y = 0.7, omega2 = 0.09, sigma2 = 0.04;
    Eigen::VectorXd v(1);
    v << omega2;
    OmegaMatrix omega = OmegaMatrix::diagonal(v);
    auto loglik = [&](const Eigen::VectorXd& eta) {
        double d = y - eta(0);
        return -0.5 * d * d / sigma2 - 0.5 * std::log(2.0 * M_PI * sigma2);
    };
    RngStream rng(31, {hash_label("marginal"), 1});
    MarginalEstimate est = log_mean_exp_marginal(10000, rng, omega, loglik);
    double closed = -0.5 * y * y / (omega2 + sigma2) -
                    0.5 * std::log(2.0 * M_PI * (omega2 + sigma2));
    CHECK(std::fabs(est.value - closed) < 3.0 * est.std_error);
    CHECK(est.std_error > 0.0);
}

TEST_CASE("shifting the integrand by c shifts the estimate by c, overflow-free") {
    Eigen::VectorXd v(1);
    v << 0.09;
    OmegaMatrix omega = OmegaMatrix::diagonal(v);
    auto base = [](const Eigen::VectorXd& eta) { return -0.5 * eta(0) * eta(0); };
    // c = 800 would overflow exp() without the max-shift trick.
    const double c = 800.0;
    auto shifted = [&](const Eigen::VectorXd& eta) { return base(eta) + c; };
    RngStream r1(5, {1}), r2(5, {1});
    MarginalEstimate e1 = log_mean_exp_marginal(500, r1, omega, base);
    MarginalEstimate e2 = log_mean_exp_marginal(500, r2, omega, shifted);
    CHECK(std::isfinite(e2.value));
    CHECK(e2.value - e1.value == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("the Monte Carlo standard error shrinks like one over sqrt(n)") {
    const double y = 0.7, omega2 = 0.09, sigma2 = 0.04;
    Eigen::VectorXd v(1);
    v << omega2;
    OmegaMatrix omega = OmegaMatrix::diagonal(v);
    auto loglik = [&](const Eigen::VectorXd& eta) {
        double d = y - eta(0);
        return -0.5 * d * d / sigma2 - 0.5 * std::log(2.0 * M_PI * sigma2);
    };
    RngStream r1(9, {1}), r2(9, {2});
    double se_small = log_mean_exp_marginal(100, r1, omega, loglik).std_error;
    double se_large = log_mean_exp_marginal(10000, r2, omega, loglik).std_error;
    double ratio = se_small / se_large;  // ideal: sqrt(100) = 10
    CHECK(ratio > 5.0);
    CHECK(ratio < 20.0);
}

TEST_CASE("an integrand that is minus infinity everywhere is reported") {
    Eigen::VectorXd v(1);
    v << 0.09;
    OmegaMatrix omega = OmegaMatrix::diagonal(v);
    RngStream rng(3, {1});
    auto dead = [](const Eigen::VectorXd&) { return -kInf; };
    CHECK_THROWS_AS(log_mean_exp_marginal(100, rng, omega, dead), DegeneracyError);
}

TEST_CASE("population estimate with zero omega equals the eta=0 sum, any n_mc") {
    FixedEffects theta;
    SimulationContext ctx = testutil::plain_context();
    std::vector<Subject> subjects = {
        testutil::make_subject(1, 70.0, 0, 5.0, {{2.0, 3.0}}, {{24.0, 40.0}}),
        testutil::make_subject(2, 90.0, 1, 5.0, {{4.0, 2.0}}, {}),
    };
    OmegaMatrix zero = OmegaMatrix::zero(6);
    double direct = 0.0;
    for (const Subject& s : subjects)
        direct += individual_loglik(s, theta, RandomEffects::Zero(6),
                                    ResidualModel{}, ctx);
    for (int n_mc : {1, 7}) {
        LoglikEstimate est = population_loglik_estimate(
            subjects, theta, zero, ResidualModel{}, n_mc, 42, ctx);
        CHECK(est.value == doctest::Approx(direct).epsilon(1e-12));
        CHECK(est.n_subjects == 2);
        CHECK(est.per_subject_mean == doctest::Approx(direct / 2.0).epsilon(1e-12));
    }
}

TEST_CASE("population estimate is deterministic and worker-independent") {
    FixedEffects theta;
    SimulationContext ctx = testutil::plain_context();
    std::vector<Subject> subjects;
    for (long id = 1; id <= 6; ++id)
        subjects.push_back(testutil::make_subject(id, 60.0 + 5.0 * id, id % 2 ? 1 : 0,
                                                  5.0, {{2.0, 3.0}, {12.0, 1.0}},
                                                  {{24.0, 40.0}}));
    Eigen::VectorXd d(6);
    d << 0.09, 0.09, 0.09, 0.09, 0.09, 0.09;
    OmegaMatrix omega = OmegaMatrix::diagonal(d);

    LoglikEstimate a = population_loglik_estimate(subjects, theta, omega,
                                                  ResidualModel{}, 25, 7, ctx);
    LoglikEstimate b = population_loglik_estimate(subjects, theta, omega,
                                                  ResidualModel{}, 25, 7, ctx);
    LoglikEstimate c = population_loglik_estimate(subjects, theta, omega,
                                                  ResidualModel{}, 25, 7, ctx,
                                                  default_eta_map(), 4);
    CHECK(a.value == b.value);
    CHECK(a.value == c.value);
    CHECK(a.std_error == c.std_error);

    LoglikEstimate other_seed = population_loglik_estimate(
        subjects, theta, omega, ResidualModel{}, 25, 8, ctx);
    CHECK(other_seed.value != a.value);
}

TEST_CASE("predictions convert amounts to concentration units") {
    // predict_pk reads the central compartment: a1/v1 in mg/L, scaled by
    // 1000 to ng/mL.  predict_pd reads the response directly.
    IndividualParameters p;
    p.v1_i = 10.0;
    CompartmentState y = {5.0, 0.0, 0.0, 42.0};
    CHECK(predict_pk(y, p) == doctest::Approx(500.0).epsilon(1e-12));
    CHECK(predict_pd(y) == doctest::Approx(42.0).epsilon(1e-12));
}

TEST_CASE("simulate_subject starts the response at its pre-treatment baseline") {
    FixedEffects theta;
    SimulationContext ctx = testutil::plain_context();
    IndividualParameters p = adjust_parameters(theta, RandomEffects::Zero(6), 70.0, 1);
    Subject s = testutil::make_subject(1, 70.0, 1, 5.0, {}, {{0.0, 55.0}});
    Trajectory traj = simulate_subject(s, p, 24.0, ctx);
    // comed=1: kin_i = 5.5, baseline = 5.5/0.1 = 55.
    CHECK(interpolate_solution(traj, 0.0)[3] == doctest::Approx(55.0).epsilon(1e-9));
}

}  // TEST_SUITE
