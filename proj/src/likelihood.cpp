#include "qpkpd/likelihood.hpp"

#include "qpkpd/errors.hpp"
#include "qpkpd/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qpkpd {

namespace {
constexpr double kLog2Pi = 1.8378770664093454;
constexpr double kPredFloor = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();
} // namespace

void ResidualModel::validate() const {
    if (!(sigma_pk > 0.0) || !(sigma_pd > 0.0))
        throw DomainError("residual sigmas must be positive");
}

double pk_loglik_point(double obs, double pred, double sigma_pk) {
    if (!(sigma_pk > 0.0))
        throw DomainError("sigma_pk must be positive");
    if (!(obs > 0.0))
        throw DomainError("log-normal PK likelihood needs obs > 0");
    if (pred <= kPredFloor)
        throw DegeneracyError("PK prediction collapsed to " + std::to_string(pred) +
                              " ng/mL; log-normal model is degenerate");
    const double z = (std::log(obs) - std::log(pred)) / sigma_pk;
    return -0.5 * kLog2Pi - std::log(sigma_pk) - 0.5 * z * z - std::log(obs);
}

double pd_loglik_point(double obs, double pred, double sigma_pd) {
    if (!(sigma_pd > 0.0))
        throw DomainError("sigma_pd must be positive");
    if (pred <= kPredFloor)
        throw DegeneracyError("prediction collapsed to " + std::to_string(pred) +
                              " ng/mL; proportional model is degenerate");
    const double sd = sigma_pd * pred;
    const double z = (obs - pred) / sd;
    return -0.5 * kLog2Pi - std::log(sd) - 0.5 * z * z;
}

double predict_pk(const CompartmentState& y, const IndividualParameters& p) {
    return y[0] / p.v1_i * kConcUnitScale;
}

double predict_pd(const CompartmentState& y) { return y[3]; }

Trajectory simulate_subject(const Subject& subject, const IndividualParameters& p,
                            double t_until, const SimulationContext& ctx) {
    double t_end = t_until;
    for (const auto& d : subject.dose_events)
        t_end = std::max(t_end, d.time);
    t_end = std::max(t_end, ctx.grid_dt);  // ensure a non-degenerate span

    std::vector<std::pair<double, double>> doses;
    doses.reserve(subject.dose_events.size());
    for (const auto& d : subject.dose_events)
        doses.emplace_back(d.time, d.amount);
    const DoseRateGrid grid = build_dose_rate_grid(doses, 0.0, t_end, ctx.grid_dt);

    const CompartmentState y0{0.0, 0.0, 0.0, p.kin_i / p.kout};
    if (ctx.cache)
        return *solve_cached(y0, {0.0, t_end}, p, grid, ctx.solver, *ctx.cache);
    return solve_trajectory(y0, {0.0, t_end}, p, grid, ctx.solver);
}

SubjectFitDetail individual_fit_detail(const Subject& subject,
                                       const FixedEffects& theta,
                                       const RandomEffects& eta,
                                       const ResidualModel& residual,
                                       const SimulationContext& ctx,
                                       const EtaMap& map) {
    SubjectFitDetail detail;
    const std::size_t n_obs =
        subject.pk_observations.size() + subject.pd_observations.size();
    if (n_obs == 0)
        return detail;

    double t_last = 0.0;
    for (const auto& o : subject.pk_observations)
        t_last = std::max(t_last, o.time);
    for (const auto& o : subject.pd_observations)
        t_last = std::max(t_last, o.time);

    const IndividualParameters p =
        adjust_parameters(theta, eta, subject.bw, subject.comed, map);

    Trajectory traj;
    try {
        traj = simulate_subject(subject, p, t_last, ctx);
    } catch (const SolverError& e) {
        throw SolverError("subject " + std::to_string(subject.id) + ": " + e.what(),
                          e.last_time);
    }

    for (const auto& o : subject.pk_observations) {
        const double pred = predict_pk(interpolate_solution(traj, o.time), p);
        if (residual.pk_form == ResidualModel::PkForm::LogNormal) {
            if (!(o.value > 0.0)) {
                if (ctx.warnings)
                    ctx.warnings->push_back(
                        "subject " + std::to_string(subject.id) + ": PK observation " +
                        std::to_string(o.value) + " ng/mL at t=" +
                        std::to_string(o.time) + " h is not positive; skipped");
                continue;
            }
            detail.loglik += pk_loglik_point(o.value, pred, residual.sigma_pk);
            const double z = std::log(o.value) - std::log(pred);
            detail.pk_sq_sum += z * z;
        } else {
            detail.loglik += pd_loglik_point(o.value, pred, residual.sigma_pk);
            const double z = (o.value - pred) / pred;
            detail.pk_sq_sum += z * z;
        }
        ++detail.pk_n;
    }
    for (const auto& o : subject.pd_observations) {
        const double pred = predict_pd(interpolate_solution(traj, o.time));
        detail.loglik += pd_loglik_point(o.value, pred, residual.sigma_pd);
        const double z = (o.value - pred) / pred;
        detail.pd_sq_sum += z * z;
        ++detail.pd_n;
    }
    return detail;
}

double individual_loglik(const Subject& subject, const FixedEffects& theta,
                         const RandomEffects& eta, const ResidualModel& residual,
                         const SimulationContext& ctx, const EtaMap& map) {
    return individual_fit_detail(subject, theta, eta, residual, ctx, map).loglik;
}

MarginalEstimate log_mean_exp_marginal(
    int n_mc, RngStream& rng, const OmegaMatrix& omega,
    const std::function<double(const Eigen::VectorXd&)>& loglik) {
    if (n_mc < 1)
        throw DomainError("n_mc must be at least 1");

    std::vector<double> draws(static_cast<std::size_t>(n_mc));
    double m = -kInf;
    for (int k = 0; k < n_mc; ++k) {
        const Eigen::VectorXd eta = omega.sample(rng);
        draws[static_cast<std::size_t>(k)] = loglik(eta);
        m = std::max(m, draws[static_cast<std::size_t>(k)]);
    }
    if (m == -kInf)
        throw DegeneracyError("all Monte Carlo draws have zero likelihood");

    // log-mean-exp around the max keeps every exp() in [0, 1].
    double sum_w = 0.0, sum_w2 = 0.0;
    for (double d : draws) {
        const double w = std::exp(d - m);
        sum_w += w;
        sum_w2 += w * w;
    }
    const double n = static_cast<double>(n_mc);
    const double mean_w = sum_w / n;

    MarginalEstimate est;
    est.value = m + std::log(mean_w);
    if (n_mc > 1) {
        const double var_w = std::max(0.0, (sum_w2 - n * mean_w * mean_w) / (n - 1.0));
        // Delta method for log of a Monte Carlo mean.
        est.std_error = std::sqrt(var_w / n) / mean_w;
    }
    return est;
}

LoglikEstimate population_loglik_estimate(const std::vector<Subject>& subjects,
                                          const FixedEffects& theta,
                                          const OmegaMatrix& omega,
                                          const ResidualModel& residual,
                                          int n_mc, uint64_t seed,
                                          const SimulationContext& ctx,
                                          const EtaMap& map, unsigned workers) {
    if (n_mc < 1)
        throw DomainError("n_mc must be at least 1");
    if (omega.dim() != static_cast<int>(map.size()))
        throw DomainError("omega dimension does not match the eta map");

    std::vector<MarginalEstimate> per_subject(subjects.size());
    std::vector<std::string> failures(subjects.size());

    parallel_for(subjects.size(), workers, [&](std::size_t i) {
        const Subject& s = subjects[i];
        RngStream rng(seed, {hash_label("marginal"), static_cast<uint64_t>(s.id)});
        try {
            per_subject[i] = log_mean_exp_marginal(
                n_mc, rng, omega, [&](const Eigen::VectorXd& eta) {
                    try {
                        return individual_loglik(s, theta, eta, residual, ctx, map);
                    } catch (const SolverError&) {
                        return -kInf;  // a diverging draw carries no weight
                    } catch (const DegeneracyError&) {
                        return -kInf;
                    }
                });
        } catch (const DegeneracyError&) {
            failures[i] = "subject " + std::to_string(s.id) +
                          ": all Monte Carlo draws have zero likelihood";
        }
    });

    for (const auto& f : failures)
        if (!f.empty())
            throw DegeneracyError(f);

    LoglikEstimate out;
    out.n_subjects = static_cast<int>(subjects.size());
    double var = 0.0;
    for (const auto& est : per_subject) {
        out.value += est.value;
        var += est.std_error * est.std_error;
    }
    out.std_error = std::sqrt(var);
    out.per_subject_mean =
        subjects.empty() ? 0.0 : out.value / static_cast<double>(subjects.size());
    return out;
}

} // namespace qpkpd
