#pragma once

#include "qpkpd/dataset.hpp"
#include "qpkpd/model.hpp"
#include "qpkpd/ode.hpp"
#include "qpkpd/omega.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace qpkpd {

// Residual error structure.  PK observations use a log-normal model by
// default (sigma_pk is the log-scale sd); a proportional-Gaussian alternative
// is selectable.  PD observations are proportional-Gaussian.
struct ResidualModel {
    enum class PkForm { LogNormal, Proportional };

    double sigma_pk = 0.20;
    double sigma_pd = 0.15;
    PkForm pk_form = PkForm::LogNormal;

    void validate() const;  // throws DomainError unless both sigmas > 0
};

// log N(log obs; log pred, sigma²) − log obs.
// Requires obs > 0; pred below 1e-12 throws DegeneracyError.
double pk_loglik_point(double obs, double pred, double sigma_pk);

// Gaussian with mean pred, sd sigma*pred (used for PD, and for PK when the
// proportional form is selected).  pred below 1e-12 throws DegeneracyError.
double pd_loglik_point(double obs, double pred, double sigma_pd);

// Everything individual_loglik needs besides the subject and parameters.
struct SimulationContext {
    SolveSettings solver;
    double grid_dt = 0.5;               // dose-rate grid resolution, h
    TrajectoryCache* cache = nullptr;   // memoize solves when set
    std::vector<std::string>* warnings = nullptr;  // optional sink
};

// Individual parameters and predictions -------------------------------------

// Simulate one subject's dosing timeline from t=0 (response starting at its
// pre-treatment steady state kin_i/kout) up to at least `t_until`.
Trajectory simulate_subject(const Subject& subject, const IndividualParameters& p,
                            double t_until, const SimulationContext& ctx);

// Model predictions at a time point, in observation units (ng/mL).
double predict_pk(const CompartmentState& y, const IndividualParameters& p);
double predict_pd(const CompartmentState& y);

// Loglik plus the sigma-free squared-residual sums that the sigma update and
// the residual diagnostics both need.  pk_sq_sum accumulates (ln obs - ln
// pred)^2 under the log-normal form and ((obs - pred)/pred)^2 under the
// proportional form; pd_sq_sum always uses the proportional form.
struct SubjectFitDetail {
    double loglik = 0.0;
    double pk_sq_sum = 0.0;
    int pk_n = 0;
    double pd_sq_sum = 0.0;
    int pd_n = 0;
};

// Simulates once and interpolates at observation times.  PK observations
// with obs <= 0 under the log-normal form are skipped with a warning.
// Solver failures rethrow with the subject id attached.
SubjectFitDetail individual_fit_detail(const Subject& subject,
                                       const FixedEffects& theta,
                                       const RandomEffects& eta,
                                       const ResidualModel& residual,
                                       const SimulationContext& ctx,
                                       const EtaMap& map = default_eta_map());

// Sum of observation log-densities for one subject at the given random
// effects; 0.0 for a subject with no usable observations.
double individual_loglik(const Subject& subject, const FixedEffects& theta,
                         const RandomEffects& eta, const ResidualModel& residual,
                         const SimulationContext& ctx,
                         const EtaMap& map = default_eta_map());

struct LoglikEstimate {
    double value = 0.0;             // total over subjects
    double std_error = 0.0;         // delta-method Monte Carlo SE
    double per_subject_mean = 0.0;  // value / n_subjects
    int n_subjects = 0;
};

// Overflow-safe log-mean-exp Monte Carlo marginalization of one integrand
// over eta ~ N(0, omega).  Exposed so the machinery is testable against
// conjugate closed forms.
struct MarginalEstimate {
    double value = 0.0;
    double std_error = 0.0;
};
MarginalEstimate log_mean_exp_marginal(
    int n_mc, RngStream& rng, const OmegaMatrix& omega,
    const std::function<double(const Eigen::VectorXd&)>& loglik);

// Monte Carlo population log-likelihood: per-subject marginalization with a
// stream keyed (seed, subject id), summed with combined SE.  Deterministic
// for a given seed regardless of `workers`.  A subject whose draws are all
// -inf throws DegeneracyError naming it.
LoglikEstimate population_loglik_estimate(const std::vector<Subject>& subjects,
                                          const FixedEffects& theta,
                                          const OmegaMatrix& omega,
                                          const ResidualModel& residual,
                                          int n_mc, uint64_t seed,
                                          const SimulationContext& ctx,
                                          const EtaMap& map = default_eta_map(),
                                          unsigned workers = 1);

} // namespace qpkpd
