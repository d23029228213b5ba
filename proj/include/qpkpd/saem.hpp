#pragma once

// Stochastic approximation EM.  The E-step runs a short Metropolis chain per
// subject (proposals come from a pluggable engine, the acceptance rule never
// changes with the engine); the M-step folds the retained random effects
// into theta and the covariance statistic.

#include "qpkpd/likelihood.hpp"
#include "qpkpd/model.hpp"
#include "qpkpd/omega.hpp"
#include "qpkpd/qsampler.hpp"
#include "qpkpd/rng.hpp"

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace qpkpd {

enum class EngineKind { Classical, Quantum };

const char* engine_kind_name(EngineKind kind);
EngineKind engine_kind_from_name(const std::string& name);

struct SaemSettings {
    int n_iterations = 20;
    int n_burnin = 4;
    int mcmc_steps_per_subject = 5;
    EngineKind engine = EngineKind::Classical;
    uint64_t seed = 0;

    double step_sd = 0.1;       // classical engine: initial proposal sd
    ProposalSettings quantum;   // quantum engine parameters
    int ansatz_layers = 3;

    // Off by default: theta components without a random effect stay at their
    // initial values, and the residual sigmas stay fixed.
    bool refine_fixed_effects = false;
    bool estimate_sigma = false;

    void validate() const;
};

// gamma_k = 1 through burn-in, then 1/(k - n_burnin); k is 1-based.
double saem_gamma(int iteration_k, int n_burnin);

// Symmetric Gaussian random-walk proposal.
RandomEffects propose_eta_classical(const RandomEffects& current, double step_sd,
                                    RngStream& rng);

// Proposal engines ------------------------------------------------------------

class ProposalEngine {
public:
    virtual ~ProposalEngine() = default;

    // One proposal for one chain.  Must be safe to call concurrently for
    // distinct chains: iteration state is only touched at the barrier.
    virtual RandomEffects propose(const RandomEffects& current,
                                  RngStream& rng) const = 0;

    // Called once per iteration after all subjects finish, with that
    // iteration's mean acceptance rate.
    virtual void iteration_barrier(int iteration_k, double acceptance,
                                   bool past_burnin) = 0;

    virtual const char* name() const = 0;
};

class ClassicalProposalEngine final : public ProposalEngine {
public:
    explicit ClassicalProposalEngine(double step_sd);

    RandomEffects propose(const RandomEffects& current,
                          RngStream& rng) const override;
    // Multiplicative nudge toward a 30% acceptance target.
    void iteration_barrier(int iteration_k, double acceptance,
                           bool past_burnin) override;
    const char* name() const override { return "classical"; }

    double step_sd() const { return step_sd_; }

private:
    double step_sd_;
};

class QuantumProposalEngine final : public ProposalEngine {
public:
    // Angles start uniform on [-pi/2, pi/2] from the run seed (streams
    // "ansatz-init" and "ansatz-adapt" are independent of the E-step's).
    QuantumProposalEngine(int eta_dim, int n_layers, ProposalSettings settings,
                          uint64_t seed);

    RandomEffects propose(const RandomEffects& current,
                          RngStream& rng) const override;
    // Past burn-in, alternates perturb / judge beats of the angle hill-climb.
    void iteration_barrier(int iteration_k, double acceptance,
                           bool past_burnin) override;
    const char* name() const override { return "quantum"; }

    const AnsatzSpec& spec() const { return spec_; }

    // One row per barrier: iteration, acceptance, what happened to the
    // angles (hold / perturb / keep / revert), then every angle.
    void write_history_csv(std::ostream& out) const;

private:
    struct HistoryRow {
        int iteration;
        double acceptance;
        std::string action;
        std::vector<double> angles;
    };

    void refresh_state();

    AnsatzSpec spec_;
    ProposalSettings settings_;
    QuantumState state_;  // ansatz output, rebuilt only when angles change
    AngleAdaptState adapt_;
    RngStream adapt_rng_;
    std::vector<double> acceptance_history_;
    std::vector<HistoryRow> history_;
};

// Metropolis kernel -----------------------------------------------------------

struct ChainState {
    RandomEffects eta;
    double log_target = 0.0;  // cached log target at eta
};

enum class StepOutcome {
    Accepted,
    Rejected,
    FailedEval,  // proposal evaluation threw; chain untouched
};

// Accepts with probability min(1, exp(l_prop - l_cur)).  The log target must
// already include every term that varies with eta (observation loglik plus
// the eta prior).  A proposal whose evaluation throws SolverError or
// DegeneracyError is rejected with a logged warning so the chain stays
// alive.  Exactly one uniform is consumed per successfully evaluated
// proposal.
StepOutcome metropolis_step(ChainState& chain, const RandomEffects& proposal,
                            const std::function<double(const RandomEffects&)>& log_target,
                            RngStream& rng,
                            std::vector<std::string>* warnings = nullptr,
                            long subject_id = -1);

// M-step ----------------------------------------------------------------------

struct MStepResult {
    FixedEffects theta;
    OmegaMatrix omega;
    // gamma_k * (mean sampled eta); subtract from every retained eta so that
    // theta_j * exp(eta_ij) is left invariant by the fold.
    Eigen::VectorXd eta_shift;
};

// One stochastic-approximation update.  omega_stat is the running sufficient
// statistic (initialize it to the starting omega matrix); it is advanced in
// place toward the mean of eta*eta^T over subjects and the returned omega is
// its PSD projection.  eta-carrying theta components absorb the mean sampled
// log-deviation.  Non-finite statistics raise EstimationError with the
// iteration index.
MStepResult update_population(const FixedEffects& theta,
                              Eigen::MatrixXd& omega_stat,
                              const std::vector<RandomEffects>& etas,
                              int iteration_k, int n_burnin, const EtaMap& map);

// Full run --------------------------------------------------------------------

struct SaemIterationRow {
    int iteration = 0;        // 1-based
    double loglik = 0.0;      // observation loglik at the retained etas
    double acceptance = 0.0;  // mean over subjects and MCMC steps
    FixedEffects theta;       // after the M-step
    Eigen::VectorXd omega_diag;
    double wall_seconds = 0.0;  // informational only; never serialized
};

struct SaemTrace {
    double initial_loglik = 0.0;  // at eta = 0 under the starting parameters
    FixedEffects initial_theta;
    Eigen::VectorXd initial_omega_diag;
    std::vector<SaemIterationRow> rows;
};

struct SaemResult {
    FixedEffects theta;
    OmegaMatrix omega;
    ResidualModel residual;
    SaemTrace trace;
    std::vector<RandomEffects> final_etas;  // one per subject, subject order
    std::vector<std::string> warnings;
    std::string engine_report;  // quantum engine: adaptation history CSV
};

// Runs n_iterations of (E: Metropolis per subject; M: update_population).
// Deterministic for a given settings.seed and engine, independent of the
// worker count: per-subject streams are keyed (seed, "estep", subject id,
// iteration).  Aborts with EstimationError when more than half the subjects
// hit solver failures in one iteration.  With refine_fixed_effects set, a
// Nelder-Mead pass over the no-eta components runs once after the last
// iteration.
SaemResult run_saem(const std::vector<Subject>& subjects,
                    const FixedEffects& theta0, const OmegaMatrix& omega0,
                    const ResidualModel& residual0, const SaemSettings& settings,
                    const SimulationContext& ctx,
                    const EtaMap& map = default_eta_map(), unsigned workers = 1);

// Trace CSV: iteration, loglik, acceptance, each theta component, omega
// diagonal.  Row 0 carries the pre-iteration loglik with acceptance 0.
void write_trace_csv(std::ostream& out, const SaemTrace& trace, const EtaMap& map);

} // namespace qpkpd
