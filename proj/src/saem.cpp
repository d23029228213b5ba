#include "qpkpd/saem.hpp"

#include "qpkpd/errors.hpp"
#include "qpkpd/parallel.hpp"
#include "qpkpd/text.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace qpkpd {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kAcceptanceTarget = 0.30;

std::string subject_tag(long subject_id) {
    return subject_id >= 0 ? "subject " + std::to_string(subject_id) + ": "
                           : std::string();
}
} // namespace

const char* engine_kind_name(EngineKind kind) {
    return kind == EngineKind::Classical ? "classical" : "quantum";
}

EngineKind engine_kind_from_name(const std::string& name) {
    if (name == "classical")
        return EngineKind::Classical;
    if (name == "quantum")
        return EngineKind::Quantum;
    throw ConfigError("unknown proposal engine '" + name +
                      "' (expected classical or quantum)");
}

void SaemSettings::validate() const {
    if (n_iterations < 1 || n_burnin < 1 || mcmc_steps_per_subject < 1)
        throw ConfigError("iteration, burn-in and MCMC step counts must all be >= 1");
    if (n_burnin >= n_iterations)
        throw ConfigError("burn-in (" + std::to_string(n_burnin) +
                          ") must be shorter than the run (" +
                          std::to_string(n_iterations) + " iterations)");
    if (!(step_sd > 0.0))
        throw ConfigError("classical proposal step_sd must be positive");
    if (ansatz_layers < 1)
        throw ConfigError("ansatz needs at least one layer");
    quantum.validate();
}

double saem_gamma(int iteration_k, int n_burnin) {
    if (iteration_k <= n_burnin)
        return 1.0;
    return 1.0 / static_cast<double>(iteration_k - n_burnin);
}

RandomEffects propose_eta_classical(const RandomEffects& current, double step_sd,
                                    RngStream& rng) {
    if (step_sd < 0.0)
        throw DomainError("step_sd must be nonnegative");
    RandomEffects out = current;
    for (Eigen::Index j = 0; j < out.size(); ++j)
        out[j] += step_sd * rng.normal();
    return out;
}

// Engines ----------------------------------------------------------------------

ClassicalProposalEngine::ClassicalProposalEngine(double step_sd)
    : step_sd_(step_sd) {
    if (!(step_sd > 0.0))
        throw DomainError("step_sd must be positive");
}

RandomEffects ClassicalProposalEngine::propose(const RandomEffects& current,
                                               RngStream& rng) const {
    return propose_eta_classical(current, step_sd_, rng);
}

void ClassicalProposalEngine::iteration_barrier(int, double acceptance, bool) {
    // Too many acceptances means steps are timid; too few means overreach.
    if (acceptance > kAcceptanceTarget)
        step_sd_ *= 1.1;
    else if (acceptance < kAcceptanceTarget)
        step_sd_ /= 1.1;
}

QuantumProposalEngine::QuantumProposalEngine(int eta_dim, int n_layers,
                                             ProposalSettings settings,
                                             uint64_t seed)
    : settings_(settings), adapt_rng_(seed, {hash_label("ansatz-adapt")}) {
    settings_.validate();
    RngStream init_rng(seed, {hash_label("ansatz-init")});
    spec_ = AnsatzSpec::random_init(eta_dim, n_layers, init_rng);
    refresh_state();
}

void QuantumProposalEngine::refresh_state() {
    state_ = run_circuit(spec_.n_qubits, build_ansatz(spec_));
}

RandomEffects QuantumProposalEngine::propose(const RandomEffects& current,
                                             RngStream& rng) const {
    if (spec_.n_qubits != static_cast<int>(current.size()))
        throw DomainError("ansatz has " + std::to_string(spec_.n_qubits) +
                          " qubits for an eta of dimension " +
                          std::to_string(current.size()));
    // Same draw sequence as sample_eta_proposal, on the cached circuit output
    // (angles only move at the barrier, so the state is iteration-constant).
    const std::uint32_t bits = measure_shots(state_, settings_.shots, rng)[0];
    RandomEffects proposal = current;
    for (int j = 0; j < spec_.n_qubits; ++j) {
        const double sign = (bits >> j) & 1u ? 1.0 : -1.0;
        proposal[j] += settings_.sigma_q * sign + settings_.sigma_step * rng.normal();
    }
    return proposal;
}

void QuantumProposalEngine::iteration_barrier(int iteration_k, double acceptance,
                                              bool past_burnin) {
    acceptance_history_.push_back(acceptance);
    std::string action = "hold";
    if (past_burnin) {
        const bool judging = adapt_.trial_pending;
        AnsatzSpec next = adapt_angles(acceptance_history_, spec_, adapt_, adapt_rng_);
        if (!judging)
            action = "perturb";
        else
            action = next.angles == spec_.angles ? "keep" : "revert";
        if (next.angles != spec_.angles) {
            spec_ = std::move(next);
            refresh_state();
        }
    }
    history_.push_back({iteration_k, acceptance, std::move(action), spec_.angles});
}

void QuantumProposalEngine::write_history_csv(std::ostream& out) const {
    std::string line = "iteration,acceptance,action";
    for (std::size_t a = 0; a < spec_.angles.size(); ++a)
        line += ",angle_" + std::to_string(a);
    line += "\n";
    for (const HistoryRow& row : history_) {
        line += std::to_string(row.iteration);
        line += ',';
        append_double(line, row.acceptance);
        line += ',';
        line += row.action;
        for (double a : row.angles) {
            line += ',';
            append_double(line, a);
        }
        line += '\n';
    }
    out << line;
}

// Metropolis kernel --------------------------------------------------------------

StepOutcome metropolis_step(ChainState& chain, const RandomEffects& proposal,
                            const std::function<double(const RandomEffects&)>& log_target,
                            RngStream& rng, std::vector<std::string>* warnings,
                            long subject_id) {
    double prop_ll;
    try {
        prop_ll = log_target(proposal);
    } catch (const SolverError& e) {
        if (warnings)
            warnings->push_back(subject_tag(subject_id) +
                                "proposal rejected, solver failed: " + e.what());
        return StepOutcome::FailedEval;
    } catch (const DegeneracyError& e) {
        if (warnings)
            warnings->push_back(subject_tag(subject_id) +
                                "proposal rejected, degenerate likelihood: " +
                                e.what());
        return StepOutcome::FailedEval;
    }

    const double u = rng.uniform();
    if (std::log(u) < prop_ll - chain.log_target) {
        chain.eta = proposal;
        chain.log_target = prop_ll;
        return StepOutcome::Accepted;
    }
    return StepOutcome::Rejected;
}

// M-step -------------------------------------------------------------------------

MStepResult update_population(const FixedEffects& theta,
                              Eigen::MatrixXd& omega_stat,
                              const std::vector<RandomEffects>& etas,
                              int iteration_k, int n_burnin, const EtaMap& map) {
    if (etas.empty())
        throw EstimationError("iteration " + std::to_string(iteration_k) +
                              ": no retained random effects");
    const auto dim = static_cast<Eigen::Index>(map.size());
    for (const RandomEffects& eta : etas)
        if (eta.size() != dim)
            throw DomainError("retained eta dimension does not match the eta map");

    const double gamma = saem_gamma(iteration_k, n_burnin);
    const double n = static_cast<double>(etas.size());

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(dim, dim);
    for (const RandomEffects& eta : etas) {
        mean += eta;
        second += eta * eta.transpose();
    }
    mean /= n;
    second /= n;

    omega_stat += gamma * (second - omega_stat);
    if (!omega_stat.allFinite())
        throw EstimationError("iteration " + std::to_string(iteration_k) +
                              ": covariance statistic went non-finite");

    MStepResult out;
    out.theta = theta;
    out.omega = OmegaMatrix::projected_psd(omega_stat);
    out.eta_shift = gamma * mean;
    for (std::size_t j = 0; j < map.size(); ++j) {
        double& component = theta_component(out.theta, map[j]);
        component *= std::exp(out.eta_shift[static_cast<Eigen::Index>(j)]);
        if (!std::isfinite(component))
            throw EstimationError("iteration " + std::to_string(iteration_k) + ": " +
                                  theta_param_name(map[j]) +
                                  " overflowed in the update");
    }
    return out;
}

// Fixed-effect refinement ----------------------------------------------------------

namespace {

// Maximizes the summed observation loglik at frozen random effects over the
// components without an eta, in log space.  Plain Nelder-Mead; the budget is
// deliberately small since this is a post-run polish, not the estimator.
void refine_fixed_effects(FixedEffects& theta, const std::vector<Subject>& subjects,
                          const std::vector<RandomEffects>& etas,
                          const ResidualModel& residual, const SimulationContext& ctx,
                          const EtaMap& map, unsigned workers,
                          std::vector<std::string>& warnings) {
    std::vector<ThetaParam> free;
    for (ThetaParam p : {ThetaParam::CL, ThetaParam::V1, ThetaParam::Q,
                         ThetaParam::V2, ThetaParam::KA, ThetaParam::KE0,
                         ThetaParam::IMAX, ThetaParam::IC50, ThetaParam::KIN,
                         ThetaParam::KOUT})
        if (std::find(map.begin(), map.end(), p) == map.end())
            free.push_back(p);
    if (free.empty())
        return;
    const std::size_t d = free.size();

    auto objective = [&](const std::vector<double>& logx) {
        FixedEffects candidate = theta;
        for (std::size_t j = 0; j < d; ++j)
            theta_component(candidate, free[j]) = std::exp(logx[j]);
        try {
            candidate.validate();
        } catch (const DomainError&) {
            return -kInf;
        }
        std::vector<double> ll(subjects.size(), 0.0);
        std::vector<char> bad(subjects.size(), 0);
        parallel_for(subjects.size(), workers, [&](std::size_t i) {
            SimulationContext local = ctx;
            local.warnings = nullptr;
            try {
                ll[i] = individual_loglik(subjects[i], candidate, etas[i], residual,
                                          local, map);
            } catch (const Error&) {
                bad[i] = 1;
            }
        });
        double total = 0.0;
        for (std::size_t i = 0; i < subjects.size(); ++i) {
            if (bad[i])
                return -kInf;
            total += ll[i];
        }
        return total;
    };

    // Simplex seeded at the current values with a 10% nudge per coordinate.
    std::vector<std::vector<double>> simplex(d + 1, std::vector<double>(d));
    for (std::size_t j = 0; j < d; ++j)
        simplex[0][j] = std::log(theta_component(theta, free[j]));
    for (std::size_t v = 1; v <= d; ++v) {
        simplex[v] = simplex[0];
        simplex[v][v - 1] += 0.1;
    }
    std::vector<double> value(d + 1);
    for (std::size_t v = 0; v <= d; ++v)
        value[v] = objective(simplex[v]);

    const int max_evals = 60 * static_cast<int>(d);
    int evals = static_cast<int>(d) + 1;
    while (evals < max_evals) {
        // Order: best first (maximization).
        std::vector<std::size_t> order(d + 1);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return value[a] > value[b]; });
        const std::size_t best = order[0], worst = order[d], second_worst = order[d - 1];
        if (std::abs(value[best] - value[worst]) < 1e-6)
            break;

        std::vector<double> centroid(d, 0.0);
        for (std::size_t v = 0; v <= d; ++v)
            if (v != worst)
                for (std::size_t j = 0; j < d; ++j)
                    centroid[j] += simplex[v][j] / static_cast<double>(d);

        auto blend = [&](double coef) {
            std::vector<double> x(d);
            for (std::size_t j = 0; j < d; ++j)
                x[j] = centroid[j] + coef * (simplex[worst][j] - centroid[j]);
            return x;
        };

        std::vector<double> reflected = blend(-1.0);
        double f_reflected = objective(reflected);
        ++evals;
        if (f_reflected > value[best]) {
            std::vector<double> expanded = blend(-2.0);
            double f_expanded = objective(expanded);
            ++evals;
            if (f_expanded > f_reflected) {
                simplex[worst] = std::move(expanded);
                value[worst] = f_expanded;
            } else {
                simplex[worst] = std::move(reflected);
                value[worst] = f_reflected;
            }
        } else if (f_reflected > value[second_worst]) {
            simplex[worst] = std::move(reflected);
            value[worst] = f_reflected;
        } else {
            std::vector<double> contracted = blend(0.5);
            double f_contracted = objective(contracted);
            ++evals;
            if (f_contracted > value[worst]) {
                simplex[worst] = std::move(contracted);
                value[worst] = f_contracted;
            } else {
                // Shrink toward the best vertex.
                for (std::size_t v = 0; v <= d; ++v) {
                    if (v == best)
                        continue;
                    for (std::size_t j = 0; j < d; ++j)
                        simplex[v][j] =
                            simplex[best][j] + 0.5 * (simplex[v][j] - simplex[best][j]);
                    value[v] = objective(simplex[v]);
                    ++evals;
                }
            }
        }
    }

    std::size_t best = 0;
    for (std::size_t v = 1; v <= d; ++v)
        if (value[v] > value[best])
            best = v;
    if (value[best] == -kInf) {
        warnings.push_back("fixed-effect refinement found no feasible point; "
                           "components left unchanged");
        return;
    }
    for (std::size_t j = 0; j < d; ++j)
        theta_component(theta, free[j]) = std::exp(simplex[best][j]);
}

} // namespace

// Full run -------------------------------------------------------------------------

SaemResult run_saem(const std::vector<Subject>& subjects,
                    const FixedEffects& theta0, const OmegaMatrix& omega0,
                    const ResidualModel& residual0, const SaemSettings& settings,
                    const SimulationContext& ctx, const EtaMap& map,
                    unsigned workers) {
    settings.validate();
    theta0.validate();
    residual0.validate();
    if (subjects.empty())
        throw DomainError("estimation needs at least one subject");
    if (omega0.dim() != static_cast<int>(map.size()))
        throw DomainError("omega dimension " + std::to_string(omega0.dim()) +
                          " does not match the eta map (" +
                          std::to_string(map.size()) + ")");

    const std::size_t n = subjects.size();
    const auto dim = static_cast<Eigen::Index>(map.size());

    std::unique_ptr<ProposalEngine> engine;
    if (settings.engine == EngineKind::Classical)
        engine = std::make_unique<ClassicalProposalEngine>(settings.step_sd);
    else
        engine = std::make_unique<QuantumProposalEngine>(
            static_cast<int>(map.size()), settings.ansatz_layers, settings.quantum,
            settings.seed);

    FixedEffects theta = theta0;
    OmegaMatrix omega = omega0;
    ResidualModel residual = residual0;
    Eigen::MatrixXd omega_stat = omega0.matrix();
    double sigma_pk_stat = residual.sigma_pk * residual.sigma_pk;
    double sigma_pd_stat = residual.sigma_pd * residual.sigma_pd;

    std::vector<ChainState> chains(n);
    for (ChainState& c : chains)
        c.eta = Eigen::VectorXd::Zero(dim);

    SaemResult result;
    result.trace.initial_theta = theta0;
    result.trace.initial_omega_diag = omega0.matrix().diagonal();
    result.trace.rows.reserve(static_cast<std::size_t>(settings.n_iterations));

    std::vector<std::vector<std::string>> subject_warnings(n);
    auto merge_warnings = [&]() {
        for (auto& wlist : subject_warnings) {
            for (auto& w : wlist)
                result.warnings.push_back(std::move(w));
            wlist.clear();
        }
    };

    // Baseline trace point: every subject at eta = 0 under the start values.
    {
        std::vector<double> ll(n, 0.0);
        std::vector<char> failed(n, 0);
        parallel_for(n, workers, [&](std::size_t i) {
            SimulationContext local = ctx;
            local.warnings = &subject_warnings[i];
            try {
                ll[i] = individual_loglik(subjects[i], theta,
                                          Eigen::VectorXd::Zero(dim), residual,
                                          local, map);
            } catch (const SolverError& e) {
                failed[i] = 1;
                subject_warnings[i].push_back(
                    "baseline evaluation failed for subject " +
                    std::to_string(subjects[i].id) + ": " + e.what());
            }
        });
        merge_warnings();
        const auto n_failed =
            static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
        if (2 * n_failed > n)
            throw EstimationError("baseline: " + std::to_string(n_failed) + " of " +
                                  std::to_string(n) +
                                  " subjects failed the ODE solver");
        result.trace.initial_loglik =
            std::accumulate(ll.begin(), ll.end(), 0.0);
    }

    std::vector<SubjectFitDetail> details(n);

    for (int k = 1; k <= settings.n_iterations; ++k) {
        const auto t_start = std::chrono::steady_clock::now();

        std::vector<int> accepts(n, 0), proposals(n, 0);
        std::vector<char> failed(n, 0);

        parallel_for(n, workers, [&](std::size_t i) {
            const Subject& s = subjects[i];
            RngStream rng(settings.seed,
                          {hash_label("estep"), static_cast<uint64_t>(s.id),
                           static_cast<uint64_t>(k)});
            SimulationContext local = ctx;
            local.warnings = &subject_warnings[i];
            ChainState& chain = chains[i];
            SubjectFitDetail current;

            // Refresh the cached target: theta, omega, the retained eta and
            // possibly the sigmas all moved at the last barrier.
            try {
                current = individual_fit_detail(s, theta, chain.eta, residual,
                                                local, map);
                chain.log_target = current.loglik + omega.log_density(chain.eta);
            } catch (const SolverError& e) {
                failed[i] = 1;
                subject_warnings[i].push_back(
                    "iteration " + std::to_string(k) + ", subject " +
                    std::to_string(s.id) +
                    ": retained state failed the solver: " + e.what());
                details[i] = SubjectFitDetail{};
                return;
            }

            int failed_evals = 0;
            for (int step = 0; step < settings.mcmc_steps_per_subject; ++step) {
                const RandomEffects proposal = engine->propose(chain.eta, rng);
                SubjectFitDetail prop_detail;
                const auto target = [&](const RandomEffects& e) {
                    prop_detail =
                        individual_fit_detail(s, theta, e, residual, local, map);
                    return prop_detail.loglik + omega.log_density(e);
                };
                ++proposals[i];
                const StepOutcome outcome = metropolis_step(
                    chain, proposal, target, rng, &subject_warnings[i], s.id);
                if (outcome == StepOutcome::Accepted)
                    current = prop_detail;
                else if (outcome == StepOutcome::FailedEval)
                    ++failed_evals;
                accepts[i] += outcome == StepOutcome::Accepted ? 1 : 0;
            }
            if (failed_evals == settings.mcmc_steps_per_subject)
                failed[i] = 1;  // nothing this iteration could be integrated
            details[i] = current;
        });
        merge_warnings();

        const auto n_failed =
            static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
        if (2 * n_failed > n)
            throw EstimationError("iteration " + std::to_string(k) + ": " +
                                  std::to_string(n_failed) + " of " +
                                  std::to_string(n) +
                                  " subjects failed the ODE solver");

        const int total_proposals =
            std::accumulate(proposals.begin(), proposals.end(), 0);
        const int total_accepts = std::accumulate(accepts.begin(), accepts.end(), 0);
        const double acceptance =
            total_proposals > 0
                ? static_cast<double>(total_accepts) / total_proposals
                : 0.0;

        engine->iteration_barrier(k, acceptance, k > settings.n_burnin);

        double trace_loglik = 0.0;
        for (const SubjectFitDetail& d : details)
            trace_loglik += d.loglik;

        // M-step on the retained draws, then recentre them so that
        // theta_j * exp(eta_ij) is preserved through the fold.
        std::vector<RandomEffects> etas(n);
        for (std::size_t i = 0; i < n; ++i)
            etas[i] = chains[i].eta;
        MStepResult m =
            update_population(theta, omega_stat, etas, k, settings.n_burnin, map);
        theta = m.theta;
        omega = m.omega;
        for (ChainState& chain : chains)
            chain.eta -= m.eta_shift;

        if (settings.estimate_sigma) {
            const double gamma = saem_gamma(k, settings.n_burnin);
            long pk_n = 0, pd_n = 0;
            double pk_sq = 0.0, pd_sq = 0.0;
            for (const SubjectFitDetail& d : details) {
                pk_n += d.pk_n;
                pk_sq += d.pk_sq_sum;
                pd_n += d.pd_n;
                pd_sq += d.pd_sq_sum;
            }
            if (pk_n > 0) {
                sigma_pk_stat += gamma * (pk_sq / static_cast<double>(pk_n) -
                                          sigma_pk_stat);
                residual.sigma_pk = std::sqrt(std::max(sigma_pk_stat, 1e-12));
            }
            if (pd_n > 0) {
                sigma_pd_stat += gamma * (pd_sq / static_cast<double>(pd_n) -
                                          sigma_pd_stat);
                residual.sigma_pd = std::sqrt(std::max(sigma_pd_stat, 1e-12));
            }
        }

        SaemIterationRow row;
        row.iteration = k;
        row.loglik = trace_loglik;
        row.acceptance = acceptance;
        row.theta = theta;
        row.omega_diag = omega.matrix().diagonal();
        row.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
                .count();
        result.trace.rows.push_back(std::move(row));
    }

    result.final_etas.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        result.final_etas[i] = chains[i].eta;

    if (settings.refine_fixed_effects)
        refine_fixed_effects(theta, subjects, result.final_etas, residual, ctx, map,
                             workers, result.warnings);

    result.theta = theta;
    result.omega = omega;
    result.residual = residual;

    if (settings.engine == EngineKind::Quantum) {
        std::ostringstream report;
        static_cast<QuantumProposalEngine*>(engine.get())->write_history_csv(report);
        result.engine_report = report.str();
    }
    return result;
}

void write_trace_csv(std::ostream& out, const SaemTrace& trace, const EtaMap& map) {
    std::string text = "iteration,loglik,acceptance";
    for (ThetaParam p : {ThetaParam::CL, ThetaParam::V1, ThetaParam::Q,
                         ThetaParam::V2, ThetaParam::KA, ThetaParam::KE0,
                         ThetaParam::IMAX, ThetaParam::IC50, ThetaParam::KIN,
                         ThetaParam::KOUT})
        text += std::string(",") + theta_param_name(p);
    text += ",clbw,v1bw,clcomed,kincomed";
    for (ThetaParam p : map)
        text += std::string(",omega_") + theta_param_name(p);
    text += '\n';

    auto append_row = [&](int iteration, double loglik, double acceptance,
                          const FixedEffects& theta,
                          const Eigen::VectorXd& omega_diag) {
        text += std::to_string(iteration);
        text += ',';
        append_double(text, loglik);
        text += ',';
        append_double(text, acceptance);
        for (ThetaParam p : {ThetaParam::CL, ThetaParam::V1, ThetaParam::Q,
                             ThetaParam::V2, ThetaParam::KA, ThetaParam::KE0,
                             ThetaParam::IMAX, ThetaParam::IC50, ThetaParam::KIN,
                             ThetaParam::KOUT}) {
            text += ',';
            append_double(text, theta_component(theta, p));
        }
        for (double v : {theta.clbw, theta.v1bw, theta.clcomed, theta.kincomed}) {
            text += ',';
            append_double(text, v);
        }
        for (Eigen::Index j = 0; j < omega_diag.size(); ++j) {
            text += ',';
            append_double(text, omega_diag[j]);
        }
        text += '\n';
    };

    append_row(0, trace.initial_loglik, 0.0, trace.initial_theta,
               trace.initial_omega_diag);
    for (const SaemIterationRow& row : trace.rows)
        append_row(row.iteration, row.loglik, row.acceptance, row.theta,
                   row.omega_diag);
    out << text;
}

} // namespace qpkpd
