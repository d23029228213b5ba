// qpkpd: population PK/PD estimation and dose-optimization command line.
//
// Subcommands: validate, fit, simulate, optimize, qbench, report.  Every run
// is driven by one JSON config (see README.md); all outputs land in the
// config's output directory and carry the config hash and seed, so a rerun
// with the same config and seed reproduces them byte for byte.
//
// Exit codes: 0 success, 1 runtime failure (machine-readable JSON on
// stderr), 2 usage error, 3 config parse/validation failure.

#include "qpkpd/config.hpp"
#include "qpkpd/dataset.hpp"
#include "qpkpd/diagnostics.hpp"
#include "qpkpd/errors.hpp"
#include "qpkpd/fock.hpp"
#include "qpkpd/likelihood.hpp"
#include "qpkpd/model.hpp"
#include "qpkpd/ode.hpp"
#include "qpkpd/omega.hpp"
#include "qpkpd/saem.hpp"
#include "qpkpd/text.hpp"
#include "qpkpd/trial.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qpkpd;

namespace {

// ---------------------------------------------------------------------------
// Error plumbing

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const char* error_kind(const Error& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const SchemaError*>(&e)) return "schema";
    if (dynamic_cast<const ParseError*>(&e)) return "parse";
    if (dynamic_cast<const ValidationError*>(&e)) return "validation";
    if (dynamic_cast<const EmptyInputError*>(&e)) return "empty-input";
    if (dynamic_cast<const DomainError*>(&e)) return "domain";
    if (dynamic_cast<const RangeError*>(&e)) return "range";
    if (dynamic_cast<const SolverError*>(&e)) return "solver";
    if (dynamic_cast<const DegeneracyError*>(&e)) return "degeneracy";
    if (dynamic_cast<const EstimationError*>(&e)) return "estimation";
    if (dynamic_cast<const TruncationError*>(&e)) return "truncation";
    return "error";
}

void print_error(const std::string& type, const std::string& message,
                 const json& detail = json()) {
    json j;
    j["error"] = {{"type", type}, {"message", message}};
    if (!detail.is_null()) j["error"]["detail"] = detail;
    std::cerr << j.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Shared option handling

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::optional<std::string> out_dir;
    std::optional<std::string> engine;  // fit only
};

void add_common_options(CLI::App* cmd, CommonOptions& opts, bool config_required = true) {
    auto* config =
        cmd->add_option("-c,--config", opts.config_path, "Path to the JSON run config");
    if (config_required) config->required();
    cmd->add_option("--seed", opts.seed, "Override the config seed");
    cmd->add_option("--workers", opts.workers, "Override the worker count");
    cmd->add_option("--out", opts.out_dir, "Override the output directory");
}

RunConfig load_with_overrides(const CommonOptions& opts) {
    RunConfig config = load_config(opts.config_path);
    if (opts.seed) {
        config.seed = *opts.seed;
        config.saem.seed = *opts.seed;
    }
    if (opts.workers) {
        if (*opts.workers < 1) throw UsageError("--workers must be at least 1");
        config.workers = *opts.workers;
    }
    if (opts.out_dir) config.output_dir = *opts.out_dir;
    if (opts.engine) config.saem.engine = engine_kind_from_name(*opts.engine);
    return config;
}

std::string header_line(const RunConfig& config) {
    return "# config_hash=" + config_hash(config) + " seed=" + std::to_string(config.seed) +
           "\n";
}

fs::path prepare_output_dir(const RunConfig& config) {
    fs::path dir(config.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open output file '" + path.string() + "'");
    out << content;
    if (!out) throw Error("failed writing output file '" + path.string() + "'");
}

std::vector<Subject> load_subjects(const RunConfig& config,
                                   std::vector<std::string>* warnings = nullptr) {
    if (config.dataset.empty())
        throw ConfigError("config: this subcommand needs a \"dataset\" path");
    ParseResult parsed = parse_dataset_file(config.dataset);
    if (warnings) *warnings = parsed.warnings;
    return build_subjects(parsed.records);
}

SimulationContext make_context(const RunConfig& config, TrajectoryCache* cache,
                               std::vector<std::string>* warnings = nullptr) {
    SimulationContext ctx;
    ctx.solver = config.solver;
    ctx.grid_dt = config.grid_dt;
    ctx.cache = cache;
    ctx.warnings = warnings;
    return ctx;
}

json theta_json(const FixedEffects& t) {
    return json{{"cl", t.cl},
                {"v1", t.v1},
                {"q", t.q},
                {"v2", t.v2},
                {"ka", t.ka},
                {"ke0", t.ke0},
                {"imax", t.imax},
                {"ic50", t.ic50},
                {"kin", t.kin},
                {"kout", t.kout},
                {"clbw", t.clbw},
                {"v1bw", t.v1bw},
                {"clcomed", t.clcomed},
                {"kincomed", t.kincomed}};
}

// ---------------------------------------------------------------------------
// validate

int run_validate(const std::string& data_path, const std::string& config_path) {
    std::string path = data_path;
    if (path.empty()) {
        if (config_path.empty())
            throw UsageError("validate needs a dataset: pass a path or --config");
        path = load_config(config_path).dataset;
        if (path.empty()) throw ConfigError("config: no \"dataset\" path to validate");
    }

    ParseResult parsed = parse_dataset_file(path);
    std::vector<Subject> subjects = build_subjects(parsed.records);

    std::size_t n_dose_rows = 0, n_pk = 0, n_pd = 0, n_ignored = 0;
    std::set<double> dose_levels;
    for (const auto& s : subjects) {
        n_dose_rows += s.dose_events.size();
        n_pk += s.pk_observations.size();
        n_pd += s.pd_observations.size();
        n_ignored += s.n_ignored_rows;
        for (const auto& d : s.dose_events) dose_levels.insert(d.amount);
    }

    std::ostringstream out;
    out << "dataset: " << path << "\n";
    out << "records: " << parsed.records.size() << "\n";
    out << "subjects: " << subjects.size() << "\n";
    out << "dose rows: " << n_dose_rows << " (" << dose_levels.size() << " distinct amounts";
    if (!dose_levels.empty()) {
        out << ":";
        for (double d : dose_levels) out << " " << format_double(d);
        out << " mg";
    }
    out << ")\n";
    out << "pk observations: " << n_pk << "\n";
    out << "pd observations: " << n_pd << "\n";
    out << "ignored rows (MDV=1, non-dose): " << n_ignored << "\n";
    for (const auto& w : parsed.warnings) out << "warning: " << w << "\n";
    std::cout << out.str();
    return 0;
}

// ---------------------------------------------------------------------------
// fit

int run_fit(const CommonOptions& opts) {
    RunConfig config = load_with_overrides(opts);
    std::vector<std::string> dataset_warnings;
    std::vector<Subject> subjects = load_subjects(config, &dataset_warnings);

    TrajectoryCache cache(config.cache_capacity);
    SimulationContext ctx = make_context(config, &cache);

    const OmegaMatrix omega0 = OmegaMatrix::diagonal(config.omega_diag);
    SaemResult result = run_saem(subjects, config.theta, omega0, config.residual, config.saem,
                                 ctx, config.eta_map, config.workers);

    const fs::path dir = prepare_output_dir(config);

    // trace.csv
    {
        std::ostringstream trace;
        trace << header_line(config);
        write_trace_csv(trace, result.trace, config.eta_map);
        write_file(dir / "trace.csv", trace.str());
    }

    // quantum engine adaptation history, when present
    if (!result.engine_report.empty())
        write_file(dir / "engine_angles.csv", header_line(config) + result.engine_report);

    // theta.json
    json out;
    out["config_hash"] = config_hash(config);
    out["seed"] = config.seed;
    out["engine"] = engine_kind_name(config.saem.engine);
    out["n_subjects"] = subjects.size();
    out["theta"] = theta_json(result.theta);
    json eta_names = json::array();
    for (ThetaParam p : config.eta_map) eta_names.push_back(theta_param_name(p));
    out["eta"] = eta_names;
    const Eigen::MatrixXd& om = result.omega.matrix();
    json omega_rows = json::array();
    for (Eigen::Index r = 0; r < om.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < om.cols(); ++c) row.push_back(om(r, c));
        omega_rows.push_back(row);
    }
    out["omega"] = omega_rows;
    json omega_diag = json::array();
    for (Eigen::Index i = 0; i < om.rows(); ++i) omega_diag.push_back(om(i, i));
    out["omega_diag"] = omega_diag;
    out["residual"] = {{"sigma_pk", result.residual.sigma_pk},
                       {"sigma_pd", result.residual.sigma_pd},
                       {"pk_form", result.residual.pk_form == ResidualModel::PkForm::LogNormal
                                       ? "log-normal"
                                       : "proportional"}};
    double final_loglik = result.trace.initial_loglik;
    if (!result.trace.rows.empty()) final_loglik = result.trace.rows.back().loglik;
    double last5 = 0.0;
    {
        const auto& rows = result.trace.rows;
        const std::size_t take = std::min<std::size_t>(5, rows.size());
        for (std::size_t i = rows.size() - take; i < rows.size(); ++i) last5 += rows[i].loglik;
        if (take > 0) last5 /= static_cast<double>(take);
    }
    out["loglik"] = {{"initial", result.trace.initial_loglik},
                     {"final", final_loglik},
                     {"final_mean_last5", last5}};
    json warn = json::array();
    for (const auto& w : dataset_warnings) warn.push_back("dataset: " + w);
    for (const auto& w : result.warnings) warn.push_back(w);
    out["warnings"] = warn;
    write_file(dir / "theta.json", out.dump(2) + "\n");

    std::cout << "fit: " << engine_kind_name(config.saem.engine) << " engine, "
              << subjects.size() << " subjects, " << config.saem.n_iterations
              << " iterations\n"
              << "loglik: " << format_double(result.trace.initial_loglik) << " -> "
              << format_double(final_loglik) << "\n"
              << "wrote " << (dir / "theta.json").string() << ", "
              << (dir / "trace.csv").string();
    if (!result.engine_report.empty()) std::cout << ", " << (dir / "engine_angles.csv").string();
    std::cout << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// simulate

ScenarioSpec profile_scenario(const RunConfig& config) {
    ScenarioSpec spec;
    spec.name = config.simulate.population.name;
    spec.bw_low = config.simulate.population.bw_low;
    spec.bw_high = config.simulate.population.bw_high;
    spec.comed_probability = config.simulate.population.comed_probability;
    spec.regimen = config.simulate.regimen;
    spec.population_size = config.simulate.n_subjects;
    spec.seed = config.seed;
    spec.validate();
    return spec;
}

int run_simulate(const CommonOptions& opts) {
    RunConfig config = load_with_overrides(opts);
    SimulationContext ctx = make_context(config, nullptr);
    const OmegaMatrix omega = OmegaMatrix::diagonal(config.omega_diag);

    PopulationProfiles profiles = simulate_population_profiles(
        profile_scenario(config), config.theta, omega, config.simulate.dose_mg,
        config.simulate.n_intervals, config.simulate.bin_dt, ctx, config.eta_map,
        config.workers);

    const fs::path dir = prepare_output_dir(config);
    std::ostringstream csv;
    csv << header_line(config);
    write_profiles_csv(csv, profiles);
    write_file(dir / "profiles.csv", csv.str());

    std::cout << "simulate: " << profiles.subjects.size() << " subjects x "
              << profiles.times.size() << " time bins ("
              << regimen_name(config.simulate.regimen) << " "
              << format_double(config.simulate.dose_mg) << " mg)\n"
              << "wrote " << (dir / "profiles.csv").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// optimize

int run_optimize(const CommonOptions& opts) {
    RunConfig config = load_with_overrides(opts);
    SimulationContext ctx = make_context(config, nullptr);
    const OmegaMatrix omega = OmegaMatrix::diagonal(config.omega_diag);

    const std::vector<ScenarioSpec> matrix = scenario_matrix(config);
    ScenarioTable table =
        run_scenarios(matrix, config.theta, omega, ctx, config.eta_map, config.workers);

    const fs::path dir = prepare_output_dir(config);
    {
        std::ostringstream csv;
        csv << header_line(config);
        write_recommendations_csv(csv, table.recommendations);
        write_file(dir / "recommendations.csv", csv.str());
    }
    {
        std::ostringstream csv;
        csv << header_line(config);
        write_reductions_csv(csv, table.reductions);
        write_file(dir / "reductions.csv", csv.str());
    }

    std::cout << "optimize: " << table.recommendations.size() << " recommendations across "
              << matrix.size() << " scenario evaluations\n";
    for (const auto& rec : table.recommendations) {
        std::cout << "  " << rec.scenario << " " << regimen_name(rec.regimen) << " target "
                  << format_double(100.0 * rec.target_fraction) << "%: "
                  << format_double(rec.selected_dose) << " mg (achieved "
                  << format_double(100.0 * rec.achieved_fraction) << "%"
                  << (rec.boundary_flag ? ", boundary" : "") << ")\n";
    }
    std::cout << "wrote " << (dir / "recommendations.csv").string() << ", "
              << (dir / "reductions.csv").string() << "\n";

    if (!table.errors.empty()) {
        json detail = json::array();
        for (const auto& e : table.errors) detail.push_back(e);
        print_error("estimation", "one or more scenarios failed", detail);
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// qbench

int run_qbench(const CommonOptions& opts) {
    RunConfig config = load_with_overrides(opts);
    const QbenchConfig& qb = config.qbench;

    // Representative individual: reference covariates, no random effects.
    const RandomEffects eta = RandomEffects::Zero(
        static_cast<Eigen::Index>(config.eta_map.size()));
    const IndividualParameters p =
        adjust_parameters(config.theta, eta, 70.0, 0, config.eta_map);

    JumpRates rates;
    rates.k12 = p.q / p.v1_i;
    rates.k21 = p.q / p.v2;
    rates.ke0 = p.ke0;
    rates.kel = p.cl_i / p.v1_i;
    const double worst = std::max({rates.k12, rates.k21, rates.ke0, rates.kel}) * qb.dt;
    if (worst > 0.1)
        throw DomainError("qbench: rate*dt = " + format_double(worst) +
                          " exceeds the small-step regime (0.1); lower qbench.dt");

    // One level per dose: the one-excitation sector is where the per-step
    // transfer probabilities are exact, so deviations that accumulate in the
    // CSV are surrogate effects (discard-sector leak-back, truncation), not
    // encoding artifacts.
    FockEncoding enc;
    const double scale = qb.initial_amount_mg;
    enc.scales = {scale, scale, scale, 1.0};
    enc.validate();

    const CompartmentState y0{qb.initial_amount_mg, 0.0, 0.0, 0.0};
    QuantumState state = encode_amounts(y0, enc);
    CompartmentState euler = y0;

    std::string csv = header_line(config);
    csv += "step,time_h,a1_euler_mg,a1_quantum_mg,a2_euler_mg,a2_quantum_mg,"
           "ae_euler_mg,ae_quantum_mg\n";
    std::size_t gates_per_step = 0;
    {
        // Count the gadget gates once: 3 per transfer line x 3 lines x up to
        // 3 channels, plus 2 for elimination (skipped where rate*dt = 0).
        int channels = 0;
        if (rates.k12 * qb.dt > 0.0) ++channels;
        if (rates.k21 * qb.dt > 0.0) ++channels;
        if (rates.ke0 * qb.dt > 0.0) ++channels;
        gates_per_step = static_cast<std::size_t>(channels) * 9 +
                         (rates.kel * qb.dt > 0.0 ? 2 : 0);
    }
    auto emit_row = [&](int step, double t, const std::array<double, 4>& q) {
        std::string line = std::to_string(step);
        line.push_back(',');
        append_double(line, t);
        for (int c = 0; c < 3; ++c) {
            line.push_back(',');
            append_double(line, euler[static_cast<std::size_t>(c)]);
            line.push_back(',');
            append_double(line, q[static_cast<std::size_t>(c)]);
        }
        line.push_back('\n');
        csv += line;
    };
    emit_row(0, 0.0, extract_expectations(state, enc));
    for (int step = 1; step <= qb.n_steps; ++step) {
        state = evolve_step(state, rates, qb.dt, enc);
        euler = euler_reference_step(euler, rates, qb.dt);
        emit_row(step, qb.dt * step, extract_expectations(state, enc));
    }

    // Reference ODE solve of the same horizon for the classical-side
    // counters (RHS evaluations, trajectory memory).
    TrajectoryCache cache(config.cache_capacity);
    SimulationContext ctx = make_context(config, &cache);
    Subject subject;
    subject.id = 1;
    subject.bw = 70.0;
    subject.comed = 0;
    subject.dose_events.push_back({0.0, qb.initial_amount_mg});
    const Trajectory traj = simulate_subject(subject, p, qb.dt * qb.n_steps, ctx);

    const fs::path dir = prepare_output_dir(config);
    write_file(dir / "qbench.csv", csv);

    const std::size_t amplitudes = state.amplitudes.size();
    json counters;
    counters["config_hash"] = config_hash(config);
    counters["seed"] = config.seed;
    counters["quantum"] = {{"n_qubits", enc.n_qubits()},
                           {"state_amplitudes", amplitudes},
                           {"state_memory_bytes", amplitudes * sizeof(std::complex<double>)},
                           {"gates_per_step", gates_per_step},
                           {"steps", qb.n_steps}};
    const CacheCounters cc = cache.counters();
    counters["classical"] = {{"rhs_evaluations", traj.stats.rhs_evaluations},
                             {"accepted_steps", traj.stats.accepted_steps},
                             {"rejected_steps", traj.stats.rejected_steps},
                             {"trajectory_memory_bytes", traj.memory_bytes()},
                             {"subjects_simulated", 1},
                             {"cache",
                              {{"hits", cc.hits},
                               {"misses", cc.misses},
                               {"entries", cc.entries},
                               {"peak_memory_bytes", cc.peak_memory_bytes}}}};
    counters["peak_memory_bytes_estimate"] =
        std::max(traj.memory_bytes(), amplitudes * sizeof(std::complex<double>));
    write_file(dir / "counters.json", counters.dump(2) + "\n");

    std::cout << "qbench: " << qb.n_steps << " steps of dt=" << format_double(qb.dt)
              << " h on " << enc.n_qubits() << " qubits\n"
              << "wrote " << (dir / "qbench.csv").string() << ", "
              << (dir / "counters.json").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report

int run_report(const CommonOptions& opts) {
    RunConfig config = load_with_overrides(opts);
    std::vector<std::string> dataset_warnings;
    std::vector<Subject> subjects = load_subjects(config, &dataset_warnings);

    SimulationContext ctx = make_context(config, nullptr);
    const OmegaMatrix omega = OmegaMatrix::diagonal(config.omega_diag);

    // Population predictions (eta = 0) against the observed dataset.
    std::vector<RandomEffects> zero_etas(
        subjects.size(),
        RandomEffects::Zero(static_cast<Eigen::Index>(config.eta_map.size())));
    ResidualReport residuals = compute_subject_residuals(
        subjects, config.theta, zero_etas, config.residual, ctx, config.eta_map,
        config.workers);

    // Simulated population variability on the shared profile grid.
    PopulationProfiles profiles = simulate_population_profiles(
        profile_scenario(config), config.theta, omega, config.simulate.dose_mg,
        config.simulate.n_intervals, config.simulate.bin_dt, ctx, config.eta_map,
        config.workers);
    CvProfile cv_pk = compute_cv_profile(profiles.times, profiles.pk, "pk");
    CvProfile cv_pd = compute_cv_profile(profiles.times, profiles.pd, "pd");

    const fs::path dir = prepare_output_dir(config);
    {
        std::ostringstream csv;
        csv << header_line(config);
        write_cv_csv(csv, cv_pk);
        write_file(dir / "cv_pk.csv", csv.str());
    }
    {
        std::ostringstream csv;
        csv << header_line(config);
        write_cv_csv(csv, cv_pd);
        write_file(dir / "cv_pd.csv", csv.str());
    }
    {
        std::ostringstream csv;
        csv << header_line(config);
        write_residuals_csv(csv, residuals);
        write_file(dir / "residuals.csv", csv.str());
    }
    {
        std::ostringstream log;
        log << header_line(config);
        for (const auto& w : dataset_warnings) log << "dataset: " << w << "\n";
        for (const auto& s : residuals.skipped) log << "residuals: " << s << "\n";
        for (const auto& s : cv_pk.skipped) log << "cv: " << s << "\n";
        for (const auto& s : cv_pd.skipped) log << "cv: " << s << "\n";
        write_file(dir / "report_skipped.log", log.str());
    }

    std::cout << "report: " << residuals.rows.size() << " residual rows ("
              << residuals.skipped.size() << " skipped), CV over "
              << profiles.subjects.size() << " simulated subjects\n"
              << "wrote " << (dir / "cv_pk.csv").string() << ", " << (dir / "cv_pd.csv").string()
              << ", " << (dir / "residuals.csv").string() << ", "
              << (dir / "report_skipped.log").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Population PK/PD estimation and dose optimization"};
    app.require_subcommand(1);

    std::string validate_data;
    std::string validate_config;
    CLI::App* validate =
        app.add_subcommand("validate", "Parse and check a NONMEM-format dataset");
    validate->add_option("data", validate_data, "Dataset CSV path");
    validate->add_option("-c,--config", validate_config,
                         "Run config whose dataset should be checked");

    CommonOptions fit_opts;
    CLI::App* fit = app.add_subcommand("fit", "Run the SAEM population fit");
    add_common_options(fit, fit_opts);
    fit->add_option("--engine", fit_opts.engine,
                    "Proposal engine: classical or quantum (overrides the config)");

    CommonOptions simulate_opts;
    CLI::App* simulate =
        app.add_subcommand("simulate", "Simulate population concentration/response profiles");
    add_common_options(simulate, simulate_opts);

    CommonOptions optimize_opts;
    CLI::App* optimize =
        app.add_subcommand("optimize", "Run the virtual-trial dose-finding matrix");
    add_common_options(optimize, optimize_opts);

    CommonOptions qbench_opts;
    CLI::App* qbench = app.add_subcommand(
        "qbench", "Compare the occupation-number propagator against its Euler reference");
    add_common_options(qbench, qbench_opts);

    CommonOptions report_opts;
    CLI::App* report =
        app.add_subcommand("report", "Export CV% profiles and residual diagnostics");
    add_common_options(report, report_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return 2;
    }

    try {
        if (validate->parsed()) return run_validate(validate_data, validate_config);
        if (fit->parsed()) return run_fit(fit_opts);
        if (simulate->parsed()) return run_simulate(simulate_opts);
        if (optimize->parsed()) return run_optimize(optimize_opts);
        if (qbench->parsed()) return run_qbench(qbench_opts);
        if (report->parsed()) return run_report(report_opts);
        print_error("usage", "no subcommand given");
        return 2;
    } catch (const UsageError& e) {
        print_error("usage", e.what());
        return 2;
    } catch (const ConfigError& e) {
        print_error("config", e.what());
        return 3;
    } catch (const Error& e) {
        print_error(error_kind(e), e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return 1;
    }
}
