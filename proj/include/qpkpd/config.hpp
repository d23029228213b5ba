#pragma once

// Run configuration: one JSON file drives every CLI subcommand.  The dialect
// is strict — unknown keys are rejected so typos cannot silently fall back to
// defaults — and a literal `seed` is required (runs are never seeded from the
// clock).  See README.md for the documented schema.

#include "qpkpd/likelihood.hpp"
#include "qpkpd/model.hpp"
#include "qpkpd/ode.hpp"
#include "qpkpd/saem.hpp"
#include "qpkpd/trial.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace qpkpd {

// One virtual population, crossed with both regimens and both targets when
// the scenario matrix is built.
struct ScenarioDefinition {
    std::string name;
    double bw_low = 50.0;
    double bw_high = 100.0;
    double comed_probability = 0.5;
};

// `simulate` subcommand: profile one population on a shared time grid.
struct SimulateConfig {
    ScenarioDefinition population{"original", 50.0, 100.0, 0.5};
    Regimen regimen = Regimen::Daily;
    double dose_mg = 5.0;
    int n_subjects = 20;
    int n_intervals = 7;
    double bin_dt = 1.0;  // hours
};

// `qbench` subcommand: jump-operator propagation versus the Euler reference.
// The dose is encoded at occupation level 1 (register scale = the amount),
// the regime where the per-step transfer probabilities are exact; the bench
// then exposes how the discard sector and level truncation bias long
// horizons.
struct QbenchConfig {
    double dt = 0.1;                // hours per step
    int n_steps = 50;
    double initial_amount_mg = 5.0; // placed in the central register
};

struct RunConfig {
    std::string dataset;            // path; checked when a subcommand reads it
    std::string output_dir = "out";
    std::uint64_t seed = 0;         // required key
    unsigned workers = 1;           // execution knob; excluded from the hash

    FixedEffects theta;
    EtaMap eta_map = default_eta_map();
    Eigen::VectorXd omega_diag;     // one variance per eta_map entry
    ResidualModel residual;

    SolveSettings solver;           // rel_tol / abs_tol
    double grid_dt = 0.5;           // dose-rate grid resolution, hours
    std::size_t cache_capacity = 10000;

    SaemSettings saem;              // seed mirrors the root seed

    int scenario_population_size = 200;
    std::vector<ScenarioDefinition> scenario_definitions;  // empty = standard trio

    SimulateConfig simulate;
    QbenchConfig qbench;
};

// Parse/load with full validation.  Malformed JSON, unknown keys, wrong
// types, or a missing seed throw ConfigError (the CLI maps this to exit 3).
RunConfig parse_config(const std::string& text, const std::string& origin);
RunConfig load_config(const std::string& path);

// Full round-trippable JSON for the config (pretty-printed, sorted keys).
std::string dump_config(const RunConfig& config);

// Canonical form and its FNV-1a hash (16 hex digits).  `workers` and
// `output_dir` are execution knobs, not experiment identity, and are left
// out so output bytes do not depend on them.
std::string config_canonical_dump(const RunConfig& config);
std::string config_hash(const RunConfig& config);

// The scenario matrix the `optimize` subcommand runs: each definition (or
// the built-in standard trio when none are given) crossed with daily/weekly
// and the 90%/75% targets, seeded from the root seed.
std::vector<ScenarioSpec> scenario_matrix(const RunConfig& config);

} // namespace qpkpd
