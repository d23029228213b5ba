#pragma once

// Virtual-population dose finding: population generation, steady-state
// regimen simulation, target evaluation, and first-crossing grid search.
// One shared population per scenario (common random numbers) keeps the
// achieved-fraction table monotone and the dose selection well-defined.

#include "qpkpd/likelihood.hpp"
#include "qpkpd/model.hpp"
#include "qpkpd/omega.hpp"
#include "qpkpd/rng.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace qpkpd {

inline constexpr double kSuppressionThreshold = 3.3;  // ng/mL

enum class Regimen { Daily, Weekly };

double regimen_interval_hours(Regimen regimen);  // 24 / 168
const char* regimen_name(Regimen regimen);
Regimen regimen_from_name(const std::string& name);

struct ScenarioSpec {
    std::string name;  // population label, e.g. "original"
    double bw_low = 50.0;   // kg
    double bw_high = 100.0; // kg
    double comed_probability = 0.5;
    double target_fraction = 0.90;
    Regimen regimen = Regimen::Daily;
    int population_size = 200;
    uint64_t seed = 0;

    void validate() const;
};

struct VirtualSubject {
    double bw = 70.0;
    int comed = 0;
    RandomEffects eta;
};

// Draw order per subject is fixed (bw, comed, then eta) so a population is
// reproducible from the stream alone.
std::vector<VirtualSubject> generate_population(const ScenarioSpec& spec,
                                                const OmegaMatrix& omega,
                                                RngStream& rng);

// Repeated dosing of one individual until the response trough (R at the end
// of an interval, starting from the pre-treatment baseline) drifts by less
// than 0.1% relative between consecutive intervals, or max_intervals elapse.
struct RegimenResult {
    Trajectory interval;       // final interval, times local to [0, interval]
    double interval_start = 0; // absolute hours at which that interval began
    int n_intervals = 0;
    bool steady_state = false; // trough drift converged before the cap
    double final_trough = 0.0;
};

RegimenResult simulate_regimen(const IndividualParameters& p, double dose_mg,
                               double interval_h, const SimulationContext& ctx,
                               int max_intervals = 42);

// True iff R stays strictly below the threshold across the whole interval
// (maximum taken over the solver nodes plus a quarter-hour sampling grid).
bool target_achieved(const Trajectory& interval,
                     double threshold = kSuppressionThreshold);

struct DoseGrid {
    std::vector<double> doses;  // mg, ascending

    void validate() const;
    static DoseGrid daily_default();   // 0.5 .. 20 mg step 0.5
    static DoseGrid weekly_default();  // 5 .. 50 mg step 5
    static DoseGrid for_regimen(Regimen regimen);
};

struct DosePoint {
    double dose = 0.0;
    double achieved_fraction = 0.0;
};

struct DoseRecommendation {
    std::string scenario;
    Regimen regimen = Regimen::Daily;
    double target_fraction = 0.0;
    double selected_dose = 0.0;       // smallest grid dose meeting the target
    double achieved_fraction = 0.0;   // at the selected dose
    bool boundary_flag = false;       // no grid dose met the target
    std::vector<DosePoint> grid;      // full fraction table
    int n_not_converged = 0;          // interval-cap hits across evaluations
};

// Evaluates the whole grid on one shared population and picks the first
// crossing; falls back to the maximum dose with boundary_flag when nothing
// crosses.
DoseRecommendation optimize_dose(const ScenarioSpec& spec,
                                 const FixedEffects& theta,
                                 const OmegaMatrix& omega, const DoseGrid& grid,
                                 const SimulationContext& ctx,
                                 const EtaMap& map = default_eta_map(),
                                 unsigned workers = 1);

struct DoseReduction {
    std::string scenario;
    Regimen regimen = Regimen::Daily;
    double dose_high_target = 0.0;  // selected at the 90% target
    double dose_low_target = 0.0;   // selected at the 75% target
    double reduction_percent = 0.0; // 100*(high - low)/high
};

struct ScenarioTable {
    std::vector<DoseRecommendation> recommendations;  // input order
    std::vector<DoseReduction> reductions;            // per (scenario, regimen)
    std::vector<std::string> errors;                  // failed scenarios
};

// Runs every scenario, memoizing the fraction table per (population,
// regimen, grid) so the two targets of one population read the same table;
// reduction rows pair the 0.90 and 0.75 targets where both exist.
ScenarioTable run_scenarios(const std::vector<ScenarioSpec>& matrix,
                            const FixedEffects& theta, const OmegaMatrix& omega,
                            const SimulationContext& ctx,
                            const EtaMap& map = default_eta_map(),
                            unsigned workers = 1);

// The population x regimen x target matrix the dose-finding tables cover:
// (50-100 kg, 50% comed), (70-140 kg, 50% comed), (50-100 kg, no comed),
// each daily and weekly, each at the 90% and 75% targets.
std::vector<ScenarioSpec> standard_scenario_matrix(int population_size,
                                                   uint64_t seed);

// Population concentration/response profiles on a common time grid, for the
// profile export and the variability summaries downstream.
struct PopulationProfiles {
    std::vector<double> times;             // hours, shared bins
    std::vector<std::vector<double>> pk;   // [subject][bin], ng/mL
    std::vector<std::vector<double>> pd;   // [subject][bin]
    std::vector<VirtualSubject> subjects;
};

PopulationProfiles simulate_population_profiles(
    const ScenarioSpec& spec, const FixedEffects& theta, const OmegaMatrix& omega,
    double dose_mg, int n_intervals, double bin_dt, const SimulationContext& ctx,
    const EtaMap& map = default_eta_map(), unsigned workers = 1);

// CSV exports (callers prepend their own header comment lines).
void write_recommendations_csv(std::ostream& out,
                               const std::vector<DoseRecommendation>& rows);
void write_reductions_csv(std::ostream& out,
                          const std::vector<DoseReduction>& rows);
void write_profiles_csv(std::ostream& out, const PopulationProfiles& profiles);

} // namespace qpkpd
