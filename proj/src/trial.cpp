#include "qpkpd/trial.hpp"

#include "qpkpd/errors.hpp"
#include "qpkpd/parallel.hpp"
#include "qpkpd/text.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

namespace qpkpd {

namespace {

constexpr double kTroughDriftTol = 1e-3;  // 0.1% relative, interval to interval

} // namespace

double regimen_interval_hours(Regimen regimen) {
    return regimen == Regimen::Daily ? 24.0 : 168.0;
}

const char* regimen_name(Regimen regimen) {
    return regimen == Regimen::Daily ? "daily" : "weekly";
}

Regimen regimen_from_name(const std::string& name) {
    if (name == "daily")
        return Regimen::Daily;
    if (name == "weekly")
        return Regimen::Weekly;
    throw ConfigError("unknown regimen '" + name + "' (expected daily or weekly)");
}

void ScenarioSpec::validate() const {
    if (name.empty())
        throw ConfigError("scenario needs a name");
    if (!(bw_low > 0.0) || !(bw_high > bw_low))
        throw ConfigError("scenario '" + name + "': body-weight range must be "
                          "positive and increasing");
    if (comed_probability < 0.0 || comed_probability > 1.0)
        throw ConfigError("scenario '" + name +
                          "': comed probability outside [0,1]");
    if (target_fraction < 0.0 || target_fraction > 1.0)
        throw ConfigError("scenario '" + name +
                          "': target fraction outside [0,1]");
    if (population_size < 1)
        throw ConfigError("scenario '" + name + "': population must be >= 1");
}

std::vector<VirtualSubject> generate_population(const ScenarioSpec& spec,
                                                const OmegaMatrix& omega,
                                                RngStream& rng) {
    spec.validate();
    std::vector<VirtualSubject> population(
        static_cast<std::size_t>(spec.population_size));
    for (VirtualSubject& s : population) {
        s.bw = rng.uniform(spec.bw_low, spec.bw_high);
        s.comed = rng.uniform() < spec.comed_probability ? 1 : 0;
        s.eta = omega.sample(rng);
    }
    return population;
}

RegimenResult simulate_regimen(const IndividualParameters& p, double dose_mg,
                               double interval_h, const SimulationContext& ctx,
                               int max_intervals) {
    if (dose_mg < 0.0)
        throw DomainError("dose must be nonnegative");
    if (interval_h != 24.0 && interval_h != 168.0)
        throw DomainError("dosing interval must be 24 h or 168 h");
    if (max_intervals < 1)
        throw DomainError("at least one dosing interval is required");

    std::vector<std::pair<double, double>> doses;
    if (dose_mg > 0.0)
        doses.emplace_back(0.0, dose_mg);
    const DoseRateGrid grid =
        build_dose_rate_grid(doses, 0.0, interval_h, ctx.grid_dt);

    RegimenResult result;
    CompartmentState y{0.0, 0.0, 0.0, p.kin_i / p.kout};
    double prev_trough = y[3];  // pre-treatment baseline

    for (int n = 1; n <= max_intervals; ++n) {
        Trajectory traj;
        if (ctx.cache)
            traj = *solve_cached(y, {0.0, interval_h}, p, grid, ctx.solver,
                                 *ctx.cache);
        else
            traj = solve_trajectory(y, {0.0, interval_h}, p, grid, ctx.solver);

        y = traj.states.back();
        const double trough = y[3];
        result.interval = std::move(traj);
        result.interval_start = (n - 1) * interval_h;
        result.n_intervals = n;
        result.final_trough = trough;

        const double drift = std::abs(trough - prev_trough) /
                             std::max(std::abs(prev_trough), 1e-12);
        if (drift < kTroughDriftTol) {
            result.steady_state = true;
            break;
        }
        prev_trough = trough;
    }
    return result;
}

bool target_achieved(const Trajectory& interval, double threshold) {
    if (interval.times.size() < 2)
        throw DomainError("trajectory does not cover a dosing interval");

    double peak = -std::numeric_limits<double>::infinity();
    for (const CompartmentState& s : interval.states)
        peak = std::max(peak, s[3]);

    const double t0 = interval.times.front();
    const double t1 = interval.times.back();
    for (int k = 0;; ++k) {
        const double t = t0 + 0.25 * k;
        if (t >= t1)
            break;
        peak = std::max(peak, interpolate_solution(interval, t)[3]);
    }
    return peak < threshold;
}

void DoseGrid::validate() const {
    if (doses.empty())
        throw ConfigError("dose grid is empty");
    for (std::size_t i = 0; i < doses.size(); ++i) {
        if (!(doses[i] > 0.0))
            throw ConfigError("dose grid entries must be positive");
        if (i > 0 && !(doses[i] > doses[i - 1]))
            throw ConfigError("dose grid must be strictly ascending");
    }
}

DoseGrid DoseGrid::daily_default() {
    DoseGrid grid;
    for (int k = 1; k <= 40; ++k)
        grid.doses.push_back(0.5 * k);
    return grid;
}

DoseGrid DoseGrid::weekly_default() {
    DoseGrid grid;
    for (int k = 1; k <= 10; ++k)
        grid.doses.push_back(5.0 * k);
    return grid;
}

DoseGrid DoseGrid::for_regimen(Regimen regimen) {
    return regimen == Regimen::Daily ? daily_default() : weekly_default();
}

namespace {

struct GridEvaluation {
    std::vector<DosePoint> points;
    std::vector<int> counts;  // subjects achieving, aligned with points
    int n_not_converged = 0;
    int n_subjects = 0;
};

GridEvaluation evaluate_dose_grid(const ScenarioSpec& spec,
                                  const FixedEffects& theta,
                                  const OmegaMatrix& omega, const DoseGrid& grid,
                                  const SimulationContext& ctx, const EtaMap& map,
                                  unsigned workers) {
    spec.validate();
    grid.validate();

    RngStream rng(spec.seed, {hash_label("population"), hash_label(spec.name)});
    const std::vector<VirtualSubject> population =
        generate_population(spec, omega, rng);
    const std::size_t n = population.size();

    std::vector<IndividualParameters> params(n);
    for (std::size_t i = 0; i < n; ++i)
        params[i] = adjust_parameters(theta, population[i].eta, population[i].bw,
                                      population[i].comed, map);

    const double interval = regimen_interval_hours(spec.regimen);

    GridEvaluation eval;
    eval.n_subjects = static_cast<int>(n);
    for (double dose : grid.doses) {
        std::vector<char> achieved(n, 0);
        std::vector<char> capped(n, 0);
        parallel_for(n, workers, [&](std::size_t i) {
            try {
                const RegimenResult r =
                    simulate_regimen(params[i], dose, interval, ctx);
                achieved[i] = target_achieved(r.interval) ? 1 : 0;
                capped[i] = r.steady_state ? 0 : 1;
            } catch (const SolverError& e) {
                throw SolverError("scenario '" + spec.name + "', subject " +
                                      std::to_string(i + 1) + ", dose " +
                                      format_double(dose) + " mg: " + e.what(),
                                  e.last_time);
            }
        });
        const int count = static_cast<int>(
            std::count(achieved.begin(), achieved.end(), char(1)));
        eval.counts.push_back(count);
        eval.points.push_back(
            {dose, static_cast<double>(count) / static_cast<double>(n)});
        eval.n_not_converged += static_cast<int>(
            std::count(capped.begin(), capped.end(), char(1)));
    }
    return eval;
}

DoseRecommendation select_dose(const ScenarioSpec& spec,
                               const GridEvaluation& eval) {
    DoseRecommendation rec;
    rec.scenario = spec.name;
    rec.regimen = spec.regimen;
    rec.target_fraction = spec.target_fraction;
    rec.grid = eval.points;
    rec.n_not_converged = eval.n_not_converged;

    // Integer comparison keeps the crossing free of fraction rounding.
    const int needed = static_cast<int>(
        std::ceil(spec.target_fraction * eval.n_subjects - 1e-9));
    for (std::size_t i = 0; i < eval.points.size(); ++i) {
        if (eval.counts[i] >= needed) {
            rec.selected_dose = eval.points[i].dose;
            rec.achieved_fraction = eval.points[i].achieved_fraction;
            rec.boundary_flag = false;
            return rec;
        }
    }
    rec.selected_dose = eval.points.back().dose;
    rec.achieved_fraction = eval.points.back().achieved_fraction;
    rec.boundary_flag = true;
    return rec;
}

// Scenarios sharing a population and regimen read one fraction table.
std::string population_key(const ScenarioSpec& spec) {
    std::string key = spec.name;
    for (double v : {spec.bw_low, spec.bw_high, spec.comed_probability,
                     static_cast<double>(spec.population_size)}) {
        key += '|';
        append_double(key, v);
    }
    key += '|';
    key += std::to_string(spec.seed);
    key += '|';
    key += regimen_name(spec.regimen);
    return key;
}

} // namespace

DoseRecommendation optimize_dose(const ScenarioSpec& spec,
                                 const FixedEffects& theta,
                                 const OmegaMatrix& omega, const DoseGrid& grid,
                                 const SimulationContext& ctx, const EtaMap& map,
                                 unsigned workers) {
    return select_dose(
        spec, evaluate_dose_grid(spec, theta, omega, grid, ctx, map, workers));
}

ScenarioTable run_scenarios(const std::vector<ScenarioSpec>& matrix,
                            const FixedEffects& theta, const OmegaMatrix& omega,
                            const SimulationContext& ctx, const EtaMap& map,
                            unsigned workers) {
    ScenarioTable table;
    std::map<std::string, GridEvaluation> memo;

    for (const ScenarioSpec& spec : matrix) {
        try {
            const std::string key = population_key(spec);
            auto it = memo.find(key);
            if (it == memo.end()) {
                GridEvaluation eval =
                    evaluate_dose_grid(spec, theta, omega,
                                       DoseGrid::for_regimen(spec.regimen), ctx,
                                       map, workers);
                it = memo.emplace(key, std::move(eval)).first;
            }
            table.recommendations.push_back(select_dose(spec, it->second));
        } catch (const Error& e) {
            table.errors.push_back("scenario '" + spec.name + "' (" +
                                   regimen_name(spec.regimen) + ", target " +
                                   format_double(spec.target_fraction) +
                                   "): " + e.what());
        }
    }

    // Pair the 90% and 75% rows per (population, regimen).
    for (const DoseRecommendation& high : table.recommendations) {
        if (std::abs(high.target_fraction - 0.90) > 1e-9)
            continue;
        for (const DoseRecommendation& low : table.recommendations) {
            if (low.scenario != high.scenario || low.regimen != high.regimen ||
                std::abs(low.target_fraction - 0.75) > 1e-9)
                continue;
            DoseReduction row;
            row.scenario = high.scenario;
            row.regimen = high.regimen;
            row.dose_high_target = high.selected_dose;
            row.dose_low_target = low.selected_dose;
            row.reduction_percent = 100.0 *
                                    (high.selected_dose - low.selected_dose) /
                                    high.selected_dose;
            table.reductions.push_back(std::move(row));
            break;
        }
    }
    return table;
}

std::vector<ScenarioSpec> standard_scenario_matrix(int population_size,
                                                   uint64_t seed) {
    struct PopulationKind {
        const char* name;
        double bw_low, bw_high, comed;
    };
    const PopulationKind kinds[] = {
        {"original", 50.0, 100.0, 0.5},
        {"heavy", 70.0, 140.0, 0.5},
        {"no_comed", 50.0, 100.0, 0.0},
    };

    std::vector<ScenarioSpec> matrix;
    for (const PopulationKind& kind : kinds)
        for (Regimen regimen : {Regimen::Daily, Regimen::Weekly})
            for (double target : {0.90, 0.75}) {
                ScenarioSpec spec;
                spec.name = kind.name;
                spec.bw_low = kind.bw_low;
                spec.bw_high = kind.bw_high;
                spec.comed_probability = kind.comed;
                spec.target_fraction = target;
                spec.regimen = regimen;
                spec.population_size = population_size;
                spec.seed = seed;
                matrix.push_back(std::move(spec));
            }
    return matrix;
}

PopulationProfiles simulate_population_profiles(
    const ScenarioSpec& spec, const FixedEffects& theta, const OmegaMatrix& omega,
    double dose_mg, int n_intervals, double bin_dt, const SimulationContext& ctx,
    const EtaMap& map, unsigned workers) {
    spec.validate();
    if (dose_mg < 0.0)
        throw DomainError("dose must be nonnegative");
    if (n_intervals < 1)
        throw DomainError("at least one dosing interval is required");
    if (!(bin_dt > 0.0))
        throw DomainError("profile bin width must be positive");

    RngStream rng(spec.seed, {hash_label("population"), hash_label(spec.name)});

    PopulationProfiles profiles;
    profiles.subjects = generate_population(spec, omega, rng);
    const std::size_t n = profiles.subjects.size();

    const double interval = regimen_interval_hours(spec.regimen);
    const double horizon = n_intervals * interval;
    for (int k = 0;; ++k) {
        const double t = k * bin_dt;
        if (t > horizon + 1e-12)
            break;
        profiles.times.push_back(std::min(t, horizon));
    }

    std::vector<std::pair<double, double>> doses;
    if (dose_mg > 0.0)
        for (int k = 0; k < n_intervals; ++k)
            doses.emplace_back(k * interval, dose_mg);
    const DoseRateGrid grid =
        build_dose_rate_grid(doses, 0.0, horizon, ctx.grid_dt);

    profiles.pk.assign(n, std::vector<double>(profiles.times.size(), 0.0));
    profiles.pd.assign(n, std::vector<double>(profiles.times.size(), 0.0));

    parallel_for(n, workers, [&](std::size_t i) {
        const VirtualSubject& s = profiles.subjects[i];
        const IndividualParameters p =
            adjust_parameters(theta, s.eta, s.bw, s.comed, map);
        const CompartmentState y0{0.0, 0.0, 0.0, p.kin_i / p.kout};

        Trajectory traj;
        try {
            if (ctx.cache)
                traj = *solve_cached(y0, {0.0, horizon}, p, grid, ctx.solver,
                                     *ctx.cache);
            else
                traj = solve_trajectory(y0, {0.0, horizon}, p, grid, ctx.solver);
        } catch (const SolverError& e) {
            throw SolverError("scenario '" + spec.name + "', subject " +
                                  std::to_string(i + 1) + ": " + e.what(),
                              e.last_time);
        }

        for (std::size_t b = 0; b < profiles.times.size(); ++b) {
            const CompartmentState y =
                interpolate_solution(traj, profiles.times[b]);
            profiles.pk[i][b] = predict_pk(y, p);
            profiles.pd[i][b] = predict_pd(y);
        }
    });
    return profiles;
}

void write_recommendations_csv(std::ostream& out,
                               const std::vector<DoseRecommendation>& rows) {
    std::string text =
        "scenario,regimen,target,dose_mg,achieved_fraction,boundary_flag\n";
    for (const DoseRecommendation& r : rows) {
        text += r.scenario;
        text += ',';
        text += regimen_name(r.regimen);
        text += ',';
        append_double(text, r.target_fraction);
        text += ',';
        append_double(text, r.selected_dose);
        text += ',';
        append_double(text, r.achieved_fraction);
        text += ',';
        text += r.boundary_flag ? "true" : "false";
        text += '\n';
    }
    out << text;
}

void write_reductions_csv(std::ostream& out,
                          const std::vector<DoseReduction>& rows) {
    std::string text =
        "scenario,regimen,dose_at_90pct_mg,dose_at_75pct_mg,reduction_percent\n";
    for (const DoseReduction& r : rows) {
        text += r.scenario;
        text += ',';
        text += regimen_name(r.regimen);
        text += ',';
        append_double(text, r.dose_high_target);
        text += ',';
        append_double(text, r.dose_low_target);
        text += ',';
        append_double(text, r.reduction_percent);
        text += '\n';
    }
    out << text;
}

void write_profiles_csv(std::ostream& out, const PopulationProfiles& profiles) {
    std::string text = "subject,bw_kg,comed,time_h,conc_ng_ml,response\n";
    for (std::size_t i = 0; i < profiles.subjects.size(); ++i) {
        const VirtualSubject& s = profiles.subjects[i];
        for (std::size_t b = 0; b < profiles.times.size(); ++b) {
            text += std::to_string(i + 1);
            text += ',';
            append_double(text, s.bw);
            text += ',';
            text += std::to_string(s.comed);
            text += ',';
            append_double(text, profiles.times[b]);
            text += ',';
            append_double(text, profiles.pk[i][b]);
            text += ',';
            append_double(text, profiles.pd[i][b]);
            text += '\n';
        }
    }
    out << text;
}

} // namespace qpkpd
