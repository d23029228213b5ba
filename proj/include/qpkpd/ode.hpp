#pragma once

#include "qpkpd/model.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

namespace qpkpd {

struct SolveStats {
    std::size_t rhs_evaluations = 0;
    std::size_t accepted_steps = 0;
    std::size_t rejected_steps = 0;
};

struct SolveSettings {
    double rel_tol = 1e-6;
    double abs_tol = 1e-9;
    // Upper bound on the step size; 0 means "use the dose grid dt".  The
    // solver additionally never steps across a dose-rate change, so infusion
    // pulses are integrated exactly.
    double max_step = 0.0;
    // Optional extra output times; when non-empty the trajectory's
    // sampled_times/sampled_states are filled by dense interpolation.
    std::vector<double> dense_grid;
};

// Continuous-extension coefficients for one accepted step [t0, t0+h].
struct DenseBlock {
    double t0 = 0.0;
    double h = 0.0;
    std::array<CompartmentState, 5> rcont{};
};

struct Trajectory {
    std::vector<double> times;              // accepted step nodes
    std::vector<CompartmentState> states;   // aligned with times
    std::vector<DenseBlock> dense;          // one block per step when solver-built
    SolveStats stats;

    std::vector<double> sampled_times;          // from SolveSettings::dense_grid
    std::vector<CompartmentState> sampled_states;

    std::size_t memory_bytes() const;
};

// Integrate the four-state system over t_span with an embedded
// Dormand–Prince 5(4) pair and its free 4th-order dense interpolant (the one
// fixed integrator choice of this library).  The response component is
// clamped at 0 after each accepted step.
//
// Throws DomainError (bad span/tolerances), SolverError on step-size
// underflow (stiffness) or non-finite state (divergence), both carrying the
// last good time.
Trajectory solve_trajectory(const CompartmentState& y0,
                            std::pair<double, double> t_span,
                            const IndividualParameters& p,
                            const DoseRateGrid& grid,
                            const SolveSettings& settings);

// Dense-output evaluation; exact at stored nodes, solver-order accurate in
// between.  Trajectories built by hand (no dense blocks) fall back to linear
// interpolation.  Throws RangeError outside the covered span.
CompartmentState interpolate_solution(const Trajectory& traj, double t);

struct CacheCounters {
    std::size_t hits = 0;
    std::size_t misses = 0;
    std::size_t entries = 0;
    std::size_t rhs_evaluations = 0;  // summed over cache-filling solves
    std::size_t memory_bytes = 0;
    std::size_t peak_memory_bytes = 0;
};

// Bounded, thread-safe, least-recently-used trajectory store.
//
// Keys quantize parameters and initial state to 4 significant digits and the
// dose schedule exactly.  solve_cached() solves at the *quantized* values, so
// a hit and a freshly computed miss are bit-identical; eviction order can
// therefore never change numeric results, only the counters.
class TrajectoryCache {
public:
    explicit TrajectoryCache(std::size_t capacity = 10000);
    ~TrajectoryCache();

    TrajectoryCache(const TrajectoryCache&) = delete;
    TrajectoryCache& operator=(const TrajectoryCache&) = delete;

    CacheCounters counters() const;
    void clear();

    std::size_t capacity() const;

private:
    friend std::shared_ptr<const Trajectory> solve_cached(
        const CompartmentState&, std::pair<double, double>,
        const IndividualParameters&, const DoseRateGrid&, const SolveSettings&,
        TrajectoryCache&);

    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Round to 4 significant digits (the cache quantization rule).
double quantize_sig4(double x);

std::shared_ptr<const Trajectory> solve_cached(const CompartmentState& y0,
                                               std::pair<double, double> t_span,
                                               const IndividualParameters& p,
                                               const DoseRateGrid& grid,
                                               const SolveSettings& settings,
                                               TrajectoryCache& cache);

} // namespace qpkpd
