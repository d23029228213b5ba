#include "qpkpd/ode.hpp"

#include "qpkpd/errors.hpp"
#include "qpkpd/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <list>
#include <mutex>
#include <unordered_map>

namespace qpkpd {

namespace {

// Dormand–Prince 5(4) tableau (FSAL) with the classic 4th-order continuous
// extension.  Coefficients as in Hairer, Nørsett & Wanner vol. I.
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;

constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                 a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0,
                 a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                 a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                 a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;

constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

constexpr double d1 = -12715105075.0 / 11282082432.0;
constexpr double d3 = 87487479700.0 / 32700410799.0;
constexpr double d4 = -10690763975.0 / 1880347072.0;
constexpr double d5 = 701980252875.0 / 199316789632.0;
constexpr double d6 = -1453857185.0 / 822651844.0;
constexpr double d7 = 69997945.0 / 29380423.0;

constexpr double kMinStep = 1e-12;  // h; below this we declare stiffness

using State = CompartmentState;

bool finite(const State& y) {
    return std::isfinite(y[0]) && std::isfinite(y[1]) && std::isfinite(y[2]) &&
           std::isfinite(y[3]);
}

// RHS with the dosing rate frozen to a constant.  The stepper never crosses a
// rate change, so within one step the frozen value is the true rate and the
// piecewise-constant input integrates exactly.
void rhs_frozen(double /*t*/, const State& y, const IndividualParameters& p,
                double rate, State& dydt) {
    const double elimination = (p.cl_i / p.v1_i) * y[0];
    const double to_peripheral = (p.q / p.v1_i) * y[0];
    const double from_peripheral = (p.q / p.v2) * y[1];
    const double ce = y[2] / p.v1_i * kConcUnitScale;

    dydt[0] = p.ka * rate - elimination - to_peripheral + from_peripheral;
    dydt[1] = to_peripheral - from_peripheral;
    dydt[2] = p.ke0 * (y[0] - y[2]);
    dydt[3] = p.kin_i * inhibition_factor(ce, p.imax, p.ic50) - p.kout * y[3];
}

double initial_step_guess(const State& y0, const State& f0, double rel_tol,
                          double abs_tol, double h_max) {
    double d0 = 0.0, d1n = 0.0;
    for (int i = 0; i < 4; ++i) {
        const double sc = abs_tol + rel_tol * std::abs(y0[i]);
        d0 += (y0[i] / sc) * (y0[i] / sc);
        d1n += (f0[i] / sc) * (f0[i] / sc);
    }
    d0 = std::sqrt(d0 / 4.0);
    d1n = std::sqrt(d1n / 4.0);
    double h = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
    return std::min(h, h_max);
}

} // namespace

std::size_t Trajectory::memory_bytes() const {
    return times.capacity() * sizeof(double) +
           states.capacity() * sizeof(CompartmentState) +
           dense.capacity() * sizeof(DenseBlock) +
           sampled_times.capacity() * sizeof(double) +
           sampled_states.capacity() * sizeof(CompartmentState) + sizeof(*this);
}

Trajectory solve_trajectory(const State& y0, std::pair<double, double> t_span,
                            const IndividualParameters& p,
                            const DoseRateGrid& grid,
                            const SolveSettings& settings) {
    const auto [t_begin, t_final] = t_span;
    if (!(t_final > t_begin))
        throw DomainError("t_span must be increasing");
    if (!(settings.rel_tol > 0.0) || !(settings.abs_tol > 0.0))
        throw DomainError("tolerances must be positive");
    if (settings.max_step < 0.0)
        throw DomainError("max_step must be non-negative");
    if (!finite(y0))
        throw DomainError("initial state must be finite");

    // Step-size ceiling: the explicit setting if given, and always the dose
    // grid dt so no pulse can be skipped.
    double h_max = grid.dt;
    if (settings.max_step > 0.0)
        h_max = std::min(h_max, settings.max_step);

    Trajectory traj;
    traj.times.push_back(t_begin);
    traj.states.push_back(y0);

    State y = y0;
    double t = t_begin;

    double rate = grid.rate_at(t);
    double next_edge = grid.next_rate_change(t);

    State k1, k2, k3, k4, k5, k6, k7, y_stage, y_next, err_vec;
    rhs_frozen(t, y, p, rate, k1);
    ++traj.stats.rhs_evaluations;

    double h = initial_step_guess(y, k1, settings.rel_tol, settings.abs_tol, h_max);
    h = std::min(h, t_final - t);

    bool last_rejected = false;
    while (t < t_final) {
        const double h_proposed = h;
        double h_step = std::min({h, h_max, t_final - t});
        // Land exactly on the next dose-rate edge instead of stepping over it.
        bool snapped = false;
        if (next_edge > t && next_edge - t <= h_step * (1.0 + 1e-14)) {
            h_step = next_edge - t;
            snapped = true;
        }
        if (h_step < kMinStep)
            throw SolverError("step size underflow (stiffness suspected) at t=" +
                                  std::to_string(t) + " h",
                              t);

        for (int i = 0; i < 4; ++i)
            y_stage[i] = y[i] + h_step * a21 * k1[i];
        rhs_frozen(t + c2 * h_step, y_stage, p, rate, k2);
        for (int i = 0; i < 4; ++i)
            y_stage[i] = y[i] + h_step * (a31 * k1[i] + a32 * k2[i]);
        rhs_frozen(t + c3 * h_step, y_stage, p, rate, k3);
        for (int i = 0; i < 4; ++i)
            y_stage[i] = y[i] + h_step * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        rhs_frozen(t + c4 * h_step, y_stage, p, rate, k4);
        for (int i = 0; i < 4; ++i)
            y_stage[i] = y[i] + h_step * (a51 * k1[i] + a52 * k2[i] +
                                          a53 * k3[i] + a54 * k4[i]);
        rhs_frozen(t + c5 * h_step, y_stage, p, rate, k5);
        for (int i = 0; i < 4; ++i)
            y_stage[i] = y[i] + h_step * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] +
                                          a64 * k4[i] + a65 * k5[i]);
        rhs_frozen(t + h_step, y_stage, p, rate, k6);
        for (int i = 0; i < 4; ++i)
            y_next[i] = y[i] + h_step * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] +
                                         a75 * k5[i] + a76 * k6[i]);
        rhs_frozen(t + h_step, y_next, p, rate, k7);
        traj.stats.rhs_evaluations += 6;

        double err = 0.0;
        bool bad_state = !finite(y_next);
        if (!bad_state) {
            for (int i = 0; i < 4; ++i) {
                err_vec[i] = h_step * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] +
                                       e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
                const double sc =
                    settings.abs_tol +
                    settings.rel_tol * std::max(std::abs(y[i]), std::abs(y_next[i]));
                err += (err_vec[i] / sc) * (err_vec[i] / sc);
            }
            err = std::sqrt(err / 4.0);
            bad_state = !std::isfinite(err);
        }

        if (bad_state) {
            ++traj.stats.rejected_steps;
            last_rejected = true;
            h = h_step * 0.25;
            if (h < kMinStep)
                throw SolverError("state diverged (non-finite) after t=" +
                                      std::to_string(t) + " h",
                                  t);
            continue;
        }

        if (err <= 1.0) {
            // Accept: record dense coefficients for [t, t+h_step], advance.
            DenseBlock blk;
            blk.t0 = t;
            blk.h = h_step;
            for (int i = 0; i < 4; ++i) {
                const double ydiff = y_next[i] - y[i];
                const double bspl = h_step * k1[i] - ydiff;
                blk.rcont[0][i] = y[i];
                blk.rcont[1][i] = ydiff;
                blk.rcont[2][i] = bspl;
                blk.rcont[3][i] = ydiff - h_step * k7[i] - bspl;
                blk.rcont[4][i] = h_step * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] +
                                            d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
            }
            traj.dense.push_back(blk);

            t = snapped ? next_edge : t + h_step;
            y = y_next;
            if (y[3] < 0.0)
                y[3] = 0.0;  // response is non-negative by construction
            traj.times.push_back(t);
            traj.states.push_back(y);
            ++traj.stats.accepted_steps;

            if (snapped) {
                rate = grid.rate_at(t);
                next_edge = grid.next_rate_change(t);
                // Rate changed discontinuously: FSAL derivative is stale.
                rhs_frozen(t, y, p, rate, k1);
                ++traj.stats.rhs_evaluations;
            } else {
                k1 = k7;  // FSAL
            }

            double fac = 0.9 * std::pow(err, -0.2);
            fac = std::clamp(fac, 0.2, last_rejected ? 1.0 : 10.0);
            h = h_step * fac;
            if (snapped)
                h = std::max(h, h_proposed);  // an edge landing is not an error signal
            last_rejected = false;
        } else {
            ++traj.stats.rejected_steps;
            last_rejected = true;
            h = h_step * std::max(0.2, 0.9 * std::pow(err, -0.2));
        }
    }

    if (!settings.dense_grid.empty()) {
        traj.sampled_times = settings.dense_grid;
        traj.sampled_states.reserve(traj.sampled_times.size());
        for (double ts : traj.sampled_times)
            traj.sampled_states.push_back(interpolate_solution(traj, ts));
    }
    return traj;
}

CompartmentState interpolate_solution(const Trajectory& traj, double t) {
    if (traj.times.empty())
        throw RangeError("trajectory is empty");
    if (t < traj.times.front() || t > traj.times.back())
        throw RangeError("t=" + std::to_string(t) +
                         " h outside trajectory range [" +
                         std::to_string(traj.times.front()) + ", " +
                         std::to_string(traj.times.back()) + "]");

    const auto it = std::lower_bound(traj.times.begin(), traj.times.end(), t);
    const auto idx = static_cast<std::size_t>(it - traj.times.begin());
    if (it != traj.times.end() && *it == t)
        return traj.states[idx];

    const std::size_t seg = idx - 1;  // t is strictly inside (times[seg], times[seg+1])
    if (seg < traj.dense.size()) {
        const DenseBlock& blk = traj.dense[seg];
        const double theta = (t - blk.t0) / blk.h;
        const double theta1 = 1.0 - theta;
        CompartmentState out;
        for (int i = 0; i < 4; ++i) {
            out[i] = blk.rcont[0][i] +
                     theta * (blk.rcont[1][i] +
                              theta1 * (blk.rcont[2][i] +
                                        theta * (blk.rcont[3][i] +
                                                 theta1 * blk.rcont[4][i])));
        }
        return out;
    }

    // Hand-assembled trajectory: linear fallback.
    const double t_lo = traj.times[seg], t_hi = traj.times[seg + 1];
    const double w = (t - t_lo) / (t_hi - t_lo);
    CompartmentState out;
    for (int i = 0; i < 4; ++i)
        out[i] = (1.0 - w) * traj.states[seg][i] + w * traj.states[seg + 1][i];
    return out;
}

double quantize_sig4(double x) {
    if (x == 0.0 || !std::isfinite(x))
        return x;
    const double expo = std::floor(std::log10(std::abs(x)));
    const double scale = std::pow(10.0, 3.0 - expo);
    return std::round(x * scale) / scale;
}

namespace {

struct CacheKey {
    std::array<double, 10> params;
    std::array<double, 4> y0;
    double t_begin, t_final;
    double rel_tol, abs_tol, max_step;
    uint64_t schedule;

    bool operator==(const CacheKey& o) const {
        return params == o.params && y0 == o.y0 && t_begin == o.t_begin &&
               t_final == o.t_final && rel_tol == o.rel_tol &&
               abs_tol == o.abs_tol && max_step == o.max_step &&
               schedule == o.schedule;
    }
};

struct CacheKeyHash {
    std::size_t operator()(const CacheKey& k) const {
        uint64_t h = 0xcbf29ce484222325ull;
        auto mix = [&h](double v) {
            h ^= std::bit_cast<uint64_t>(v);
            h *= 0x100000001b3ull;
        };
        for (double v : k.params)
            mix(v);
        for (double v : k.y0)
            mix(v);
        mix(k.t_begin);
        mix(k.t_final);
        mix(k.rel_tol);
        mix(k.abs_tol);
        mix(k.max_step);
        h ^= k.schedule;
        h *= 0x100000001b3ull;
        return static_cast<std::size_t>(h);
    }
};

} // namespace

struct TrajectoryCache::Impl {
    std::size_t capacity;
    mutable std::mutex mutex;
    // Most-recently-used at the front.
    std::list<std::pair<CacheKey, std::shared_ptr<const Trajectory>>> order;
    std::unordered_map<CacheKey, decltype(order)::iterator, CacheKeyHash> table;
    CacheCounters counters;
};

TrajectoryCache::TrajectoryCache(std::size_t capacity)
    : impl_(std::make_unique<Impl>()) {
    impl_->capacity = std::max<std::size_t>(capacity, 1);
}

TrajectoryCache::~TrajectoryCache() = default;

CacheCounters TrajectoryCache::counters() const {
    std::lock_guard<std::mutex> lock(impl_->mutex);
    CacheCounters c = impl_->counters;
    c.entries = impl_->table.size();
    return c;
}

void TrajectoryCache::clear() {
    std::lock_guard<std::mutex> lock(impl_->mutex);
    impl_->order.clear();
    impl_->table.clear();
    impl_->counters.memory_bytes = 0;
}

std::size_t TrajectoryCache::capacity() const { return impl_->capacity; }

std::shared_ptr<const Trajectory> solve_cached(const CompartmentState& y0,
                                               std::pair<double, double> t_span,
                                               const IndividualParameters& p,
                                               const DoseRateGrid& grid,
                                               const SolveSettings& settings,
                                               TrajectoryCache& cache) {
    // Canonicalize to the quantization grid; the solve below uses these
    // values, so hit and recomputed miss are bit-identical.
    IndividualParameters pq;
    pq.cl_i = quantize_sig4(p.cl_i);
    pq.v1_i = quantize_sig4(p.v1_i);
    pq.q = quantize_sig4(p.q);
    pq.v2 = quantize_sig4(p.v2);
    pq.ka = quantize_sig4(p.ka);
    pq.ke0 = quantize_sig4(p.ke0);
    pq.imax = quantize_sig4(p.imax);
    pq.ic50 = quantize_sig4(p.ic50);
    pq.kin_i = quantize_sig4(p.kin_i);
    pq.kout = quantize_sig4(p.kout);

    CompartmentState y0q{quantize_sig4(y0[0]), quantize_sig4(y0[1]),
                         quantize_sig4(y0[2]), quantize_sig4(y0[3])};

    CacheKey key;
    key.params = {pq.cl_i, pq.v1_i, pq.q,    pq.v2,    pq.ka,
                  pq.ke0,  pq.imax, pq.ic50, pq.kin_i, pq.kout};
    key.y0 = y0q;
    key.t_begin = t_span.first;
    key.t_final = t_span.second;
    key.rel_tol = settings.rel_tol;
    key.abs_tol = settings.abs_tol;
    key.max_step = settings.max_step;
    key.schedule = grid.schedule_hash();

    auto* impl = cache.impl_.get();
    {
        std::lock_guard<std::mutex> lock(impl->mutex);
        auto it = impl->table.find(key);
        if (it != impl->table.end()) {
            impl->order.splice(impl->order.begin(), impl->order, it->second);
            ++impl->counters.hits;
            return it->second->second;
        }
        ++impl->counters.misses;
    }

    // Compute outside the lock; duplicate concurrent computes are acceptable
    // (both produce identical trajectories).
    SolveSettings s = settings;
    s.dense_grid.clear();  // cache the raw trajectory, not caller-specific samples
    auto traj = std::make_shared<const Trajectory>(
        solve_trajectory(y0q, t_span, pq, grid, s));

    std::lock_guard<std::mutex> lock(impl->mutex);
    impl->counters.rhs_evaluations += traj->stats.rhs_evaluations;
    auto it = impl->table.find(key);
    if (it != impl->table.end())
        return it->second->second;  // another worker inserted first
    impl->order.emplace_front(key, traj);
    impl->table.emplace(key, impl->order.begin());
    impl->counters.memory_bytes += traj->memory_bytes();
    while (impl->table.size() > impl->capacity) {
        auto& back = impl->order.back();
        impl->counters.memory_bytes -= back.second->memory_bytes();
        impl->table.erase(back.first);
        impl->order.pop_back();
    }
    if (impl->counters.memory_bytes > impl->counters.peak_memory_bytes)
        impl->counters.peak_memory_bytes = impl->counters.memory_bytes;
    return traj;
}

} // namespace qpkpd
