#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace qpkpd {

// Population-level fixed effects.  Defaults are the reference estimates the
// whole toolkit is exercised against.
struct FixedEffects {
    double cl = 2.0;        // clearance, L/h
    double v1 = 10.0;       // central volume, L
    double q = 1.0;         // inter-compartmental clearance, L/h
    double v2 = 20.0;       // peripheral volume, L
    double ka = 0.5;        // absorption rate, 1/h
    double ke0 = 0.1;       // effect-site equilibration, 1/h
    double imax = 0.8;      // maximum inhibition, fraction
    double ic50 = 2.0;      // half-maximal effect-site concentration, ng/mL
    double kin = 5.0;       // response production, ng/mL/h
    double kout = 0.1;      // response elimination, 1/h
    double clbw = 0.75;     // allometric exponent on CL
    double v1bw = 1.0;      // allometric exponent on V1
    double clcomed = 0.1;   // proportional COMED effect on CL
    double kincomed = 0.1;  // proportional COMED effect on KIN

    void validate() const;  // throws DomainError on a bad value
};

// Parameters that may carry a between-subject random effect.
enum class ThetaParam { CL, V1, Q, V2, KA, KE0, IMAX, IC50, KIN, KOUT };

const char* theta_param_name(ThetaParam p);
ThetaParam theta_param_from_name(const std::string& name);

// The theta field behind an enum tag (the estimation update writes through
// this).
double& theta_component(FixedEffects& theta, ThetaParam p);
double theta_component(const FixedEffects& theta, ThetaParam p);

// Which parameters carry an eta component, in eta-vector order.
using EtaMap = std::vector<ThetaParam>;

// {CL, V1, Q, V2, KE0, IC50}: six dimensions, matching the sampler width.
const EtaMap& default_eta_map();

// Multiplicative log-normal random effects; eta.size() must equal the map's.
using RandomEffects = Eigen::VectorXd;

// Covariate- and eta-adjusted parameters for one subject.
struct IndividualParameters {
    double cl_i = 0.0;
    double v1_i = 0.0;
    double q = 0.0;
    double v2 = 0.0;
    double ka = 0.0;
    double ke0 = 0.0;
    double imax = 0.0;
    double ic50 = 0.0;
    double kin_i = 0.0;
    double kout = 0.0;
};

// State vector: central amount (mg), peripheral amount (mg), effect-site
// amount (mg), response (ng/mL).
using CompartmentState = std::array<double, 4>;

// Converts central/effect-site concentration from mg/L to the ng/mL scale
// that IC50 and the observations use.
inline constexpr double kConcUnitScale = 1000.0;

// Piecewise-constant dosing input.  rate(t) = rates[floor((t-t0)/dt)] inside
// the grid, 0 outside; each dose contributes amount/dt to its nearest bin, so
// sum(rates)*dt reproduces the total dosed amount exactly.
struct DoseRateGrid {
    double t0 = 0.0;
    double dt = 0.5;
    std::vector<double> rates;

    double t_end() const { return t0 + dt * static_cast<double>(rates.size()); }
    double rate_at(double t) const;

    // First bin edge strictly after t_from where the rate value changes; the
    // solver uses this to land exactly on pulse edges.  +inf when the rate
    // never changes again.
    double next_rate_change(double t_from) const;

    uint64_t schedule_hash() const;
};

// bw in kg, comed 0/1.  Applies allometric scaling (bw/70), proportional
// COMED effects on CL and KIN, and exp(eta) on the mapped parameters.
IndividualParameters adjust_parameters(const FixedEffects& theta,
                                       const RandomEffects& eta,
                                       double bw, int comed,
                                       const EtaMap& map = default_eta_map());

// Nearest-bin dose placement; ties (exactly between bins) round half-up.
// Throws RangeError if a dose time falls outside [t0, t_end].
DoseRateGrid build_dose_rate_grid(const std::vector<std::pair<double, double>>& doses,
                                  double t0, double t_end, double dt);

// 1 - imax*ce/(ic50 + ce); strictly decreasing in ce, range [1-imax, 1].
double inhibition_factor(double ce, double imax, double ic50);

// Four-state right-hand side; `ce` uses ae/v1_i scaled to ng/mL.
void pkpd_rhs(double t, const CompartmentState& y, const IndividualParameters& p,
              const DoseRateGrid& grid, CompartmentState& dydt);

} // namespace qpkpd
