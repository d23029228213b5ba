#include "qpkpd/model.hpp"

#include "qpkpd/errors.hpp"
#include "qpkpd/rng.hpp"

#include <bit>
#include <cmath>
#include <limits>

namespace qpkpd {

void FixedEffects::validate() const {
    auto check_pos = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw DomainError(std::string(name) + " must be positive and finite");
    };
    check_pos(cl, "cl");
    check_pos(v1, "v1");
    check_pos(q, "q");
    check_pos(v2, "v2");
    check_pos(ka, "ka");
    check_pos(ke0, "ke0");
    check_pos(ic50, "ic50");
    check_pos(kin, "kin");
    check_pos(kout, "kout");
    if (!(imax >= 0.0 && imax <= 1.0))
        throw DomainError("imax must lie in [0, 1]");
    for (double v : {clbw, v1bw, clcomed, kincomed})
        if (!std::isfinite(v))
            throw DomainError("covariate coefficients must be finite");
}

const char* theta_param_name(ThetaParam p) {
    switch (p) {
    case ThetaParam::CL: return "cl";
    case ThetaParam::V1: return "v1";
    case ThetaParam::Q: return "q";
    case ThetaParam::V2: return "v2";
    case ThetaParam::KA: return "ka";
    case ThetaParam::KE0: return "ke0";
    case ThetaParam::IMAX: return "imax";
    case ThetaParam::IC50: return "ic50";
    case ThetaParam::KIN: return "kin";
    case ThetaParam::KOUT: return "kout";
    }
    return "?";
}

ThetaParam theta_param_from_name(const std::string& name) {
    for (ThetaParam p : {ThetaParam::CL, ThetaParam::V1, ThetaParam::Q,
                         ThetaParam::V2, ThetaParam::KA, ThetaParam::KE0,
                         ThetaParam::IMAX, ThetaParam::IC50, ThetaParam::KIN,
                         ThetaParam::KOUT})
        if (name == theta_param_name(p))
            return p;
    throw DomainError("unknown parameter name '" + name + "'");
}

double& theta_component(FixedEffects& theta, ThetaParam p) {
    switch (p) {
    case ThetaParam::CL: return theta.cl;
    case ThetaParam::V1: return theta.v1;
    case ThetaParam::Q: return theta.q;
    case ThetaParam::V2: return theta.v2;
    case ThetaParam::KA: return theta.ka;
    case ThetaParam::KE0: return theta.ke0;
    case ThetaParam::IMAX: return theta.imax;
    case ThetaParam::IC50: return theta.ic50;
    case ThetaParam::KIN: return theta.kin;
    case ThetaParam::KOUT: return theta.kout;
    }
    throw DomainError("unknown theta component");
}

double theta_component(const FixedEffects& theta, ThetaParam p) {
    return theta_component(const_cast<FixedEffects&>(theta), p);
}

const EtaMap& default_eta_map() {
    static const EtaMap map = {ThetaParam::CL, ThetaParam::V1, ThetaParam::Q,
                               ThetaParam::V2, ThetaParam::KE0, ThetaParam::IC50};
    return map;
}

double DoseRateGrid::rate_at(double t) const {
    if (rates.empty() || t < t0)
        return 0.0;
    auto idx = static_cast<std::ptrdiff_t>(std::floor((t - t0) / dt));
    if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(rates.size()))
        return 0.0;  // bins are half-open [edge_i, edge_{i+1})
    return rates[static_cast<std::size_t>(idx)];
}

double DoseRateGrid::next_rate_change(double t_from) const {
    // First bin edge strictly after t_from where the rate value changes,
    // including the drop to 0 at t_end; +inf when the rate never changes again.
    if (rates.empty())
        return std::numeric_limits<double>::infinity();
    auto idx = static_cast<std::ptrdiff_t>(std::floor((t_from - t0) / dt));
    const double current = rate_at(t_from);
    for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(idx + 1, 0);
         i < static_cast<std::ptrdiff_t>(rates.size()); ++i) {
        if (rates[static_cast<std::size_t>(i)] != current) {
            const double edge = t0 + dt * static_cast<double>(i);
            if (edge > t_from)
                return edge;
        }
    }
    if (current != 0.0 && t_from < t_end())
        return t_end();
    return std::numeric_limits<double>::infinity();
}

uint64_t DoseRateGrid::schedule_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](double v) {
        h ^= std::bit_cast<uint64_t>(v);
        h *= 0x100000001b3ull;
    };
    mix(t0);
    mix(dt);
    mix(static_cast<double>(rates.size()));
    for (double r : rates)
        mix(r);
    return h;
}

IndividualParameters adjust_parameters(const FixedEffects& theta,
                                       const RandomEffects& eta,
                                       double bw, int comed,
                                       const EtaMap& map) {
    if (!(bw > 0.0))
        throw DomainError("bw must be positive");
    if (eta.size() != static_cast<Eigen::Index>(map.size()))
        throw DomainError("eta dimension " + std::to_string(eta.size()) +
                          " does not match eta map size " + std::to_string(map.size()));

    // exp(eta) multipliers, 1.0 for parameters outside the map.
    std::array<double, 10> mult;
    mult.fill(1.0);
    for (std::size_t j = 0; j < map.size(); ++j)
        mult[static_cast<std::size_t>(map[j])] *= std::exp(eta[static_cast<Eigen::Index>(j)]);
    auto m = [&mult](ThetaParam p) { return mult[static_cast<std::size_t>(p)]; };

    IndividualParameters out;
    out.cl_i = theta.cl * m(ThetaParam::CL) * std::pow(bw / 70.0, theta.clbw) *
               (1.0 + theta.clcomed * comed);
    out.v1_i = theta.v1 * m(ThetaParam::V1) * std::pow(bw / 70.0, theta.v1bw);
    out.q = theta.q * m(ThetaParam::Q);
    out.v2 = theta.v2 * m(ThetaParam::V2);
    out.ka = theta.ka * m(ThetaParam::KA);
    out.ke0 = theta.ke0 * m(ThetaParam::KE0);
    out.imax = theta.imax * m(ThetaParam::IMAX);
    out.ic50 = theta.ic50 * m(ThetaParam::IC50);
    out.kin_i = theta.kin * m(ThetaParam::KIN) * (1.0 + theta.kincomed * comed);
    out.kout = theta.kout * m(ThetaParam::KOUT);

    for (double v : {out.cl_i, out.v1_i, out.q, out.v2, out.ka, out.ke0,
                     out.imax, out.ic50, out.kin_i, out.kout})
        if (!std::isfinite(v))
            throw DomainError("individual parameter overflowed to a non-finite value");
    return out;
}

DoseRateGrid build_dose_rate_grid(const std::vector<std::pair<double, double>>& doses,
                                  double t0, double t_end, double dt) {
    if (!(dt > 0.0))
        throw DomainError("dose grid dt must be positive");
    if (!(t_end >= t0))
        throw DomainError("dose grid must have t_end >= t0");

    DoseRateGrid grid;
    grid.t0 = t0;
    grid.dt = dt;
    const auto n = static_cast<std::size_t>(std::ceil((t_end - t0) / dt - 1e-12));
    grid.rates.assign(std::max<std::size_t>(n, 1), 0.0);

    for (const auto& [t_dose, amount] : doses) {
        if (t_dose < t0 || t_dose > t_end)
            throw RangeError("dose at t=" + std::to_string(t_dose) +
                             " h lies outside the grid [" + std::to_string(t0) +
                             ", " + std::to_string(t_end) + "]");
        // Nearest bin, half-up on exact ties.
        auto idx = static_cast<std::ptrdiff_t>(std::floor((t_dose - t0) / dt + 0.5));
        idx = std::clamp<std::ptrdiff_t>(idx, 0,
                                         static_cast<std::ptrdiff_t>(grid.rates.size()) - 1);
        grid.rates[static_cast<std::size_t>(idx)] += amount / dt;
    }
    return grid;
}

double inhibition_factor(double ce, double imax, double ic50) {
    return 1.0 - imax * ce / (ic50 + ce);
}

void pkpd_rhs(double t, const CompartmentState& y, const IndividualParameters& p,
              const DoseRateGrid& grid, CompartmentState& dydt) {
    const double elimination = (p.cl_i / p.v1_i) * y[0];
    const double to_peripheral = (p.q / p.v1_i) * y[0];
    const double from_peripheral = (p.q / p.v2) * y[1];
    const double ce = y[2] / p.v1_i * kConcUnitScale;

    dydt[0] = p.ka * grid.rate_at(t) - elimination - to_peripheral + from_peripheral;
    dydt[1] = to_peripheral - from_peripheral;
    dydt[2] = p.ke0 * (y[0] - y[2]);
    dydt[3] = p.kin_i * inhibition_factor(ce, p.imax, p.ic50) - p.kout * y[3];
}

} // namespace qpkpd
