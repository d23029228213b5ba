#include "qpkpd/synth.hpp"

#include "qpkpd/errors.hpp"
#include "qpkpd/ode.hpp"
#include "qpkpd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace qpkpd {

void SynthDesign::validate() const {
    if (n_subjects < 1) throw DomainError("synth design: n_subjects must be at least 1");
    if (!(dose_mg > 0.0)) throw DomainError("synth design: dose_mg must be positive");
    if (!(bw_low > 0.0) || bw_high < bw_low)
        throw DomainError("synth design: body-weight range must satisfy 0 < low <= high");
    if (!(comed_probability >= 0.0) || comed_probability > 1.0)
        throw DomainError("synth design: comed_probability must lie in [0,1]");
    if (pk_times.empty() && pd_times.empty())
        throw ValidationError("synth design: at least one observation time is required");
    for (double t : pk_times)
        if (!(t > 0.0))
            throw DomainError("synth design: PK sample times must be strictly positive");
    for (double t : pd_times)
        if (t < 0.0) throw DomainError("synth design: PD sample times must be non-negative");
    if (!std::is_sorted(pk_times.begin(), pk_times.end()) ||
        !std::is_sorted(pd_times.begin(), pd_times.end()))
        throw ValidationError("synth design: sample times must be ascending");
}

SyntheticDataset synthesize_dataset(const SynthDesign& design,
                                    const FixedEffects& theta,
                                    const OmegaMatrix& omega,
                                    const ResidualModel& residual,
                                    std::uint64_t seed,
                                    const SimulationContext& ctx,
                                    const EtaMap& map) {
    design.validate();
    theta.validate();
    residual.validate();
    if (static_cast<std::size_t>(omega.dim()) != map.size())
        throw ValidationError("synth: omega dimension does not match the eta map");

    double t_max = 0.0;
    for (double t : design.pk_times) t_max = std::max(t_max, t);
    for (double t : design.pd_times) t_max = std::max(t_max, t);

    SyntheticDataset out;
    out.records.reserve(static_cast<std::size_t>(design.n_subjects) *
                        (1 + design.pk_times.size() + design.pd_times.size()));
    out.truth.reserve(static_cast<std::size_t>(design.n_subjects));

    const bool log_normal_pk = residual.pk_form == ResidualModel::PkForm::LogNormal;

    for (int s = 0; s < design.n_subjects; ++s) {
        const long id = s + 1;
        RngStream rng(seed, {hash_label("synth"), static_cast<std::uint64_t>(id)});

        SyntheticSubject truth;
        truth.id = id;
        // Tenth-of-a-kilogram weights, as a scale would record them.
        truth.bw = std::round(rng.uniform(design.bw_low, design.bw_high) * 10.0) / 10.0;
        truth.comed = rng.uniform() < design.comed_probability ? 1 : 0;
        truth.eta = omega.sample(rng);

        Subject subject;
        subject.id = id;
        subject.bw = truth.bw;
        subject.comed = truth.comed;
        subject.dose_events.push_back({0.0, design.dose_mg});

        const IndividualParameters p =
            adjust_parameters(theta, truth.eta, truth.bw, truth.comed, map);
        const Trajectory traj = simulate_subject(subject, p, t_max, ctx);

        auto base_record = [&](double time) {
            DatasetRecord r;
            r.id = id;
            r.bw = truth.bw;
            r.comed = truth.comed;
            r.dose = design.dose_mg;
            r.time = time;
            return r;
        };

        // Noise draws happen in a fixed order (PK by time, then PD by time)
        // so the record layout below can be rearranged without changing the
        // generated values.
        std::vector<DatasetRecord> rows;
        {
            DatasetRecord r = base_record(0.0);
            r.evid = 1;
            r.mdv = 1;
            r.amt = design.dose_mg;
            r.cmt = 1;
            rows.push_back(r);
        }
        for (double t : design.pk_times) {
            const CompartmentState y = interpolate_solution(traj, t);
            const double pred = predict_pk(y, p);
            const double z = rng.normal();
            DatasetRecord r = base_record(t);
            r.evid = 0;
            r.mdv = 0;
            r.cmt = 2;
            r.dvid = 1;
            r.dv = log_normal_pk ? pred * std::exp(residual.sigma_pk * z)
                                 : pred * (1.0 + residual.sigma_pk * z);
            rows.push_back(r);
        }
        for (double t : design.pd_times) {
            const CompartmentState y = interpolate_solution(traj, t);
            const double pred = predict_pd(y);
            const double z = rng.normal();
            DatasetRecord r = base_record(t);
            r.evid = 0;
            r.mdv = 0;
            r.cmt = 4;
            r.dvid = 2;
            r.dv = pred * (1.0 + residual.sigma_pd * z);
            rows.push_back(r);
        }

        // File order: by time, dose first on ties, PK before PD.
        std::stable_sort(rows.begin(), rows.end(),
                         [](const DatasetRecord& a, const DatasetRecord& b) {
                             if (a.time != b.time) return a.time < b.time;
                             if (a.evid != b.evid) return a.evid > b.evid;
                             return a.dvid.value_or(0) < b.dvid.value_or(0);
                         });
        out.records.insert(out.records.end(), rows.begin(), rows.end());
        out.truth.push_back(std::move(truth));
    }

    validate_records(out.records);
    return out;
}

} // namespace qpkpd
