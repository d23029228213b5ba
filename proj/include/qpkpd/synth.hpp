#pragma once

// Synthetic dataset generation: simulate a virtual population at known
// parameters and emit NONMEM-format records with residual noise applied.
// Used by the recovery tests (truth known by construction) and by the
// bundled example-data generator.

#include "qpkpd/dataset.hpp"
#include "qpkpd/likelihood.hpp"
#include "qpkpd/model.hpp"
#include "qpkpd/omega.hpp"

#include <cstdint>
#include <vector>

namespace qpkpd {

// Study design for the generated cohort.  Every subject receives a single
// bolus at t=0 and is sampled at the same nominal times.  PK times must be
// strictly positive (the pre-dose concentration is exactly zero, which the
// log-normal error model cannot produce); a t=0 PD sample records the
// pre-treatment baseline.
struct SynthDesign {
    int n_subjects = 100;
    double dose_mg = 5.0;
    double bw_low = 50.0;   // kg, uniform
    double bw_high = 100.0;
    double comed_probability = 0.5;
    std::vector<double> pk_times = {1.0, 2.0, 4.0, 8.0, 12.0, 24.0, 48.0, 72.0};
    std::vector<double> pd_times = {0.0, 12.0, 24.0, 48.0, 72.0, 96.0, 120.0};

    void validate() const;  // throws DomainError / ValidationError
};

// Ground truth for one generated subject.
struct SyntheticSubject {
    long id = 0;
    double bw = 0.0;
    int comed = 0;
    RandomEffects eta;
};

struct SyntheticDataset {
    std::vector<DatasetRecord> records;   // validate_records-clean
    std::vector<SyntheticSubject> truth;  // one entry per subject, in id order
};

// Deterministic for a given seed: each subject draws from its own stream
// keyed (seed, "synth", id) in a fixed order (BW, COMED, eta, PK noise by
// time, PD noise by time), so the cohort is reproducible record-for-record.
SyntheticDataset synthesize_dataset(const SynthDesign& design,
                                    const FixedEffects& theta,
                                    const OmegaMatrix& omega,
                                    const ResidualModel& residual,
                                    std::uint64_t seed,
                                    const SimulationContext& ctx,
                                    const EtaMap& map = default_eta_map());

} // namespace qpkpd
