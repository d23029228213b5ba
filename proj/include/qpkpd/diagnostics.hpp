#pragma once

// Variability and goodness-of-fit summaries: per-bin CV% across a simulated
// population, and per-observation residuals against model predictions.
// Rows or bins that cannot be computed cleanly are never emitted with NaN;
// they are skipped and described for the sidecar log.

#include "qpkpd/dataset.hpp"
#include "qpkpd/likelihood.hpp"
#include "qpkpd/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace qpkpd {

struct CvPoint {
    double time = 0.0;
    double cv_percent = 0.0;
    int n = 0;  // subjects contributing
};

struct CvProfile {
    std::vector<CvPoint> points;
    std::vector<std::string> skipped;  // bins left out, with the reason
};

// Sample CV per time bin: 100 * sd / mean with the n-1 denominator.
// values[subject][bin] must align with times.  Bins with fewer than two
// subjects or with |mean| below 1e-12 are skipped with a note tagged by
// `label` (e.g. "pk").
CvProfile compute_cv_profile(const std::vector<double>& times,
                             const std::vector<std::vector<double>>& values,
                             const std::string& label);

enum class ObservationKind { Pk, Pd };

const char* observation_kind_name(ObservationKind kind);

struct ResidualRow {
    long subject = 0;
    ObservationKind kind = ObservationKind::Pk;
    double time = 0.0;
    double observed = 0.0;
    double predicted = 0.0;
    double residual = 0.0;      // obs - pred
    double percent = 0.0;       // 100 * (obs - pred) / pred
    double standardized = 0.0;  // per the residual model's error form
};

struct ResidualReport {
    std::vector<ResidualRow> rows;
    std::vector<std::string> skipped;  // flagged observations, with the reason
};

// Aligned per-point residuals for one observable.  PK standardizes on the
// log scale ((ln obs - ln pred) / sigma_pk) under the log-normal form and
// proportionally otherwise; PD always standardizes as
// (obs - pred) / (sigma_pd * pred).  Points with pred <= 0 (or obs <= 0
// where a log is needed) are flagged and skipped.
ResidualReport compute_residuals(const std::vector<double>& observations,
                                 const std::vector<double>& predictions,
                                 ObservationKind kind,
                                 const ResidualModel& residual);

// Simulates every subject at its random effects and residualizes each
// observation in dataset order.  Skipped descriptions carry subject ids.
ResidualReport compute_subject_residuals(const std::vector<Subject>& subjects,
                                         const FixedEffects& theta,
                                         const std::vector<RandomEffects>& etas,
                                         const ResidualModel& residual,
                                         const SimulationContext& ctx,
                                         const EtaMap& map = default_eta_map(),
                                         unsigned workers = 1);

// CSV exports (callers prepend their own header comment lines).
void write_cv_csv(std::ostream& out, const CvProfile& profile);
void write_residuals_csv(std::ostream& out, const ResidualReport& report);

} // namespace qpkpd
