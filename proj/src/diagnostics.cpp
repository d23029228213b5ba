#include "qpkpd/diagnostics.hpp"

#include "qpkpd/errors.hpp"
#include "qpkpd/ode.hpp"
#include "qpkpd/parallel.hpp"
#include "qpkpd/text.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace qpkpd {

const char* observation_kind_name(ObservationKind kind) {
    return kind == ObservationKind::Pk ? "pk" : "pd";
}

CvProfile compute_cv_profile(const std::vector<double>& times,
                             const std::vector<std::vector<double>>& values,
                             const std::string& label) {
    for (const auto& row : values) {
        if (row.size() != times.size())
            throw ValidationError("cv profile: subject row length does not match the time grid");
    }

    CvProfile profile;
    const std::size_t n_subjects = values.size();
    for (std::size_t b = 0; b < times.size(); ++b) {
        std::ostringstream tag;
        tag << label << " bin at t=" << format_double(times[b]) << " h";
        if (n_subjects < 2) {
            profile.skipped.push_back(tag.str() + ": fewer than 2 subjects");
            continue;
        }
        double mean = 0.0;
        for (std::size_t i = 0; i < n_subjects; ++i) mean += values[i][b];
        mean /= static_cast<double>(n_subjects);
        if (std::abs(mean) < 1e-12) {
            profile.skipped.push_back(tag.str() + ": mean below 1e-12");
            continue;
        }
        double ss = 0.0;
        for (std::size_t i = 0; i < n_subjects; ++i) {
            const double d = values[i][b] - mean;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / static_cast<double>(n_subjects - 1));
        profile.points.push_back({times[b], 100.0 * sd / mean, static_cast<int>(n_subjects)});
    }
    return profile;
}

namespace {

// Residualizes one point, or returns false with `why` set when the point
// cannot be standardized without producing NaN.
bool residual_point(double obs, double pred, ObservationKind kind,
                    const ResidualModel& residual, ResidualRow& row, std::string& why) {
    if (!(pred > 0.0)) {
        why = "non-positive prediction";
        return false;
    }
    const bool log_scale = kind == ObservationKind::Pk &&
                           residual.pk_form == ResidualModel::PkForm::LogNormal;
    if (log_scale && !(obs > 0.0)) {
        why = "non-positive observation under the log-normal error form";
        return false;
    }
    row.observed = obs;
    row.predicted = pred;
    row.residual = obs - pred;
    row.percent = 100.0 * (obs - pred) / pred;
    if (kind == ObservationKind::Pk) {
        row.standardized = log_scale ? (std::log(obs) - std::log(pred)) / residual.sigma_pk
                                     : (obs - pred) / (residual.sigma_pk * pred);
    } else {
        row.standardized = (obs - pred) / (residual.sigma_pd * pred);
    }
    return true;
}

} // namespace

ResidualReport compute_residuals(const std::vector<double>& observations,
                                 const std::vector<double>& predictions,
                                 ObservationKind kind,
                                 const ResidualModel& residual) {
    if (observations.size() != predictions.size())
        throw ValidationError("residuals: observation and prediction vectors differ in length");
    residual.validate();

    ResidualReport report;
    for (std::size_t i = 0; i < observations.size(); ++i) {
        ResidualRow row;
        row.kind = kind;
        std::string why;
        if (residual_point(observations[i], predictions[i], kind, residual, row, why)) {
            report.rows.push_back(row);
        } else {
            std::ostringstream note;
            note << observation_kind_name(kind) << " point " << i << ": " << why << " (obs="
                 << format_double(observations[i]) << ", pred=" << format_double(predictions[i])
                 << ")";
            report.skipped.push_back(note.str());
        }
    }
    return report;
}

ResidualReport compute_subject_residuals(const std::vector<Subject>& subjects,
                                         const FixedEffects& theta,
                                         const std::vector<RandomEffects>& etas,
                                         const ResidualModel& residual,
                                         const SimulationContext& ctx,
                                         const EtaMap& map,
                                         unsigned workers) {
    if (etas.size() != subjects.size())
        throw ValidationError("residuals: one eta vector per subject is required");
    residual.validate();

    const std::size_t n = subjects.size();
    std::vector<ResidualReport> partial(n);
    parallel_for(n, workers, [&](std::size_t i) {
        const Subject& subject = subjects[i];
        const IndividualParameters p = adjust_parameters(theta, etas[i], subject.bw,
                                                         subject.comed, map);
        double t_last = 0.0;
        for (const auto& obs : subject.pk_observations) t_last = std::max(t_last, obs.time);
        for (const auto& obs : subject.pd_observations) t_last = std::max(t_last, obs.time);
        Trajectory traj;
        try {
            traj = simulate_subject(subject, p, t_last, ctx);
        } catch (const SolverError& err) {
            throw SolverError(std::string("subject ") + std::to_string(subject.id) + ": " +
                                  err.what(),
                              err.last_time);
        }
        auto residualize = [&](const Observation& obs, ObservationKind kind) {
            const CompartmentState y = interpolate_solution(traj, obs.time);
            const double pred = kind == ObservationKind::Pk ? predict_pk(y, p) : predict_pd(y);
            ResidualRow row;
            row.subject = subject.id;
            row.kind = kind;
            row.time = obs.time;
            std::string why;
            if (residual_point(obs.value, pred, kind, residual, row, why)) {
                partial[i].rows.push_back(row);
            } else {
                std::ostringstream note;
                note << "subject " << subject.id << ": " << observation_kind_name(kind)
                     << " observation at t=" << format_double(obs.time) << " h: " << why
                     << " (obs=" << format_double(obs.value)
                     << ", pred=" << format_double(pred) << ")";
                partial[i].skipped.push_back(note.str());
            }
        };
        for (const auto& obs : subject.pk_observations) residualize(obs, ObservationKind::Pk);
        for (const auto& obs : subject.pd_observations) residualize(obs, ObservationKind::Pd);
    });

    ResidualReport report;
    for (auto& piece : partial) {
        report.rows.insert(report.rows.end(), piece.rows.begin(), piece.rows.end());
        report.skipped.insert(report.skipped.end(), piece.skipped.begin(), piece.skipped.end());
    }
    return report;
}

void write_cv_csv(std::ostream& out, const CvProfile& profile) {
    out << "time_h,cv_percent,n\n";
    std::string line;
    for (const auto& pt : profile.points) {
        line.clear();
        append_double(line, pt.time);
        line.push_back(',');
        append_double(line, pt.cv_percent);
        line.push_back(',');
        line += std::to_string(pt.n);
        line.push_back('\n');
        out << line;
    }
}

void write_residuals_csv(std::ostream& out, const ResidualReport& report) {
    out << "subject,kind,time_h,observed,predicted,residual,percent_residual,"
           "standardized_residual\n";
    std::string line;
    for (const auto& row : report.rows) {
        line.clear();
        line += std::to_string(row.subject);
        line.push_back(',');
        line += observation_kind_name(row.kind);
        line.push_back(',');
        append_double(line, row.time);
        line.push_back(',');
        append_double(line, row.observed);
        line.push_back(',');
        append_double(line, row.predicted);
        line.push_back(',');
        append_double(line, row.residual);
        line.push_back(',');
        append_double(line, row.percent);
        line.push_back(',');
        append_double(line, row.standardized);
        line.push_back('\n');
        out << line;
    }
}

} // namespace qpkpd
