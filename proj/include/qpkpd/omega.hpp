#pragma once

#include "qpkpd/rng.hpp"

#include <Eigen/Core>

namespace qpkpd {

// Symmetric positive-semidefinite covariance of the random effects.
//
// Construction validates symmetry (within 1e-12) and clamps eigenvalues in
// [-1e-10, 0) to zero; anything more negative is rejected.  Use
// projected_psd() to repair a statistic that drifted further.
class OmegaMatrix {
public:
    OmegaMatrix() = default;
    explicit OmegaMatrix(const Eigen::MatrixXd& m);

    static OmegaMatrix diagonal(const Eigen::VectorXd& variances);
    static OmegaMatrix zero(int dim);

    // Symmetrize + clamp all negative eigenvalues to 0, without the
    // constructor's -1e-10 tolerance check.
    static OmegaMatrix projected_psd(const Eigen::MatrixXd& m);

    const Eigen::MatrixXd& matrix() const { return m_; }
    int dim() const { return static_cast<int>(m_.rows()); }

    // A with A·Aᵀ = Ω (eigen square root; valid for singular Ω, e.g. Ω = 0).
    const Eigen::MatrixXd& factor() const { return factor_; }

    // One draw from N(0, Ω).
    Eigen::VectorXd sample(RngStream& rng) const;

    // log N(eta; 0, Ω).  Pseudo-density on the range of Ω: components of eta
    // along (near-)null eigendirections return -inf unless they are ~0.
    double log_density(const Eigen::VectorXd& eta) const;

private:
    Eigen::MatrixXd m_;
    Eigen::MatrixXd factor_;
    Eigen::MatrixXd eigvec_;
    Eigen::VectorXd eigval_;

    void decompose();
};

} // namespace qpkpd
