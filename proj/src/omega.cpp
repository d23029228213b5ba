#include "qpkpd/omega.hpp"

#include "qpkpd/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>

namespace qpkpd {

namespace {
constexpr double kSymTol = 1e-12;
constexpr double kEigTol = 1e-10;
constexpr double kNullTol = 1e-12;  // eigenvalues below this are treated as null
constexpr double kLog2Pi = 1.8378770664093454;
} // namespace

OmegaMatrix::OmegaMatrix(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols())
        throw DomainError("covariance matrix must be square");
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > kSymTol)
        throw DomainError("covariance matrix is not symmetric (max asymmetry " +
                          std::to_string(asym) + ")");
    m_ = 0.5 * (m + m.transpose());
    decompose();
    if (eigval_.size() > 0 && eigval_.minCoeff() < -kEigTol)
        throw DomainError("covariance matrix has eigenvalue " +
                          std::to_string(eigval_.minCoeff()) +
                          " below the PSD tolerance");
    // Clamp the tolerated sliver of negativity and rebuild.
    if (eigval_.size() > 0 && eigval_.minCoeff() < 0.0) {
        eigval_ = eigval_.cwiseMax(0.0);
        m_ = eigvec_ * eigval_.asDiagonal() * eigvec_.transpose();
        m_ = 0.5 * (m_ + m_.transpose());
        decompose();
        eigval_ = eigval_.cwiseMax(0.0);
    }
    factor_ = eigvec_ * eigval_.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

OmegaMatrix OmegaMatrix::diagonal(const Eigen::VectorXd& variances) {
    if ((variances.array() < 0.0).any())
        throw DomainError("diagonal variances must be non-negative");
    return OmegaMatrix(Eigen::MatrixXd(variances.asDiagonal()));
}

OmegaMatrix OmegaMatrix::zero(int dim) {
    return OmegaMatrix(Eigen::MatrixXd::Zero(dim, dim));
}

OmegaMatrix OmegaMatrix::projected_psd(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols())
        throw DomainError("covariance matrix must be square");
    Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    Eigen::VectorXd clamped = es.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd projected =
        es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
    return OmegaMatrix(0.5 * (projected + projected.transpose()));
}

void OmegaMatrix::decompose() {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m_);
    if (es.info() != Eigen::Success)
        throw DomainError("eigendecomposition of covariance matrix failed");
    eigvec_ = es.eigenvectors();
    eigval_ = es.eigenvalues();
    factor_ = eigvec_ * eigval_.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Eigen::VectorXd OmegaMatrix::sample(RngStream& rng) const {
    Eigen::VectorXd z(dim());
    for (int i = 0; i < dim(); ++i)
        z[i] = rng.normal();
    return factor_ * z;
}

double OmegaMatrix::log_density(const Eigen::VectorXd& eta) const {
    if (eta.size() != dim())
        throw DomainError("eta dimension does not match covariance");
    const Eigen::VectorXd coords = eigvec_.transpose() * eta;
    double quad = 0.0;
    double logdet = 0.0;
    int rank = 0;
    for (int i = 0; i < dim(); ++i) {
        if (eigval_[i] > kNullTol) {
            quad += coords[i] * coords[i] / eigval_[i];
            logdet += std::log(eigval_[i]);
            ++rank;
        } else if (std::abs(coords[i]) > 1e-8) {
            return -std::numeric_limits<double>::infinity();
        }
    }
    return -0.5 * (rank * kLog2Pi + logdet + quad);
}

} // namespace qpkpd
