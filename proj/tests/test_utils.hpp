#pragma once

// Helpers shared by the test suites.  The statistical tails and the dense
// gate matrix are written from their textbook definitions on purpose: they
// are the independent yardsticks the fast paths are measured against, so
// they must not reuse any library code.

#include "qpkpd/dataset.hpp"
#include "qpkpd/likelihood.hpp"
#include "qpkpd/qsim.hpp"

#include <complex>
#include <functional>
#include <vector>

namespace testutil {

// ---- distribution tails ----------------------------------------------------

double std_normal_cdf(double x);

// Regularized upper incomplete gamma Q(a, x) via the series / continued
// fraction split.
double gamma_q(double a, double x);

// Upper-tail p-value of a chi-square statistic with `dof` degrees of freedom.
double chi_square_pvalue(double stat, int dof);

// Pearson statistic of observed counts against expected counts (same length;
// expected entries must be positive).
double chi_square_stat(const std::vector<double>& observed,
                       const std::vector<double>& expected);

// Two-sided Kolmogorov-Smirnov distance of a sample against a continuous
// cdf, and the (Stephens-corrected) asymptotic p-value.
double ks_statistic(std::vector<double> samples,
                    const std::function<double(double)>& cdf);
double ks_pvalue(double d, std::size_t n);

// ---- dense gate oracle -----------------------------------------------------

// Square complex matrix, row-major.
using DenseMatrix = std::vector<std::vector<std::complex<double>>>;

// Full 2^n x 2^n unitary of one gate, assembled by Kronecker products over
// the qubit chain (qubit 0 = least significant index bit).  Controlled gates
// are built as |0><0|_c (x) I + |1><1|_c (x) M_t.
DenseMatrix dense_gate_matrix(int n_qubits, const qpkpd::GateOp& gate);

// Plain matrix-vector product of the dense unitary with the amplitudes.
std::vector<std::complex<double>> dense_apply(
    const std::vector<std::complex<double>>& amplitudes, int n_qubits,
    const qpkpd::GateOp& gate);

// ---- small builders ----------------------------------------------------------

// Subject with one bolus at t=0 and the given observation lists
// ((time, value) pairs).
qpkpd::Subject make_subject(long id, double bw, int comed, double dose_mg,
                            const std::vector<std::pair<double, double>>& pk,
                            const std::vector<std::pair<double, double>>& pd);

// Context with default solver settings and no cache.
qpkpd::SimulationContext plain_context();

}  // namespace testutil
