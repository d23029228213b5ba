#include "test_utils.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace testutil {

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

// Lower regularized incomplete gamma P(a, x) by its power series; converges
// quickly for x < a + 1.
double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double term = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::fabs(term) < std::fabs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper regularized incomplete gamma Q(a, x) by the Lentz continued
// fraction; the right regime for x >= a + 1.
double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double gamma_q(double a, double x) {
    if (a <= 0.0) throw std::invalid_argument("gamma_q: a must be positive");
    if (x < 0.0) throw std::invalid_argument("gamma_q: x must be non-negative");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_contfrac(a, x);
}

double chi_square_pvalue(double stat, int dof) {
    if (dof < 1) throw std::invalid_argument("chi_square_pvalue: dof < 1");
    return gamma_q(0.5 * dof, 0.5 * stat);
}

double chi_square_stat(const std::vector<double>& observed,
                       const std::vector<double>& expected) {
    if (observed.size() != expected.size())
        throw std::invalid_argument("chi_square_stat: length mismatch");
    double stat = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        if (expected[i] <= 0.0)
            throw std::invalid_argument("chi_square_stat: expected count <= 0");
        double diff = observed[i] - expected[i];
        stat += diff * diff / expected[i];
    }
    return stat;
}

double ks_statistic(std::vector<double> samples,
                    const std::function<double(double)>& cdf) {
    if (samples.empty()) throw std::invalid_argument("ks_statistic: empty sample");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double f = cdf(samples[i]);
        double lo = static_cast<double>(i) / n;
        double hi = static_cast<double>(i + 1) / n;
        d = std::max(d, std::max(f - lo, hi - f));
    }
    return d;
}

double ks_pvalue(double d, std::size_t n) {
    // Asymptotic Kolmogorov tail with Stephens' small-sample correction.
    double sn = std::sqrt(static_cast<double>(n));
    double lambda = (sn + 0.12 + 0.11 / sn) * d;
    double sum = 0.0;
    for (int j = 1; j <= 100; ++j) {
        double term = 2.0 * ((j % 2 == 1) ? 1.0 : -1.0) *
                      std::exp(-2.0 * j * j * lambda * lambda);
        sum += term;
        if (std::fabs(term) < 1e-12) break;
    }
    return std::min(1.0, std::max(0.0, sum));
}

namespace {

using Mat2 = std::array<std::array<std::complex<double>, 2>, 2>;

Mat2 rotation_matrix(const qpkpd::GateOp& gate) {
    const std::complex<double> i(0.0, 1.0);
    double c = std::cos(gate.angle / 2.0);
    double s = std::sin(gate.angle / 2.0);
    switch (gate.kind) {
        case qpkpd::GateKind::RX:
            return {{{c, -i * s}, {-i * s, c}}};
        case qpkpd::GateKind::RY:
        case qpkpd::GateKind::CRY:
            return {{{c, -s}, {s, c}}};
        case qpkpd::GateKind::RZ:
            return {{{std::exp(-i * (gate.angle / 2.0)), 0.0},
                     {0.0, std::exp(i * (gate.angle / 2.0))}}};
        case qpkpd::GateKind::CNOT:
            return {{{0.0, 1.0}, {1.0, 0.0}}};  // Pauli X
    }
    throw std::logic_error("rotation_matrix: unknown kind");
}

// Kronecker chain in ascending qubit order.  Each processed factor lands in
// the most significant position of the composite index, so qubit 0 (handled
// first) ends up varying fastest -- the little-endian basis order.
DenseMatrix kron_chain(int n_qubits, const std::function<Mat2(int)>& factor) {
    DenseMatrix acc = {{std::complex<double>(1.0, 0.0)}};
    for (int q = 0; q < n_qubits; ++q) {
        Mat2 f = factor(q);
        std::size_t dim = acc.size();
        DenseMatrix next(dim * 2, std::vector<std::complex<double>>(dim * 2));
        for (std::size_t r = 0; r < dim; ++r)
            for (std::size_t c = 0; c < dim; ++c)
                for (int fr = 0; fr < 2; ++fr)
                    for (int fc = 0; fc < 2; ++fc)
                        next[fr * dim + r][fc * dim + c] = f[fr][fc] * acc[r][c];
        acc = std::move(next);
    }
    return acc;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix out = a;
    for (std::size_t r = 0; r < a.size(); ++r)
        for (std::size_t c = 0; c < a.size(); ++c) out[r][c] += b[r][c];
    return out;
}

}  // namespace

DenseMatrix dense_gate_matrix(int n_qubits, const qpkpd::GateOp& gate) {
    const Mat2 identity = {{{1.0, 0.0}, {0.0, 1.0}}};
    const Mat2 p0 = {{{1.0, 0.0}, {0.0, 0.0}}};
    const Mat2 p1 = {{{0.0, 0.0}, {0.0, 1.0}}};
    Mat2 m = rotation_matrix(gate);

    bool controlled = gate.kind == qpkpd::GateKind::CNOT ||
                      gate.kind == qpkpd::GateKind::CRY;
    if (!controlled) {
        return kron_chain(n_qubits, [&](int q) {
            return q == gate.target ? m : identity;
        });
    }
    // |0><0|_c (x) I  +  |1><1|_c (x) M_t
    DenseMatrix idle = kron_chain(n_qubits, [&](int q) {
        return q == gate.control ? p0 : identity;
    });
    DenseMatrix act = kron_chain(n_qubits, [&](int q) {
        if (q == gate.control) return p1;
        return q == gate.target ? m : identity;
    });
    return add(idle, act);
}

std::vector<std::complex<double>> dense_apply(
    const std::vector<std::complex<double>>& amplitudes, int n_qubits,
    const qpkpd::GateOp& gate) {
    DenseMatrix u = dense_gate_matrix(n_qubits, gate);
    std::vector<std::complex<double>> out(amplitudes.size());
    for (std::size_t r = 0; r < amplitudes.size(); ++r) {
        std::complex<double> acc(0.0, 0.0);
        for (std::size_t c = 0; c < amplitudes.size(); ++c)
            acc += u[r][c] * amplitudes[c];
        out[r] = acc;
    }
    return out;
}

qpkpd::Subject make_subject(long id, double bw, int comed, double dose_mg,
                            const std::vector<std::pair<double, double>>& pk,
                            const std::vector<std::pair<double, double>>& pd) {
    qpkpd::Subject s;
    s.id = id;
    s.bw = bw;
    s.comed = comed;
    s.dose_events.push_back({0.0, dose_mg});
    for (const auto& [t, v] : pk) s.pk_observations.push_back({t, v});
    for (const auto& [t, v] : pd) s.pd_observations.push_back({t, v});
    return s;
}

qpkpd::SimulationContext plain_context() {
    qpkpd::SimulationContext ctx;
    ctx.solver.rel_tol = 1e-8;
    ctx.solver.abs_tol = 1e-10;
    return ctx;
}

}  // namespace testutil
