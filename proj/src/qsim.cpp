#include "qpkpd/qsim.hpp"

#include "qpkpd/errors.hpp"

#include <algorithm>
#include <cmath>

namespace qpkpd {

namespace {

using cd = std::complex<double>;

void check_index(const QuantumState& state, int q, const char* what) {
    if (q < 0 || q >= state.n_qubits)
        throw DomainError(std::string(what) + " qubit " + std::to_string(q) +
                          " out of range for " + std::to_string(state.n_qubits) +
                          " qubits");
}

// Applies the 2x2 unitary [[u00,u01],[u10,u11]] on `target`, touching only
// basis pairs whose control bit (if any) is set.
void apply_single_qubit(QuantumState& state, int target, int control, cd u00,
                        cd u01, cd u10, cd u11) {
    const std::size_t dim = state.amplitudes.size();
    const std::size_t tbit = std::size_t{1} << target;
    const std::size_t cbit = control >= 0 ? std::size_t{1} << control : 0;
    for (std::size_t i = 0; i < dim; ++i) {
        if (i & tbit)
            continue;  // visit each (i0, i1) pair once, from its 0 side
        if (cbit && !(i & cbit))
            continue;
        const std::size_t j = i | tbit;
        const cd a0 = state.amplitudes[i];
        const cd a1 = state.amplitudes[j];
        state.amplitudes[i] = u00 * a0 + u01 * a1;
        state.amplitudes[j] = u10 * a0 + u11 * a1;
    }
}

} // namespace

QuantumState QuantumState::zero(int n_qubits) {
    if (n_qubits < 1 || n_qubits > kMaxQubits)
        throw DomainError("qubit count " + std::to_string(n_qubits) +
                          " outside [1, " + std::to_string(kMaxQubits) + "]");
    QuantumState s;
    s.n_qubits = n_qubits;
    s.amplitudes.assign(std::size_t{1} << n_qubits, cd(0.0, 0.0));
    s.amplitudes[0] = cd(1.0, 0.0);
    return s;
}

double QuantumState::norm() const {
    double s = 0.0;
    for (const cd& a : amplitudes)
        s += std::norm(a);
    return std::sqrt(s);
}

void apply_gate(QuantumState& state, const GateOp& gate) {
    check_index(state, gate.target, "target");
    const bool controlled = gate.kind == GateKind::CNOT || gate.kind == GateKind::CRY;
    if (controlled) {
        check_index(state, gate.control, "control");
        if (gate.control == gate.target)
            throw DomainError("control and target coincide on qubit " +
                              std::to_string(gate.target));
    }

    const double c = std::cos(gate.angle / 2.0);
    const double s = std::sin(gate.angle / 2.0);
    switch (gate.kind) {
    case GateKind::RX:
        apply_single_qubit(state, gate.target, -1, cd(c, 0), cd(0, -s), cd(0, -s),
                           cd(c, 0));
        break;
    case GateKind::RY:
        apply_single_qubit(state, gate.target, -1, cd(c, 0), cd(-s, 0), cd(s, 0),
                           cd(c, 0));
        break;
    case GateKind::RZ:
        apply_single_qubit(state, gate.target, -1, cd(c, -s), cd(0, 0), cd(0, 0),
                           cd(c, s));
        break;
    case GateKind::CNOT:
        apply_single_qubit(state, gate.target, gate.control, cd(0, 0), cd(1, 0),
                           cd(1, 0), cd(0, 0));
        break;
    case GateKind::CRY:
        apply_single_qubit(state, gate.target, gate.control, cd(c, 0), cd(-s, 0),
                           cd(s, 0), cd(c, 0));
        break;
    }
}

QuantumState run_circuit(int n_qubits, const std::vector<GateOp>& gates) {
    QuantumState state = QuantumState::zero(n_qubits);
    for (const GateOp& g : gates)
        apply_gate(state, g);
    return state;
}

std::vector<std::uint32_t> measure_shots(const QuantumState& state, int n_shots,
                                         RngStream& rng) {
    if (n_shots < 1)
        throw DomainError("shot count must be at least 1");

    // Cumulative distribution over basis indices; binary search per shot.
    std::vector<double> cdf(state.amplitudes.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < state.amplitudes.size(); ++i) {
        acc += std::norm(state.amplitudes[i]);
        cdf[i] = acc;
    }

    std::vector<std::uint32_t> shots(static_cast<std::size_t>(n_shots));
    for (auto& out : shots) {
        const double u = rng.uniform() * acc;  // acc absorbs rounding in the norm
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const std::size_t idx =
            it == cdf.end() ? cdf.size() - 1
                            : static_cast<std::size_t>(it - cdf.begin());
        out = static_cast<std::uint32_t>(idx);
    }
    return shots;
}

double expectation_number(const QuantumState& state,
                          const std::vector<int>& register_qubits) {
    if (register_qubits.empty())
        throw DomainError("register must name at least one qubit");
    for (std::size_t a = 0; a < register_qubits.size(); ++a) {
        check_index(state, register_qubits[a], "register");
        for (std::size_t b = a + 1; b < register_qubits.size(); ++b)
            if (register_qubits[a] == register_qubits[b])
                throw DomainError("register repeats qubit " +
                                  std::to_string(register_qubits[a]));
    }

    double expect = 0.0;
    for (std::size_t i = 0; i < state.amplitudes.size(); ++i) {
        const double p = std::norm(state.amplitudes[i]);
        if (p == 0.0)
            continue;
        std::size_t value = 0;
        for (std::size_t bit = 0; bit < register_qubits.size(); ++bit)
            if (i & (std::size_t{1} << register_qubits[bit]))
                value |= std::size_t{1} << bit;
        expect += static_cast<double>(value) * p;
    }
    return expect;
}

} // namespace qpkpd
