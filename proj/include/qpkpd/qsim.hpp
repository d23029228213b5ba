#pragma once

// Dense statevector circuit simulator, capped at 12 qubits (4096 amplitudes).
// Basis ordering is little-endian throughout: qubit 0 is the least significant
// bit of a basis index.  The Fock-register decoding relies on this, so it is
// part of the contract, not an implementation detail.

#include "qpkpd/rng.hpp"

#include <complex>
#include <cstdint>
#include <vector>

namespace qpkpd {

inline constexpr int kMaxQubits = 12;

struct QuantumState {
    int n_qubits = 0;
    std::vector<std::complex<double>> amplitudes;  // length 2^n_qubits

    // |0...0> on n qubits.
    static QuantumState zero(int n_qubits);

    double norm() const;
};

enum class GateKind { RX, RY, RZ, CNOT, CRY };

struct GateOp {
    GateKind kind;
    double angle = 0.0;  // radians; rotation kinds only
    int target = -1;
    int control = -1;  // controlled kinds only

    static GateOp rx(int target, double angle) { return {GateKind::RX, angle, target, -1}; }
    static GateOp ry(int target, double angle) { return {GateKind::RY, angle, target, -1}; }
    static GateOp rz(int target, double angle) { return {GateKind::RZ, angle, target, -1}; }
    static GateOp cnot(int control, int target) { return {GateKind::CNOT, 0.0, target, control}; }
    static GateOp cry(int control, int target, double angle) {
        return {GateKind::CRY, angle, target, control};
    }
};

// Applies one gate in place.  Throws DomainError when an index is out of
// range or control == target.
void apply_gate(QuantumState& state, const GateOp& gate);

// Sequential application from |0...0>.
QuantumState run_circuit(int n_qubits, const std::vector<GateOp>& gates);

// n_shots i.i.d. basis-index samples from |amplitude|^2, deterministic for a
// given stream state.  Each entry is the measured basis index; bit q of it is
// the outcome on qubit q.
std::vector<std::uint32_t> measure_shots(const QuantumState& state, int n_shots,
                                         RngStream& rng);

// Sum_k k * P(register reads binary k), where register_qubits[0] supplies the
// least significant bit of k.  Indices must be distinct and in range.
double expectation_number(const QuantumState& state,
                          const std::vector<int>& register_qubits);

} // namespace qpkpd
