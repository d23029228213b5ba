#pragma once

// Occupation-number encoding of the four compartments on 12 qubits (3 per
// register, 8 levels each) and a small-step propagator built from
// controlled-RY exchange gadgets.  This path demonstrates the circuit
// formulation; the ODE engine remains the simulator the likelihood uses.
//
// Register layout (little-endian within each register):
//   A1 -> qubits 0..2, A2 -> 3..5, AE -> 6..8, R -> 9..11.
//
// Per evolve_step the gate order is fixed: the A1->A2 gadget (angle from
// k12), the A2->A1 gadget (k21), the A1->AE gadget (ke0), then elimination
// on A1 (kel).  Each transfer gadget acts per aligned bit line i as
// CNOT(src_i -> dst_i), CRY(dst_i -> src_i, theta), CNOT(src_i -> dst_i),
// which rotates the one-excitation subspace of that line by theta/2 and
// fixes |00> and |11>.  Elimination rotates level 1 of A1 toward the
// discard sector (level 7) via CRY(a0 -> a1, theta) then CNOT(a1 -> a2).
// Channels with rate exactly 0 are skipped, so an all-zero step is the
// identity on every state.
//
// The gadgets reproduce classical transfer probabilities exactly at
// single-excitation basis states (P(moved) = rate*dt by construction);
// multi-level states see surrogate dynamics that the comparison bench is
// meant to expose, not hide.

#include "qpkpd/model.hpp"
#include "qpkpd/qsim.hpp"

#include <array>

namespace qpkpd {

struct FockEncoding {
    int levels = 8;              // per register
    int qubits_per_register = 3; // levels == 2^qubits_per_register
    // mg per level for A1/A2/AE; ng/mL per level for R.
    std::array<double, 4> scales{1.0, 1.0, 1.0, 1.0};

    void validate() const;
    int n_qubits() const { return 4 * qubits_per_register; }
    int register_base(int reg) const { return reg * qubits_per_register; }
};

// Per-hour first-order channel rates for one step.
struct JumpRates {
    double k12 = 0.0;  // A1 -> A2
    double k21 = 0.0;  // A2 -> A1
    double ke0 = 0.0;  // A1 <-> AE exchange
    double kel = 0.0;  // A1 -> discard
};

// Product basis state |k1 k2 k3 k4> with k = round(amount/scale).  Values
// must scale into [0, 7.5): anything at or above the half-step over the top
// level raises TruncationError, negatives raise DomainError.
QuantumState encode_amounts(const CompartmentState& y, const FockEncoding& enc);

// One propagation step.  Every rate*dt must stay within the small-step
// regime (<= 0.1) or DomainError is raised; dt = 0 is the identity.
QuantumState evolve_step(const QuantumState& state, const JumpRates& rates,
                         double dt, const FockEncoding& enc);

// Expected occupation per register, scaled back to physical units.  Level 7
// of A1 is the discard sector and reads as amount 0; other registers read
// their plain level.
std::array<double, 4> extract_expectations(const QuantumState& state,
                                           const FockEncoding& enc);

// Explicit Euler step of the matching classical exchange system
// (da1 = -(k12+ke0+kel) a1 + k21 a2 + ke0 ae, etc.); the reference the
// comparison bench and the small-step tests hold evolve_step against.
CompartmentState euler_reference_step(const CompartmentState& y,
                                      const JumpRates& rates, double dt);

} // namespace qpkpd
