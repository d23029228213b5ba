#include "qpkpd/fock.hpp"

#include "qpkpd/errors.hpp"

#include <cmath>

namespace qpkpd {

namespace {

constexpr double kRegimeCap = 0.1;  // max rate*dt for one step

double mixing_angle(double rate, double dt) {
    return 2.0 * std::asin(std::sqrt(rate * dt));
}

// CNOT(src->dst), CRY(dst->src, theta), CNOT(src->dst) on every aligned bit
// line: a Givens rotation by theta/2 on each line's one-excitation subspace.
void apply_transfer(QuantumState& state, int src_base, int dst_base, int width,
                    double theta) {
    for (int bit = 0; bit < width; ++bit) {
        const int src = src_base + bit;
        const int dst = dst_base + bit;
        apply_gate(state, GateOp::cnot(src, dst));
        apply_gate(state, GateOp::cry(dst, src, theta));
        apply_gate(state, GateOp::cnot(src, dst));
    }
}

} // namespace

void FockEncoding::validate() const {
    if (qubits_per_register < 1 ||
        levels != (1 << qubits_per_register))
        throw DomainError("register levels must equal 2^qubits_per_register");
    if (n_qubits() > kMaxQubits)
        throw DomainError("encoding needs " + std::to_string(n_qubits()) +
                          " qubits; the simulator caps at " +
                          std::to_string(kMaxQubits));
    for (double s : scales)
        if (!(s > 0.0))
            throw DomainError("encoding scales must be positive");
}

QuantumState encode_amounts(const CompartmentState& y, const FockEncoding& enc) {
    enc.validate();
    const int top = enc.levels - 1;
    std::size_t index = 0;
    for (int reg = 0; reg < 4; ++reg) {
        const double scaled = y[static_cast<std::size_t>(reg)] / enc.scales[static_cast<std::size_t>(reg)];
        if (scaled < 0.0)
            throw DomainError("compartment amount is negative; nothing to encode");
        if (scaled >= top + 0.5)
            throw TruncationError("amount " + std::to_string(scaled) +
                                  " levels exceeds the top level " +
                                  std::to_string(top) +
                                  "; raise the register scale");
        const int level = std::min(static_cast<int>(std::floor(scaled + 0.5)), top);
        index |= static_cast<std::size_t>(level)
                 << enc.register_base(reg);
    }

    QuantumState state = QuantumState::zero(enc.n_qubits());
    state.amplitudes[0] = 0.0;
    state.amplitudes[index] = 1.0;
    return state;
}

QuantumState evolve_step(const QuantumState& state, const JumpRates& rates,
                         double dt, const FockEncoding& enc) {
    enc.validate();
    if (state.n_qubits != enc.n_qubits())
        throw DomainError("state has " + std::to_string(state.n_qubits) +
                          " qubits; the encoding expects " +
                          std::to_string(enc.n_qubits()));
    if (dt < 0.0)
        throw DomainError("step dt must be nonnegative");
    for (double rate : {rates.k12, rates.k21, rates.ke0, rates.kel}) {
        if (rate < 0.0)
            throw DomainError("channel rates must be nonnegative");
        if (rate * dt > kRegimeCap)
            throw DomainError("rate*dt = " + std::to_string(rate * dt) +
                              " leaves the small-step regime (cap " +
                              std::to_string(kRegimeCap) + ")");
    }

    const int w = enc.qubits_per_register;
    const int a1 = enc.register_base(0);
    const int a2 = enc.register_base(1);
    const int ae = enc.register_base(2);

    QuantumState out = state;
    if (rates.k12 * dt > 0.0)
        apply_transfer(out, a1, a2, w, mixing_angle(rates.k12, dt));
    if (rates.k21 * dt > 0.0)
        apply_transfer(out, a2, a1, w, mixing_angle(rates.k21, dt));
    if (rates.ke0 * dt > 0.0)
        apply_transfer(out, a1, ae, w, mixing_angle(rates.ke0, dt));
    if (rates.kel * dt > 0.0) {
        // Level 1 rotates toward level 3, whose marker bit then caps it to
        // the discard sector at level 7.
        apply_gate(out, GateOp::cry(a1, a1 + 1, mixing_angle(rates.kel, dt)));
        apply_gate(out, GateOp::cnot(a1 + 1, a1 + 2));
    }
    return out;
}

std::array<double, 4> extract_expectations(const QuantumState& state,
                                           const FockEncoding& enc) {
    enc.validate();
    if (state.n_qubits != enc.n_qubits())
        throw DomainError("state has " + std::to_string(state.n_qubits) +
                          " qubits; the encoding expects " +
                          std::to_string(enc.n_qubits()));

    const std::size_t mask = static_cast<std::size_t>(enc.levels - 1);
    std::array<double, 4> expect{0.0, 0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < state.amplitudes.size(); ++i) {
        const double p = std::norm(state.amplitudes[i]);
        if (p == 0.0)
            continue;
        for (int reg = 0; reg < 4; ++reg) {
            auto level = static_cast<double>((i >> enc.register_base(reg)) & mask);
            if (reg == 0 && level == mask)
                level = 0.0;  // A1's discard sector carries no amount
            expect[static_cast<std::size_t>(reg)] += p * level;
        }
    }
    for (int reg = 0; reg < 4; ++reg)
        expect[static_cast<std::size_t>(reg)] *= enc.scales[static_cast<std::size_t>(reg)];
    return expect;
}

CompartmentState euler_reference_step(const CompartmentState& y,
                                      const JumpRates& rates, double dt) {
    CompartmentState out = y;
    out[0] += dt * (-(rates.k12 + rates.ke0 + rates.kel) * y[0] +
                    rates.k21 * y[1] + rates.ke0 * y[2]);
    out[1] += dt * (rates.k12 * y[0] - rates.k21 * y[1]);
    out[2] += dt * (rates.ke0 * y[0] - rates.ke0 * y[2]);
    // R has no channel here.
    return out;
}

} // namespace qpkpd
