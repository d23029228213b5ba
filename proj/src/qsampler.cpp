#include "qpkpd/qsampler.hpp"

#include "qpkpd/errors.hpp"

#include <algorithm>
#include <cmath>

namespace qpkpd {

namespace {
constexpr double kPi = 3.141592653589793;
constexpr double kAdaptSd = 0.05;
} // namespace

void AnsatzSpec::validate() const {
    if (n_qubits < 1 || n_qubits > kMaxQubits)
        throw DomainError("ansatz qubit count " + std::to_string(n_qubits) +
                          " outside [1, " + std::to_string(kMaxQubits) + "]");
    if (n_layers < 1)
        throw DomainError("ansatz needs at least one layer");
    const std::size_t expected =
        static_cast<std::size_t>(3) * n_qubits * n_layers;
    if (angles.size() != expected)
        throw ConfigError("ansatz carries " + std::to_string(angles.size()) +
                          " angles; layout needs " + std::to_string(expected));
}

AnsatzSpec AnsatzSpec::random_init(int n_qubits, int n_layers, RngStream& rng) {
    AnsatzSpec spec;
    spec.n_qubits = n_qubits;
    spec.n_layers = n_layers;
    spec.angles.resize(static_cast<std::size_t>(3) * n_qubits * n_layers);
    for (double& a : spec.angles)
        a = rng.uniform(-kPi / 2.0, kPi / 2.0);
    spec.validate();
    return spec;
}

void ProposalSettings::validate() const {
    if (!(sigma_step > 0.0) || !(sigma_q > 0.0))
        throw DomainError("proposal scales must be positive");
    if (shots < 1)
        throw DomainError("shots per proposal must be at least 1");
}

std::vector<GateOp> build_ansatz(const AnsatzSpec& spec) {
    spec.validate();
    std::vector<GateOp> gates;
    gates.reserve(static_cast<std::size_t>(spec.n_layers) *
                  (3 * spec.n_qubits + spec.n_qubits));
    for (int l = 0; l < spec.n_layers; ++l) {
        for (int q = 0; q < spec.n_qubits; ++q) {
            const std::size_t base =
                (static_cast<std::size_t>(l) * spec.n_qubits + q) * 3;
            gates.push_back(GateOp::rx(q, spec.angles[base]));
            gates.push_back(GateOp::ry(q, spec.angles[base + 1]));
            gates.push_back(GateOp::rz(q, spec.angles[base + 2]));
        }
        if (spec.n_qubits > 1)
            for (int q = 0; q < spec.n_qubits; ++q)
                gates.push_back(GateOp::cnot(q, (q + 1) % spec.n_qubits));
    }
    return gates;
}

RandomEffects sample_eta_proposal(const RandomEffects& current,
                                  const AnsatzSpec& spec,
                                  const ProposalSettings& settings,
                                  RngStream& rng) {
    settings.validate();
    if (spec.n_qubits != static_cast<int>(current.size()))
        throw DomainError("ansatz has " + std::to_string(spec.n_qubits) +
                          " qubits for an eta of dimension " +
                          std::to_string(current.size()));

    const QuantumState state = run_circuit(spec.n_qubits, build_ansatz(spec));
    const std::uint32_t bits = measure_shots(state, settings.shots, rng)[0];

    RandomEffects proposal = current;
    for (int j = 0; j < spec.n_qubits; ++j) {
        const double sign = (bits >> j) & 1u ? 1.0 : -1.0;
        proposal[j] += settings.sigma_q * sign + settings.sigma_step * rng.normal();
    }
    return proposal;
}

AnsatzSpec adapt_angles(const std::vector<double>& acceptance_history,
                        const AnsatzSpec& spec, AngleAdaptState& state,
                        RngStream& rng) {
    if (acceptance_history.empty())
        return spec;

    AnsatzSpec out = spec;
    const double latest = acceptance_history.back();

    if (state.trial_pending) {
        // Judgement beat: the latest window ran under the perturbed angles.
        if (latest < state.reference_acceptance)
            out.angles = state.saved_angles;
        state.trial_pending = false;
        state.saved_angles.clear();
        return out;
    }

    // Perturbation beat: remember where we stand, then nudge every angle.
    state.reference_acceptance = latest;
    state.saved_angles = spec.angles;
    state.trial_pending = true;
    for (double& a : out.angles)
        a = std::clamp(a + kAdaptSd * rng.normal(), -kPi, kPi);
    return out;
}

} // namespace qpkpd
