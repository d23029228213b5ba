#pragma once

// Variational-circuit proposal engine for the E-step sampler.  A layered
// ansatz (RX, RY, RZ per qubit, then a CNOT ring) is measured once per
// proposal; each measured bit signs a fixed-magnitude displacement on its
// eta coordinate, and a small Gaussian perturbation is added on top.

#include "qpkpd/model.hpp"
#include "qpkpd/qsim.hpp"
#include "qpkpd/rng.hpp"

#include <vector>

namespace qpkpd {

struct AnsatzSpec {
    int n_qubits = 6;
    int n_layers = 3;
    // Layout: angles[(layer*n_qubits + qubit)*3 + c] with c = 0 (RX), 1 (RY),
    // 2 (RZ).  Size must equal 3*n_qubits*n_layers.
    std::vector<double> angles;

    void validate() const;

    // All angles uniform on [-pi/2, pi/2]; a symmetric start that avoids the
    // deterministic all-zeros circuit.
    static AnsatzSpec random_init(int n_qubits, int n_layers, RngStream& rng);
};

struct ProposalSettings {
    double sigma_step = 0.1;  // sd of the local Gaussian perturbation
    double sigma_q = 0.1;     // magnitude of the per-bit displacement
    int shots = 1;            // shots drawn per proposal; the first is used

    void validate() const;
};

// Gate list for the ansatz: per layer, qubit 0..n-1 each get RX, RY, RZ with
// that layer's angles, then the entangling ring CNOT(0->1), ..., CNOT(n-1->0).
// A single-qubit ansatz has no ring.
std::vector<GateOp> build_ansatz(const AnsatzSpec& spec);

// One proposal: run the ansatz, measure, displace each coordinate by
// sigma_q*(2*b_j - 1), then add N(0, sigma_step^2) per coordinate.
// spec.n_qubits must equal the eta dimension.
RandomEffects sample_eta_proposal(const RandomEffects& current,
                                  const AnsatzSpec& spec,
                                  const ProposalSettings& settings,
                                  RngStream& rng);

// Angle adaptation is a two-beat hill-climb across iteration barriers: one
// call records the current window's acceptance and perturbs, the next judges
// the perturbed window and keeps or reverts.
struct AngleAdaptState {
    bool trial_pending = false;       // a perturbation is awaiting judgement
    double reference_acceptance = 0;  // acceptance of the pre-trial window
    std::vector<double> saved_angles; // angles to restore on revert
};

// acceptance_history holds one mean acceptance rate per completed iteration,
// oldest first.  Empty history leaves the spec untouched.  Perturbations are
// N(0, 0.05^2) per angle, clamped to [-pi, pi]; a trial is kept when its
// window's acceptance did not drop below the reference.
AnsatzSpec adapt_angles(const std::vector<double>& acceptance_history,
                        const AnsatzSpec& spec, AngleAdaptState& state,
                        RngStream& rng);

} // namespace qpkpd
