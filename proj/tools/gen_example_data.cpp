// Regenerates the bundled example dataset (data/example_dataset.csv): a
// simulated single-dose cohort with known population parameters, written in
// the 11-column NONMEM layout the toolkit reads.

#include "qpkpd/dataset.hpp"
#include "qpkpd/likelihood.hpp"
#include "qpkpd/omega.hpp"
#include "qpkpd/synth.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Generate the example PK/PD dataset"};
    std::string out_path = "data/example_dataset.csv";
    int n_subjects = 100;
    double dose_mg = 5.0;
    std::uint64_t seed = 42;
    app.add_option("-o,--out", out_path, "Output CSV path");
    app.add_option("--subjects", n_subjects, "Cohort size");
    app.add_option("--dose", dose_mg, "Bolus dose, mg");
    app.add_option("--seed", seed, "Generation seed");
    CLI11_PARSE(app, argc, argv);

    try {
        qpkpd::SynthDesign design;
        design.n_subjects = n_subjects;
        design.dose_mg = dose_mg;

        const qpkpd::FixedEffects theta;  // reference values
        const qpkpd::OmegaMatrix omega = qpkpd::OmegaMatrix::diagonal(
            Eigen::VectorXd::Constant(
                static_cast<Eigen::Index>(qpkpd::default_eta_map().size()), 0.09));
        const qpkpd::ResidualModel residual;

        qpkpd::SimulationContext ctx;
        qpkpd::SyntheticDataset data =
            qpkpd::synthesize_dataset(design, theta, omega, residual, seed, ctx);

        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) {
            std::cerr << "cannot open " << out_path << "\n";
            return 1;
        }
        out << qpkpd::write_records_csv(data.records);
        std::cout << "wrote " << data.records.size() << " records for " << n_subjects
                  << " subjects to " << out_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
