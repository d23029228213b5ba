#include "qpkpd/config.hpp"

#include "qpkpd/errors.hpp"
#include "qpkpd/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

namespace qpkpd {

namespace {

using nlohmann::json;

// The FixedEffects fields by their config names (the full set, not just the
// eta-capable ones).
const std::vector<std::pair<const char*, double FixedEffects::*>>& theta_fields() {
    static const std::vector<std::pair<const char*, double FixedEffects::*>> table = {
        {"cl", &FixedEffects::cl},           {"v1", &FixedEffects::v1},
        {"q", &FixedEffects::q},             {"v2", &FixedEffects::v2},
        {"ka", &FixedEffects::ka},           {"ke0", &FixedEffects::ke0},
        {"imax", &FixedEffects::imax},       {"ic50", &FixedEffects::ic50},
        {"kin", &FixedEffects::kin},         {"kout", &FixedEffects::kout},
        {"clbw", &FixedEffects::clbw},       {"v1bw", &FixedEffects::v1bw},
        {"clcomed", &FixedEffects::clcomed}, {"kincomed", &FixedEffects::kincomed},
    };
    return table;
}

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw ConfigError("config: " + path + ": " + what);
}

// Strict accessor over one JSON object: every key read is recorded, and
// finish() rejects keys nobody asked for.
class Section {
public:
    Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) fail(path_, "expected an object");
    }

    bool has(const char* key) const { return node_.contains(key); }

    const json* get(const char* key) {
        seen_.insert(key);
        auto it = node_.find(key);
        return it == node_.end() ? nullptr : &*it;
    }

    double number(const char* key, double fallback) {
        const json* v = get(key);
        if (!v) return fallback;
        if (!v->is_number()) fail(member(key), "expected a number");
        return v->get<double>();
    }

    int integer(const char* key, int fallback) {
        const json* v = get(key);
        if (!v) return fallback;
        if (!v->is_number_integer()) fail(member(key), "expected an integer");
        return v->get<int>();
    }

    bool boolean(const char* key, bool fallback) {
        const json* v = get(key);
        if (!v) return fallback;
        if (!v->is_boolean()) fail(member(key), "expected true or false");
        return v->get<bool>();
    }

    std::string text(const char* key, const std::string& fallback) {
        const json* v = get(key);
        if (!v) return fallback;
        if (!v->is_string()) fail(member(key), "expected a string");
        return v->get<std::string>();
    }

    std::string member(const char* key) const { return path_ + "." + key; }

    void finish() {
        for (auto it = node_.begin(); it != node_.end(); ++it) {
            if (!seen_.count(it.key()))
                fail(path_ + "." + it.key(), "unknown key (check the schema in README.md)");
        }
    }

    const json& node() const { return node_; }
    const std::string& path() const { return path_; }

private:
    const json& node_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_theta(Section& root, FixedEffects& theta) {
    const json* node = root.get("theta");
    if (!node) return;
    Section sec(*node, root.member("theta"));
    for (const auto& [name, field] : theta_fields())
        theta.*field = sec.number(name, theta.*field);
    sec.finish();
}

void read_omega(Section& root, EtaMap& map, Eigen::VectorXd& diag) {
    const json* node = root.get("omega");
    if (node) {
        Section sec(*node, root.member("omega"));
        if (const json* eta = sec.get("eta")) {
            if (!eta->is_array() || eta->empty()) fail(sec.member("eta"), "expected a non-empty array of parameter names");
            map.clear();
            for (const auto& item : *eta) {
                if (!item.is_string()) fail(sec.member("eta"), "expected parameter names");
                try {
                    map.push_back(theta_param_from_name(item.get<std::string>()));
                } catch (const Error& e) {
                    fail(sec.member("eta"), e.what());
                }
            }
        }
        if (const json* d = sec.get("diag")) {
            if (!d->is_array()) fail(sec.member("diag"), "expected an array of variances");
            diag.resize(static_cast<Eigen::Index>(d->size()));
            Eigen::Index i = 0;
            for (const auto& item : *d) {
                if (!item.is_number()) fail(sec.member("diag"), "expected numeric variances");
                diag[i++] = item.get<double>();
            }
        }
        sec.finish();
    }
    if (diag.size() == 0) {
        diag = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(map.size()), 0.09);
    }
    if (static_cast<std::size_t>(diag.size()) != map.size())
        fail("omega", "diag length (" + std::to_string(diag.size()) +
                          ") does not match the eta list (" + std::to_string(map.size()) + ")");
    for (Eigen::Index i = 0; i < diag.size(); ++i)
        if (!(diag[i] > 0.0) || !std::isfinite(diag[i]))
            fail("omega.diag", "variances must be positive and finite");
}

void read_residual(Section& root, ResidualModel& residual) {
    const json* node = root.get("residual");
    if (!node) return;
    Section sec(*node, root.member("residual"));
    residual.sigma_pk = sec.number("sigma_pk", residual.sigma_pk);
    residual.sigma_pd = sec.number("sigma_pd", residual.sigma_pd);
    const std::string form = sec.text("pk_form", "log-normal");
    if (form == "log-normal") {
        residual.pk_form = ResidualModel::PkForm::LogNormal;
    } else if (form == "proportional") {
        residual.pk_form = ResidualModel::PkForm::Proportional;
    } else {
        fail(sec.member("pk_form"), "expected \"log-normal\" or \"proportional\"");
    }
    sec.finish();
}

void read_solver(Section& root, RunConfig& config) {
    const json* node = root.get("solver");
    if (!node) return;
    Section sec(*node, root.member("solver"));
    config.solver.rel_tol = sec.number("rel_tol", config.solver.rel_tol);
    config.solver.abs_tol = sec.number("abs_tol", config.solver.abs_tol);
    config.grid_dt = sec.number("grid_dt", config.grid_dt);
    const int cap = sec.integer("cache_capacity", static_cast<int>(config.cache_capacity));
    if (cap < 0) fail(sec.member("cache_capacity"), "must be non-negative");
    config.cache_capacity = static_cast<std::size_t>(cap);
    sec.finish();
    if (!(config.solver.rel_tol > 0.0) || !(config.solver.abs_tol > 0.0))
        fail("solver", "tolerances must be positive");
    if (!(config.grid_dt > 0.0)) fail("solver.grid_dt", "must be positive");
}

void read_saem(Section& root, SaemSettings& saem) {
    const json* node = root.get("saem");
    if (!node) return;
    Section sec(*node, root.member("saem"));
    saem.n_iterations = sec.integer("iterations", saem.n_iterations);
    saem.n_burnin = sec.integer("burnin", saem.n_burnin);
    saem.mcmc_steps_per_subject = sec.integer("mcmc_steps", saem.mcmc_steps_per_subject);
    const std::string engine = sec.text("engine", engine_kind_name(saem.engine));
    try {
        saem.engine = engine_kind_from_name(engine);
    } catch (const Error& e) {
        fail(sec.member("engine"), e.what());
    }
    saem.step_sd = sec.number("step_sd", saem.step_sd);
    if (const json* q = sec.get("quantum")) {
        Section qsec(*q, sec.member("quantum"));
        saem.quantum.sigma_step = qsec.number("sigma_step", saem.quantum.sigma_step);
        saem.quantum.sigma_q = qsec.number("sigma_q", saem.quantum.sigma_q);
        saem.quantum.shots = qsec.integer("shots", saem.quantum.shots);
        qsec.finish();
    }
    saem.ansatz_layers = sec.integer("ansatz_layers", saem.ansatz_layers);
    saem.estimate_sigma = sec.boolean("estimate_sigma", saem.estimate_sigma);
    saem.refine_fixed_effects = sec.boolean("refine_fixed_effects", saem.refine_fixed_effects);
    sec.finish();
}

ScenarioDefinition read_definition(const json& node, const std::string& path) {
    Section sec(node, path);
    ScenarioDefinition def;
    def.name = sec.text("name", "");
    if (def.name.empty()) fail(path, "a scenario needs a non-empty name");
    def.bw_low = sec.number("bw_low", def.bw_low);
    def.bw_high = sec.number("bw_high", def.bw_high);
    def.comed_probability = sec.number("comed_probability", def.comed_probability);
    sec.finish();
    return def;
}

void read_scenarios(Section& root, RunConfig& config) {
    const json* node = root.get("scenarios");
    if (!node) return;
    Section sec(*node, root.member("scenarios"));
    config.scenario_population_size =
        sec.integer("population_size", config.scenario_population_size);
    if (config.scenario_population_size < 1)
        fail(sec.member("population_size"), "must be at least 1");
    if (const json* defs = sec.get("definitions")) {
        if (defs->is_string()) {
            if (defs->get<std::string>() != "standard")
                fail(sec.member("definitions"), "the only named set is \"standard\"");
            config.scenario_definitions.clear();
        } else if (defs->is_array()) {
            if (defs->empty()) fail(sec.member("definitions"), "expected at least one scenario");
            config.scenario_definitions.clear();
            std::set<std::string> names;
            for (std::size_t i = 0; i < defs->size(); ++i) {
                auto def = read_definition((*defs)[i], sec.member("definitions") + "[" +
                                                          std::to_string(i) + "]");
                if (!names.insert(def.name).second)
                    fail(sec.member("definitions"), "duplicate scenario name '" + def.name + "'");
                config.scenario_definitions.push_back(std::move(def));
            }
        } else {
            fail(sec.member("definitions"), "expected \"standard\" or an array");
        }
    }
    sec.finish();
}

void read_simulate(Section& root, SimulateConfig& sim) {
    const json* node = root.get("simulate");
    if (!node) return;
    Section sec(*node, root.member("simulate"));
    if (const json* pop = sec.get("population"))
        sim.population = read_definition(*pop, sec.member("population"));
    const std::string regimen = sec.text("regimen", regimen_name(sim.regimen));
    try {
        sim.regimen = regimen_from_name(regimen);
    } catch (const Error& e) {
        fail(sec.member("regimen"), e.what());
    }
    sim.dose_mg = sec.number("dose_mg", sim.dose_mg);
    sim.n_subjects = sec.integer("n_subjects", sim.n_subjects);
    sim.n_intervals = sec.integer("n_intervals", sim.n_intervals);
    sim.bin_dt = sec.number("bin_dt", sim.bin_dt);
    sec.finish();
    if (!(sim.dose_mg > 0.0)) fail("simulate.dose_mg", "must be positive");
    if (sim.n_subjects < 1) fail("simulate.n_subjects", "must be at least 1");
    if (sim.n_intervals < 1) fail("simulate.n_intervals", "must be at least 1");
    if (!(sim.bin_dt > 0.0)) fail("simulate.bin_dt", "must be positive");
}

void read_qbench(Section& root, QbenchConfig& qb) {
    const json* node = root.get("qbench");
    if (!node) return;
    Section sec(*node, root.member("qbench"));
    qb.dt = sec.number("dt", qb.dt);
    qb.n_steps = sec.integer("n_steps", qb.n_steps);
    qb.initial_amount_mg = sec.number("initial_amount_mg", qb.initial_amount_mg);
    sec.finish();
    if (!(qb.dt > 0.0)) fail("qbench.dt", "must be positive");
    if (qb.n_steps < 1) fail("qbench.n_steps", "must be at least 1");
    if (!(qb.initial_amount_mg > 0.0)) fail("qbench.initial_amount_mg", "must be positive");
}

json theta_to_json(const FixedEffects& theta) {
    json node = json::object();
    for (const auto& [name, field] : theta_fields()) node[name] = theta.*field;
    return node;
}

// The canonical JSON image of everything that defines the experiment.
// `workers` and `output_dir` are deliberately absent (execution knobs).
json identity_json(const RunConfig& c) {
    json j = json::object();
    j["dataset"] = c.dataset;
    j["seed"] = c.seed;
    j["theta"] = theta_to_json(c.theta);
    json eta = json::array();
    for (ThetaParam p : c.eta_map) eta.push_back(theta_param_name(p));
    json diag = json::array();
    for (Eigen::Index i = 0; i < c.omega_diag.size(); ++i) diag.push_back(c.omega_diag[i]);
    j["omega"] = {{"eta", eta}, {"diag", diag}};
    j["residual"] = {
        {"sigma_pk", c.residual.sigma_pk},
        {"sigma_pd", c.residual.sigma_pd},
        {"pk_form",
         c.residual.pk_form == ResidualModel::PkForm::LogNormal ? "log-normal" : "proportional"},
    };
    j["solver"] = {{"rel_tol", c.solver.rel_tol},
                   {"abs_tol", c.solver.abs_tol},
                   {"grid_dt", c.grid_dt},
                   {"cache_capacity", c.cache_capacity}};
    j["saem"] = {{"iterations", c.saem.n_iterations},
                 {"burnin", c.saem.n_burnin},
                 {"mcmc_steps", c.saem.mcmc_steps_per_subject},
                 {"engine", engine_kind_name(c.saem.engine)},
                 {"step_sd", c.saem.step_sd},
                 {"quantum",
                  {{"sigma_step", c.saem.quantum.sigma_step},
                   {"sigma_q", c.saem.quantum.sigma_q},
                   {"shots", c.saem.quantum.shots}}},
                 {"ansatz_layers", c.saem.ansatz_layers},
                 {"estimate_sigma", c.saem.estimate_sigma},
                 {"refine_fixed_effects", c.saem.refine_fixed_effects}};
    json scenarios = json::object();
    scenarios["population_size"] = c.scenario_population_size;
    if (c.scenario_definitions.empty()) {
        scenarios["definitions"] = "standard";
    } else {
        json defs = json::array();
        for (const auto& d : c.scenario_definitions) {
            defs.push_back({{"name", d.name},
                            {"bw_low", d.bw_low},
                            {"bw_high", d.bw_high},
                            {"comed_probability", d.comed_probability}});
        }
        scenarios["definitions"] = defs;
    }
    j["scenarios"] = scenarios;
    j["simulate"] = {{"population",
                      {{"name", c.simulate.population.name},
                       {"bw_low", c.simulate.population.bw_low},
                       {"bw_high", c.simulate.population.bw_high},
                       {"comed_probability", c.simulate.population.comed_probability}}},
                     {"regimen", regimen_name(c.simulate.regimen)},
                     {"dose_mg", c.simulate.dose_mg},
                     {"n_subjects", c.simulate.n_subjects},
                     {"n_intervals", c.simulate.n_intervals},
                     {"bin_dt", c.simulate.bin_dt}};
    j["qbench"] = {{"dt", c.qbench.dt},
                   {"n_steps", c.qbench.n_steps},
                   {"initial_amount_mg", c.qbench.initial_amount_mg}};
    return j;
}

} // namespace

RunConfig parse_config(const std::string& text, const std::string& origin) {
    json parsed;
    try {
        parsed = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + origin + ": " + e.what());
    }
    if (!parsed.is_object()) throw ConfigError("config: " + origin + ": expected a JSON object");

    RunConfig config;
    Section root(parsed, origin);

    config.dataset = root.text("dataset", "");
    config.output_dir = root.text("output_dir", config.output_dir);
    if (config.output_dir.empty()) fail(root.member("output_dir"), "must not be empty");

    const json* seed = root.get("seed");
    if (!seed)
        fail(origin, "a literal \"seed\" is required (runs are never seeded from the clock)");
    if (!seed->is_number_integer() || (seed->is_number_integer() && !seed->is_number_unsigned() &&
                                       seed->get<long long>() < 0))
        fail(root.member("seed"), "expected a non-negative integer");
    config.seed = seed->get<std::uint64_t>();

    const int workers = root.integer("workers", static_cast<int>(config.workers));
    if (workers < 1) fail(root.member("workers"), "must be at least 1");
    config.workers = static_cast<unsigned>(workers);

    read_theta(root, config.theta);
    read_omega(root, config.eta_map, config.omega_diag);
    read_residual(root, config.residual);
    read_solver(root, config);
    read_saem(root, config.saem);
    read_scenarios(root, config);
    read_simulate(root, config.simulate);
    read_qbench(root, config.qbench);
    root.finish();

    config.saem.seed = config.seed;
    try {
        config.theta.validate();
        config.residual.validate();
        config.saem.validate();
    } catch (const Error& e) {
        throw ConfigError("config: " + origin + ": " + e.what());
    }
    return config;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path);
}

std::string dump_config(const RunConfig& config) {
    json j = identity_json(config);
    j["output_dir"] = config.output_dir;
    j["workers"] = config.workers;
    return j.dump(2) + "\n";
}

std::string config_canonical_dump(const RunConfig& config) {
    return identity_json(config).dump();
}

std::string config_hash(const RunConfig& config) {
    const std::uint64_t h = hash_label(config_canonical_dump(config));
    char buf[17];
    static const char* digits = "0123456789abcdef";
    for (int i = 0; i < 16; ++i) buf[15 - i] = digits[(h >> (4 * i)) & 0xF];
    buf[16] = '\0';
    return std::string(buf);
}

std::vector<ScenarioSpec> scenario_matrix(const RunConfig& config) {
    if (config.scenario_definitions.empty())
        return standard_scenario_matrix(config.scenario_population_size, config.seed);

    std::vector<ScenarioSpec> matrix;
    for (const auto& def : config.scenario_definitions) {
        for (Regimen regimen : {Regimen::Daily, Regimen::Weekly}) {
            for (double target : {0.90, 0.75}) {
                ScenarioSpec spec;
                spec.name = def.name;
                spec.bw_low = def.bw_low;
                spec.bw_high = def.bw_high;
                spec.comed_probability = def.comed_probability;
                spec.target_fraction = target;
                spec.regimen = regimen;
                spec.population_size = config.scenario_population_size;
                spec.seed = config.seed;
                spec.validate();
                matrix.push_back(std::move(spec));
            }
        }
    }
    return matrix;
}

} // namespace qpkpd
