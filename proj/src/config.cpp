#include "peval/config.hpp"

#include <fstream>

namespace peval {

namespace {

using nlohmann::json;

const json& require(const json& j, const char* key, const char* context) {
    auto it = j.find(key);
    if (it == j.end())
        throw ConfigError(std::string(context) + ": missing required key '" + key + "'");
    return *it;
}

double number(const json& j, const char* context) {
    if (!j.is_number())
        throw ConfigError(std::string(context) + ": expected a number");
    return j.get<double>();
}

Coefficient coeff_from_json(const json& j, const char* context) {
    if (j.is_number()) return Coefficient::constant(j.get<double>());
    if (!j.is_object())
        throw ConfigError(std::string(context) + ": expected a number or a coefficient object");
    const std::string family = require(j, "family", context).get<std::string>();
    if (family == "constant")
        return Coefficient::constant(number(require(j, "c0", context), context));
    if (family == "affine")
        return Coefficient::affine(number(require(j, "c0", context), context),
                                   number(require(j, "c1", context), context));
    if (family == "sigmoid")
        return Coefficient::sigmoid(number(require(j, "c0", context), context),
                                    number(require(j, "c1", context), context),
                                    number(require(j, "center", context), context),
                                    number(require(j, "scale", context), context));
    throw ConfigError(std::string(context) + ": unknown coefficient family '" + family + "'");
}

json coeff_to_json(const Coefficient& c) {
    json j;
    j["family"] = c.family_name();
    j["c0"] = c.c0;
    if (c.family != Coefficient::Family::Constant) j["c1"] = c.c1;
    if (c.family == Coefficient::Family::Sigmoid) {
        j["center"] = c.center;
        j["scale"] = c.scale;
    }
    return j;
}

Eigen::VectorXd vector_from_json(const json& j, const char* context) {
    if (!j.is_array()) throw ConfigError(std::string(context) + ": expected an array");
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v(i) = number(j[i], context);
    return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json j = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
    return j;
}

Eigen::MatrixXd matrix_from_json(const json& j, const char* context) {
    if (!j.is_array() || j.empty())
        throw ConfigError(std::string(context) + ": expected an array of rows");
    const std::size_t rows = j.size();
    const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
    if (cols == 0) throw ConfigError(std::string(context) + ": empty matrix row");
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols)
            throw ConfigError(std::string(context) + ": ragged matrix");
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = number(j[r][c], context);
    }
    return m;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json j = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        j.push_back(row);
    }
    return j;
}

FactorModel model_from_json(const json& j) {
    FactorModel m;
    m.n = require(j, "n", "model").get<int>();
    m.r = coeff_from_json(require(j, "r", "model"), "model.r");
    const json& mus = require(j, "mu", "model");
    if (!mus.is_array()) throw ConfigError("model.mu: expected an array of coefficients");
    for (const auto& mj : mus) m.mu.push_back(coeff_from_json(mj, "model.mu"));
    m.sigma0 = matrix_from_json(require(j, "sigma0", "model"), "model.sigma0");
    if (j.contains("sigma_mod"))
        m.sigma_mod = coeff_from_json(j["sigma_mod"], "model.sigma_mod");
    m.b = coeff_from_json(require(j, "b", "model"), "model.b");
    m.beta = coeff_from_json(require(j, "beta", "model"), "model.beta");
    m.q = vector_from_json(require(j, "q", "model"), "model.q");
    m.y0 = number(require(j, "y0", "model"), "model.y0");
    const json& b = require(j, "bounds", "model");
    m.bounds.r_bar = number(require(b, "r_bar", "model.bounds"), "model.bounds");
    m.bounds.r_lower = number(require(b, "r_lower", "model.bounds"), "model.bounds");
    m.bounds.M0 = number(require(b, "M0", "model.bounds"), "model.bounds");
    m.bounds.kappa0 = number(require(b, "kappa0", "model.bounds"), "model.bounds");
    m.validate_shape();
    return m;
}

json model_to_json(const FactorModel& m) {
    json j;
    j["n"] = m.n;
    j["r"] = coeff_to_json(m.r);
    json mus = json::array();
    for (const auto& c : m.mu) mus.push_back(coeff_to_json(c));
    j["mu"] = mus;
    j["sigma0"] = matrix_to_json(m.sigma0);
    j["sigma_mod"] = coeff_to_json(m.sigma_mod);
    j["b"] = coeff_to_json(m.b);
    j["beta"] = coeff_to_json(m.beta);
    j["q"] = vector_to_json(m.q);
    j["y0"] = m.y0;
    j["bounds"] = {{"r_bar", m.bounds.r_bar},
                   {"r_lower", m.bounds.r_lower},
                   {"M0", m.bounds.M0},
                   {"kappa0", m.bounds.kappa0}};
    return j;
}

ConstraintSet constraint_from_json(const json& j, int n) {
    const std::string kind = require(j, "kind", "constraint").get<std::string>();
    if (kind == "unconstrained") return ConstraintSet::unconstrained(n);
    if (kind == "no_short") return ConstraintSet::no_short(n);
    if (kind == "borrow_cap")
        return ConstraintSet::borrow_cap(n, number(require(j, "cap", "constraint"),
                                                   "constraint.cap"));
    if (kind == "no_short_borrow_cap")
        return ConstraintSet::no_short_borrow_cap(
            n, number(require(j, "cap", "constraint"), "constraint.cap"));
    if (kind == "box")
        return ConstraintSet::box(
            vector_from_json(require(j, "lo", "constraint"), "constraint.lo"),
            vector_from_json(require(j, "hi", "constraint"), "constraint.hi"));
    if (kind == "halfspaces")
        return ConstraintSet::halfspaces(
            matrix_from_json(require(j, "A", "constraint"), "constraint.A"),
            vector_from_json(require(j, "b", "constraint"), "constraint.b"));
    throw ConfigError("constraint: unknown kind '" + kind + "'");
}

json constraint_to_json(const ConstraintSet& K) {
    json j;
    j["kind"] = K.kind_name();
    switch (K.kind) {
        case ConstraintSet::Kind::BorrowCap:
        case ConstraintSet::Kind::NoShortAndBorrowCap:
            j["cap"] = K.cap;
            break;
        case ConstraintSet::Kind::Box:
            j["lo"] = vector_to_json(K.lo);
            j["hi"] = vector_to_json(K.hi);
            break;
        case ConstraintSet::Kind::HalfspaceIntersection:
            j["A"] = matrix_to_json(K.A);
            j["b"] = vector_to_json(K.b);
            break;
        default:
            break;
    }
    return j;
}

UtilitySpec utility_from_json(const json& j) {
    UtilitySpec u;
    const std::string mode = require(j, "mode", "utility").get<std::string>();
    if (mode == "power") u.mode = UtilitySpec::Mode::Power;
    else if (mode == "log") u.mode = UtilitySpec::Mode::Log;
    else throw ConfigError("utility.mode: expected 'power' or 'log'");
    if (u.mode == UtilitySpec::Mode::Power)
        u.alpha = number(require(j, "alpha", "utility"), "utility.alpha");
    u.gamma = number(require(j, "gamma", "utility"), "utility.gamma");
    u.rho = number(require(j, "rho", "utility"), "utility.rho");
    u.tau = number(require(j, "tau", "utility"), "utility.tau");
    u.h = coeff_from_json(require(j, "h", "utility"), "utility.h");
    u.m = number(require(j, "m", "utility"), "utility.m");
    u.validate();
    return u;
}

json utility_to_json(const UtilitySpec& u) {
    json j;
    j["mode"] = u.mode_name();
    if (u.mode == UtilitySpec::Mode::Power) j["alpha"] = u.alpha;
    j["gamma"] = u.gamma;
    j["rho"] = u.rho;
    j["tau"] = u.tau;
    j["h"] = coeff_to_json(u.h);
    j["m"] = u.m;
    return j;
}

json grid_layout_to_json(const ValueGrid& g) {
    return json{{"lo", g.lo()}, {"hi", g.hi()}, {"nodes", g.size()}};
}

ValueGrid grid_layout_from_json(const json& j) {
    return ValueGrid(number(require(j, "lo", "grid"), "grid.lo"),
                     number(require(j, "hi", "grid"), "grid.hi"),
                     require(j, "nodes", "grid").get<std::size_t>(), 0.0);
}

json grid_values_to_json(const ValueGrid& g) {
    json j = json::array();
    for (std::size_t i = 0; i < g.size(); ++i) j.push_back(g[i]);
    return j;
}

ValueGrid grid_with_values(const ValueGrid& layout, const json& values,
                           const char* context) {
    if (!values.is_array() || values.size() != layout.size())
        throw ConfigError(std::string(context) + ": value count does not match the grid");
    ValueGrid g = layout;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = number(values[i], context);
    return g;
}

json feedback_to_json(const FeedbackPolicy& p) {
    json j = json::array();
    for (const auto& g : p.pi) j.push_back(grid_values_to_json(g));
    return j;
}

FeedbackPolicy feedback_from_json(const ValueGrid& layout, const json& j,
                                  const char* context) {
    FeedbackPolicy p;
    if (!j.is_array()) throw ConfigError(std::string(context) + ": expected an array");
    for (const auto& vals : j) p.pi.push_back(grid_with_values(layout, vals, context));
    return p;
}

json control_to_json(const DualControl& c) {
    json j;
    json nus = json::array();
    for (const auto& g : c.nu) nus.push_back(grid_values_to_json(g));
    j["nu"] = nus;
    j["eta"] = grid_values_to_json(c.eta);
    j["lambda"] = c.lambda;
    return j;
}

DualControl control_from_json(const ValueGrid& layout, const json& j) {
    DualControl c;
    for (const auto& vals : require(j, "nu", "control"))
        c.nu.push_back(grid_with_values(layout, vals, "control.nu"));
    c.eta = grid_with_values(layout, require(j, "eta", "control"), "control.eta");
    c.lambda = number(require(j, "lambda", "control"), "control.lambda");
    return c;
}

} // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig cfg;
    cfg.model = model_from_json(require(j, "model", "config"));
    cfg.constraint = constraint_from_json(require(j, "constraint", "config"), cfg.model.n);
    cfg.utility = utility_from_json(require(j, "utility", "config"));

    const json& num = require(j, "numerics", "config");
    if (!num.contains("seed"))
        throw ConfigError("numerics.seed is required: runs must be reproducible");
    cfg.seed = num["seed"].get<std::uint64_t>();
    auto opt_u = [&](const char* k, std::size_t d) {
        return num.contains(k) ? num[k].get<std::size_t>() : d;
    };
    auto opt_i = [&](const char* k, int d) {
        return num.contains(k) ? num[k].get<int>() : d;
    };
    auto opt_d = [&](const char* k, double d) {
        return num.contains(k) ? number(num[k], "numerics") : d;
    };
    cfg.grid_nodes = opt_u("grid_nodes", cfg.grid_nodes);
    cfg.grid_width_sds = opt_d("grid_width_sds", cfg.grid_width_sds);
    cfg.paths = opt_u("paths", cfg.paths);
    cfg.fp_paths = opt_u("fp_paths", cfg.fp_paths);
    cfg.certify_paths = opt_u("certify_paths", cfg.certify_paths);
    cfg.steps = opt_i("steps", cfg.steps);
    cfg.threads = opt_i("threads", cfg.threads);
    cfg.fp_tol = opt_d("fp_tol", cfg.fp_tol);
    cfg.fp_max_iterations = opt_i("fp_max_iterations", cfg.fp_max_iterations);
    cfg.rotate_sweeps = opt_i("rotate_sweeps", cfg.rotate_sweeps);
    cfg.pg_iters = opt_i("pg_iters", cfg.pg_iters);
    cfg.dual_sweeps = opt_i("dual_sweeps", cfg.dual_sweeps);
    cfg.periods = opt_i("periods", cfg.periods);
    cfg.x0 = opt_d("x0", cfg.x0);

    if (cfg.grid_nodes < 2) throw ConfigError("numerics.grid_nodes: need at least 2");
    if (cfg.steps < 1) throw ConfigError("numerics.steps: need at least 1");
    if (cfg.paths < 2 || cfg.fp_paths < 2 || cfg.certify_paths < 2)
        throw ConfigError("numerics: path counts must be at least 2");
    if (!(cfg.x0 > 0.0)) throw ConfigError("numerics.x0: must be positive");
    if (cfg.periods < 1) throw ConfigError("numerics.periods: need at least 1");
    if (static_cast<int>(cfg.model.mu.size()) != cfg.model.n)
        throw ConfigError("model.mu: need exactly n coefficients");
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return from_json(j);
}

json ExperimentConfig::to_json() const {
    json j;
    j["model"] = model_to_json(model);
    j["constraint"] = constraint_to_json(constraint);
    j["utility"] = utility_to_json(utility);
    j["numerics"] = {{"grid_nodes", grid_nodes},
                     {"grid_width_sds", grid_width_sds},
                     {"paths", paths},
                     {"fp_paths", fp_paths},
                     {"certify_paths", certify_paths},
                     {"steps", steps},
                     {"seed", seed},
                     {"threads", threads},
                     {"fp_tol", fp_tol},
                     {"fp_max_iterations", fp_max_iterations},
                     {"rotate_sweeps", rotate_sweeps},
                     {"pg_iters", pg_iters},
                     {"dual_sweeps", dual_sweeps},
                     {"periods", periods},
                     {"x0", x0}};
    return j;
}

FixedPointConfig ExperimentConfig::fixed_point_config() const {
    FixedPointConfig f;
    f.grid_nodes = grid_nodes;
    f.grid_width_sds = grid_width_sds;
    f.paths = fp_paths;
    f.certify_paths = certify_paths;
    f.steps = steps;
    f.seed = seed;
    f.threads = threads;
    f.tol = fp_tol;
    f.max_iterations = fp_max_iterations;
    f.rotate_sweeps = rotate_sweeps;
    f.pg_iters = pg_iters;
    f.dual_sweeps = dual_sweeps;
    return f;
}

SimConfig ExperimentConfig::sim_config() const {
    SimConfig s;
    s.paths = paths;
    s.steps = steps;
    s.seed = seed;
    s.threads = threads;
    return s;
}

json fixed_point_to_json(const FixedPointResult& fp) {
    json j;
    j["grid"] = grid_layout_to_json(fp.A_star);
    j["A_star"] = grid_values_to_json(fp.A_star);
    j["converged"] = fp.converged;
    j["iterations"] = fp.iterations;
    j["final_step"] = fp.final_step;
    j["contraction"] = fp.contraction;
    j["posterior_error"] = fp.posterior_error;
    j["mc_tolerance"] = fp.mc_tolerance;
    j["step_history"] = fp.step_history;
    j["policy"] = feedback_to_json(fp.policy);
    j["control"] = control_to_json(fp.control);
    j["lambda_table"] = grid_values_to_json(fp.lambda_table);
    json certs = json::array();
    for (const auto& c : fp.certificates)
        certs.push_back({{"y", c.y},
                         {"primal_E", c.primal_E},
                         {"primal_se", c.primal_se},
                         {"dual_E", c.dual_E},
                         {"dual_se", c.dual_se},
                         {"lambda", c.lambda},
                         {"budget", c.budget}});
    j["certificates"] = certs;
    j["message"] = fp.message;
    return j;
}

FixedPointResult fixed_point_from_json(const json& j) {
    FixedPointResult fp;
    const ValueGrid layout = grid_layout_from_json(require(j, "grid", "fixed_point"));
    fp.A_star = grid_with_values(layout, require(j, "A_star", "fixed_point"), "A_star");
    fp.converged = require(j, "converged", "fixed_point").get<bool>();
    fp.iterations = require(j, "iterations", "fixed_point").get<int>();
    fp.final_step = number(require(j, "final_step", "fixed_point"), "final_step");
    fp.contraction = number(require(j, "contraction", "fixed_point"), "contraction");
    fp.posterior_error =
        number(require(j, "posterior_error", "fixed_point"), "posterior_error");
    fp.mc_tolerance = number(require(j, "mc_tolerance", "fixed_point"), "mc_tolerance");
    fp.step_history = require(j, "step_history", "fixed_point").get<std::vector<double>>();
    fp.policy = feedback_from_json(layout, require(j, "policy", "fixed_point"), "policy");
    fp.control = control_from_json(layout, require(j, "control", "fixed_point"));
    fp.lambda_table =
        grid_with_values(layout, require(j, "lambda_table", "fixed_point"), "lambda_table");
    for (const auto& cj : require(j, "certificates", "fixed_point")) {
        NodeCertificate c;
        c.y = number(require(cj, "y", "certificate"), "certificate");
        c.primal_E = number(require(cj, "primal_E", "certificate"), "certificate");
        c.primal_se = number(require(cj, "primal_se", "certificate"), "certificate");
        c.dual_E = number(require(cj, "dual_E", "certificate"), "certificate");
        c.dual_se = number(require(cj, "dual_se", "certificate"), "certificate");
        c.lambda = number(require(cj, "lambda", "certificate"), "certificate");
        c.budget = number(require(cj, "budget", "certificate"), "certificate");
        fp.certificates.push_back(c);
    }
    fp.message = require(j, "message", "fixed_point").get<std::string>();
    return fp;
}

json log_fixed_point_to_json(const LogFixedPointResult& fp) {
    json j;
    j["grid"] = grid_layout_to_json(fp.A_star);
    j["A_star"] = grid_values_to_json(fp.A_star);
    j["C_star"] = fp.C_star;
    j["growth"] = grid_values_to_json(fp.growth);
    j["policy"] = feedback_to_json(fp.policy);
    j["control"] = control_to_json(fp.control);
    j["gap"] = grid_values_to_json(fp.gap);
    j["gap_se"] = grid_values_to_json(fp.gap_se);
    j["dual_gap"] = fp.dual_gap;
    j["dual_gap_se"] = fp.dual_gap_se;
    j["message"] = fp.message;
    return j;
}

LogFixedPointResult log_fixed_point_from_json(const json& j) {
    LogFixedPointResult fp;
    const ValueGrid layout = grid_layout_from_json(require(j, "grid", "log_fixed_point"));
    fp.A_star = grid_with_values(layout, require(j, "A_star", "log_fixed_point"), "A_star");
    fp.C_star = number(require(j, "C_star", "log_fixed_point"), "C_star");
    fp.growth = grid_with_values(layout, require(j, "growth", "log_fixed_point"), "growth");
    fp.policy =
        feedback_from_json(layout, require(j, "policy", "log_fixed_point"), "policy");
    fp.control = control_from_json(layout, require(j, "control", "log_fixed_point"));
    fp.gap = grid_with_values(layout, require(j, "gap", "log_fixed_point"), "gap");
    fp.gap_se = grid_with_values(layout, require(j, "gap_se", "log_fixed_point"), "gap_se");
    fp.dual_gap = number(require(j, "dual_gap", "log_fixed_point"), "dual_gap");
    fp.dual_gap_se = number(require(j, "dual_gap_se", "log_fixed_point"), "dual_gap_se");
    fp.message = require(j, "message", "log_fixed_point").get<std::string>();
    return fp;
}

} // namespace peval
