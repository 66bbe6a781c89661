#pragma once

#include <cstdint>
#include <string>

#include "peval/constraints.hpp"
#include "peval/fixedpoint.hpp"
#include "peval/io_util.hpp"
#include "peval/market.hpp"
#include "peval/utility.hpp"

#include "json.hpp"

namespace peval {

// Everything a run needs, parsed from one JSON document. Seeds are mandatory:
// reproducibility is part of the output contract.
struct ExperimentConfig {
    FactorModel model;
    ConstraintSet constraint;
    UtilitySpec utility;

    std::size_t grid_nodes = 41;
    double grid_width_sds = 5.0;
    std::size_t paths = 1u << 16;
    std::size_t fp_paths = 1u << 13;
    std::size_t certify_paths = 1u << 14;
    int steps = 64;
    std::uint64_t seed = 0;
    int threads = 0;
    double fp_tol = 1e-4;
    int fp_max_iterations = 200;
    int rotate_sweeps = 8;
    int pg_iters = 8;
    int dual_sweeps = 2;
    int periods = 8;
    double x0 = 1.0;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
    nlohmann::json to_json() const;

    FixedPointConfig fixed_point_config() const;
    SimConfig sim_config() const;
};

// Solution state round-trip: solve writes, verify/simulate reload.
nlohmann::json fixed_point_to_json(const FixedPointResult& fp);
FixedPointResult fixed_point_from_json(const nlohmann::json& j);
nlohmann::json log_fixed_point_to_json(const LogFixedPointResult& fp);
LogFixedPointResult log_fixed_point_from_json(const nlohmann::json& j);

} // namespace peval
