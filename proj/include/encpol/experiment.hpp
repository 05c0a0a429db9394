#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "encpol/data.hpp"
#include "encpol/dgp.hpp"
#include "encpol/nuisance.hpp"
#include "encpol/redfair.hpp"
#include "encpol/robust.hpp"
#include "encpol/threshold.hpp"

namespace encpol {

// Plain-text sectioned key=value configuration. Unknown keys are rejected
// with the offending line number.
struct ExperimentConfig {
    enum class Mode { simulate, ingest } mode = Mode::simulate;
    std::string dgp_path, csv_path, schema_path;
    std::size_t n = 10000;
    std::uint64_t seed = 0;

    CostSpec cost;

    double epsilon = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> lambda_grid;
    std::string constraint_type = "treatment_parity";  // or responder_parity
    double level = 0.0;                                // parity bound d

    bool oracle_nuisance = false;
    NuisanceConfig nuisance;

    RedfairParams redfair;

    double robust_lo = 0.0, robust_hi = 1.0;
    double overlap_threshold = 0.01;
    bool robust_monotone = false;

    std::string policy = "unconstrained";  // constant0 | constant1 | unconstrained
    std::string out_dir = "out";
    int threads = 1;

    static ExperimentConfig parse(std::istream& in);
    static ExperimentConfig parse_file(const std::string& path);
};

struct Manifest {
    std::vector<std::pair<std::string, std::string>> entries;  // filename -> hash
    std::string to_string() const;
};

void write_file_atomic(const std::string& path, const std::string& content);

// Loaded data plus nuisances, resolved from the config.
struct Workbench {
    Dataset ds;
    NuisanceBundle eta;
    std::optional<DGPSpec> dgp;
};
Workbench load_workbench(const ExperimentConfig& cfg);

// Each run writes its artifacts plus manifest.txt into cfg.out_dir and
// returns the manifest. Outputs are reproducible from (config, seed).
Manifest run_simulate(const ExperimentConfig& cfg);
Manifest run_fit(const ExperimentConfig& cfg);
Manifest run_threshold_sweep(const ExperimentConfig& cfg);
Manifest run_redfair(const ExperimentConfig& cfg);
Manifest run_two_stage(const ExperimentConfig& cfg);
Manifest run_robust_bounds(const ExperimentConfig& cfg);
Manifest run_compare_estimators(const ExperimentConfig& cfg);
Manifest run_feasible_range(const ExperimentConfig& cfg);

}  // namespace encpol
