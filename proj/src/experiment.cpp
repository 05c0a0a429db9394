#include "encpol/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace encpol {

namespace {

double parse_num(const std::string& v, const std::string& key, int lineno) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw config_error("line " + std::to_string(lineno) + ": bad number for " + key + ": '" +
                           v + "'");
    }
}

bool parse_bool(const std::string& v, const std::string& key, int lineno) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw config_error("line " + std::to_string(lineno) + ": bad boolean for " + key);
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
    ExperimentConfig cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const std::string qual = section.empty() ? key : section + "." + key;

        if (qual == "data.mode") {
            if (val == "simulate") cfg.mode = Mode::simulate;
            else if (val == "ingest") cfg.mode = Mode::ingest;
            else throw config_error("line " + std::to_string(lineno) + ": mode must be simulate or ingest");
        } else if (qual == "data.dgp") cfg.dgp_path = val;
        else if (qual == "data.csv") cfg.csv_path = val;
        else if (qual == "data.schema") cfg.schema_path = val;
        else if (qual == "data.n") cfg.n = static_cast<std::size_t>(parse_num(val, qual, lineno));
        else if (qual == "data.seed") cfg.seed = static_cast<std::uint64_t>(parse_num(val, qual, lineno));
        else if (qual == "cost.w_y") cfg.cost.w_y = parse_num(val, qual, lineno);
        else if (qual == "cost.w_t") cfg.cost.w_t = parse_num(val, qual, lineno);
        else if (qual == "cost.w_r") cfg.cost.w_r = parse_num(val, qual, lineno);
        else if (qual == "constraint.epsilon") cfg.epsilon = parse_num(val, qual, lineno);
        else if (qual == "constraint.type") cfg.constraint_type = val;
        else if (qual == "constraint.level") cfg.level = parse_num(val, qual, lineno);
        else if (qual == "constraint.lambda_grid") {
            for (const auto& tok : split(val, ','))
                if (!trim(tok).empty()) cfg.lambda_grid.push_back(parse_num(trim(tok), qual, lineno));
        } else if (qual == "nuisance.oracle") cfg.oracle_nuisance = parse_bool(val, qual, lineno);
        else if (qual == "nuisance.folds") cfg.nuisance.folds = static_cast<int>(parse_num(val, qual, lineno));
        else if (qual == "nuisance.reg") cfg.nuisance.reg = parse_num(val, qual, lineno);
        else if (qual == "nuisance.clip") cfg.nuisance.clip = parse_num(val, qual, lineno);
        else if (qual == "nuisance.max_iterations")
            cfg.nuisance.budget.max_iterations = static_cast<int>(parse_num(val, qual, lineno));
        else if (qual == "redfair.B") cfg.redfair.B = parse_num(val, qual, lineno);
        else if (qual == "redfair.nu") cfg.redfair.nu = parse_num(val, qual, lineno);
        else if (qual == "redfair.omega") cfg.redfair.omega = parse_num(val, qual, lineno);
        else if (qual == "redfair.alpha") cfg.redfair.alpha = parse_num(val, qual, lineno);
        else if (qual == "redfair.cprime") cfg.redfair.cprime = parse_num(val, qual, lineno);
        else if (qual == "redfair.max_iterations")
            cfg.redfair.max_iterations = static_cast<int>(parse_num(val, qual, lineno));
        else if (qual == "redfair.slice_scale") cfg.redfair.slice_scale = parse_num(val, qual, lineno);
        else if (qual == "redfair.psi") {
            if (val == "dm") cfg.redfair.psi = PseudoKind::DM;
            else if (val == "ipw") cfg.redfair.psi = PseudoKind::IPW;
            else if (val == "dr") cfg.redfair.psi = PseudoKind::DR;
            else throw config_error("line " + std::to_string(lineno) + ": psi must be dm, ipw or dr");
        } else if (qual == "redfair.class") {
            if (val == "tabular") cfg.redfair.policy_class = RedfairParams::PolicyClass::tabular;
            else if (val == "linear") cfg.redfair.policy_class = RedfairParams::PolicyClass::linear;
            else throw config_error("line " + std::to_string(lineno) + ": class must be tabular or linear");
        } else if (qual == "robust.blo") cfg.robust_lo = parse_num(val, qual, lineno);
        else if (qual == "robust.bhi") cfg.robust_hi = parse_num(val, qual, lineno);
        else if (qual == "robust.threshold") cfg.overlap_threshold = parse_num(val, qual, lineno);
        else if (qual == "robust.monotone") cfg.robust_monotone = parse_bool(val, qual, lineno);
        else if (qual == "policy.kind") cfg.policy = val;
        else if (qual == "output.dir") cfg.out_dir = val;
        else if (qual == "output.threads") cfg.threads = static_cast<int>(parse_num(val, qual, lineno));
        else throw config_error("line " + std::to_string(lineno) + ": unknown key " + qual);
    }
    if (cfg.mode == Mode::simulate && cfg.dgp_path.empty())
        throw config_error("simulate mode needs data.dgp");
    if (cfg.mode == Mode::ingest && (cfg.csv_path.empty() || cfg.schema_path.empty()))
        throw config_error("ingest mode needs data.csv and data.schema");
    return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config: " + path);
    return parse(in);
}

std::string Manifest::to_string() const {
    std::ostringstream os;
    for (const auto& [name, hash] : entries) os << hash << "  " << name << "\n";
    return os.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

Workbench load_workbench(const ExperimentConfig& cfg) {
    if (cfg.mode == ExperimentConfig::Mode::simulate) {
        DGPSpec spec = DGPSpec::load_file(cfg.dgp_path);
        Dataset ds = generate(spec, cfg.n, cfg.seed);
        NuisanceBundle eta =
            cfg.oracle_nuisance ? oracle_bundle(spec, ds) : fit_nuisances(ds, cfg.nuisance);
        return Workbench{std::move(ds), std::move(eta), std::move(spec)};
    }
    const CsvSchema schema = CsvSchema::parse_file(cfg.schema_path);
    Dataset ds = load_dataset_file(cfg.csv_path, schema);
    if (cfg.oracle_nuisance)
        throw config_error("oracle nuisances need simulate mode");
    NuisanceBundle eta = fit_nuisances(ds, cfg.nuisance);
    return Workbench{std::move(ds), std::move(eta), std::nullopt};
}

namespace {

struct Sink {
    std::string dir;
    Manifest manifest;

    explicit Sink(const std::string& d) : dir(d) {
        std::filesystem::create_directories(dir);
    }
    void put(const std::string& name, const std::string& content) {
        write_file_atomic(dir + "/" + name, content);
        manifest.entries.emplace_back(name, fnv1a_hex(content));
    }
    Manifest finish() {
        std::sort(manifest.entries.begin(), manifest.entries.end());
        write_file_atomic(dir + "/manifest.txt", manifest.to_string());
        return manifest;
    }
};

RandomizedPolicy fixed_policy(const ExperimentConfig& cfg, const Workbench& wb,
                              const CostSpec& cost) {
    if (cfg.policy == "constant0") return RandomizedPolicy(PolicySpec::make_constant(0));
    if (cfg.policy == "constant1") return RandomizedPolicy(PolicySpec::make_constant(1));
    if (cfg.policy == "unconstrained") {
        // pointwise sign rule on the unpenalized score
        std::map<std::string, int> table;
        PolicyEvalContext ctx;
        ctx.eta = &wb.eta;
        ctx.cost = &cost;
        for (std::size_t i = 0; i < wb.ds.size(); ++i) {
            const double tau =
                cost.w_y * (wb.eta.mu1(i) - wb.eta.mu0(i)) + cost.w_t;
            const double s = wb.eta.lift(i) * tau + cost.w_r;
            table[cell_key(wb.ds.x(i), wb.ds.group_label(i))] = s > 0.0 ? 1 : 0;
        }
        return RandomizedPolicy(PolicySpec::make_tabular(std::move(table)));
    }
    throw config_error("unknown policy kind: " + cfg.policy);
}

ConstraintSystem build_system(const ExperimentConfig& cfg, const Dataset& ds,
                              const NuisanceBundle& eta) {
    if (cfg.constraint_type == "treatment_parity")
        return make_treatment_parity(ds, eta, cfg.level);
    if (cfg.constraint_type == "responder_parity")
        return make_responder_parity(ds, eta, cfg.level);
    throw config_error("unknown constraint type: " + cfg.constraint_type);
}

}  // namespace

Manifest run_simulate(const ExperimentConfig& cfg) {
    if (cfg.mode != ExperimentConfig::Mode::simulate)
        throw config_error("simulate needs data.mode=simulate");
    const DGPSpec spec = DGPSpec::load_file(cfg.dgp_path);
    const Dataset ds = generate(spec, cfg.n, cfg.seed);
    Sink sink(cfg.out_dir);
    std::ostringstream data;
    write_dataset(data, ds);
    sink.put("data.csv", data.str());
    std::ostringstream rep;
    rep << validate(ds).to_string();
    sink.put("validation.txt", rep.str());
    return sink.finish();
}

Manifest run_fit(const ExperimentConfig& cfg) {
    const Workbench wb = load_workbench(cfg);
    Sink sink(cfg.out_dir);
    std::ostringstream bundle;
    wb.eta.export_text(bundle);
    sink.put("bundle.txt", bundle.str());
    sink.put("validation.txt", validate(wb.ds).to_string());
    return sink.finish();
}

Manifest run_threshold_sweep(const ExperimentConfig& cfg) {
    if (cfg.lambda_grid.empty() && std::isnan(cfg.epsilon))
        throw config_error("threshold run needs constraint.lambda_grid or constraint.epsilon");
    const Workbench wb = load_workbench(cfg);
    Sink sink(cfg.out_dir);
    if (!cfg.lambda_grid.empty()) {
        const TradeoffCurve curve = sweep(wb.ds, wb.eta, cfg.cost, cfg.lambda_grid);
        sink.put("tradeoff_curve.csv", curve.to_csv());
    }
    if (!std::isnan(cfg.epsilon)) {
        const auto sol = solve_threshold(wb.ds, wb.eta, cfg.cost, cfg.epsilon);
        sink.put("policy.txt", serialize_policy(RandomizedPolicy(sol.policy)));
        std::ostringstream meta;
        meta << "lambda," << format_double(sol.lambda) << "\n"
             << "dual_value," << format_double(sol.dual_value) << "\n";
        sink.put("solution.csv", meta.str());
    }
    return sink.finish();
}

Manifest run_redfair(const ExperimentConfig& cfg) {
    Workbench wb = load_workbench(cfg);
    const ConstraintSystem sys = build_system(cfg, wb.ds, wb.eta);
    const SaddleResult res = redfair(wb.ds, sys, wb.eta, cfg.cost, cfg.redfair);
    Sink sink(cfg.out_dir);
    sink.put("policy.txt", serialize_policy(res.Q));
    sink.put("trace.csv", res.trace_csv());
    std::ostringstream meta;
    meta << "value," << format_double(res.value) << "\n"
         << "gap," << format_double(res.gap) << "\n"
         << "converged," << (res.converged ? 1 : 0) << "\n"
         << "iterations," << res.iterations << "\n";
    sink.put("summary.csv", meta.str());
    return sink.finish();
}

Manifest run_two_stage(const ExperimentConfig& cfg) {
    Workbench wb = load_workbench(cfg);
    NuisanceMaker nm;
    if (cfg.mode == ExperimentConfig::Mode::simulate && cfg.oracle_nuisance) {
        const DGPSpec spec = *wb.dgp;
        nm = [spec](const Dataset& d) { return oracle_bundle(spec, d); };
    } else {
        const NuisanceConfig ncfg = cfg.nuisance;
        nm = [ncfg](const Dataset& d) { return fit_nuisances(d, ncfg); };
    }
    const ExperimentConfig cfg_copy = cfg;
    SystemMaker sm = [cfg_copy](const Dataset& d, const NuisanceBundle& eta) {
        return build_system(cfg_copy, d, eta);
    };
    const TwoStageResult res = two_stage(wb.ds, sm, nm, cfg.cost, cfg.redfair);
    Sink sink(cfg.out_dir);
    sink.put("policy.txt", serialize_policy(res.final_policy));
    sink.put("stage1_policy.txt", serialize_policy(res.stage1.Q));
    sink.put("trace_stage1.csv", res.stage1.trace_csv());
    sink.put("trace.csv", res.stage2.trace_csv());
    std::ostringstream meta;
    meta << "fallback," << (res.fallback ? 1 : 0) << "\n"
         << "epsilon_n," << format_double(res.epsilon_n) << "\n"
         << "stage1_value," << format_double(res.stage1.value) << "\n"
         << "stage2_value," << format_double(res.stage2.value) << "\n"
         << "binding_rows," << res.binding.size() << "\n";
    sink.put("summary.csv", meta.str());
    return sink.finish();
}

Manifest run_robust_bounds(const ExperimentConfig& cfg) {
    Workbench wb = load_workbench(cfg);
    const UncertaintySet uset =
        UncertaintySet::constant(cfg.robust_lo, cfg.robust_hi, cfg.robust_monotone);
    const OverlapPartition part = detect_overlap(wb.ds, wb.eta, cfg.overlap_threshold);
    Sink sink(cfg.out_dir);

    const RandomizedPolicy pol = fixed_policy(cfg, wb, cfg.cost);
    std::vector<std::tuple<std::string, double, double, double, std::string>> rows;
    if (wb.ds.y_binary()) {
        const auto [lo, hi] =
            binary_constant_bound(wb.ds, pol, wb.eta, uset, part, cfg.cost);
        rows.emplace_back(cfg.policy, lo, hi, std::isnan(cfg.epsilon) ? 0.0 : cfg.epsilon,
                          "interval");
    }
    const double robj = robust_lp_objective(wb.ds, pol, wb.eta, uset, part, cfg.cost);
    rows.emplace_back(cfg.policy + "_worst_case", robj, robj,
                      std::isnan(cfg.epsilon) ? 0.0 : cfg.epsilon, "worst_case");

    if (!std::isnan(cfg.epsilon)) {
        const auto sol = solve_robust_threshold(wb.ds, wb.eta, uset, part, cfg.cost, cfg.epsilon);
        sink.put("policy.txt", serialize_policy(RandomizedPolicy(sol.policy)));
        PolicyEvalContext ctx;
        ctx.eta = &wb.eta;
        ctx.cost = &cfg.cost;
        ctx.uset = &uset;
        ctx.rule = &part.rule;
        const RandomizedPolicy rq(sol.policy);
        const double v = robust_lp_objective(wb.ds, rq, wb.eta, uset, part, cfg.cost, &ctx);
        rows.emplace_back("robust_threshold", v, v, cfg.epsilon, "worst_case");
    }
    sink.put("bounds.csv", bounds_csv(rows));
    return sink.finish();
}

Manifest run_compare_estimators(const ExperimentConfig& cfg) {
    Workbench wb = load_workbench(cfg);
    const RandomizedPolicy pol = fixed_policy(cfg, wb, cfg.cost);
    std::vector<std::pair<std::string, ValueEstimate>> rows;
    rows.emplace_back("dm", dm_value(wb.ds, pol, wb.eta, cfg.cost));
    rows.emplace_back("ipw", ipw_value(wb.ds, pol, wb.eta, cfg.cost));
    rows.emplace_back("dr", dr_value(wb.ds, pol, wb.eta, cfg.cost));
    rows.emplace_back("cv", cv_value(wb.ds, pol, wb.eta, cfg.cost));
    Sink sink(cfg.out_dir);
    sink.put("estimators.csv", estimates_csv(rows));
    return sink.finish();
}

Manifest run_feasible_range(const ExperimentConfig& cfg) {
    Workbench wb = load_workbench(cfg);
    const auto [lo, hi] = feasible_epsilon_range(wb.ds, wb.eta);
    Sink sink(cfg.out_dir);
    std::ostringstream os;
    os << "eps_min," << format_double(lo) << "\n"
       << "eps_max," << format_double(hi) << "\n";
    sink.put("range.csv", os.str());
    return sink.finish();
}

}  // namespace encpol
