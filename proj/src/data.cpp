#include "encpol/data.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace encpol {

Observation Dataset::row(std::size_t i) const {
    Observation o;
    auto xi = x(i);
    o.x.assign(xi.begin(), xi.end());
    o.a = group_label(i);
    o.r = r_[i];
    o.t = t_[i];
    o.y = y_[i];
    return o;
}

int Dataset::group_index(const std::string& label) const {
    for (std::size_t g = 0; g < group_set_.size(); ++g)
        if (group_set_[g] == label) return static_cast<int>(g);
    return -1;
}

std::vector<std::size_t> Dataset::rows_of_group(int g) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n_; ++i)
        if (group_[i] == g) out.push_back(i);
    return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
    DatasetBuilder b(covariate_names_);
    b.declare_groups(group_set_);
    for (std::size_t i : rows) b.add_row(x(i), group_label(i), r_[i], t_[i], y_[i]);
    return b.finalize();
}

void DatasetBuilder::add_row(std::span<const double> x, const std::string& group, int r, int t,
                             double y) {
    if (!covariate_names_.empty() && x.size() != covariate_names_.size())
        throw domain_error("row covariate dimension mismatch");
    if (!all_finite(x) || !std::isfinite(y))
        throw domain_error("non-finite value in row");
    if ((r != 0 && r != 1) || (t != 0 && t != 1))
        throw domain_error("r and t must be 0 or 1");
    xs_.insert(xs_.end(), x.begin(), x.end());
    groups_.push_back(group);
    rs_.push_back(r);
    ts_.push_back(t);
    ys_.push_back(y);
}

Dataset DatasetBuilder::finalize() {
    if (groups_.empty()) throw domain_error("empty dataset");
    Dataset ds;
    ds.covariate_names_ = covariate_names_;
    ds.dim_ = covariate_names_.size();
    ds.n_ = groups_.size();

    std::set<std::string> present(groups_.begin(), groups_.end());
    if (!declared_.empty()) {
        for (const auto& g : declared_)
            if (present.count(g)) ds.group_set_.push_back(g);
    } else {
        ds.group_set_.assign(present.begin(), present.end());  // sorted
    }

    ds.x_ = std::move(xs_);
    ds.r_ = std::move(rs_);
    ds.t_ = std::move(ts_);
    ds.y_ = std::move(ys_);
    ds.group_.resize(ds.n_);
    std::map<std::string, int> idx;
    for (std::size_t g = 0; g < ds.group_set_.size(); ++g) idx[ds.group_set_[g]] = (int)g;
    for (std::size_t i = 0; i < ds.n_; ++i) {
        auto it = idx.find(groups_[i]);
        if (it == idx.end()) throw domain_error("row group not in declared group set: " + groups_[i]);
        ds.group_[i] = it->second;
    }
    ds.y_binary_ = true;
    for (double y : ds.y_)
        if (y != 0.0 && y != 1.0) {
            ds.y_binary_ = false;
            break;
        }
    return ds;
}

// -------------------------------- schema ----------------------------------

CsvSchema CsvSchema::parse(std::istream& in) {
    CsvSchema s;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw schema_error("schema line missing '=': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "group") s.group_col = val;
        else if (key == "r") s.r_col = val;
        else if (key == "t") s.t_col = val;
        else if (key == "y") s.y_col = val;
        else if (key == "covariates") {
            for (auto& c : split(val, ','))
                if (!trim(c).empty()) s.covariate_cols.push_back(trim(c));
        } else {
            throw schema_error("unknown schema key: " + key);
        }
    }
    if (s.group_col.empty() || s.r_col.empty() || s.t_col.empty() || s.y_col.empty())
        throw schema_error("schema must name group, r, t and y columns");
    if (s.covariate_cols.empty()) throw schema_error("schema must name at least one covariate");
    return s;
}

CsvSchema CsvSchema::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open schema file: " + path);
    return parse(in);
}

// --------------------------------- CSV ------------------------------------

namespace {

std::vector<std::string> parse_csv_line(const std::string& line) {
    auto fields = split(line, ',');
    for (auto& f : fields) f = trim(f);
    return fields;
}

bool parse_number(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && std::isfinite(out);
}

bool is_missing(const std::string& s) {
    return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan";
}

}  // namespace

Dataset load_dataset(std::istream& in, const CsvSchema& schema) {
    std::string line;
    if (!std::getline(in, line)) throw parse_error("empty file: no header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = parse_csv_line(line);

    std::map<std::string, std::size_t> col_of;
    for (std::size_t c = 0; c < header.size(); ++c) col_of[header[c]] = c;
    auto need = [&](const std::string& name) {
        auto it = col_of.find(name);
        if (it == col_of.end()) throw schema_error("missing column: " + name);
        return it->second;
    };
    const std::size_t ci_group = need(schema.group_col);
    const std::size_t ci_r = need(schema.r_col);
    const std::size_t ci_t = need(schema.t_col);
    const std::size_t ci_y = need(schema.y_col);
    std::vector<std::size_t> ci_cov;
    for (const auto& c : schema.covariate_cols) ci_cov.push_back(need(c));

    // First pass: collect raw rows.
    std::vector<std::vector<std::string>> rows;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = parse_csv_line(line);
        if (fields.size() != header.size())
            throw parse_error("row " + std::to_string(lineno) + ": expected " +
                              std::to_string(header.size()) + " fields, got " +
                              std::to_string(fields.size()));
        rows.push_back(std::move(fields));
    }
    if (rows.empty()) throw parse_error("empty dataset: no data rows");

    // Decide numeric vs categorical per covariate column; collect levels.
    const std::size_t ncov = ci_cov.size();
    std::vector<bool> numeric(ncov, true);
    std::vector<std::set<std::string>> levels(ncov);
    for (std::size_t k = 0; k < ncov; ++k) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const std::string& cell = rows[i][ci_cov[k]];
            if (is_missing(cell))
                throw parse_error("row " + std::to_string(i + 1) + ": missing value in column " +
                                  schema.covariate_cols[k]);
            double tmp;
            if (!parse_number(cell, tmp)) numeric[k] = false;
        }
        if (!numeric[k])
            for (const auto& r : rows) levels[k].insert(r[ci_cov[k]]);
    }

    // Encoded covariate names: numeric columns keep their name, categorical
    // columns expand to one indicator per sorted level.
    std::vector<std::string> enc_names;
    for (std::size_t k = 0; k < ncov; ++k) {
        if (numeric[k]) {
            enc_names.push_back(schema.covariate_cols[k]);
        } else {
            for (const auto& lv : levels[k]) enc_names.push_back(schema.covariate_cols[k] + "=" + lv);
        }
    }

    DatasetBuilder b(enc_names);
    std::vector<double> xbuf;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& f = rows[i];
        const std::string rowname = "row " + std::to_string(i + 1);
        xbuf.clear();
        for (std::size_t k = 0; k < ncov; ++k) {
            const std::string& cell = f[ci_cov[k]];
            if (numeric[k]) {
                double v;
                if (!parse_number(cell, v))
                    throw parse_error(rowname + ": bad numeric value '" + cell + "' in column " +
                                      schema.covariate_cols[k]);
                xbuf.push_back(v);
            } else {
                for (const auto& lv : levels[k]) xbuf.push_back(cell == lv ? 1.0 : 0.0);
            }
        }
        auto parse_binary = [&](std::size_t ci, const std::string& colname) {
            double v;
            if (is_missing(f[ci]) || !parse_number(f[ci], v) || (v != 0.0 && v != 1.0))
                throw parse_error(rowname + ": column " + colname + " must be 0 or 1, got '" +
                                  f[ci] + "'");
            return static_cast<int>(v);
        };
        const int r = parse_binary(ci_r, schema.r_col);
        const int t = parse_binary(ci_t, schema.t_col);
        double y;
        if (is_missing(f[ci_y]) || !parse_number(f[ci_y], y))
            throw parse_error(rowname + ": bad outcome value '" + f[ci_y] + "'");
        if (is_missing(f[ci_group]))
            throw parse_error(rowname + ": missing group label");
        b.add_row(xbuf, f[ci_group], r, t, y);
    }
    return b.finalize();
}

Dataset load_dataset_file(const std::string& csv_path, const CsvSchema& schema) {
    std::ifstream in(csv_path);
    if (!in) throw config_error("cannot open data file: " + csv_path);
    return load_dataset(in, schema);
}

void write_dataset(std::ostream& out, const Dataset& ds) {
    for (const auto& c : ds.covariate_names()) out << c << ",";
    out << "group,r,t,y\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.x(i)) out << format_double(v) << ",";
        out << ds.group_label(i) << "," << ds.r(i) << "," << ds.t(i) << ","
            << format_double(ds.y(i)) << "\n";
    }
}

CsvSchema roundtrip_schema(const Dataset& ds) {
    CsvSchema s;
    s.group_col = "group";
    s.r_col = "r";
    s.t_col = "t";
    s.y_col = "y";
    s.covariate_cols = ds.covariate_names();
    return s;
}

// ------------------------------- validate ---------------------------------

ValidationReport validate(const Dataset& ds) {
    ValidationReport rep;
    const std::size_t G = ds.n_groups();
    rep.groups.resize(G);
    for (std::size_t g = 0; g < G; ++g) rep.groups[g].group = ds.group_set()[g];

    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto& gs = rep.groups[ds.group(i)];
        gs.count++;
        gs.n_rt[ds.r(i)][ds.t(i)]++;
    }
    for (auto& gs : rep.groups) {
        const std::size_t n_r1 = gs.n_rt[1][0] + gs.n_rt[1][1];
        const std::size_t n_r0 = gs.n_rt[0][0] + gs.n_rt[0][1];
        gs.p_r1 = gs.count ? static_cast<double>(n_r1) / gs.count : 0.0;
        gs.p_t1_given_r[0] = n_r0 ? static_cast<double>(gs.n_rt[0][1]) / n_r0 : 0.0;
        gs.p_t1_given_r[1] = n_r1 ? static_cast<double>(gs.n_rt[1][1]) / n_r1 : 0.0;
        for (int r = 0; r < 2; ++r)
            if (gs.n_rt[r][0] + gs.n_rt[r][1] == 0) rep.empty_cells.emplace_back(r, gs.group);
    }
    return rep;
}

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    os << "group,count,p_r1,n_r0t0,n_r0t1,n_r1t0,n_r1t1,p_t1_r0,p_t1_r1\n";
    for (const auto& g : groups) {
        os << g.group << "," << g.count << "," << format_double(g.p_r1) << "," << g.n_rt[0][0]
           << "," << g.n_rt[0][1] << "," << g.n_rt[1][0] << "," << g.n_rt[1][1] << ","
           << format_double(g.p_t1_given_r[0]) << "," << format_double(g.p_t1_given_r[1]) << "\n";
    }
    for (const auto& [r, g] : empty_cells)
        os << "empty cell: r=" << r << " group=" << g << "\n";
    return os.str();
}

}  // namespace encpol
