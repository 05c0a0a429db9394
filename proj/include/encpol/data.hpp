#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "encpol/common.hpp"

namespace encpol {

// Utility weights. A realized (r, t, y) is worth w_y*y + w_t*t + w_r*r and
// every solver in this library maximizes expected utility; costs are encoded
// as negative weights.
struct CostSpec {
    double w_y = 1.0;
    double w_t = 0.0;
    double w_r = 0.0;

    double utility(int r, int t, double y) const { return w_y * y + w_t * t + w_r * r; }
};

struct Observation {
    std::vector<double> x;
    std::string a;
    int r = 0;
    int t = 0;
    double y = 0.0;
};

// Immutable after construction; safe for concurrent reads.
class Dataset {
  public:
    std::size_t size() const { return n_; }
    std::size_t dim() const { return dim_; }

    std::span<const double> x(std::size_t i) const {
        return std::span<const double>(x_.data() + i * dim_, dim_);
    }
    int group(std::size_t i) const { return group_[i]; }
    const std::string& group_label(std::size_t i) const { return group_set_[group_[i]]; }
    int r(std::size_t i) const { return r_[i]; }
    int t(std::size_t i) const { return t_[i]; }
    double y(std::size_t i) const { return y_[i]; }

    Observation row(std::size_t i) const;

    const std::vector<std::string>& group_set() const { return group_set_; }
    const std::vector<std::string>& covariate_names() const { return covariate_names_; }
    std::size_t n_groups() const { return group_set_.size(); }
    int group_index(const std::string& label) const;  // -1 when absent
    bool y_binary() const { return y_binary_; }

    // Rows with group index g, in dataset order.
    std::vector<std::size_t> rows_of_group(int g) const;

    Dataset subset(const std::vector<std::size_t>& rows) const;

    friend class DatasetBuilder;

  private:
    std::size_t n_ = 0, dim_ = 0;
    std::vector<double> x_;  // n*dim, row-major
    std::vector<int> group_, r_, t_;
    std::vector<double> y_;
    std::vector<std::string> group_set_;
    std::vector<std::string> covariate_names_;
    bool y_binary_ = true;
};

class DatasetBuilder {
  public:
    explicit DatasetBuilder(std::vector<std::string> covariate_names)
        : covariate_names_(std::move(covariate_names)) {}

    // Optional: fixes group index order. Groups never seen in a row are
    // dropped at finalize; without a declared order labels are sorted.
    void declare_groups(const std::vector<std::string>& order) { declared_ = order; }

    void add_row(std::span<const double> x, const std::string& group, int r, int t, double y);

    Dataset finalize();

  private:
    std::vector<std::string> covariate_names_;
    std::vector<std::string> declared_;
    std::vector<double> xs_;
    std::vector<std::string> groups_;
    std::vector<int> rs_, ts_;
    std::vector<double> ys_;
};

// Column roles for CSV ingestion. Parsed from key=value lines:
//   group=<col>  r=<col>  t=<col>  y=<col>  covariates=<comma separated>
struct CsvSchema {
    std::string group_col, r_col, t_col, y_col;
    std::vector<std::string> covariate_cols;

    static CsvSchema parse(std::istream& in);
    static CsvSchema parse_file(const std::string& path);
};

// UTF-8, comma-delimited, header row required. Categorical covariates are
// one-hot encoded with levels in sorted order; missing values are rejected.
Dataset load_dataset(std::istream& in, const CsvSchema& schema);
Dataset load_dataset_file(const std::string& csv_path, const CsvSchema& schema);

// Writes the encoded dataset (numeric covariates) with 17 significant digits,
// so load_dataset(write_dataset(ds)) reproduces ds bit-for-bit.
void write_dataset(std::ostream& out, const Dataset& ds);
CsvSchema roundtrip_schema(const Dataset& ds);

struct ValidationReport {
    struct GroupStats {
        std::string group;
        std::size_t count = 0;
        double p_r1 = 0.0;                 // empirical P(R=1 | A)
        std::size_t n_rt[2][2] = {{0, 0}, {0, 0}};  // counts by (r, t)
        double p_t1_given_r[2] = {0.0, 0.0};        // empirical P(T=1 | R, A)
    };
    std::vector<GroupStats> groups;
    // (r, group label) cells with zero observations: candidate no-overlap.
    std::vector<std::pair<int, std::string>> empty_cells;

    std::string to_string() const;
};

// Report-only; never mutates and is deterministic.
ValidationReport validate(const Dataset& ds);

}  // namespace encpol
