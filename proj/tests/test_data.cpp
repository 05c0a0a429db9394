#include <sstream>

#include "doctest.h"
#include "encpol/common.hpp"
#include "encpol/data.hpp"
#include "encpol/dgp.hpp"

using namespace encpol;

namespace {

Dataset load_str(const std::string& csv, const std::string& schema_txt) {
    std::istringstream s(schema_txt);
    const CsvSchema schema = CsvSchema::parse(s);
    std::istringstream in(csv);
    return load_dataset(in, schema);
}

const char* kSchema = "group=g\nr=r\nt=t\ny=y\ncovariates=x1,x2\n";

}  // namespace

TEST_CASE("load preserves rows in file order") {
    const auto ds = load_str(
        "x1,x2,g,r,t,y\n"
        "0.5,1,a,0,1,0\n"
        "0.25,2,a,1,0,1\n"
        "1.5,3,b,1,1,1\n",
        kSchema);
    CHECK(ds.size() == 3);
    CHECK(ds.r(0) == 0);
    CHECK(ds.r(1) == 1);
    CHECK(ds.r(2) == 1);
    CHECK(ds.x(1)[0] == 0.25);
    CHECK(ds.group_label(2) == "b");
}

TEST_CASE("bad recommendation value names the row") {
    const std::string csv =
        "x1,x2,g,r,t,y\n"
        "1,1,a,0,0,0\n"
        "1,1,a,1,0,0\n"
        "1,1,b,0,0,0\n"
        "1,1,b,1,1,1\n"
        "1,1,a,2,0,0\n";
    try {
        load_str(csv, kSchema);
        FAIL("expected parse error");
    } catch (const parse_error& e) {
        CHECK(std::string(e.what()).find("row 5") != std::string::npos);
    }
}

TEST_CASE("group levels are sorted") {
    const auto ds = load_str(
        "x1,x2,g,r,t,y\n"
        "1,1,b,0,0,0\n"
        "1,1,a,1,0,0\n",
        kSchema);
    CHECK(ds.group_set() == std::vector<std::string>{"a", "b"});
}

TEST_CASE("categorical covariates one-hot encode by sorted level") {
    const auto ds = load_str(
        "x1,x2,g,r,t,y\n"
        "red,1,a,0,0,0\n"
        "blue,2,a,1,0,0\n"
        "red,3,a,1,1,1\n",
        kSchema);
    CHECK(ds.covariate_names() == std::vector<std::string>{"x1=blue", "x1=red", "x2"});
    CHECK(ds.x(0)[0] == 0.0);  // blue indicator
    CHECK(ds.x(0)[1] == 1.0);  // red indicator
    CHECK(ds.x(1)[0] == 1.0);
}

TEST_CASE("missing values are rejected") {
    CHECK_THROWS_AS(load_str("x1,x2,g,r,t,y\n1,,a,0,0,0\n", kSchema), parse_error);
    CHECK_THROWS_AS(load_str("x1,x2,g,r,t,y\n1,NA,a,0,0,0\n", kSchema), parse_error);
}

TEST_CASE("empty file and missing column errors") {
    CHECK_THROWS_AS(load_str("x1,x2,g,r,t,y\n", kSchema), parse_error);
    CHECK_THROWS_AS(load_str("x1,g,r,t,y\n1,a,0,0,0\n", kSchema), schema_error);
}

TEST_CASE("schema requires all roles") {
    std::istringstream s("group=g\nr=r\nt=t\n");
    CHECK_THROWS_AS(CsvSchema::parse(s), schema_error);
}

TEST_CASE("write then load is the identity") {
    DGPSpec spec;
    spec.outcome = OutcomeKind::gaussian;
    spec.sigma = 0.7;
    spec.cells = {
        {{0.12345678901234567, -1.0}, "a", 0.25, 0.5, 0.8, 0.2, 1.7, -0.3},
        {{1.0 / 3.0, 2.0}, "a", 0.25, 0.4, 0.7, 0.1, 0.9, 0.2},
        {{0.12345678901234567, -1.0}, "b", 0.25, 0.6, 0.9, 0.3, -2.5, 0.0},
        {{1.0 / 3.0, 2.0}, "b", 0.25, 0.5, 0.6, 0.2, 0.4, 0.1},
    };
    for (std::uint64_t seed : {1ull, 7ull, 99ull}) {
        const Dataset ds = generate(spec, 200, seed);
        std::ostringstream out;
        write_dataset(out, ds);
        std::istringstream in(out.str());
        const Dataset back = load_dataset(in, roundtrip_schema(ds));
        REQUIRE(back.size() == ds.size());
        CHECK(back.group_set() == ds.group_set());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            for (std::size_t j = 0; j < ds.dim(); ++j) CHECK(back.x(i)[j] == ds.x(i)[j]);
            CHECK(back.y(i) == ds.y(i));
            CHECK(back.r(i) == ds.r(i));
            CHECK(back.t(i) == ds.t(i));
            CHECK(back.group_label(i) == ds.group_label(i));
        }
    }
}

TEST_CASE("validate flags empty recommendation cells") {
    const auto ds = load_str(
        "x1,x2,g,r,t,y\n"
        "1,1,a,0,0,0\n"
        "1,1,a,1,1,1\n"
        "1,1,b,1,0,0\n",
        kSchema);
    const auto rep = validate(ds);
    REQUIRE(rep.empty_cells.size() == 1);
    CHECK(rep.empty_cells[0].first == 0);
    CHECK(rep.empty_cells[0].second == "b");
}

TEST_CASE("validate on balanced data has no flags") {
    std::string csv = "x1,x2,g,r,t,y\n";
    for (const char* g : {"a", "b"})
        for (int r = 0; r < 2; ++r)
            for (int t = 0; t < 2; ++t)
                csv += "1,1," + std::string(g) + "," + std::to_string(r) + "," +
                       std::to_string(t) + ",0\n";
    const auto ds = load_str(csv, kSchema);
    const auto rep = validate(ds);
    CHECK(rep.empty_cells.empty());
    for (const auto& g : rep.groups) {
        CHECK(g.p_r1 == 0.5);
        for (int r = 0; r < 2; ++r)
            for (int t = 0; t < 2; ++t) CHECK(g.n_rt[r][t] == 1);
    }
}

TEST_CASE("validate single row") {
    const auto ds = load_str("x1,x2,g,r,t,y\n1,1,a,1,1,1\n", kSchema);
    const auto rep = validate(ds);
    REQUIRE(rep.groups.size() == 1);
    CHECK(rep.groups[0].count == 1);
    CHECK(rep.groups[0].n_rt[1][1] == 1);
    CHECK(rep.empty_cells.size() == 1);  // r=0 never observed
}

TEST_CASE("validate is idempotent") {
    const auto ds = load_str(
        "x1,x2,g,r,t,y\n"
        "1,1,a,0,0,0\n"
        "2,1,b,1,1,1\n",
        kSchema);
    const auto r1 = validate(ds);
    const auto r2 = validate(ds);
    CHECK(r1.to_string() == r2.to_string());
}
