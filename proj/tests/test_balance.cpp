#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "replyfx/balance.hpp"
#include "replyfx/errors.hpp"
#include "replyfx/ingest.hpp"

using namespace replyfx;
using namespace replyfx::balance;

namespace {

ingest::UnitRecord unit(double score, std::vector<double> embedding) {
    ingest::UnitRecord u;
    u.covariates.score = score;
    u.covariates.embedding = std::move(embedding);
    return u;
}

// Three units per arm; triplets keep the first two of each arm, dropping the
// outliers (scores 30 and 100) from arms 0 and 2.
struct Fixture {
    std::vector<ingest::UnitRecord> units;
    std::array<std::vector<int>, 3> arm_units;
    std::vector<std::array<int, 3>> triplets;

    Fixture() {
        units = {unit(1.0, {1, 0}),  unit(2.0, {0, 1}),  unit(30.0, {1, 1}),
                 unit(1.1, {1, 0}),  unit(2.1, {0, 1}),  unit(3.0, {1, 1}),
                 unit(0.9, {1, 0}),  unit(1.9, {1, 0}),  unit(100.0, {1, 1})};
        arm_units = {{{0, 1, 2}, {3, 4, 5}, {6, 7, 8}}};
        triplets = {{0, 0, 0}, {1, 1, 1}};
    }
};

const BalanceCell& find_cell(const BalanceReport& report, const std::string& covariate, int arm_a,
                             int arm_b) {
    for (const auto& cell : report.cells)
        if (cell.covariate == covariate && cell.arm_a == arm_a && cell.arm_b == arm_b) return cell;
    REQUIRE_MESSAGE(false, "cell not found: " << covariate);
    return report.cells.front();
}

}  // namespace

TEST_SUITE("balance") {

TEST_CASE("smd matches the pooled-sd formula") {
    CHECK(smd({1, 2, 3}, {3, 4, 5}) == doctest::Approx(2.0));
    CHECK(smd({1, 2, 3}, {1, 2, 3}) == doctest::Approx(0.0));
    CHECK(smd({5, 5}, {5, 5}) == 0.0);
    CHECK(std::isinf(smd({5, 5}, {6, 6})));
    CHECK_THROWS_AS((void)smd({}, {1.0}), InputError);
}

TEST_CASE("report computes pre over groups and post over matches") {
    const Fixture f;
    const auto report = balance_report(f.units, f.arm_units, f.triplets, 0.1);
    CHECK(report.threshold == 0.1);
    CHECK(report.cells.size() == 36); // 12 scalars x 3 arm pairs

    const auto& cell = find_cell(report, "score", 0, 1);
    // Matched units exclude the score-30 outlier, so balance improves.
    CHECK(cell.post < cell.pre);
    CHECK(cell.post == doctest::Approx(0.1 / std::sqrt(0.5)));

    // Constant covariates with equal means balance exactly.
    const auto& sent = find_cell(report, "sentiment", 0, 2);
    CHECK(sent.pre == 0.0);
    CHECK(sent.post == 0.0);

    CHECK(report.matched_cosine[0] == doctest::Approx(1.0)); // (0,1)
    CHECK(report.matched_cosine[1] == doctest::Approx(0.5)); // (0,2)
    CHECK(report.matched_cosine[2] == doctest::Approx(0.5)); // (1,2)

    CHECK(report.pre_pass_count <= static_cast<int>(report.cells.size()));
    CHECK(report.post_pass_count == pass_count(report, 0.1));
}

TEST_CASE("report without triplets marks post columns undefined") {
    const Fixture f;
    const auto report = balance_report(f.units, f.arm_units, {}, 0.1);
    for (const auto& cell : report.cells) CHECK(std::isnan(cell.post));
    for (double c : report.matched_cosine) CHECK(std::isnan(c));
    CHECK(report.post_pass_count == 0);
    CHECK(pass_count(report, 0.1) == 0);
}

TEST_CASE("pca columns append one cell per component") {
    const Fixture f;
    Eigen::MatrixXd scores(9, 2);
    for (int i = 0; i < 9; ++i) {
        scores(i, 0) = i;
        scores(i, 1) = 2.0 * i;
    }
    const auto report = balance_report(f.units, f.arm_units, f.triplets, 0.1, &scores);
    CHECK(report.cells.size() == 42);
    (void)find_cell(report, "pca_1", 0, 1);
    (void)find_cell(report, "pca_2", 1, 2);

    Eigen::MatrixXd misaligned(4, 2);
    CHECK_THROWS_AS((void)balance_report(f.units, f.arm_units, f.triplets, 0.1, &misaligned),
                    InputError);
}

TEST_CASE("pass counting is strict at the threshold") {
    BalanceReport report;
    report.cells = {{"a", 0, 1, 0.5, 0.05},
                    {"b", 0, 1, 0.5, 0.1},
                    {"c", 0, 1, 0.5, 0.2},
                    {"d", 0, 1, 0.5, std::numeric_limits<double>::quiet_NaN()}};
    CHECK(pass_count(report, 0.1) == 1);
    CHECK(pass_count(report, 0.21) == 3);
    CHECK(pass_count(report, 0.0) == 0);
}

TEST_CASE("formatted report names the arm pairs and threshold") {
    const Fixture f;
    const auto report = balance_report(f.units, f.arm_units, f.triplets, 0.1);
    const auto text = format_report(report);
    CHECK(text.find("noreply-vs-cs") != std::string::npos);
    CHECK(text.find("noreply-vs-other") != std::string::npos);
    CHECK(text.find("cs-vs-other") != std::string::npos);
    CHECK(text.find("score") != std::string::npos);
    CHECK(text.find("post cells |SMD| < 0.1") != std::string::npos);
    CHECK(text.find(" of 36") != std::string::npos);
}

}  // TEST_SUITE
