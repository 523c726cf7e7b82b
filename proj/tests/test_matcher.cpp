#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "replyfx/errors.hpp"
#include "replyfx/matcher.hpp"
#include "replyfx/rng.hpp"

using namespace replyfx;
using namespace replyfx::matcher;

namespace {

// Exhaustive min-cost assignment of min(rows, cols) units, for checking the
// solver on small instances.
double brute_force_cost(const Eigen::MatrixXd& costs) {
    Eigen::MatrixXd c = costs;
    if (c.rows() > c.cols()) c = costs.transpose();
    const int nr = static_cast<int>(c.rows());
    const int nc = static_cast<int>(c.cols());
    std::vector<bool> used(static_cast<std::size_t>(nc), false);
    double best = std::numeric_limits<double>::infinity();
    auto recurse = [&](auto&& self, int row, double acc) -> void {
        if (acc >= best) return;
        if (row == nr) {
            best = acc;
            return;
        }
        for (int j = 0; j < nc; ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            used[static_cast<std::size_t>(j)] = true;
            self(self, row + 1, acc + c(row, j));
            used[static_cast<std::size_t>(j)] = false;
        }
    };
    recurse(recurse, 0, 0.0);
    return best;
}

Eigen::MatrixXd random_costs(Rng& rng, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform() * 10.0;
    return m;
}

void check_valid_triplets(const TripletSet& set, int na, int nb, int nc) {
    std::vector<bool> seen_a(static_cast<std::size_t>(na)), seen_b(static_cast<std::size_t>(nb)),
        seen_c(static_cast<std::size_t>(nc));
    for (const auto& t : set.triplets) {
        REQUIRE(t[0] >= 0);
        REQUIRE(t[0] < na);
        REQUIRE(t[1] < nb);
        REQUIRE(t[2] < nc);
        CHECK_FALSE(seen_a[static_cast<std::size_t>(t[0])]);
        CHECK_FALSE(seen_b[static_cast<std::size_t>(t[1])]);
        CHECK_FALSE(seen_c[static_cast<std::size_t>(t[2])]);
        seen_a[static_cast<std::size_t>(t[0])] = true;
        seen_b[static_cast<std::size_t>(t[1])] = true;
        seen_c[static_cast<std::size_t>(t[2])] = true;
    }
}

}  // namespace

TEST_SUITE("matcher") {

TEST_CASE("pair matching is exact on a hand instance") {
    Eigen::MatrixXd costs(3, 3);
    costs << 4, 1, 3, 2, 0, 5, 3, 2, 2;
    const auto asg = optimal_pair_match(costs);
    CHECK(asg.total_cost == doctest::Approx(5.0));
    REQUIRE(asg.pairs.size() == 3);
    CHECK(asg.pairs[0] == std::pair<int, int>{0, 1});
    CHECK(asg.pairs[1] == std::pair<int, int>{1, 0});
    CHECK(asg.pairs[2] == std::pair<int, int>{2, 2});
}

TEST_CASE("pair matching agrees with brute force on random instances") {
    Rng rng(42);
    for (int trial = 0; trial < 40; ++trial) {
        const int rows = 1 + static_cast<int>(rng.uniform_int(6));
        const int cols = 1 + static_cast<int>(rng.uniform_int(6));
        const auto costs = random_costs(rng, rows, cols);
        const auto asg = optimal_pair_match(costs);
        REQUIRE(static_cast<int>(asg.pairs.size()) == std::min(rows, cols));
        CHECK(asg.total_cost == doctest::Approx(brute_force_cost(costs)).epsilon(1e-10));
        CHECK(std::is_sorted(asg.pairs.begin(), asg.pairs.end()));

        double recomputed = 0.0;
        std::vector<bool> row_used(static_cast<std::size_t>(rows)),
            col_used(static_cast<std::size_t>(cols));
        for (auto [i, j] : asg.pairs) {
            CHECK_FALSE(row_used[static_cast<std::size_t>(i)]);
            CHECK_FALSE(col_used[static_cast<std::size_t>(j)]);
            row_used[static_cast<std::size_t>(i)] = true;
            col_used[static_cast<std::size_t>(j)] = true;
            recomputed += costs(i, j);
        }
        CHECK(recomputed == doctest::Approx(asg.total_cost));
    }
}

TEST_CASE("pair matching rejects non-finite costs and empty input") {
    Eigen::MatrixXd costs(1, 2);
    costs << 1.0, std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS((void)optimal_pair_match(costs), InputError);
    CHECK(optimal_pair_match(Eigen::MatrixXd(0, 3)).pairs.empty());
}

TEST_CASE("third-group attachment solves the pair-to-unit assignment") {
    Assignment pairs;
    pairs.pairs = {{0, 0}, {1, 1}};
    pairs.total_cost = 0.3;
    Eigen::MatrixXd d_ac(2, 2), d_bc(2, 2);
    d_ac << 1, 5, 5, 1;
    d_bc << 2, 6, 6, 2;
    const auto attached = attach_third_group(pairs, d_ac, d_bc);
    REQUIRE(attached.triplets.size() == 2);
    CHECK(attached.triplets[0] == std::array<int, 3>{0, 0, 0});
    CHECK(attached.triplets[1] == std::array<int, 3>{1, 1, 1});
    CHECK(attached.total_cost == doctest::Approx(6.3));

    Assignment three;
    three.pairs = {{0, 0}, {1, 1}, {2, 2}};
    CHECK_THROWS_AS((void)attach_third_group(three, d_ac, d_bc), SizeError);
    Eigen::MatrixXd ragged(2, 3);
    ragged.setZero();
    CHECK_THROWS_AS((void)attach_third_group(pairs, d_ac, ragged), InputError);
    CHECK(attach_third_group(Assignment{}, d_ac, d_bc).triplets.empty());
}

TEST_CASE("improvement passes never raise the cost and settle") {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 3 + static_cast<int>(rng.uniform_int(3));
        const auto d_ab = random_costs(rng, n, n);
        const auto d_ac = random_costs(rng, n, n);
        const auto d_bc = random_costs(rng, n, n);

        TripletSet seed;
        for (int i = 0; i < n; ++i) seed.triplets.push_back({i, i, i});
        seed.total_cost = triplet_cost(seed.triplets, d_ab, d_ac, d_bc);

        int passes = 0;
        const auto improved = improve_triplets(seed, d_ab, d_ac, d_bc, 20, &passes);
        CHECK(improved.total_cost <= seed.total_cost + 1e-9);
        CHECK(passes >= 1);
        CHECK(passes <= 20);
        CHECK(improved.total_cost ==
              doctest::Approx(triplet_cost(improved.triplets, d_ab, d_ac, d_bc)));
        check_valid_triplets(improved, n, n, n);

        // A settled set does not move again.
        int again = 0;
        const auto stable = improve_triplets(improved, d_ab, d_ac, d_bc, 20, &again);
        CHECK(again == 1);
        CHECK(stable.total_cost == doctest::Approx(improved.total_cost));
    }
}

TEST_CASE("triplet match produces disjoint triplets from any starting pair") {
    Rng rng(19);
    const int na = 6, nb = 4, nc = 5;
    const auto d_ab = random_costs(rng, na, nb);
    const auto d_ac = random_costs(rng, na, nc);
    const auto d_bc = random_costs(rng, nb, nc);

    for (auto start : {StartingPair::AB, StartingPair::AC, StartingPair::BC}) {
        const auto run = triplet_match(d_ab, d_ac, d_bc, start);
        CHECK(run.starting_pair == start);
        REQUIRE(run.triplets.triplets.size() == 4); // smallest group
        check_valid_triplets(run.triplets, na, nb, nc);
        CHECK(run.triplets.total_cost ==
              doctest::Approx(triplet_cost(run.triplets.triplets, d_ab, d_ac, d_bc)));
        CHECK(run.iterations >= 1);
    }

    CHECK_THROWS_AS((void)triplet_match(d_ab, d_ac, Eigen::MatrixXd(nb, nc + 1), StartingPair::AB),
                    InputError);
    const auto empty = triplet_match(Eigen::MatrixXd(0, 0), Eigen::MatrixXd(0, nc),
                                     Eigen::MatrixXd(0, nc), StartingPair::AB);
    CHECK(empty.triplets.triplets.empty());
}

TEST_CASE("triplet match on a designed instance finds the aligned optimum") {
    Eigen::MatrixXd d_ab(2, 2), d_ac(2, 2), d_bc(2, 2);
    d_ab << 0.1, 9, 9, 0.2;
    d_ac << 1, 5, 5, 1;
    d_bc << 2, 6, 6, 2;
    const auto run = triplet_match(d_ab, d_ac, d_bc, StartingPair::AB);
    REQUIRE(run.triplets.triplets.size() == 2);
    CHECK(run.triplets.triplets[0] == std::array<int, 3>{0, 0, 0});
    CHECK(run.triplets.triplets[1] == std::array<int, 3>{1, 1, 1});
    CHECK(run.triplets.total_cost == doctest::Approx(6.3));

    // Caliper keeps triplets up to and including the bound.
    TripletMatchOptions caliper_mid;
    caliper_mid.caliper = 3.15;
    const auto trimmed = triplet_match(d_ab, d_ac, d_bc, StartingPair::AB, caliper_mid);
    REQUIRE(trimmed.triplets.triplets.size() == 1);
    CHECK(trimmed.triplets.triplets[0] == std::array<int, 3>{0, 0, 0});
    CHECK(trimmed.triplets.total_cost == doctest::Approx(3.1));

    TripletMatchOptions caliper_edge;
    caliper_edge.caliper = 3.2;
    CHECK(triplet_match(d_ab, d_ac, d_bc, StartingPair::AB, caliper_edge)
              .triplets.triplets.size() == 2);
}

TEST_CASE("surplus starting pairs are trimmed costliest-first") {
    // Three (a,b) pairs but only two c units; the costliest pair must go.
    Eigen::MatrixXd d_ab(3, 3), d_ac(3, 2), d_bc(3, 2);
    d_ab << 0.1, 9, 9, 9, 0.5, 9, 9, 9, 0.3;
    d_ac.setConstant(1.0);
    d_bc.setConstant(1.0);
    const auto run = triplet_match(d_ab, d_ac, d_bc, StartingPair::AB);
    REQUIRE(run.triplets.triplets.size() == 2);
    std::vector<int> a_used;
    for (const auto& t : run.triplets.triplets) a_used.push_back(t[0]);
    std::sort(a_used.begin(), a_used.end());
    CHECK(a_used == std::vector<int>{0, 2}); // pair (1,1) cost 0.5 dropped
}

TEST_CASE("best run selection prefers balance then cost then order") {
    auto mk_run = [](double post_a, double post_b, double cost) {
        MatchRun run;
        run.triplets.total_cost = cost;
        balance::BalanceCell cell_a{"x", 0, 1, 0.5, post_a};
        balance::BalanceCell cell_b{"y", 0, 1, 0.5, post_b};
        run.balance.cells = {cell_a, cell_b};
        return run;
    };
    // run0 passes one cell, run1 passes both, run2 passes both cheaper.
    std::vector<MatchRun> runs{mk_run(0.05, 0.5, 1.0), mk_run(0.05, 0.05, 9.0),
                               mk_run(0.09, 0.01, 2.0)};
    CHECK(&select_best_run(runs, 0.1) == &runs[2]);
    runs[2].triplets.total_cost = 9.0; // tie on pass count and cost: first wins
    CHECK(&select_best_run(runs, 0.1) == &runs[1]);
    CHECK_THROWS_AS((void)select_best_run({}, 0.1), InputError);
}

TEST_CASE("binary match samples a seeded treated subset") {
    Rng rng(23);
    const auto costs = random_costs(rng, 6, 8);

    const auto all = binary_match(costs, 1.0, 5);
    CHECK(all.pairs.size() == 6);
    CHECK(all.total_cost == doctest::Approx(brute_force_cost(costs)).epsilon(1e-10));

    const auto half = binary_match(costs, 0.5, 5);
    CHECK(half.pairs.size() == 3);
    for (auto [i, j] : half.pairs) {
        CHECK(i < 6);
        CHECK(j < 8);
    }
    const auto repeat = binary_match(costs, 0.5, 5);
    CHECK(repeat.pairs == half.pairs);
    CHECK(repeat.total_cost == doctest::Approx(half.total_cost));

    // ceil(0.34 * 6) = 3 sampled units.
    CHECK(binary_match(costs, 0.34, 1).pairs.size() == 3);

    CHECK_THROWS_AS((void)binary_match(costs, 0.0, 1), InputError);
    CHECK_THROWS_AS((void)binary_match(costs, 1.5, 1), InputError);
    CHECK_THROWS_AS((void)binary_match(Eigen::MatrixXd(2, 0), 1.0, 1), InputError);
    CHECK_THROWS_AS((void)binary_match(random_costs(rng, 6, 3), 1.0, 1), SizeError);
}

TEST_CASE("cluster matching pairs each cluster with its twin") {
    std::vector<ClusterFeatures> clusters{{"c1", 100, 50, 0.5}, {"c2", 200, 80, 0.9}};
    std::vector<ClusterFeatures> candidates{{"far", 400, 10, 0.1},
                                            {"twin2", 205, 82, 0.88},
                                            {"twin1", 98, 51, 0.52},
                                            {"mid", 150, 65, 0.7}};
    const auto pairs = match_clusters(clusters, candidates);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0] == std::pair<std::string, std::string>{"c1", "twin1"});
    CHECK(pairs[1] == std::pair<std::string, std::string>{"c2", "twin2"});

    CHECK(match_clusters({}, candidates).empty());
    CHECK_THROWS_AS((void)match_clusters(candidates, clusters), SizeError);
}

TEST_CASE("starting pair names are stable") {
    CHECK(starting_pair_name(StartingPair::AB) == std::string("ab"));
    CHECK(starting_pair_name(StartingPair::AC) == std::string("ac"));
    CHECK(starting_pair_name(StartingPair::BC) == std::string("bc"));
}

}  // TEST_SUITE
