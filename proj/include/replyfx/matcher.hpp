#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "replyfx/balance.hpp"
#include "replyfx/errors.hpp"

namespace replyfx::matcher {

// Throughout this module groups A, B, C correspond to arms 0, 1, 2 (NoReply,
// Counterspeech, OtherReply); triplet entries are per-group positions in that
// order.

struct Assignment {
    std::vector<std::pair<int, int>> pairs; // sorted by first index
    double total_cost = 0.0;
};

struct TripletSet {
    std::vector<std::array<int, 3>> triplets;
    double total_cost = 0.0; // sum over triplets of the three pairwise distances
};

enum class StartingPair : int { AB = 0, AC = 1, BC = 2 };
const char* starting_pair_name(StartingPair p);

struct MatchRun {
    StartingPair starting_pair = StartingPair::AB;
    TripletSet triplets;
    balance::BalanceReport balance; // filled by the caller once units are known
    int iterations = 0;             // improvement passes executed
};

// Exact rectangular min-cost assignment (shortest augmenting paths with dual
// potentials). Matches min(rows, cols) units without replacement; costs must
// be finite.
Assignment optimal_pair_match(const Eigen::MatrixXd& costs);

// Attaches third-group units to existing (a,b) pairs by exactly solving the
// pairs x third-group assignment with cost d_ac(a,c) + d_bc(b,c). The returned
// total includes the original pair distances.
TripletSet attach_third_group(const Assignment& assignment, const Eigen::MatrixXd& d_ac,
                              const Eigen::MatrixXd& d_bc);

// Improvement passes: each arm in turn is exactly re-assigned (over all of
// that arm's units) against the fixed pairs formed by the other two arms.
// Stops after a pass without cost decrease, or after max_iters passes.
TripletSet improve_triplets(const TripletSet& input, const Eigen::MatrixXd& d_ab,
                            const Eigen::MatrixXd& d_ac, const Eigen::MatrixXd& d_bc,
                            int max_iters, int* passes_used = nullptr);

struct TripletMatchOptions {
    int max_improve_iters = 20;
    std::optional<double> caliper; // drop triplets costlier than this after improvement
};

// Pair-match the starting pair, attach the third group, improve. Match size is
// the smallest group; surplus pairs beyond the third group's size are dropped
// costliest-first before attaching.
MatchRun triplet_match(const Eigen::MatrixXd& d_ab, const Eigen::MatrixXd& d_ac,
                       const Eigen::MatrixXd& d_bc, StartingPair starting_pair,
                       const TripletMatchOptions& options = {});

// Highest post-match pass count wins; ties go to the lower total cost, then to
// starting-pair order.
const MatchRun& select_best_run(const std::vector<MatchRun>& runs, double smd_threshold = 0.1);

// Samples ceil(fraction * |treated|) treated rows (seeded) and optimally
// matches them against all controls. Pair first-indices refer to the original
// treated rows.
Assignment binary_match(const Eigen::MatrixXd& treated_by_control_costs, double treated_fraction,
                        std::uint64_t seed);

struct ClusterFeatures {
    std::string id;
    double p90_return = 0.0;
    double n_users = 0.0;
    double activity_rate = 0.0;
};

// 1:1 optimal Mahalanobis match of clusters to candidates on the three
// standardized features, without replacement.
std::vector<std::pair<std::string, std::string>> match_clusters(
    const std::vector<ClusterFeatures>& clusters, const std::vector<ClusterFeatures>& candidates);

// Recomputes a triplet set's cost from the distance matrices (consistency checks).
double triplet_cost(const std::vector<std::array<int, 3>>& triplets, const Eigen::MatrixXd& d_ab,
                    const Eigen::MatrixXd& d_ac, const Eigen::MatrixXd& d_bc);

}  // namespace replyfx::matcher
