#include "replyfx/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "replyfx/represent.hpp"
#include "replyfx/rng.hpp"

namespace replyfx::matcher {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_finite(const Eigen::MatrixXd& costs, const char* op) {
    if (!costs.allFinite()) throw InputError(std::string(op) + ": costs must be finite");
}

// Shortest-augmenting-path solver with dual potentials; requires rows <= cols.
// Returns col4row: for each row, its assigned column. Exact for finite costs.
std::vector<int> solve_lsap(const Eigen::MatrixXd& cost) {
    const int nr = static_cast<int>(cost.rows());
    const int nc = static_cast<int>(cost.cols());
    std::vector<double> u(static_cast<std::size_t>(nr), 0.0);
    std::vector<double> v(static_cast<std::size_t>(nc), 0.0);
    std::vector<double> shortest(static_cast<std::size_t>(nc));
    std::vector<int> path(static_cast<std::size_t>(nc), -1);
    std::vector<int> col4row(static_cast<std::size_t>(nr), -1);
    std::vector<int> row4col(static_cast<std::size_t>(nc), -1);
    std::vector<int> remaining(static_cast<std::size_t>(nc));
    std::vector<char> scanned_rows(static_cast<std::size_t>(nr));
    std::vector<char> scanned_cols(static_cast<std::size_t>(nc));

    for (int cur_row = 0; cur_row < nr; ++cur_row) {
        double min_val = 0.0;
        int i = cur_row;
        int num_remaining = nc;
        for (int jp = 0; jp < nc; ++jp) remaining[static_cast<std::size_t>(jp)] = jp;
        std::fill(scanned_rows.begin(), scanned_rows.end(), 0);
        std::fill(scanned_cols.begin(), scanned_cols.end(), 0);
        std::fill(shortest.begin(), shortest.end(), kInf);

        int sink = -1;
        while (sink == -1) {
            int index = -1;
            double lowest = kInf;
            scanned_rows[static_cast<std::size_t>(i)] = 1;
            for (int it = 0; it < num_remaining; ++it) {
                int j = remaining[static_cast<std::size_t>(it)];
                double r = min_val + cost(i, j) - u[static_cast<std::size_t>(i)] -
                           v[static_cast<std::size_t>(j)];
                if (r < shortest[static_cast<std::size_t>(j)]) {
                    path[static_cast<std::size_t>(j)] = i;
                    shortest[static_cast<std::size_t>(j)] = r;
                }
                // Prefer unassigned columns on ties so the path terminates sooner.
                if (shortest[static_cast<std::size_t>(j)] < lowest ||
                    (shortest[static_cast<std::size_t>(j)] == lowest &&
                     row4col[static_cast<std::size_t>(j)] == -1)) {
                    lowest = shortest[static_cast<std::size_t>(j)];
                    index = it;
                }
            }
            min_val = lowest;
            if (min_val == kInf) throw FitError("assignment infeasible");
            int j = remaining[static_cast<std::size_t>(index)];
            if (row4col[static_cast<std::size_t>(j)] == -1)
                sink = j;
            else
                i = row4col[static_cast<std::size_t>(j)];
            scanned_cols[static_cast<std::size_t>(j)] = 1;
            remaining[static_cast<std::size_t>(index)] = remaining[static_cast<std::size_t>(--num_remaining)];
        }

        u[static_cast<std::size_t>(cur_row)] += min_val;
        for (int ip = 0; ip < nr; ++ip)
            if (scanned_rows[static_cast<std::size_t>(ip)] && ip != cur_row)
                u[static_cast<std::size_t>(ip)] +=
                    min_val -
                    shortest[static_cast<std::size_t>(col4row[static_cast<std::size_t>(ip)])];
        for (int jp = 0; jp < nc; ++jp)
            if (scanned_cols[static_cast<std::size_t>(jp)])
                v[static_cast<std::size_t>(jp)] -= min_val - shortest[static_cast<std::size_t>(jp)];

        int j = sink;
        for (;;) {
            int ip = path[static_cast<std::size_t>(j)];
            row4col[static_cast<std::size_t>(j)] = ip;
            std::swap(col4row[static_cast<std::size_t>(ip)], j);
            if (ip == cur_row) break;
        }
    }
    return col4row;
}

}  // namespace

const char* starting_pair_name(StartingPair p) {
    switch (p) {
        case StartingPair::AB: return "ab";
        case StartingPair::AC: return "ac";
        default: return "bc";
    }
}

Assignment optimal_pair_match(const Eigen::MatrixXd& costs) {
    Assignment out;
    if (costs.rows() == 0 || costs.cols() == 0) return out;
    require_finite(costs, "optimal_pair_match");
    if (costs.rows() <= costs.cols()) {
        auto col4row = solve_lsap(costs);
        for (int i = 0; i < static_cast<int>(col4row.size()); ++i) {
            out.pairs.emplace_back(i, col4row[static_cast<std::size_t>(i)]);
            out.total_cost += costs(i, col4row[static_cast<std::size_t>(i)]);
        }
    } else {
        Eigen::MatrixXd t = costs.transpose();
        auto col4row = solve_lsap(t);
        for (int j = 0; j < static_cast<int>(col4row.size()); ++j) {
            out.pairs.emplace_back(col4row[static_cast<std::size_t>(j)], j);
            out.total_cost += costs(col4row[static_cast<std::size_t>(j)], j);
        }
        std::sort(out.pairs.begin(), out.pairs.end());
    }
    return out;
}

TripletSet attach_third_group(const Assignment& assignment, const Eigen::MatrixXd& d_ac,
                              const Eigen::MatrixXd& d_bc) {
    TripletSet out;
    const int m = static_cast<int>(assignment.pairs.size());
    if (m == 0) return out;
    require_finite(d_ac, "attach_third_group");
    require_finite(d_bc, "attach_third_group");
    if (d_ac.cols() != d_bc.cols())
        throw InputError("attach_third_group: third-group size disagrees between matrices");
    const int nc = static_cast<int>(d_ac.cols());
    if (nc < m)
        throw SizeError("attach_third_group: third group (" + std::to_string(nc) +
                        ") smaller than assignment (" + std::to_string(m) + ")");

    Eigen::MatrixXd cost(m, nc);
    for (int p = 0; p < m; ++p) {
        const auto [a, b] = assignment.pairs[static_cast<std::size_t>(p)];
        for (int c = 0; c < nc; ++c) cost(p, c) = d_ac(a, c) + d_bc(b, c);
    }
    auto col4row = solve_lsap(cost);
    out.total_cost = assignment.total_cost;
    for (int p = 0; p < m; ++p) {
        const auto [a, b] = assignment.pairs[static_cast<std::size_t>(p)];
        const int c = col4row[static_cast<std::size_t>(p)];
        out.triplets.push_back({a, b, c});
        out.total_cost += cost(p, c);
    }
    return out;
}

double triplet_cost(const std::vector<std::array<int, 3>>& triplets, const Eigen::MatrixXd& d_ab,
                    const Eigen::MatrixXd& d_ac, const Eigen::MatrixXd& d_bc) {
    double total = 0.0;
    for (const auto& t : triplets)
        total += d_ab(t[0], t[1]) + d_ac(t[0], t[2]) + d_bc(t[1], t[2]);
    return total;
}

TripletSet improve_triplets(const TripletSet& input, const Eigen::MatrixXd& d_ab,
                            const Eigen::MatrixXd& d_ac, const Eigen::MatrixXd& d_bc,
                            int max_iters, int* passes_used) {
    TripletSet current = input;
    if (passes_used) *passes_used = 0;
    const int m = static_cast<int>(current.triplets.size());
    if (m == 0 || max_iters <= 0) return current;

    const int na = static_cast<int>(d_ab.rows());
    const int nb = static_cast<int>(d_ab.cols());
    const int nc = static_cast<int>(d_ac.cols());

    // Re-solves one arm against the fixed pairs of the other two; adopts the
    // result only on a strict decrease so equal-cost solutions cannot cycle.
    auto reassign_arm = [&](int arm, int group_size) -> bool {
        Eigen::MatrixXd cost(m, group_size);
        for (int t = 0; t < m; ++t) {
            const auto& tri = current.triplets[static_cast<std::size_t>(t)];
            for (int x = 0; x < group_size; ++x) {
                double value = 0.0;
                if (arm == 0)
                    value = d_ab(x, tri[1]) + d_ac(x, tri[2]);
                else if (arm == 1)
                    value = d_ab(tri[0], x) + d_bc(x, tri[2]);
                else
                    value = d_ac(tri[0], x) + d_bc(tri[1], x);
                cost(t, x) = value;
            }
        }
        double before = 0.0;
        for (int t = 0; t < m; ++t)
            before += cost(t, current.triplets[static_cast<std::size_t>(t)]
                                              [static_cast<std::size_t>(arm)]);
        auto col4row = solve_lsap(cost);
        double after = 0.0;
        for (int t = 0; t < m; ++t) after += cost(t, col4row[static_cast<std::size_t>(t)]);
        if (after < before - 1e-12) {
            for (int t = 0; t < m; ++t)
                current.triplets[static_cast<std::size_t>(t)][static_cast<std::size_t>(arm)] =
                    col4row[static_cast<std::size_t>(t)];
            return true;
        }
        return false;
    };

    for (int pass = 0; pass < max_iters; ++pass) {
        bool improved = false;
        improved |= reassign_arm(0, na);
        improved |= reassign_arm(1, nb);
        improved |= reassign_arm(2, nc);
        if (passes_used) *passes_used = pass + 1;
        if (!improved) break;
    }
    current.total_cost = triplet_cost(current.triplets, d_ab, d_ac, d_bc);
    return current;
}

MatchRun triplet_match(const Eigen::MatrixXd& d_ab, const Eigen::MatrixXd& d_ac,
                       const Eigen::MatrixXd& d_bc, StartingPair starting_pair,
                       const TripletMatchOptions& options) {
    const int na = static_cast<int>(d_ab.rows());
    const int nb = static_cast<int>(d_ab.cols());
    const int nc = static_cast<int>(d_ac.cols());
    if (d_ac.rows() != na || d_bc.rows() != nb || d_bc.cols() != nc)
        throw InputError("triplet_match: distance matrix shapes disagree");

    MatchRun run;
    run.starting_pair = starting_pair;
    if (na == 0 || nb == 0 || nc == 0) return run;
    const int m_target = std::min({na, nb, nc});

    // Seed pairs on the starting arms, trimmed costliest-first to the third
    // group's size before attaching.
    struct Seed {
        int first, second;
        double cost;
    };
    auto trim = [m_target](std::vector<Seed>& seeds) {
        if (static_cast<int>(seeds.size()) <= m_target) return;
        std::stable_sort(seeds.begin(), seeds.end(),
                         [](const Seed& x, const Seed& y) { return x.cost < y.cost; });
        seeds.resize(static_cast<std::size_t>(m_target));
        std::stable_sort(seeds.begin(), seeds.end(),
                         [](const Seed& x, const Seed& y) { return x.first < y.first; });
    };

    std::vector<std::array<int, 3>> triplets;
    if (starting_pair == StartingPair::AB) {
        Assignment asg = optimal_pair_match(d_ab);
        std::vector<Seed> seeds;
        for (auto [a, b] : asg.pairs) seeds.push_back({a, b, d_ab(a, b)});
        trim(seeds);
        Assignment trimmed;
        for (const auto& s : seeds) {
            trimmed.pairs.emplace_back(s.first, s.second);
            trimmed.total_cost += s.cost;
        }
        TripletSet attached = attach_third_group(trimmed, d_ac, d_bc);
        triplets = attached.triplets;
    } else if (starting_pair == StartingPair::AC) {
        Assignment asg = optimal_pair_match(d_ac);
        std::vector<Seed> seeds;
        for (auto [a, c] : asg.pairs) seeds.push_back({a, c, d_ac(a, c)});
        trim(seeds);
        const int m = static_cast<int>(seeds.size());
        Eigen::MatrixXd cost(m, nb);
        for (int p = 0; p < m; ++p)
            for (int b = 0; b < nb; ++b)
                cost(p, b) = d_ab(seeds[static_cast<std::size_t>(p)].first, b) +
                             d_bc(b, seeds[static_cast<std::size_t>(p)].second);
        auto col4row = solve_lsap(cost);
        for (int p = 0; p < m; ++p)
            triplets.push_back({seeds[static_cast<std::size_t>(p)].first,
                                col4row[static_cast<std::size_t>(p)],
                                seeds[static_cast<std::size_t>(p)].second});
    } else {
        Assignment asg = optimal_pair_match(d_bc);
        std::vector<Seed> seeds;
        for (auto [b, c] : asg.pairs) seeds.push_back({b, c, d_bc(b, c)});
        trim(seeds);
        const int m = static_cast<int>(seeds.size());
        Eigen::MatrixXd cost(m, na);
        for (int p = 0; p < m; ++p)
            for (int a = 0; a < na; ++a)
                cost(p, a) = d_ab(a, seeds[static_cast<std::size_t>(p)].first) +
                             d_ac(a, seeds[static_cast<std::size_t>(p)].second);
        auto col4row = solve_lsap(cost);
        for (int p = 0; p < m; ++p)
            triplets.push_back({col4row[static_cast<std::size_t>(p)],
                                seeds[static_cast<std::size_t>(p)].first,
                                seeds[static_cast<std::size_t>(p)].second});
    }

    TripletSet attached;
    attached.triplets = std::move(triplets);
    attached.total_cost = triplet_cost(attached.triplets, d_ab, d_ac, d_bc);
    run.triplets =
        improve_triplets(attached, d_ab, d_ac, d_bc, options.max_improve_iters, &run.iterations);

    if (options.caliper) {
        TripletSet filtered;
        for (const auto& t : run.triplets.triplets) {
            double c = d_ab(t[0], t[1]) + d_ac(t[0], t[2]) + d_bc(t[1], t[2]);
            if (c <= *options.caliper) {
                filtered.triplets.push_back(t);
                filtered.total_cost += c;
            }
        }
        run.triplets = std::move(filtered);
    }
    return run;
}

const MatchRun& select_best_run(const std::vector<MatchRun>& runs, double smd_threshold) {
    if (runs.empty()) throw InputError("select_best_run: no runs");
    std::size_t best = 0;
    int best_count = balance::pass_count(runs[0].balance, smd_threshold);
    for (std::size_t i = 1; i < runs.size(); ++i) {
        int count = balance::pass_count(runs[i].balance, smd_threshold);
        if (count > best_count ||
            (count == best_count &&
             runs[i].triplets.total_cost < runs[best].triplets.total_cost - 1e-12)) {
            best = i;
            best_count = count;
        }
    }
    return runs[best];
}

Assignment binary_match(const Eigen::MatrixXd& treated_by_control_costs, double treated_fraction,
                        std::uint64_t seed) {
    const int n_treated = static_cast<int>(treated_by_control_costs.rows());
    const int n_controls = static_cast<int>(treated_by_control_costs.cols());
    if (n_controls == 0) throw InputError("binary_match: controls must be non-empty");
    if (treated_fraction <= 0.0 || treated_fraction > 1.0)
        throw InputError("binary_match: fraction must lie in (0,1]");
    if (n_treated == 0) return {};

    const int k = static_cast<int>(
        std::ceil(treated_fraction * static_cast<double>(n_treated) - 1e-12));
    if (k > n_controls)
        throw SizeError("binary_match: " + std::to_string(k) + " sampled treated exceed " +
                        std::to_string(n_controls) + " controls");

    Rng rng(seed);
    auto sampled = rng.sample_without_replacement(static_cast<std::size_t>(n_treated),
                                                  static_cast<std::size_t>(k));
    std::sort(sampled.begin(), sampled.end());

    Eigen::MatrixXd sub(k, n_controls);
    for (int i = 0; i < k; ++i)
        sub.row(i) = treated_by_control_costs.row(static_cast<Eigen::Index>(sampled[static_cast<std::size_t>(i)]));
    Assignment asg = optimal_pair_match(sub);
    Assignment out;
    out.total_cost = asg.total_cost;
    for (auto [i, j] : asg.pairs)
        out.pairs.emplace_back(static_cast<int>(sampled[static_cast<std::size_t>(i)]), j);
    std::sort(out.pairs.begin(), out.pairs.end());
    return out;
}

std::vector<std::pair<std::string, std::string>> match_clusters(
    const std::vector<ClusterFeatures>& clusters, const std::vector<ClusterFeatures>& candidates) {
    if (candidates.size() < clusters.size())
        throw SizeError("match_clusters: candidate pool (" + std::to_string(candidates.size()) +
                        ") smaller than cluster list (" + std::to_string(clusters.size()) + ")");
    if (clusters.empty()) return {};

    const auto n = clusters.size() + candidates.size();
    Eigen::MatrixXd pooled(static_cast<Eigen::Index>(n), 3);
    for (std::size_t i = 0; i < clusters.size(); ++i)
        pooled.row(static_cast<Eigen::Index>(i)) << clusters[i].p90_return,
            clusters[i].n_users, clusters[i].activity_rate;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        pooled.row(static_cast<Eigen::Index>(clusters.size() + i)) << candidates[i].p90_return,
            candidates[i].n_users, candidates[i].activity_rate;

    auto standardized = represent::standardize(pooled);
    Eigen::MatrixXd S = represent::covariance(standardized.X);
    Eigen::MatrixXd top = standardized.X.topRows(static_cast<Eigen::Index>(clusters.size()));
    Eigen::MatrixXd bottom = standardized.X.bottomRows(static_cast<Eigen::Index>(candidates.size()));
    Eigen::MatrixXd costs =
        represent::distance_matrix(top, bottom, represent::Metric::MahalanobisOnPca, &S);

    Assignment asg = optimal_pair_match(costs);
    std::vector<std::pair<std::string, std::string>> out;
    for (auto [i, j] : asg.pairs)
        out.emplace_back(clusters[static_cast<std::size_t>(i)].id,
                         candidates[static_cast<std::size_t>(j)].id);
    return out;
}

}  // namespace replyfx::matcher
