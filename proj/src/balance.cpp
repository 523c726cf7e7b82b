#include "replyfx/balance.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "replyfx/stats.hpp"

namespace replyfx::balance {

double smd(const std::vector<double>& values_a, const std::vector<double>& values_b) {
    if (values_a.empty() || values_b.empty()) throw InputError("smd: empty sample");
    const double mean_a = stats::mean(values_a);
    const double mean_b = stats::mean(values_b);
    const double pooled = std::sqrt((stats::sample_variance(values_a) +
                                     stats::sample_variance(values_b)) / 2.0);
    const double diff = std::abs(mean_a - mean_b);
    if (pooled == 0.0)
        return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return diff / pooled;
}

namespace {

constexpr std::array<std::pair<int, int>, 3> kArmPairs = {{{0, 1}, {0, 2}, {1, 2}}};

double cosine(const std::vector<double>& x, const std::vector<double>& y) {
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
        dot += x[i] * y[i];
        nx += x[i] * x[i];
        ny += y[i] * y[i];
    }
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return dot / std::sqrt(nx * ny);
}

}  // namespace

BalanceReport balance_report(const std::vector<ingest::UnitRecord>& units,
                             const std::array<std::vector<int>, 3>& arm_units,
                             const std::vector<std::array<int, 3>>& triplets, double threshold,
                             const Eigen::MatrixXd* pca_scores) {
    BalanceReport report;
    report.threshold = threshold;

    // Covariate name -> value extractor over global unit index.
    const auto& scalar_names = ingest::CovariateVector::scalar_names();
    std::vector<std::pair<std::string, std::vector<double>>> columns;
    {
        std::vector<std::vector<double>> scalars(units.size());
        for (std::size_t i = 0; i < units.size(); ++i) scalars[i] = units[i].covariates.scalars();
        for (std::size_t c = 0; c < scalar_names.size(); ++c) {
            std::vector<double> col(units.size());
            for (std::size_t i = 0; i < units.size(); ++i) col[i] = scalars[i][c];
            columns.emplace_back(scalar_names[c], std::move(col));
        }
    }
    if (pca_scores) {
        if (static_cast<std::size_t>(pca_scores->rows()) != units.size())
            throw InputError("balance_report: pca_scores rows must align with units");
        for (Eigen::Index c = 0; c < pca_scores->cols(); ++c) {
            std::vector<double> col(units.size());
            for (std::size_t i = 0; i < units.size(); ++i)
                col[i] = (*pca_scores)(static_cast<Eigen::Index>(i), c);
            columns.emplace_back("pca_" + std::to_string(c + 1), std::move(col));
        }
    }

    for (const auto& [name, col] : columns) {
        for (std::size_t p = 0; p < kArmPairs.size(); ++p) {
            const auto [arm_a, arm_b] = kArmPairs[p];
            BalanceCell cell;
            cell.covariate = name;
            cell.arm_a = arm_a;
            cell.arm_b = arm_b;

            std::vector<double> pre_a, pre_b;
            for (int idx : arm_units[static_cast<std::size_t>(arm_a)])
                pre_a.push_back(col[static_cast<std::size_t>(idx)]);
            for (int idx : arm_units[static_cast<std::size_t>(arm_b)])
                pre_b.push_back(col[static_cast<std::size_t>(idx)]);
            cell.pre = smd(pre_a, pre_b);

            if (!triplets.empty()) {
                std::vector<double> post_a, post_b;
                for (const auto& t : triplets) {
                    int ga = arm_units[static_cast<std::size_t>(arm_a)]
                                      [static_cast<std::size_t>(t[static_cast<std::size_t>(arm_a)])];
                    int gb = arm_units[static_cast<std::size_t>(arm_b)]
                                      [static_cast<std::size_t>(t[static_cast<std::size_t>(arm_b)])];
                    post_a.push_back(col[static_cast<std::size_t>(ga)]);
                    post_b.push_back(col[static_cast<std::size_t>(gb)]);
                }
                cell.post = smd(post_a, post_b);
            } else {
                cell.post = std::numeric_limits<double>::quiet_NaN();
            }
            report.cells.push_back(std::move(cell));
        }
    }

    for (std::size_t p = 0; p < kArmPairs.size(); ++p) {
        const auto [arm_a, arm_b] = kArmPairs[p];
        if (triplets.empty()) {
            report.matched_cosine[p] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        double total = 0.0;
        for (const auto& t : triplets) {
            int ga = arm_units[static_cast<std::size_t>(arm_a)]
                              [static_cast<std::size_t>(t[static_cast<std::size_t>(arm_a)])];
            int gb = arm_units[static_cast<std::size_t>(arm_b)]
                              [static_cast<std::size_t>(t[static_cast<std::size_t>(arm_b)])];
            total += cosine(units[static_cast<std::size_t>(ga)].covariates.embedding,
                            units[static_cast<std::size_t>(gb)].covariates.embedding);
        }
        report.matched_cosine[p] = total / static_cast<double>(triplets.size());
    }

    for (const auto& cell : report.cells) {
        if (cell.pre < threshold) ++report.pre_pass_count;
        if (cell.post < threshold) ++report.post_pass_count;
    }
    return report;
}

int pass_count(const BalanceReport& report, double threshold) {
    int count = 0;
    for (const auto& cell : report.cells)
        if (cell.post < threshold) ++count;
    return count;
}

std::string format_report(const BalanceReport& report) {
    static const char* pair_names[3] = {"noreply-vs-cs", "noreply-vs-other", "cs-vs-other"};
    // covariate -> pair index -> (pre, post)
    std::map<std::string, std::array<std::pair<double, double>, 3>> grid;
    std::vector<std::string> order;
    for (const auto& cell : report.cells) {
        if (!grid.count(cell.covariate)) order.push_back(cell.covariate);
        int pair_idx = cell.arm_a == 0 ? (cell.arm_b == 1 ? 0 : 1) : 2;
        grid[cell.covariate][static_cast<std::size_t>(pair_idx)] = {cell.pre, cell.post};
    }
    std::ostringstream os;
    os << std::left << std::setw(36) << "covariate";
    for (const char* name : pair_names)
        os << std::setw(24) << (std::string(name) + " pre/post");
    os << "\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& name : order) {
        os << std::setw(36) << name;
        for (std::size_t p = 0; p < 3; ++p) {
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(4) << grid[name][p].first << " / "
                 << grid[name][p].second;
            os << std::setw(24) << cell.str();
        }
        os << "\n";
    }
    os << "matched cosine similarity:";
    for (std::size_t p = 0; p < 3; ++p)
        os << " " << pair_names[p] << "=" << report.matched_cosine[p];
    os << "\npost cells |SMD| < " << report.threshold << ": " << report.post_pass_count << " of "
       << report.cells.size() << "\n";
    return os.str();
}

}  // namespace replyfx::balance
