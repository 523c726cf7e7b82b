#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "replyfx/ingest.hpp"

namespace replyfx::balance {

// |mean_a - mean_b| / sqrt((var_a + var_b)/2) with sample variances. Two
// degenerate constant samples give 0 when the means agree and +inf otherwise.
double smd(const std::vector<double>& values_a, const std::vector<double>& values_b);

struct BalanceCell {
    std::string covariate;
    int arm_a = 0; // Arm enum values
    int arm_b = 0;
    double pre = 0.0;  // |SMD| over the full groups
    double post = 0.0; // |SMD| over matched units only
};

struct BalanceReport {
    std::vector<BalanceCell> cells;
    double threshold = 0.1;
    // Mean cosine similarity of matched counterparts' embeddings, per arm pair
    // in (0,1), (0,2), (1,2) order; NaN when no triplets.
    std::array<double, 3> matched_cosine{};
    int pre_pass_count = 0;
    int post_pass_count = 0;
};

// arm_units maps per-arm position to an index into `units`; triplets hold
// per-arm positions. pca_scores, when given, must align with `units` rows and
// contributes one cell per component.
BalanceReport balance_report(const std::vector<ingest::UnitRecord>& units,
                             const std::array<std::vector<int>, 3>& arm_units,
                             const std::vector<std::array<int, 3>>& triplets,
                             double threshold = 0.1, const Eigen::MatrixXd* pca_scores = nullptr);

// Post-stage cells strictly below the threshold.
int pass_count(const BalanceReport& report, double threshold = 0.1);

// Plain-text covariate x arm-pair grid.
std::string format_report(const BalanceReport& report);

}  // namespace replyfx::balance
