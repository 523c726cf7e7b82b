#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "replyfx/ingest.hpp"
#include "replyfx/labeler.hpp"

namespace replyfx::estimator {

// Fixed-effect design. Columns are named; the intercept is implicit and added
// by the fitters. `cluster` holds dense ids into `cluster_names`.
struct DesignMatrix {
    Eigen::MatrixXd x;
    std::vector<std::string> names;
    std::vector<int> cluster;
    std::vector<std::string> cluster_names;
    std::vector<int> row_units; // row -> index into the source unit list

    int rows() const { return static_cast<int>(x.rows()); }
    int cols() const { return static_cast<int>(x.cols()); }
    int column(const std::string& name) const;
};

// Variance inflation factor of every column: VIF_j = 1 / (1 - R^2_j) where
// R^2_j comes from regressing column j on the others plus an intercept.
// Constant and perfectly collinear columns report +infinity.
std::vector<double> vif_values(const Eigen::MatrixXd& x);

struct VifRemoval {
    std::string name;
    double vif = 0.0;
};

struct VifResult {
    DesignMatrix design;
    std::vector<VifRemoval> removed;
};

// Iteratively drops the highest-VIF column while any exceeds the threshold.
// Protected columns are kept unless they are constant (no variation left to
// estimate), which would make the information matrix singular.
VifResult vif_prune(const DesignMatrix& design, double threshold = 5.0,
                    const std::vector<std::string>& protect = {});

struct Coefficient {
    std::string name;
    double estimate = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p = 1.0;
};

struct FitResult {
    std::vector<Coefficient> coefficients; // intercept first, then design columns
    bool random_intercept = false;
    double sigma2 = 0.0;                   // random-intercept variance
    double dispersion = std::numeric_limits<double>::quiet_NaN(); // NB2 size r
    double log_likelihood = 0.0;
    bool converged = false;
    int iterations = 0;
    double grad_norm = 0.0;
    std::string warning;
    std::vector<double> nll_trace;  // objective (mean negative log-likelihood) per accepted step
    Eigen::MatrixXd beta_cov;       // covariance of [intercept, coefficients...]

    const Coefficient* find(const std::string& name) const;
};

struct FitOptions {
    // Variance components near zero flatten the likelihood, so small mixed
    // fits can legitimately take over a thousand steps.
    int max_iters = 2000;
    double grad_tol = 1e-6; // on the mean-scaled objective gradient
    double ridge = 0.0;     // L2 penalty on non-intercept coefficients
};

// Plain fixed-effects logistic regression (maximum likelihood).
FitResult fit_logistic(const DesignMatrix& design, const std::vector<int>& outcomes,
                       const FitOptions& options = {});

// Random-intercept logistic regression. One intercept per cluster,
// u ~ Normal(0, sigma^2); marginal likelihood via a per-cluster Laplace
// approximation with the variance optimized on the log scale.
FitResult fit_logistic_glmm(const DesignMatrix& design, const std::vector<int>& outcomes,
                            const FitOptions& options = {});

struct NbOptions {
    FitOptions fit;
    bool random_intercept = false; // cluster intercepts, off by default
};

// Log-link NB2 regression with maximum-likelihood dispersion.
FitResult fit_negative_binomial(const DesignMatrix& design, const std::vector<long long>& counts,
                                const NbOptions& options = {});

// Mean negative Laplace log-likelihood of the random-intercept logistic model
// at theta = [intercept, coefficients..., log sigma], with its analytic
// gradient. Exposed so the gradient can be verified against finite
// differences.
double glmm_objective(const DesignMatrix& design, const std::vector<int>& outcomes,
                      const Eigen::VectorXd& theta, Eigen::VectorXd* grad = nullptr);

// Same for NB2: theta = [intercept, coefficients..., log size] plus a trailing
// log sigma when the random intercept is enabled.
double nb_objective(const DesignMatrix& design, const std::vector<long long>& counts,
                    bool random_intercept, const Eigen::VectorXd& theta,
                    Eigen::VectorXd* grad = nullptr);

struct EffectEstimate {
    std::string contrast;
    double ate = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    double level = 0.95;
    double p = 1.0;
    int n = 0;
};

// g-computation marginal effect of a binary contrast column: the mean change
// in predicted probability when the indicator is toggled 1 vs 0 for every
// matched unit, other columns held as observed and random intercepts at 0.
// CI and p-value come from a seeded parametric bootstrap over the coefficient
// covariance.
EffectEstimate average_treatment_effect(const FitResult& fit, const DesignMatrix& design,
                                        const std::string& contrast, int n_boot = 1000,
                                        std::uint64_t seed = 1);

struct EstimationOptions {
    double vif_threshold = 5.0;
    int n_boot = 1000;
    std::uint64_t seed = 1;
    int min_triplets = 50;
    bool random_intercept = true;
    FitOptions fit;
};

// Reply-type columns always present in an assembled design.
extern const std::array<const char*, 4> kTreatmentColumns;

struct AssembledDesign {
    DesignMatrix design;
    std::vector<int> binary_outcomes;      // engaged again within the window
    std::vector<long long> count_outcomes; // threads started within the window
    std::vector<VifRemoval> vif_removed;
};

// Builds the estimation design from a matched cohort: reply-type indicators,
// reply toxicity and its counterspeech interaction, then the scalar
// confounders with VIF pruning applied (treatment columns protected). Rows
// are triplet-major, arm-minor.
AssembledDesign build_design(const std::vector<ingest::UnitRecord>& units,
                             const std::array<std::vector<int>, 3>& arm_units,
                             const std::vector<std::array<int, 3>>& triplets,
                             double vif_threshold = 5.0);

struct CohortEstimate {
    FitResult fit;
    EffectEstimate counterspeech;
    EffectEstimate hate_reply;
    int n_triplets = 0;
};

// Full estimation pass over a matched cohort: assemble, fit the
// random-intercept model, report marginal effects of both reply types.
CohortEstimate estimate_effects(const std::vector<ingest::UnitRecord>& units,
                                const std::array<std::vector<int>, 3>& arm_units,
                                const std::vector<std::array<int, 3>>& triplets,
                                const EstimationOptions& options = {});

enum class SubsetMode { ToxicOnly, NontoxicOnly };
const char* subset_mode_name(SubsetMode mode);
SubsetMode subset_mode_from_name(const std::string& name);

// Restricts the cohort to triplets whose counterspeech reply is toxic
// (toxicity > threshold) or non-toxic (<= threshold), keeping the matched
// counterparts of each surviving triplet, then re-runs estimation.
EffectEstimate subset_effect(const std::vector<ingest::UnitRecord>& units,
                             const std::array<std::vector<int>, 3>& arm_units,
                             const std::vector<std::array<int, 3>>& triplets,
                             double toxicity_threshold, SubsetMode mode,
                             const EstimationOptions& options = {});

struct FollowupBin {
    double lo = 0.0;
    double hi = 0.0;
    int n = 0;          // follow-ups whose parent reply falls in the bin
    double p = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
    bool empty = true;
};

struct FollowupCurve {
    double threshold = 0.7;
    std::array<std::vector<FollowupBin>, labeler::kNumClasses> per_class;
};

struct ReplyObs {
    double toxicity = 0.0;
    labeler::LabelClass label = labeler::LabelClass::Other;
    std::vector<double> followup_toxicities;
};

// Per reply class and reply-toxicity bin: the fraction of follow-ups that are
// themselves toxic (> threshold), with a binomial standard error. Bins are
// equal-width over [0, 1], the last one closed; bins with no follow-ups stay
// marked empty.
FollowupCurve toxic_followup_curve(const std::vector<ReplyObs>& replies, int n_bins,
                                   double threshold = 0.7);

}  // namespace replyfx::estimator
