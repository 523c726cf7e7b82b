#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "replyfx/errors.hpp"
#include "replyfx/ingest.hpp"
#include "replyfx/optim.hpp"
#include "replyfx/scorers.hpp"

namespace replyfx::represent {

// Feature assembly: embedding block followed by the selected scalar
// confounders, one row per unit.
struct Assembled {
    Eigen::MatrixXd X;
    std::vector<std::string> names;
};
Assembled assemble_features(const std::vector<ingest::UnitRecord>& units,
                            const std::vector<int>& scalar_keep);

struct StandardizeParams {
    Eigen::VectorXd mean;
    Eigen::VectorXd sd; // sample sd; 0 marks a constant column
    std::vector<bool> constant;
};

struct Standardized {
    Eigen::MatrixXd X;
    StandardizeParams params;
};

// Columns to mean 0 / sample sd 1; constant columns become all zeros and are
// flagged. Requires at least two rows.
Standardized standardize(const Eigen::MatrixXd& X);
Eigen::MatrixXd apply_standardize(const StandardizeParams& params, const Eigen::MatrixXd& X);

struct PCAModel {
    Eigen::MatrixXd loadings; // k x d, rows orthonormal
    Eigen::VectorXd eigenvalues;
    Eigen::VectorXd explained_fractions; // of total variance, non-increasing
    Eigen::VectorXd mean;
    double total_variance = 0.0;
};

// Top principal components of the sample covariance (SVD of centered data).
// Rank-deficient input yields fewer components with a warning.
PCAModel fit_pca(const Eigen::MatrixXd& X, int n_components = 5,
                 const scorers::WarnFn& warn = scorers::stderr_warn());

Eigen::MatrixXd project(const PCAModel& model, const Eigen::MatrixXd& X);

struct ConvergenceReport {
    bool converged = false;
    int iterations = 0;
    double grad_norm = 0.0;
    double final_value = 0.0;
    std::string message;
};

struct PropensityModel {
    // (d+1) x 3; row 0 holds intercepts. Class order: NoReply,
    // Counterspeech, OtherReply (the Arm enum order).
    Eigen::MatrixXd coef;
    double lambda = 1e-4;
    ConvergenceReport report;
};

struct PropensityOptions {
    double lambda = 1e-4; // ridge on all coefficients; guarantees a unique optimum
    optim::LbfgsOptions lbfgs;
};

// Multinomial logistic regression on standardized features. The objective is
// the mean negative log-likelihood plus (lambda/2)*||B||^2; its gradient must
// reach norm <= 1e-8. Throws FitError on non-convergence.
PropensityModel fit_propensity(const Eigen::MatrixXd& X, const std::vector<int>& arms,
                               const PropensityOptions& options = {});

// Mean negative log-likelihood and gradient at packed coefficients, exposed
// for gradient verification.
double propensity_objective(const Eigen::MatrixXd& X, const std::vector<int>& arms, double lambda,
                            const Eigen::VectorXd& packed, Eigen::VectorXd& grad);

Eigen::Vector3d propensity_scores(const PropensityModel& model, const Eigen::VectorXd& x);
Eigen::MatrixXd propensity_score_matrix(const PropensityModel& model, const Eigen::MatrixXd& X);

// Sample covariance (n-1) of the rows.
Eigen::MatrixXd covariance(const Eigen::MatrixXd& X);

// Maps x to coordinates where the pseudo-inverse Mahalanobis distance is
// Euclidean; eigenvalues below tolerance are treated as null directions.
struct MahalanobisTransform {
    Eigen::MatrixXd whitener; // d x r
    explicit MahalanobisTransform(const Eigen::MatrixXd& covariance);
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return whitener.transpose() * x; }
};

double mahalanobis(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& S);

enum class Metric { PropensityEuclidean, MahalanobisOnPca };
const char* metric_name(Metric m);
std::optional<Metric> metric_from_name(std::string_view name);

// Pairwise distances between representation rows. For MahalanobisOnPca the
// covariance of the pooled representation must be supplied.
Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& group_a, const Eigen::MatrixXd& group_b,
                                Metric metric, const Eigen::MatrixXd* pooled_covariance = nullptr);

// Versioned JSON round-trip for fitted models.
std::string pca_model_to_json(const PCAModel& model);
PCAModel pca_model_from_json(const std::string& text);
std::string propensity_model_to_json(const PropensityModel& model);
PropensityModel propensity_model_from_json(const std::string& text);

}  // namespace replyfx::represent
