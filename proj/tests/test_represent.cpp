#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "replyfx/errors.hpp"
#include "replyfx/ingest.hpp"
#include "replyfx/represent.hpp"
#include "replyfx/rng.hpp"

using namespace replyfx;
using namespace replyfx::represent;

namespace {

ingest::UnitRecord unit_with(std::vector<double> embedding, double score, double sentiment) {
    ingest::UnitRecord u;
    u.covariates.embedding = std::move(embedding);
    u.covariates.score = score;
    u.covariates.sentiment = sentiment;
    return u;
}

int scalar_index(const std::string& name) {
    const auto& names = ingest::CovariateVector::scalar_names();
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    FAIL("unknown scalar " << name);
    return -1;
}

}  // namespace

TEST_SUITE("represent") {

TEST_CASE("feature assembly lays out embedding then kept scalars") {
    std::vector<ingest::UnitRecord> units{unit_with({0.1, 0.2}, 5.0, -0.5),
                                          unit_with({0.3, 0.4}, -2.0, 0.25)};
    const std::vector<int> keep{scalar_index("score"), scalar_index("sentiment")};
    const auto assembled = assemble_features(units, keep);
    REQUIRE(assembled.X.rows() == 2);
    REQUIRE(assembled.X.cols() == 4);
    CHECK(assembled.X(0, 0) == 0.1);
    CHECK(assembled.X(1, 1) == 0.4);
    CHECK(assembled.X(0, 2) == 5.0);
    CHECK(assembled.X(1, 3) == 0.25);
    CHECK(assembled.names == std::vector<std::string>{"emb_0", "emb_1", "score", "sentiment"});

    CHECK_THROWS_AS((void)assemble_features({}, keep), InputError);
    CHECK_THROWS_AS((void)assemble_features(units, {99}), InputError);
    units[1].covariates.embedding.resize(3);
    CHECK_THROWS_AS((void)assemble_features(units, keep), InputError);
}

TEST_CASE("standardization zeroes constant columns and round-trips") {
    Eigen::MatrixXd X(3, 2);
    X << 1, 5, 3, 5, 5, 5;
    const auto std_x = standardize(X);
    CHECK(std_x.X(0, 0) == doctest::Approx(-1.0));
    CHECK(std_x.X(1, 0) == doctest::Approx(0.0));
    CHECK(std_x.X(2, 0) == doctest::Approx(1.0));
    CHECK(std_x.params.mean(0) == doctest::Approx(3.0));
    CHECK(std_x.params.sd(0) == doctest::Approx(2.0));
    CHECK(std_x.params.constant == std::vector<bool>{false, true});
    CHECK(std_x.X.col(1).isZero());

    Eigen::MatrixXd fresh(1, 2);
    fresh << 7, 9;
    const auto applied = apply_standardize(std_x.params, fresh);
    CHECK(applied(0, 0) == doctest::Approx(2.0));
    CHECK(applied(0, 1) == 0.0);

    CHECK_THROWS_AS((void)standardize(Eigen::MatrixXd::Zero(1, 2)), InputError);
    CHECK_THROWS_AS((void)apply_standardize(std_x.params, Eigen::MatrixXd::Zero(1, 3)),
                    InputError);
}

TEST_CASE("pca recovers a one-dimensional structure exactly") {
    Eigen::MatrixXd X(3, 2);
    X << 0, 0, 1, 2, 2, 4;
    int warnings = 0;
    const auto model = fit_pca(X, 2, [&warnings](const std::string&) { ++warnings; });
    CHECK(warnings == 1); // rank 1 < 2 requested

    REQUIRE(model.loadings.rows() == 1);
    CHECK(model.loadings(0, 0) == doctest::Approx(1.0 / std::sqrt(5.0)));
    CHECK(model.loadings(0, 1) == doctest::Approx(2.0 / std::sqrt(5.0)));
    CHECK(model.eigenvalues(0) == doctest::Approx(5.0));
    CHECK(model.total_variance == doctest::Approx(5.0));
    CHECK(model.explained_fractions(0) == doctest::Approx(1.0));

    Eigen::MatrixXd probe(1, 2);
    probe << 0, 0;
    CHECK(project(model, probe)(0, 0) == doctest::Approx(-std::sqrt(5.0)));

    CHECK_THROWS_AS((void)fit_pca(X, 3), InputError);
    CHECK_THROWS_AS((void)fit_pca(Eigen::MatrixXd::Zero(4, 2), 1), InputError);
    CHECK_THROWS_AS((void)project(model, Eigen::MatrixXd::Zero(1, 3)), InputError);
}

TEST_CASE("pca components are orthonormal with non-increasing shares") {
    Rng rng(11);
    Eigen::MatrixXd X(60, 6);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double f1 = rng.normal(), f2 = rng.normal();
        for (Eigen::Index j = 0; j < X.cols(); ++j)
            X(i, j) = f1 * (j % 2 == 0 ? 1.0 : -0.5) + f2 * 0.3 * static_cast<double>(j) +
                      0.01 * rng.normal();
    }
    const auto model = fit_pca(X, 4);
    REQUIRE(model.loadings.rows() == 4);
    const Eigen::MatrixXd gram = model.loadings * model.loadings.transpose();
    CHECK((gram - Eigen::MatrixXd::Identity(4, 4)).norm() < 1e-9);
    for (int i = 1; i < 4; ++i)
        CHECK(model.explained_fractions(i) <= model.explained_fractions(i - 1) + 1e-12);
    // Two real factors dominate; noise is 0.01 sd.
    CHECK(model.explained_fractions(0) + model.explained_fractions(1) > 0.999);
    CHECK(model.explained_fractions.sum() <= 1.0 + 1e-12);
}

TEST_CASE("propensity objective gradient matches finite differences") {
    Rng rng(3);
    const Eigen::Index n = 40, d = 3;
    Eigen::MatrixXd X(n, d);
    std::vector<int> arms;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.normal();
        arms.push_back(static_cast<int>(rng.uniform_int(3)));
    }
    Eigen::VectorXd packed(3 * (d + 1));
    for (Eigen::Index i = 0; i < packed.size(); ++i) packed(i) = 0.3 * rng.normal();

    Eigen::VectorXd grad;
    const double f0 = propensity_objective(X, arms, 1e-4, packed, grad);
    CHECK(std::isfinite(f0));
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < packed.size(); ++i) {
        Eigen::VectorXd up = packed, down = packed;
        up(i) += h;
        down(i) -= h;
        Eigen::VectorXd scratch;
        const double fd =
            (propensity_objective(X, arms, 1e-4, up, scratch) -
             propensity_objective(X, arms, 1e-4, down, scratch)) /
            (2 * h);
        CHECK(grad(i) == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("propensity fit separates arms along the signal axis") {
    Rng rng(5);
    const Eigen::Index n = 300;
    Eigen::MatrixXd X(n, 2);
    std::vector<int> arms;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = rng.normal();
        X(i, 0) = x;
        X(i, 1) = rng.normal();
        const double u = rng.uniform();
        // class 1 likely when x > 0, class 2 when x < 0
        if (u < 0.15)
            arms.push_back(0);
        else
            arms.push_back(x > 0 ? (u < 0.85 ? 1 : 2) : (u < 0.85 ? 2 : 1));
    }
    const auto model = fit_propensity(X, arms);
    CHECK(model.report.converged);
    CHECK(model.report.grad_norm <= 1e-8);

    const auto scores = propensity_score_matrix(model, X);
    for (Eigen::Index i = 0; i < n; ++i)
        CHECK(scores.row(i).sum() == doctest::Approx(1.0));
    Eigen::VectorXd hi(2), lo(2);
    hi << 2.0, 0.0;
    lo << -2.0, 0.0;
    CHECK(propensity_scores(model, hi)(1) > propensity_scores(model, lo)(1));
    CHECK(propensity_scores(model, lo)(2) > propensity_scores(model, hi)(2));

    CHECK_THROWS_AS((void)fit_propensity(X, std::vector<int>(5, 0)), InputError);
    CHECK_THROWS_AS((void)fit_propensity(X, std::vector<int>(n, 1)), InputError);
    auto bad = arms;
    bad[0] = 3;
    CHECK_THROWS_AS((void)fit_propensity(X, bad), InputError);
}

TEST_CASE("covariance matches the hand-computed sample formula") {
    Eigen::MatrixXd X(2, 2);
    X << 1, 2, 3, 6;
    const auto S = covariance(X);
    CHECK(S(0, 0) == doctest::Approx(2.0));
    CHECK(S(0, 1) == doctest::Approx(4.0));
    CHECK(S(1, 0) == doctest::Approx(4.0));
    CHECK(S(1, 1) == doctest::Approx(8.0));
    CHECK_THROWS_AS((void)covariance(Eigen::MatrixXd::Zero(1, 2)), InputError);
}

TEST_CASE("mahalanobis distance whitens by the covariance") {
    Eigen::MatrixXd S = Eigen::Vector2d(4.0, 1.0).asDiagonal();
    Eigen::Vector2d origin(0.0, 0.0);
    CHECK(mahalanobis(Eigen::Vector2d(2.0, 0.0), origin, S) == doctest::Approx(1.0));
    CHECK(mahalanobis(Eigen::Vector2d(0.0, 1.0), origin, S) == doctest::Approx(1.0));
    CHECK(mahalanobis(Eigen::Vector2d(2.0, 1.0), origin, S) == doctest::Approx(std::sqrt(2.0)));

    const MahalanobisTransform transform(S);
    CHECK((transform.apply(Eigen::Vector2d(2.0, 1.0)) - transform.apply(origin)).norm() ==
          doctest::Approx(std::sqrt(2.0)));

    // Null directions drop out of the distance entirely.
    Eigen::MatrixXd singular = Eigen::Vector2d(1.0, 0.0).asDiagonal();
    CHECK(mahalanobis(Eigen::Vector2d(0.0, 5.0), origin, singular) == doctest::Approx(0.0));
    CHECK(mahalanobis(Eigen::Vector2d(3.0, 7.0), origin, singular) == doctest::Approx(3.0));

    Eigen::MatrixXd negative = Eigen::Vector2d(1.0, -1.0).asDiagonal();
    CHECK_THROWS_AS((void)mahalanobis(origin, origin, negative), InputError);
    CHECK_THROWS_AS((void)mahalanobis(Eigen::Vector3d::Zero(), origin, S), InputError);
}

TEST_CASE("distance matrices agree with the scalar metrics") {
    Eigen::MatrixXd A(2, 2), B(1, 2);
    A << 0, 0, 3, 4;
    B << 0, 0;
    const auto euclid = distance_matrix(A, B, Metric::PropensityEuclidean);
    CHECK(euclid(0, 0) == doctest::Approx(0.0));
    CHECK(euclid(1, 0) == doctest::Approx(5.0));

    Eigen::MatrixXd S = Eigen::Vector2d(9.0, 16.0).asDiagonal();
    const auto maha = distance_matrix(A, B, Metric::MahalanobisOnPca, &S);
    CHECK(maha(1, 0) == doctest::Approx(std::sqrt(2.0)));

    CHECK_THROWS_AS((void)distance_matrix(A, B, Metric::MahalanobisOnPca), InputError);
    CHECK_THROWS_AS((void)distance_matrix(A, Eigen::MatrixXd::Zero(1, 3),
                                          Metric::PropensityEuclidean),
                    InputError);
}

TEST_CASE("metric names round-trip") {
    CHECK(metric_name(Metric::PropensityEuclidean) == std::string("propensity"));
    CHECK(metric_name(Metric::MahalanobisOnPca) == std::string("mahalanobis"));
    CHECK(metric_from_name("propensity") == Metric::PropensityEuclidean);
    CHECK(metric_from_name("mahalanobis-on-pca") == Metric::MahalanobisOnPca);
    CHECK_FALSE(metric_from_name("euclid").has_value());
}

TEST_CASE("fitted models survive json round-trips") {
    Eigen::MatrixXd X(4, 2);
    X << 0, 0, 1, 2, 2, 1, 3, 3;
    const auto pca = fit_pca(X, 2);
    const auto pca2 = pca_model_from_json(pca_model_to_json(pca));
    CHECK((pca2.loadings - pca.loadings).norm() == doctest::Approx(0.0));
    CHECK((pca2.mean - pca.mean).norm() == doctest::Approx(0.0));
    CHECK(pca2.total_variance == doctest::Approx(pca.total_variance));
    CHECK_THROWS_AS((void)pca_model_from_json("{\"format\":\"other\"}"), ParseError);

    Rng rng(9);
    Eigen::MatrixXd Xp(30, 1);
    std::vector<int> arms;
    for (Eigen::Index i = 0; i < 30; ++i) {
        Xp(i, 0) = rng.normal();
        arms.push_back(static_cast<int>(i) % 3);
    }
    const auto prop = fit_propensity(Xp, arms);
    const auto prop2 = propensity_model_from_json(propensity_model_to_json(prop));
    CHECK((prop2.coef - prop.coef).norm() == doctest::Approx(0.0));
    CHECK(prop2.lambda == prop.lambda);
    CHECK(prop2.report.converged == prop.report.converged);
    CHECK_THROWS_AS((void)propensity_model_from_json("{}"), ParseError);
}

}  // TEST_SUITE
