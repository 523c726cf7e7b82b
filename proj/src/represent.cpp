#include "replyfx/represent.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace replyfx::represent {

using nlohmann::json;

Assembled assemble_features(const std::vector<ingest::UnitRecord>& units,
                            const std::vector<int>& scalar_keep) {
    if (units.empty()) throw InputError("assemble_features: no units");
    const auto emb_dim = units.front().covariates.embedding.size();
    const auto& scalar_names = ingest::CovariateVector::scalar_names();
    for (int idx : scalar_keep)
        if (idx < 0 || idx >= static_cast<int>(scalar_names.size()))
            throw InputError("assemble_features: scalar index out of range");

    Assembled out;
    out.X.resize(static_cast<Eigen::Index>(units.size()),
                 static_cast<Eigen::Index>(emb_dim + scalar_keep.size()));
    for (std::size_t i = 0; i < units.size(); ++i) {
        const auto& cov = units[i].covariates;
        if (cov.embedding.size() != emb_dim)
            throw InputError("assemble_features: inconsistent embedding dimension");
        for (std::size_t j = 0; j < emb_dim; ++j)
            out.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cov.embedding[j];
        auto scalars = cov.scalars();
        for (std::size_t j = 0; j < scalar_keep.size(); ++j)
            out.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(emb_dim + j)) =
                scalars[static_cast<std::size_t>(scalar_keep[j])];
    }
    out.names.reserve(emb_dim + scalar_keep.size());
    for (std::size_t j = 0; j < emb_dim; ++j) out.names.push_back("emb_" + std::to_string(j));
    for (int idx : scalar_keep) out.names.push_back(scalar_names[static_cast<std::size_t>(idx)]);
    return out;
}

Standardized standardize(const Eigen::MatrixXd& X) {
    if (X.rows() < 2) throw InputError("standardize: need at least 2 rows");
    Standardized out;
    const Eigen::Index n = X.rows(), d = X.cols();
    out.params.mean = X.colwise().mean();
    out.params.sd.resize(d);
    out.params.constant.assign(static_cast<std::size_t>(d), false);
    out.X.resize(n, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const Eigen::VectorXd centered = X.col(j).array() - out.params.mean(j);
        const double var = centered.squaredNorm() / static_cast<double>(n - 1);
        const double sd = std::sqrt(var);
        if (sd == 0.0) {
            out.params.sd(j) = 0.0;
            out.params.constant[static_cast<std::size_t>(j)] = true;
            out.X.col(j).setZero();
        } else {
            out.params.sd(j) = sd;
            out.X.col(j) = centered / sd;
        }
    }
    return out;
}

Eigen::MatrixXd apply_standardize(const StandardizeParams& params, const Eigen::MatrixXd& X) {
    if (X.cols() != params.mean.size())
        throw InputError("apply_standardize: column count mismatch");
    Eigen::MatrixXd out(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        if (params.constant[static_cast<std::size_t>(j)])
            out.col(j).setZero();
        else
            out.col(j) = (X.col(j).array() - params.mean(j)) / params.sd(j);
    }
    return out;
}

PCAModel fit_pca(const Eigen::MatrixXd& X, int n_components, const scorers::WarnFn& warn) {
    if (X.rows() <= n_components)
        throw InputError("fit_pca: need more rows than components");
    PCAModel model;
    model.mean = X.colwise().mean();
    Eigen::MatrixXd centered = X.rowwise() - model.mean.transpose();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double denom = static_cast<double>(X.rows() - 1);

    model.total_variance = sv.array().square().sum() / denom;
    const double tol = sv.size() > 0 ? sv(0) * 1e-10 : 0.0;
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > tol) ++rank;
    int k = std::min(n_components, rank);
    if (k < n_components && warn)
        warn("pca rank " + std::to_string(rank) + " below requested " +
             std::to_string(n_components) + " components");
    if (k == 0) throw InputError("fit_pca: input has zero variance");

    model.loadings.resize(k, X.cols());
    model.eigenvalues.resize(k);
    model.explained_fractions.resize(k);
    for (int i = 0; i < k; ++i) {
        Eigen::VectorXd v = svd.matrixV().col(i);
        // Deterministic sign: largest-magnitude coefficient positive.
        Eigen::Index arg_max = 0;
        v.cwiseAbs().maxCoeff(&arg_max);
        if (v(arg_max) < 0.0) v = -v;
        model.loadings.row(i) = v.transpose();
        model.eigenvalues(i) = sv(i) * sv(i) / denom;
        model.explained_fractions(i) =
            model.total_variance > 0.0 ? model.eigenvalues(i) / model.total_variance : 0.0;
    }
    return model;
}

Eigen::MatrixXd project(const PCAModel& model, const Eigen::MatrixXd& X) {
    if (X.cols() != model.mean.size()) throw InputError("project: column count mismatch");
    return (X.rowwise() - model.mean.transpose()) * model.loadings.transpose();
}

// ---------------------------------------------------------------------------
// Propensity model
// ---------------------------------------------------------------------------

namespace {

// Coefficients are packed column-major: class c occupies [(d+1)*c, (d+1)*(c+1)).
Eigen::MatrixXd unpack(const Eigen::VectorXd& packed, Eigen::Index d1) {
    Eigen::MatrixXd B(d1, 3);
    for (Eigen::Index c = 0; c < 3; ++c) B.col(c) = packed.segment(d1 * c, d1);
    return B;
}

Eigen::VectorXd pack(const Eigen::MatrixXd& B) {
    Eigen::VectorXd packed(B.rows() * 3);
    for (Eigen::Index c = 0; c < 3; ++c) packed.segment(B.rows() * c, B.rows()) = B.col(c);
    return packed;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd P(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
        P.row(i) = e / e.sum();
    }
    return P;
}

}  // namespace

double propensity_objective(const Eigen::MatrixXd& X, const std::vector<int>& arms, double lambda,
                            const Eigen::VectorXd& packed, Eigen::VectorXd& grad) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d1 = X.cols() + 1;
    Eigen::MatrixXd B = unpack(packed, d1);

    Eigen::MatrixXd Xa(n, d1);
    Xa.col(0).setOnes();
    Xa.rightCols(X.cols()) = X;

    Eigen::MatrixXd logits = Xa * B;
    Eigen::MatrixXd P = softmax_rows(logits);

    double nll = 0.0;
    Eigen::MatrixXd R = P; // residuals P - Y
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = arms[static_cast<std::size_t>(i)];
        nll -= std::log(std::max(P(i, y), 1e-300));
        R(i, y) -= 1.0;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    Eigen::MatrixXd G = inv_n * (Xa.transpose() * R) + lambda * B;
    grad = pack(G);
    return inv_n * nll + 0.5 * lambda * packed.squaredNorm();
}

PropensityModel fit_propensity(const Eigen::MatrixXd& X, const std::vector<int>& arms,
                               const PropensityOptions& options) {
    if (static_cast<std::size_t>(X.rows()) != arms.size())
        throw InputError("fit_propensity: arms must cover all rows");
    std::array<int, 3> counts{};
    for (int a : arms) {
        if (a < 0 || a > 2) throw InputError("fit_propensity: arm index outside {0,1,2}");
        ++counts[static_cast<std::size_t>(a)];
    }
    for (int c = 0; c < 3; ++c)
        if (counts[static_cast<std::size_t>(c)] == 0)
            throw InputError("fit_propensity: every arm needs at least one unit");

    const Eigen::Index d1 = X.cols() + 1;
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(d1 * 3);
    auto objective = [&](const Eigen::VectorXd& packed, Eigen::VectorXd& grad) {
        return propensity_objective(X, arms, options.lambda, packed, grad);
    };
    auto fit = optim::lbfgs_minimize(objective, std::move(x0), options.lbfgs);

    PropensityModel model;
    model.coef = unpack(fit.x, d1);
    model.lambda = options.lambda;
    model.report = {fit.converged, fit.iterations, fit.grad_norm, fit.value, fit.message};
    if (!fit.converged)
        throw FitError("propensity fit did not converge: " + fit.message + " (iterations " +
                       std::to_string(fit.iterations) + ", grad norm " +
                       std::to_string(fit.grad_norm) + ")");
    return model;
}

Eigen::Vector3d propensity_scores(const PropensityModel& model, const Eigen::VectorXd& x) {
    if (x.size() + 1 != model.coef.rows())
        throw InputError("propensity_scores: feature dimension mismatch");
    Eigen::Vector3d logits;
    for (int c = 0; c < 3; ++c)
        logits(c) = model.coef(0, c) + model.coef.col(c).tail(x.size()).dot(x);
    const double m = logits.maxCoeff();
    Eigen::Vector3d e = (logits.array() - m).exp();
    return e / e.sum();
}

Eigen::MatrixXd propensity_score_matrix(const PropensityModel& model, const Eigen::MatrixXd& X) {
    Eigen::MatrixXd out(X.rows(), 3);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        out.row(i) = propensity_scores(model, X.row(i).transpose()).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Mahalanobis
// ---------------------------------------------------------------------------

Eigen::MatrixXd covariance(const Eigen::MatrixXd& X) {
    if (X.rows() < 2) throw InputError("covariance: need at least 2 rows");
    Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
    return centered.transpose() * centered / static_cast<double>(X.rows() - 1);
}

MahalanobisTransform::MahalanobisTransform(const Eigen::MatrixXd& cov) {
    if (cov.rows() != cov.cols()) throw InputError("mahalanobis: covariance must be square");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw FitError("mahalanobis: eigendecomposition failed");
    const Eigen::VectorXd& values = eig.eigenvalues();
    const double max_ev = values.size() > 0 ? values.maxCoeff() : 0.0;
    if (values.minCoeff() < -1e-9 * std::max(1.0, max_ev))
        throw InputError("mahalanobis: covariance not positive semidefinite");
    // Null directions (eigenvalues below tolerance) drop out: pseudo-inverse.
    const double tol = std::max(max_ev, 1.0) * 1e-12;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < values.size(); ++i)
        if (values(i) > tol) keep.push_back(i);
    whitener.resize(cov.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k)
        whitener.col(static_cast<Eigen::Index>(k)) =
            eig.eigenvectors().col(keep[k]) / std::sqrt(values(keep[k]));
}

double mahalanobis(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& S) {
    if (x.size() != y.size() || x.size() != S.rows())
        throw InputError("mahalanobis: dimension mismatch");
    MahalanobisTransform transform(S);
    return (transform.apply(x) - transform.apply(y)).norm();
}

const char* metric_name(Metric m) {
    return m == Metric::PropensityEuclidean ? "propensity" : "mahalanobis";
}

std::optional<Metric> metric_from_name(std::string_view name) {
    if (name == "propensity" || name == "propensity-euclidean") return Metric::PropensityEuclidean;
    if (name == "mahalanobis" || name == "mahalanobis-on-pca") return Metric::MahalanobisOnPca;
    return std::nullopt;
}

Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& group_a, const Eigen::MatrixXd& group_b,
                                Metric metric, const Eigen::MatrixXd* pooled_covariance) {
    if (group_a.cols() != group_b.cols())
        throw InputError("distance_matrix: representation dimension mismatch");
    Eigen::MatrixXd A = group_a, B = group_b;
    if (metric == Metric::MahalanobisOnPca) {
        if (!pooled_covariance)
            throw InputError("distance_matrix: mahalanobis metric needs the pooled covariance");
        MahalanobisTransform transform(*pooled_covariance);
        A = group_a * transform.whitener;
        B = group_b * transform.whitener;
    }
    Eigen::MatrixXd out(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < B.rows(); ++j)
            out(i, j) = (A.row(i) - B.row(j)).norm();
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
    if (!rows.is_array() || rows.empty()) throw ParseError("expected matrix rows");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows[0].size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<double>();
    return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Eigen::VectorXd vector_from_json(const json& arr) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = arr[static_cast<std::size_t>(i)].get<double>();
    return v;
}

}  // namespace

std::string pca_model_to_json(const PCAModel& model) {
    json doc = {{"format", "pca_model"},
                {"version", 1},
                {"loadings", matrix_to_json(model.loadings)},
                {"eigenvalues", vector_to_json(model.eigenvalues)},
                {"explained_fractions", vector_to_json(model.explained_fractions)},
                {"mean", vector_to_json(model.mean)},
                {"total_variance", model.total_variance}};
    return doc.dump();
}

PCAModel pca_model_from_json(const std::string& text) {
    json doc = json::parse(text);
    if (doc.value("format", "") != "pca_model" || doc.value("version", 0) != 1)
        throw ParseError("not a version-1 pca_model document");
    PCAModel model;
    model.loadings = matrix_from_json(doc.at("loadings"));
    model.eigenvalues = vector_from_json(doc.at("eigenvalues"));
    model.explained_fractions = vector_from_json(doc.at("explained_fractions"));
    model.mean = vector_from_json(doc.at("mean"));
    model.total_variance = doc.at("total_variance").get<double>();
    return model;
}

std::string propensity_model_to_json(const PropensityModel& model) {
    json doc = {{"format", "propensity_model"},
                {"version", 1},
                {"coef", matrix_to_json(model.coef)},
                {"lambda", model.lambda},
                {"class_order", {"no_reply", "counterspeech", "other_reply"}},
                {"converged", model.report.converged},
                {"iterations", model.report.iterations},
                {"grad_norm", model.report.grad_norm}};
    return doc.dump();
}

PropensityModel propensity_model_from_json(const std::string& text) {
    json doc = json::parse(text);
    if (doc.value("format", "") != "propensity_model" || doc.value("version", 0) != 1)
        throw ParseError("not a version-1 propensity_model document");
    PropensityModel model;
    model.coef = matrix_from_json(doc.at("coef"));
    model.lambda = doc.at("lambda").get<double>();
    model.report.converged = doc.at("converged").get<bool>();
    model.report.iterations = doc.at("iterations").get<int>();
    model.report.grad_norm = doc.at("grad_norm").get<double>();
    return model;
}

}  // namespace replyfx::represent
