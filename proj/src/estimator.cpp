#include "replyfx/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "replyfx/errors.hpp"
#include "replyfx/optim.hpp"
#include "replyfx/rng.hpp"
#include "replyfx/stats.hpp"

namespace replyfx::estimator {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

int DesignMatrix::column(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
        if (names[j] == name) return static_cast<int>(j);
    return -1;
}

const Coefficient* FitResult::find(const std::string& name) const {
    for (const auto& c : coefficients)
        if (c.name == name) return &c;
    return nullptr;
}

std::vector<double> vif_values(const Eigen::MatrixXd& x) {
    const auto n = x.rows();
    const auto p = x.cols();
    std::vector<double> out(static_cast<std::size_t>(p), 1.0);
    for (Eigen::Index j = 0; j < p; ++j) {
        const Eigen::VectorXd b = x.col(j);
        const double b_mean = b.mean();
        const double ss_tot = (b.array() - b_mean).square().sum();
        if (ss_tot <= 1e-12 * static_cast<double>(n) * std::max(1.0, b_mean * b_mean)) {
            out[static_cast<std::size_t>(j)] = kInf; // constant column
            continue;
        }
        Eigen::MatrixXd a(n, p); // intercept plus the other columns
        a.col(0).setOnes();
        Eigen::Index k = 1;
        for (Eigen::Index c = 0; c < p; ++c) {
            if (c == j) continue;
            a.col(k++) = x.col(c);
        }
        const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(b);
        const double ss_res = (b - a * coef).squaredNorm();
        double r2 = 1.0 - ss_res / ss_tot;
        if (r2 < 0.0) r2 = 0.0;
        out[static_cast<std::size_t>(j)] = r2 >= 1.0 - 1e-12 ? kInf : 1.0 / (1.0 - r2);
    }
    return out;
}

VifResult vif_prune(const DesignMatrix& design, double threshold,
                    const std::vector<std::string>& protect) {
    if (design.cols() < 2) throw InputError("vif_prune needs at least two columns");
    {
        std::vector<std::string> sorted = design.names;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw InputError("design column names must be unique");
    }
    VifResult result;
    result.design = design;
    if (design.rows() == 0) return result;

    auto is_protected = [&](const std::string& name) {
        return std::find(protect.begin(), protect.end(), name) != protect.end();
    };
    auto is_constant = [&](Eigen::Index j) {
        const Eigen::VectorXd& c = result.design.x.col(j);
        return (c.array() - c(0)).abs().maxCoeff() <= 1e-12 * std::max(1.0, std::abs(c(0)));
    };

    while (result.design.x.cols() > 1) {
        const auto vifs = vif_values(result.design.x);
        int worst = -1;
        double worst_vif = threshold;
        for (std::size_t j = 0; j < vifs.size(); ++j) {
            const bool removable =
                !is_protected(result.design.names[j]) || is_constant(static_cast<Eigen::Index>(j));
            if (!removable) continue;
            if (vifs[j] > worst_vif) {
                worst_vif = vifs[j];
                worst = static_cast<int>(j);
            }
        }
        if (worst < 0) break;
        result.removed.push_back({result.design.names[static_cast<std::size_t>(worst)], worst_vif});
        Eigen::MatrixXd kept(result.design.x.rows(), result.design.x.cols() - 1);
        Eigen::Index k = 0;
        for (Eigen::Index c = 0; c < result.design.x.cols(); ++c)
            if (c != worst) kept.col(k++) = result.design.x.col(c);
        result.design.x = std::move(kept);
        result.design.names.erase(result.design.names.begin() + worst);
    }
    return result;
}

namespace {

// Per-observation log-likelihood family on the linear predictor scale.
// The NB2 terms are anchored at the Poisson likelihood with exact finite
// sums over the integer count, so nothing cancels catastrophically when the
// size parameter grows toward the Poisson limit.
struct Family {
    bool nb = false;
    double r = 1.0;
    double log_r = 0.0;

    double ll(double y, double eta) const {
        if (!nb) return y * eta - softplus(eta);
        const double mu = std::exp(std::min(eta, 500.0));
        double value = y * eta - mu - std::lgamma(y + 1.0); // Poisson part
        if (y <= 100000.0) {
            for (double k = 0.0; k < y; k += 1.0) value += std::log1p((k - mu) / (r + mu));
        } else {
            value += std::lgamma(y + r) - std::lgamma(r) - y * std::log(r + mu);
        }
        const double t = mu / r;
        value += t < 1e-4 ? r * t * t * (0.5 - t / 3.0 + t * t / 4.0) : mu - r * std::log1p(t);
        return value;
    }
    double score(double y, double eta) const {
        if (!nb) return y - sigmoid(eta);
        return y - (y + r) * sigmoid(eta - log_r);
    }
    double weight(double y, double eta) const {
        if (!nb) {
            const double p = sigmoid(eta);
            return p * (1.0 - p);
        }
        const double pt = sigmoid(eta - log_r);
        return (y + r) * pt * (1.0 - pt);
    }
    double wprime(double y, double eta) const {
        if (!nb) {
            const double p = sigmoid(eta);
            return p * (1.0 - p) * (1.0 - 2.0 * p);
        }
        const double pt = sigmoid(eta - log_r);
        return (y + r) * pt * (1.0 - pt) * (1.0 - 2.0 * pt);
    }
    // Derivatives in rho = log r, via d/drho = r * d/dr. Every term is O(1/r)
    // individually, so the Poisson limit stays numerically clean.
    double dll_drho(double y, double eta) const {
        const double mu = std::exp(std::min(eta, 500.0));
        double value = 0.0;
        if (y <= 100000.0) {
            for (double k = 0.0; k < y; k += 1.0) value += r * (mu - k) / ((r + k) * (r + mu));
        } else {
            value += r * (stats::digamma(y + r) - stats::digamma(r)) - r * y / (r + mu);
        }
        const double t = mu / r;
        value += t < 1e-4 ? r * t * t * (-0.5 + 2.0 * t / 3.0 - 0.75 * t * t)
                          : r * (t / (1.0 + t) - std::log1p(t));
        return value;
    }
    double dscore_drho(double y, double eta) const {
        const double pt = sigmoid(eta - log_r);
        return -r * pt + (y + r) * pt * (1.0 - pt);
    }
    double dweight_drho(double y, double eta) const {
        const double pt = sigmoid(eta - log_r);
        const double w = (y + r) * pt * (1.0 - pt);
        return r * pt * (1.0 - pt) - w * (1.0 - 2.0 * pt);
    }
};

// Parameter vector layout: [beta (intercept first)] [rho if NB] [s if mixed].
struct Layout {
    int p = 0; // beta length including intercept
    bool nb = false;
    bool mixed = false;
    int dim() const { return p + (nb ? 1 : 0) + (mixed ? 1 : 0); }
    int rho_index() const { return p; }
    int s_index() const { return p + (nb ? 1 : 0); }
};

constexpr double kLogScaleClamp = 40.0; // |log r|, |log sigma| cap for numeric safety

// Mode of the cluster posterior in u, solved by safeguarded Newton on the
// strictly decreasing phi(u) = sum score(eta + u) - u / sigma2.
double cluster_mode(const Family& fam, const Eigen::VectorXd& xi, const Eigen::VectorXd& y,
                    const std::vector<int>& members, double tau) {
    double u = 0.0;
    double lo = -kInf, hi = kInf;
    for (int iter = 0; iter < 200; ++iter) {
        double phi = -u * tau;
        double h = tau;
        for (int i : members) {
            phi += fam.score(y(i), xi(i) + u);
            h += fam.weight(y(i), xi(i) + u);
        }
        if (phi > 0.0)
            lo = u;
        else
            hi = u;
        if (std::abs(phi) <= 1e-12 * std::max(1.0, h)) break;
        double next = u + phi / h;
        if (next <= lo || next >= hi) {
            if (std::isfinite(lo) && std::isfinite(hi))
                next = 0.5 * (lo + hi);
            else if (std::isfinite(lo))
                next = lo + std::max(1.0, 2.0 * (u - lo));
            else
                next = hi - std::max(1.0, 2.0 * (hi - u));
        }
        if (std::abs(next - u) <= 1e-14 * (1.0 + std::abs(u))) {
            u = next;
            break;
        }
        u = next;
    }
    return u;
}

// Mean negative log-likelihood and its analytic gradient. Mixed models use a
// per-cluster Laplace approximation; the gradient goes through the mode by
// the implicit function theorem, so the inner solve must be tight.
double nll_eval(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                const std::vector<std::vector<int>>& clusters, const Layout& lay, double ridge,
                const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
    const auto n = x.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    grad.setZero(lay.dim());

    Family fam;
    fam.nb = lay.nb;
    bool rho_clamped = false;
    if (lay.nb) {
        const double rho = theta(lay.rho_index());
        const double rho_eff = std::clamp(rho, -kLogScaleClamp, kLogScaleClamp);
        rho_clamped = rho_eff != rho;
        fam.log_r = rho_eff;
        fam.r = std::exp(rho_eff);
    }
    const Eigen::VectorXd beta = theta.head(lay.p);
    const Eigen::VectorXd xi = x * beta;

    double nll = 0.0;
    if (!lay.mixed) {
        for (Eigen::Index i = 0; i < n; ++i) {
            nll -= fam.ll(y(i), xi(i));
            const double sc = fam.score(y(i), xi(i));
            grad.head(lay.p) -= sc * x.row(i).transpose();
            if (lay.nb) grad(lay.rho_index()) -= fam.dll_drho(y(i), xi(i));
        }
    } else {
        const double s = theta(lay.s_index());
        const double s_eff = std::clamp(s, -kLogScaleClamp, kLogScaleClamp);
        const bool s_clamped = s_eff != s;
        const double sigma2 = std::exp(2.0 * s_eff);
        const double tau = std::exp(-2.0 * s_eff);

        for (const auto& members : clusters) {
            const double u = cluster_mode(fam, xi, y, members, tau);
            double a_val = -0.5 * u * u * tau;
            double w_sum = 0.0, wp_sum = 0.0;
            Eigen::VectorXd sx = Eigen::VectorXd::Zero(lay.p);
            Eigen::VectorXd wx = Eigen::VectorXd::Zero(lay.p);
            Eigen::VectorXd wpx = Eigen::VectorXd::Zero(lay.p);
            double dll_rho = 0.0, dscore_rho = 0.0, dweight_rho = 0.0;
            for (int i : members) {
                const double eta = xi(i) + u;
                a_val += fam.ll(y(i), eta);
                const double sc = fam.score(y(i), eta);
                const double w = fam.weight(y(i), eta);
                const double wp = fam.wprime(y(i), eta);
                w_sum += w;
                wp_sum += wp;
                sx += sc * x.row(i).transpose();
                wx += w * x.row(i).transpose();
                wpx += wp * x.row(i).transpose();
                if (lay.nb) {
                    dll_rho += fam.dll_drho(y(i), eta);
                    dscore_rho += fam.dscore_drho(y(i), eta);
                    dweight_rho += fam.dweight_drho(y(i), eta);
                }
            }
            const double h = w_sum + tau;
            nll -= a_val - 0.5 * std::log1p(sigma2 * w_sum);

            // d l / d beta = Sx - (Wpx + W' * du/dbeta) / (2H), du/dbeta = -Wx / H
            grad.head(lay.p) -= sx - (wpx - wp_sum / h * wx) / (2.0 * h);
            if (lay.nb && !rho_clamped)
                grad(lay.rho_index()) -=
                    dll_rho - (dweight_rho + wp_sum * dscore_rho / h) / (2.0 * h);
            if (!s_clamped)
                grad(lay.s_index()) -=
                    u * u * tau - w_sum / h - u * tau * wp_sum / (h * h);
        }
    }

    nll *= inv_n;
    grad *= inv_n;
    if (ridge > 0.0) {
        for (int j = 1; j < lay.p; ++j) {
            nll += 0.5 * ridge * beta(j) * beta(j);
            grad(j) += ridge * beta(j);
        }
    }
    return nll;
}

std::vector<std::vector<int>> group_clusters(const DesignMatrix& design) {
    const int n_ids = static_cast<int>(design.cluster_names.size());
    std::vector<std::vector<int>> groups(static_cast<std::size_t>(std::max(n_ids, 0)));
    for (std::size_t i = 0; i < design.cluster.size(); ++i) {
        const int id = design.cluster[i];
        if (id < 0 || id >= n_ids) throw IntegrityError("cluster id out of range");
        groups[static_cast<std::size_t>(id)].push_back(static_cast<int>(i));
    }
    groups.erase(std::remove_if(groups.begin(), groups.end(),
                                [](const auto& g) { return g.empty(); }),
                 groups.end());
    return groups;
}

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), x.cols() + 1);
    out.col(0).setOnes();
    out.rightCols(x.cols()) = x;
    return out;
}

// Observed information as the finite-difference Jacobian of the analytic
// gradient of the total (not mean) objective.
Eigen::MatrixXd observed_information(const optim::ValueGrad& fn, const Eigen::VectorXd& theta,
                                     double n_scale) {
    const auto d = theta.size();
    Eigen::MatrixXd hess(d, d);
    Eigen::VectorXd up(d), down(d), probe = theta;
    for (Eigen::Index k = 0; k < d; ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(theta(k)));
        probe(k) = theta(k) + h;
        fn(probe, up);
        probe(k) = theta(k) - h;
        fn(probe, down);
        probe(k) = theta(k);
        hess.col(k) = (up - down) / (2.0 * h);
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    return n_scale * hess;
}

Eigen::MatrixXd invert_information(const Eigen::MatrixXd& info, std::string& warning) {
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() == Eigen::Success)
        return llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
    const double tol = std::max(eig.eigenvalues().maxCoeff(), 1.0) * 1e-12;
    Eigen::VectorXd inv = eig.eigenvalues();
    for (Eigen::Index i = 0; i < inv.size(); ++i) inv(i) = inv(i) > tol ? 1.0 / inv(i) : 0.0;
    if (!warning.empty()) warning += "; ";
    warning += "information matrix singular, pseudo-inverse standard errors";
    return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

struct FitProblem {
    Eigen::MatrixXd x; // with intercept column
    Eigen::VectorXd y;
    std::vector<std::vector<int>> clusters;
    Layout lay;
};

FitResult run_fit(const FitProblem& prob, const DesignMatrix& design, Eigen::VectorXd theta0,
                  const FitOptions& options) {
    const auto n = prob.x.rows();
    double ridge = options.ridge;
    std::string warning;

    auto objective = [&](const Eigen::VectorXd& t, Eigen::VectorXd& g) {
        return nll_eval(prob.x, prob.y, prob.clusters, prob.lay, ridge, t, g);
    };

    optim::LbfgsOptions lopt;
    lopt.max_iters = options.max_iters;
    lopt.grad_tol = options.grad_tol;
    auto res = optim::lbfgs_minimize(objective, theta0, lopt);

    const auto separated = [&](const Eigen::VectorXd& t) {
        return t.head(prob.lay.p).cwiseAbs().maxCoeff() > 30.0;
    };
    if ((!res.converged || separated(res.x)) && ridge == 0.0) {
        if (!res.converged && !separated(res.x)) {
            std::ostringstream os;
            os << "fit did not converge: " << res.message << " after " << res.iterations
               << " iterations, gradient norm " << res.grad_norm;
            throw FitError(os.str());
        }
        warning = "separation suspected, refit with ridge penalty";
        ridge = 1e-3;
        res = optim::lbfgs_minimize(objective, theta0, lopt);
        if (!res.converged) {
            std::ostringstream os;
            os << "ridge fallback did not converge: " << res.message << " after "
               << res.iterations << " iterations, gradient norm " << res.grad_norm;
            throw FitError(os.str());
        }
    }

    FitResult fit;
    fit.random_intercept = prob.lay.mixed;
    fit.converged = res.converged;
    fit.iterations = res.iterations;
    fit.grad_norm = res.grad_norm;
    fit.warning = warning;
    fit.nll_trace = res.value_history;
    if (prob.lay.nb)
        fit.dispersion = std::exp(std::clamp(res.x(prob.lay.rho_index()), -kLogScaleClamp,
                                             kLogScaleClamp));
    if (prob.lay.mixed)
        fit.sigma2 = std::exp(2.0 * std::clamp(res.x(prob.lay.s_index()), -kLogScaleClamp,
                                               kLogScaleClamp));

    {
        // Report the unpenalized likelihood even after a ridge fallback.
        const double saved = ridge;
        ridge = 0.0;
        Eigen::VectorXd g(prob.lay.dim());
        fit.log_likelihood =
            -static_cast<double>(n) * nll_eval(prob.x, prob.y, prob.clusters, prob.lay, 0.0,
                                               res.x, g);
        ridge = saved;
    }

    const Eigen::MatrixXd info =
        observed_information(objective, res.x, static_cast<double>(n));
    const Eigen::MatrixXd cov = invert_information(info, fit.warning);
    fit.beta_cov = cov.topLeftCorner(prob.lay.p, prob.lay.p);

    fit.coefficients.reserve(static_cast<std::size_t>(prob.lay.p));
    for (int j = 0; j < prob.lay.p; ++j) {
        Coefficient c;
        c.name = j == 0 ? "(intercept)" : design.names[static_cast<std::size_t>(j - 1)];
        c.estimate = res.x(j);
        const double var = cov(j, j);
        c.se = var > 0.0 ? std::sqrt(var) : 0.0;
        if (c.se > 0.0) {
            c.z = c.estimate / c.se;
            c.p = stats::two_sided_wald_p(c.z);
        } else {
            c.z = kNan;
            c.p = kNan;
        }
        fit.coefficients.push_back(std::move(c));
    }
    return fit;
}

void validate_binary(const DesignMatrix& design, const std::vector<int>& outcomes) {
    if (static_cast<int>(outcomes.size()) != design.rows())
        throw SizeError("outcome length does not match design rows");
    bool any0 = false, any1 = false;
    for (int y : outcomes) {
        if (y != 0 && y != 1) throw InputError("binary outcomes must be 0 or 1");
        (y ? any1 : any0) = true;
    }
    if (!any0 || !any1) throw InputError("outcomes are all identical");
}

}  // namespace

FitResult fit_logistic(const DesignMatrix& design, const std::vector<int>& outcomes,
                       const FitOptions& options) {
    validate_binary(design, outcomes);
    FitProblem prob;
    prob.x = with_intercept(design.x);
    prob.y = Eigen::Map<const Eigen::VectorXi>(outcomes.data(),
                                               static_cast<Eigen::Index>(outcomes.size()))
                 .cast<double>();
    prob.lay = {static_cast<int>(prob.x.cols()), false, false};
    return run_fit(prob, design, Eigen::VectorXd::Zero(prob.lay.dim()), options);
}

FitResult fit_logistic_glmm(const DesignMatrix& design, const std::vector<int>& outcomes,
                            const FitOptions& options) {
    validate_binary(design, outcomes);
    FitProblem prob;
    prob.x = with_intercept(design.x);
    prob.y = Eigen::Map<const Eigen::VectorXi>(outcomes.data(),
                                               static_cast<Eigen::Index>(outcomes.size()))
                 .cast<double>();
    prob.clusters = group_clusters(design);
    if (prob.clusters.size() < 2) throw InputError("random intercepts need at least two clusters");
    prob.lay = {static_cast<int>(prob.x.cols()), false, true};
    Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(prob.lay.dim());
    theta0(prob.lay.s_index()) = std::log(0.5); // start at sigma^2 = 0.25
    return run_fit(prob, design, theta0, options);
}

FitResult fit_negative_binomial(const DesignMatrix& design, const std::vector<long long>& counts,
                                const NbOptions& options) {
    if (static_cast<int>(counts.size()) != design.rows())
        throw SizeError("count length does not match design rows");
    long long total = 0;
    for (long long c : counts) {
        if (c < 0) throw InputError("counts must be nonnegative");
        total += c;
    }
    if (total == 0) throw FitError("degenerate count model: all counts are zero");

    FitProblem prob;
    prob.x = with_intercept(design.x);
    prob.y.resize(static_cast<Eigen::Index>(counts.size()));
    for (std::size_t i = 0; i < counts.size(); ++i)
        prob.y(static_cast<Eigen::Index>(i)) = static_cast<double>(counts[i]);
    if (options.random_intercept) {
        prob.clusters = group_clusters(design);
        if (prob.clusters.size() < 2)
            throw InputError("random intercepts need at least two clusters");
    }
    prob.lay = {static_cast<int>(prob.x.cols()), true, options.random_intercept};
    Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(prob.lay.dim());
    theta0(0) = std::log(prob.y.mean());
    if (options.random_intercept) theta0(prob.lay.s_index()) = std::log(0.5);
    return run_fit(prob, design, theta0, options.fit);
}

double glmm_objective(const DesignMatrix& design, const std::vector<int>& outcomes,
                      const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
    FitProblem prob;
    prob.x = with_intercept(design.x);
    prob.y = Eigen::Map<const Eigen::VectorXi>(outcomes.data(),
                                               static_cast<Eigen::Index>(outcomes.size()))
                 .cast<double>();
    prob.clusters = group_clusters(design);
    prob.lay = {static_cast<int>(prob.x.cols()), false, true};
    if (theta.size() != prob.lay.dim()) throw SizeError("theta has the wrong dimension");
    Eigen::VectorXd g(prob.lay.dim());
    const double value = nll_eval(prob.x, prob.y, prob.clusters, prob.lay, 0.0, theta, g);
    if (grad) *grad = g;
    return value;
}

double nb_objective(const DesignMatrix& design, const std::vector<long long>& counts,
                    bool random_intercept, const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
    FitProblem prob;
    prob.x = with_intercept(design.x);
    prob.y.resize(static_cast<Eigen::Index>(counts.size()));
    for (std::size_t i = 0; i < counts.size(); ++i)
        prob.y(static_cast<Eigen::Index>(i)) = static_cast<double>(counts[i]);
    if (random_intercept) prob.clusters = group_clusters(design);
    prob.lay = {static_cast<int>(prob.x.cols()), true, random_intercept};
    if (theta.size() != prob.lay.dim()) throw SizeError("theta has the wrong dimension");
    Eigen::VectorXd g(prob.lay.dim());
    const double value = nll_eval(prob.x, prob.y, prob.clusters, prob.lay, 0.0, theta, g);
    if (grad) *grad = g;
    return value;
}

EffectEstimate average_treatment_effect(const FitResult& fit, const DesignMatrix& design,
                                        const std::string& contrast, int n_boot,
                                        std::uint64_t seed) {
    const int j = design.column(contrast);
    if (j < 0) throw InputError("contrast column not in design: " + contrast);
    if (fit.coefficients.size() != design.names.size() + 1)
        throw SizeError("fit and design have different coefficient counts");
    if (n_boot < 1) throw InputError("n_boot must be positive");

    const int p = static_cast<int>(fit.coefficients.size());
    Eigen::VectorXd beta(p);
    for (int k = 0; k < p; ++k) beta(k) = fit.coefficients[static_cast<std::size_t>(k)].estimate;

    const Eigen::MatrixXd x1 = with_intercept(design.x);
    // eta with the indicator zeroed; toggling adds beta_j once per unit.
    auto ate_for = [&](const Eigen::VectorXd& b) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < x1.rows(); ++i) {
            double eta0 = x1.row(i).dot(b) - b(j + 1) * x1(i, j + 1);
            acc += sigmoid(eta0 + b(j + 1)) - sigmoid(eta0);
        }
        return x1.rows() > 0 ? acc / static_cast<double>(x1.rows()) : 0.0;
    };

    EffectEstimate est;
    est.contrast = contrast;
    est.n = design.rows();
    est.ate = ate_for(beta);

    Eigen::MatrixXd root = Eigen::MatrixXd::Zero(p, p);
    if (fit.beta_cov.rows() == p && fit.beta_cov.cols() == p) {
        Eigen::LLT<Eigen::MatrixXd> llt(fit.beta_cov);
        if (llt.info() == Eigen::Success) {
            root = llt.matrixL();
        } else {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fit.beta_cov);
            Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
            root = eig.eigenvectors() * lam.asDiagonal();
        }
    }

    Rng rng(seed);
    std::vector<double> draws;
    draws.reserve(static_cast<std::size_t>(n_boot));
    int at_or_below = 0, at_or_above = 0;
    Eigen::VectorXd z(p);
    for (int b = 0; b < n_boot; ++b) {
        for (int k = 0; k < p; ++k) z(k) = rng.normal();
        const double value = ate_for(beta + root * z);
        draws.push_back(value);
        if (value <= 0.0) ++at_or_below;
        if (value >= 0.0) ++at_or_above;
    }
    est.lo = std::min(stats::quantile(draws, 0.025), est.ate);
    est.hi = std::max(stats::quantile(draws, 0.975), est.ate);
    est.p = std::min(1.0, 2.0 * std::min(at_or_below, at_or_above) /
                              static_cast<double>(n_boot));
    return est;
}

const std::array<const char*, 4> kTreatmentColumns = {
    "counterspeech", "hate_reply", "reply_toxicity", "toxicity_x_counterspeech"};

AssembledDesign build_design(const std::vector<ingest::UnitRecord>& units,
                             const std::array<std::vector<int>, 3>& arm_units,
                             const std::vector<std::array<int, 3>>& triplets,
                             double vif_threshold) {
    const auto& scalar_names = ingest::CovariateVector::scalar_names();
    AssembledDesign out;
    auto& d = out.design;
    d.names.assign(kTreatmentColumns.begin(), kTreatmentColumns.end());
    d.names.push_back("score");
    for (const auto& name : scalar_names)
        if (name != "score") d.names.push_back(name);

    const int n_rows = static_cast<int>(triplets.size()) * 3;
    d.x.resize(n_rows, static_cast<Eigen::Index>(d.names.size()));
    d.cluster.resize(static_cast<std::size_t>(n_rows));
    d.row_units.resize(static_cast<std::size_t>(n_rows));
    out.binary_outcomes.resize(static_cast<std::size_t>(n_rows));
    out.count_outcomes.resize(static_cast<std::size_t>(n_rows));

    std::map<std::string, int> cluster_ids;
    int row = 0;
    for (const auto& trip : triplets) {
        for (int arm = 0; arm < 3; ++arm) {
            const int pos = trip[static_cast<std::size_t>(arm)];
            if (pos < 0 || pos >= static_cast<int>(arm_units[static_cast<std::size_t>(arm)].size()))
                throw IntegrityError("triplet position out of range");
            const int global = arm_units[static_cast<std::size_t>(arm)][static_cast<std::size_t>(pos)];
            if (global < 0 || global >= static_cast<int>(units.size()))
                throw IntegrityError("unit index out of range");
            const auto& unit = units[static_cast<std::size_t>(global)];
            if (static_cast<int>(unit.arm) != arm)
                throw IntegrityError("unit arm does not match its triplet slot");

            const double cs = arm == 1 ? 1.0 : 0.0;
            const double tox = unit.reply_toxicity.value_or(0.0);
            d.x(row, 0) = cs;
            d.x(row, 1) = unit.hate_reply_flag ? 1.0 : 0.0;
            d.x(row, 2) = tox;
            d.x(row, 3) = tox * cs;
            const auto scalars = unit.covariates.scalars();
            Eigen::Index col = 4;
            for (std::size_t k = 0; k < scalar_names.size(); ++k)
                if (scalar_names[k] == "score") d.x(row, col++) = scalars[k];
            for (std::size_t k = 0; k < scalar_names.size(); ++k)
                if (scalar_names[k] != "score") d.x(row, col++) = scalars[k];

            auto [it, inserted] =
                cluster_ids.try_emplace(unit.cluster_id, static_cast<int>(cluster_ids.size()));
            (void)inserted;
            d.cluster[static_cast<std::size_t>(row)] = it->second;
            d.row_units[static_cast<std::size_t>(row)] = global;
            out.binary_outcomes[static_cast<std::size_t>(row)] = unit.outcome_engaged ? 1 : 0;
            out.count_outcomes[static_cast<std::size_t>(row)] = unit.outcome_thread_count;
            ++row;
        }
    }
    d.cluster_names.resize(cluster_ids.size());
    for (const auto& [name, id] : cluster_ids)
        d.cluster_names[static_cast<std::size_t>(id)] = name;

    if (n_rows > 0) {
        std::vector<std::string> protect(kTreatmentColumns.begin(), kTreatmentColumns.end());
        protect.push_back("score");
        auto pruned = vif_prune(d, vif_threshold, protect);
        pruned.design.cluster = std::move(d.cluster);
        pruned.design.cluster_names = std::move(d.cluster_names);
        pruned.design.row_units = std::move(d.row_units);
        out.design = std::move(pruned.design);
        out.vif_removed = std::move(pruned.removed);
    }
    return out;
}

CohortEstimate estimate_effects(const std::vector<ingest::UnitRecord>& units,
                                const std::array<std::vector<int>, 3>& arm_units,
                                const std::vector<std::array<int, 3>>& triplets,
                                const EstimationOptions& options) {
    if (static_cast<int>(triplets.size()) < options.min_triplets) {
        std::ostringstream os;
        os << "matched sample has " << triplets.size() << " triplets, need at least "
           << options.min_triplets;
        throw InsufficientSampleError(os.str());
    }
    auto assembled = build_design(units, arm_units, triplets, options.vif_threshold);

    CohortEstimate out;
    out.n_triplets = static_cast<int>(triplets.size());
    out.fit = options.random_intercept
                  ? fit_logistic_glmm(assembled.design, assembled.binary_outcomes, options.fit)
                  : fit_logistic(assembled.design, assembled.binary_outcomes, options.fit);
    out.counterspeech = average_treatment_effect(out.fit, assembled.design, "counterspeech",
                                                 options.n_boot, options.seed);
    out.hate_reply = average_treatment_effect(out.fit, assembled.design, "hate_reply",
                                              options.n_boot, options.seed + 1);
    return out;
}

const char* subset_mode_name(SubsetMode mode) {
    return mode == SubsetMode::ToxicOnly ? "toxic-only" : "nontoxic-only";
}

SubsetMode subset_mode_from_name(const std::string& name) {
    if (name == "toxic-only" || name == "toxic") return SubsetMode::ToxicOnly;
    if (name == "nontoxic-only" || name == "nontoxic") return SubsetMode::NontoxicOnly;
    throw InputError("unknown subset mode: " + name);
}

EffectEstimate subset_effect(const std::vector<ingest::UnitRecord>& units,
                             const std::array<std::vector<int>, 3>& arm_units,
                             const std::vector<std::array<int, 3>>& triplets,
                             double toxicity_threshold, SubsetMode mode,
                             const EstimationOptions& options) {
    std::vector<std::array<int, 3>> kept;
    kept.reserve(triplets.size());
    for (const auto& trip : triplets) {
        const int pos = trip[1];
        if (pos < 0 || pos >= static_cast<int>(arm_units[1].size()))
            throw IntegrityError("triplet position out of range");
        const auto& unit = units[static_cast<std::size_t>(arm_units[1][static_cast<std::size_t>(pos)])];
        if (!unit.reply_toxicity.has_value())
            throw InputError("counterspeech unit without reply toxicity");
        const bool toxic = *unit.reply_toxicity > toxicity_threshold;
        if (toxic == (mode == SubsetMode::ToxicOnly)) kept.push_back(trip);
    }
    if (static_cast<int>(kept.size()) < options.min_triplets) {
        std::ostringstream os;
        os << subset_mode_name(mode) << " subset at threshold " << toxicity_threshold << " keeps "
           << kept.size() << " triplets, need at least " << options.min_triplets;
        throw InsufficientSampleError(os.str());
    }
    auto est = estimate_effects(units, arm_units, kept, options).counterspeech;
    est.contrast = std::string("counterspeech:") + subset_mode_name(mode);
    return est;
}

FollowupCurve toxic_followup_curve(const std::vector<ReplyObs>& replies, int n_bins,
                                   double threshold) {
    if (n_bins < 1) throw InputError("need at least one toxicity bin");
    FollowupCurve curve;
    curve.threshold = threshold;
    for (auto& bins : curve.per_class) {
        bins.resize(static_cast<std::size_t>(n_bins));
        for (int b = 0; b < n_bins; ++b) {
            bins[static_cast<std::size_t>(b)].lo = static_cast<double>(b) / n_bins;
            bins[static_cast<std::size_t>(b)].hi = static_cast<double>(b + 1) / n_bins;
        }
    }

    std::array<std::vector<int>, labeler::kNumClasses> toxic_counts;
    for (auto& v : toxic_counts) v.assign(static_cast<std::size_t>(n_bins), 0);
    for (const auto& reply : replies) {
        const int cls = static_cast<int>(reply.label);
        if (cls < 0 || cls >= labeler::kNumClasses) throw InputError("reply label out of range");
        int b = static_cast<int>(std::floor(reply.toxicity * n_bins));
        b = std::clamp(b, 0, n_bins - 1);
        auto& bin = curve.per_class[static_cast<std::size_t>(cls)][static_cast<std::size_t>(b)];
        for (double fu : reply.followup_toxicities) {
            ++bin.n;
            if (fu > threshold) ++toxic_counts[static_cast<std::size_t>(cls)][static_cast<std::size_t>(b)];
        }
    }
    for (int cls = 0; cls < labeler::kNumClasses; ++cls) {
        for (int b = 0; b < n_bins; ++b) {
            auto& bin = curve.per_class[static_cast<std::size_t>(cls)][static_cast<std::size_t>(b)];
            if (bin.n == 0) continue;
            bin.empty = false;
            bin.p = static_cast<double>(toxic_counts[static_cast<std::size_t>(cls)][static_cast<std::size_t>(b)]) /
                    bin.n;
            bin.se = stats::binomial_se(bin.p, bin.n);
        }
    }
    return curve;
}

}  // namespace replyfx::estimator
