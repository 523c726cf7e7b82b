#include "replyfx/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace replyfx::optim {

namespace {

struct Evaluator {
    const ValueGrad& fn;
    int count = 0;
    double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
        ++count;
        return fn(x, grad);
    }
};

// Strong Wolfe line search (bracket + bisection zoom). Returns the accepted
// step and updates x/f/g in place; 0 on failure.
double wolfe_line_search(Evaluator& eval, Eigen::VectorXd& x, double& f, Eigen::VectorXd& g,
                         const Eigen::VectorXd& d, int max_evals) {
    constexpr double c1 = 1e-4;
    constexpr double c2 = 0.9;
    const double f0 = f;
    const double dg0 = g.dot(d);
    if (dg0 >= 0.0) return 0.0; // not a descent direction

    const Eigen::VectorXd x0 = x;
    Eigen::VectorXd g_trial(g.size());

    auto phi = [&](double alpha, double& dphi) {
        x = x0 + alpha * d;
        double value = eval(x, g_trial);
        dphi = g_trial.dot(d);
        return value;
    };

    double lo = 0.0, hi = 0.0;
    double f_lo = f0, dg_lo = dg0;
    double alpha_prev = 0.0, f_prev = f0;
    double alpha = 1.0;
    bool bracketed = false;

    int evals = 0;
    for (; evals < max_evals; ++evals) {
        double dg;
        double f_alpha = phi(alpha, dg);
        if (f_alpha > f0 + c1 * alpha * dg0 || (evals > 0 && f_alpha >= f_prev)) {
            lo = alpha_prev;
            hi = alpha;
            f_lo = f_prev;
            bracketed = true;
            break;
        }
        if (std::abs(dg) <= -c2 * dg0) {
            f = f_alpha;
            g = g_trial;
            return alpha;
        }
        if (dg >= 0.0) {
            lo = alpha;
            hi = alpha_prev;
            f_lo = f_alpha;
            bracketed = true;
            break;
        }
        alpha_prev = alpha;
        f_prev = f_alpha;
        alpha = std::min(alpha * 2.0, 1e10);
    }
    if (!bracketed) {
        x = x0;
        return 0.0;
    }
    (void)dg_lo;

    for (; evals < max_evals; ++evals) {
        double mid = 0.5 * (lo + hi);
        double dg;
        double f_mid = phi(mid, dg);
        if (f_mid > f0 + c1 * mid * dg0 || f_mid >= f_lo) {
            hi = mid;
        } else {
            if (std::abs(dg) <= -c2 * dg0) {
                f = f_mid;
                g = g_trial;
                return mid;
            }
            if (dg * (hi - lo) >= 0.0) hi = lo;
            lo = mid;
            f_lo = f_mid;
        }
        if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
    }
    // Sufficient decrease without curvature is still usable.
    double dg;
    double f_lo_final = lo > 0.0 ? phi(lo, dg) : f0;
    if (lo > 0.0 && f_lo_final < f0) {
        f = f_lo_final;
        g = g_trial;
        return lo;
    }
    x = x0;
    return 0.0;
}

}  // namespace

LbfgsResult lbfgs_minimize(const ValueGrad& fn, Eigen::VectorXd x0, const LbfgsOptions& options) {
    Evaluator eval{fn};
    LbfgsResult result;
    result.x = std::move(x0);
    const auto n = result.x.size();

    Eigen::VectorXd g(n);
    double f = eval(result.x, g);
    result.value_history.push_back(f);

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;

    for (int iter = 0; iter < options.max_iters; ++iter) {
        result.grad_norm = g.norm();
        if (result.grad_norm <= options.grad_tol) {
            result.converged = true;
            result.message = "gradient norm below tolerance";
            break;
        }

        // Two-loop recursion.
        Eigen::VectorXd q = g;
        std::vector<double> alpha_coef(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha_coef[static_cast<std::size_t>(i)] =
                rho_hist[static_cast<std::size_t>(i)] * s_hist[static_cast<std::size_t>(i)].dot(q);
            q -= alpha_coef[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)];
        }
        if (!s_hist.empty()) {
            const auto& s = s_hist.back();
            const auto& y = y_hist.back();
            q *= s.dot(y) / y.dot(y);
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha_coef[i] - beta) * s_hist[i];
        }
        Eigen::VectorXd d = -q;

        Eigen::VectorXd x_prev = result.x;
        Eigen::VectorXd g_prev = g;
        double step = wolfe_line_search(eval, result.x, f, g, d, options.max_line_search);
        if (step == 0.0) {
            // Retry once along steepest descent before giving up.
            d = -g;
            step = wolfe_line_search(eval, result.x, f, g, d, options.max_line_search);
            if (step == 0.0) {
                // No verifiable descent in either direction. If the gradient
                // already sits at the resolution limit of the objective this
                // is convergence, not failure.
                const double floor = std::sqrt(std::numeric_limits<double>::epsilon()) *
                                     std::max(1.0, std::abs(f));
                if (g.norm() <= floor) {
                    result.converged = true;
                    result.message = "no descent below the numeric resolution of the objective";
                } else {
                    result.message = "line search failed";
                }
                break;
            }
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }
        ++result.iterations;
        result.value_history.push_back(f);

        Eigen::VectorXd s = result.x - x_prev;
        Eigen::VectorXd y = g - g_prev;
        double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > options.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
    }
    result.grad_norm = g.norm();
    if (result.grad_norm <= options.grad_tol) {
        result.converged = true;
        if (result.message.empty()) result.message = "gradient norm below tolerance";
    } else if (result.message.empty()) {
        result.message = "iteration limit reached";
    }
    result.value = f;
    result.evaluations = eval.count;
    return result;
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& fn,
                            const Eigen::VectorXd& x, double step) {
    Eigen::VectorXd grad(x.size());
    Eigen::VectorXd probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe(i) = x(i) + step;
        double up = fn(probe);
        probe(i) = x(i) - step;
        double down = fn(probe);
        probe(i) = x(i);
        grad(i) = (up - down) / (2.0 * step);
    }
    return grad;
}

}  // namespace replyfx::optim
