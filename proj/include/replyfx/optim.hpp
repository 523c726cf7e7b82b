#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace replyfx::optim {

// Objective callback: fills grad and returns the value at x.
using ValueGrad = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
    int max_iters = 1000;
    double grad_tol = 1e-8; // on the Euclidean norm of the gradient
    int history = 10;
    int max_line_search = 60;
};

struct LbfgsResult {
    Eigen::VectorXd x;
    double value = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    std::string message;
    std::vector<double> value_history; // objective at x0 and after each accepted step
};

// Limited-memory BFGS with a strong Wolfe line search. Deterministic: no
// randomness, fixed evaluation order.
LbfgsResult lbfgs_minimize(const ValueGrad& fn, Eigen::VectorXd x0, const LbfgsOptions& options = {});

// Central finite-difference gradient, for gradient verification in tests.
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& fn,
                            const Eigen::VectorXd& x, double step = 1e-5);

}  // namespace replyfx::optim
