#pragma once

#include <Eigen/Dense>

#include <functional>

namespace levcool {

struct LmOptions {
    int max_iterations = 200;
    double rel_step_tol = 1e-8;
    double initial_lambda = 1e-3;
};

struct LmResult {
    Eigen::VectorXd x;
    Eigen::MatrixXd covariance;  // (J^T J)^-1 of the whitened residuals
    double chi2 = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Residuals must already be divided by their standard deviations.
using ResidualFn = std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& r)>;

// Damped Gauss-Newton with monotone decrease of |r|^2. `scale` sets the typical
// magnitude of each parameter; the solver works on x / scale.
LmResult levenberg_marquardt(const ResidualFn& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& scale,
                             const LmOptions& opt = {});

}  // namespace levcool
