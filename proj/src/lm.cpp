#include "levcool/lm.hpp"

#include <cmath>

#include "levcool/errors.hpp"

namespace levcool {

namespace {

Eigen::MatrixXd jacobian(const ResidualFn& f, const Eigen::VectorXd& u, const Eigen::VectorXd& scale,
                         Eigen::Index m) {
    const Eigen::Index p = u.size();
    Eigen::MatrixXd j(m, p);
    Eigen::VectorXd up = u, rp(m), rm(m);
    for (Eigen::Index k = 0; k < p; ++k) {
        double h = 1e-6 * std::max(1.0, std::abs(u(k)));
        up(k) = u(k) + h;
        f(up.cwiseProduct(scale), rp);
        up(k) = u(k) - h;
        f(up.cwiseProduct(scale), rm);
        up(k) = u(k);
        j.col(k) = (rp - rm) / (2.0 * h);
    }
    return j;
}

}  // namespace

LmResult levenberg_marquardt(const ResidualFn& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& scale,
                             const LmOptions& opt) {
    if (x0.size() != scale.size()) throw InvalidArgument("parameter and scale sizes differ");
    for (Eigen::Index k = 0; k < scale.size(); ++k)
        if (!(scale(k) != 0.0) || !std::isfinite(scale(k))) throw InvalidArgument("parameter scale must be nonzero");
    Eigen::VectorXd u = x0.cwiseQuotient(scale);
    Eigen::VectorXd r;
    f(x0, r);
    const Eigen::Index m = r.size();
    if (m < x0.size()) throw InvalidArgument("fewer residuals than parameters");
    double chi2 = r.squaredNorm();
    if (!std::isfinite(chi2)) throw NonConvergenceError("residuals not finite at the initial guess");

    LmResult res;
    double lambda = opt.initial_lambda;
    Eigen::MatrixXd j = jacobian(f, u, scale, m);
    Eigen::VectorXd r_new(m);
    for (int it = 0; it < opt.max_iterations; ++it) {
        res.iterations = it + 1;
        Eigen::MatrixXd jtj = j.transpose() * j;
        Eigen::VectorXd g = j.transpose() * r;
        bool accepted = false;
        Eigen::VectorXd step;
        for (int tries = 0; tries < 40; ++tries) {
            Eigen::MatrixXd a = jtj;
            for (Eigen::Index k = 0; k < a.rows(); ++k) a(k, k) += lambda * std::max(jtj(k, k), 1e-30);
            step = a.ldlt().solve(-g);
            Eigen::VectorXd u_new = u + step;
            f(u_new.cwiseProduct(scale), r_new);
            double chi2_new = r_new.squaredNorm();
            if (std::isfinite(chi2_new) && chi2_new <= chi2) {
                u = u_new;
                r = r_new;
                chi2 = chi2_new;
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                break;
            }
            lambda *= 4.0;
            if (step.norm() <= opt.rel_step_tol * (u.norm() + 1e-12) * 1e-3) break;
        }
        double rel = step.norm() / (u.norm() + 1e-12);
        if (!accepted || rel < opt.rel_step_tol) {
            res.converged = true;
            break;
        }
        j = jacobian(f, u, scale, m);
    }
    if (!res.converged) throw NonConvergenceError("least-squares fit did not converge in the iteration budget");

    j = jacobian(f, u, scale, m);
    Eigen::MatrixXd jtj = j.transpose() * j;
    Eigen::MatrixXd cov_u = jtj.ldlt().solve(Eigen::MatrixXd::Identity(jtj.rows(), jtj.cols()));
    res.x = u.cwiseProduct(scale);
    res.covariance = scale.asDiagonal() * cov_u * scale.asDiagonal();
    res.chi2 = chi2;
    return res;
}

}  // namespace levcool
