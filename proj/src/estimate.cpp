#include "levcool/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "levcool/errors.hpp"
#include "levcool/lm.hpp"

namespace levcool {

bool FitResult::has(const std::string& name) const {
    return std::find(names.begin(), names.end(), name) != names.end();
}

double FitResult::value(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw InvalidArgument("fit result has no parameter " + name);
    return values[static_cast<std::size_t>(it - names.begin())];
}

double FitResult::sigma(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw InvalidArgument("fit result has no parameter " + name);
    return sigmas[static_cast<std::size_t>(it - names.begin())];
}

void FitResult::set(const std::string& name, double v, double s) {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
        names.push_back(name);
        values.push_back(v);
        sigmas.push_back(s);
    } else {
        auto i = static_cast<std::size_t>(it - names.begin());
        values[i] = v;
        sigmas[i] = s;
    }
}

bool FitResult::flagged(const std::string& f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
}

void FitResult::validate() const {
    if (names.size() != values.size() || names.size() != sigmas.size())
        throw InvalidArgument("fit result lengths inconsistent");
    for (double s : sigmas)
        if (s < 0.0) throw InvalidArgument("negative fit sigma");
}

namespace {

struct Band {
    std::vector<double> w, y, se;  // se: relative standard error per bin (1/sqrt(n))
};

Band select(const std::vector<double>& grid, const std::vector<double>& y, long n_avg, const FrequencyMask& mask) {
    Band b;
    auto keep = mask.keep(grid);
    double rel = 1.0 / std::sqrt(static_cast<double>(std::max(1L, n_avg)));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!keep[i]) continue;
        b.w.push_back(grid[i]);
        b.y.push_back(y[i]);
        b.se.push_back(rel);
    }
    return b;
}

std::vector<double> smooth(const std::vector<double>& y, std::size_t half) {
    const std::size_t n = y.size();
    std::vector<double> cum(n + 1, 0.0), out(n);
    for (std::size_t i = 0; i < n; ++i) cum[i + 1] = cum[i] + y[i];
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t a = i >= half ? i - half : 0;
        std::size_t b = std::min(n, i + half + 1);
        out[i] = (cum[b] - cum[a]) / static_cast<double>(b - a);
    }
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    auto mid = v.begin() + static_cast<long>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

// Floor estimate from the outer tenth of the band on each side.
double edge_floor(const std::vector<double>& y) {
    std::size_t m = std::max<std::size_t>(1, y.size() / 10);
    std::vector<double> e(y.begin(), y.begin() + static_cast<long>(m));
    e.insert(e.end(), y.end() - static_cast<long>(m), y.end());
    return median(e);
}

// Peak-normalized Lorentzian, 1 at omega = w0.
inline double lpk(double w, double w0, double g) {
    double d = w0 * w0 - w * w;
    return g * g * w0 * w0 / (d * d + g * g * w * w);
}

struct PeakGuess {
    double w0, gamma, height;
};

PeakGuess guess_peak(const std::vector<double>& w, const std::vector<double>& ys, double floor) {
    std::size_t ip = static_cast<std::size_t>(std::max_element(ys.begin(), ys.end()) - ys.begin());
    double h = ys[ip] - floor;
    double half = floor + 0.5 * h;
    double wl = std::numeric_limits<double>::quiet_NaN(), wr = wl;
    for (std::size_t i = ip; i-- > 0;)
        if (ys[i] < half) {
            double t = (half - ys[i]) / (ys[i + 1] - ys[i]);
            wl = w[i] + t * (w[i + 1] - w[i]);
            break;
        }
    for (std::size_t i = ip + 1; i < ys.size(); ++i)
        if (ys[i] < half) {
            double t = (ys[i - 1] - half) / (ys[i - 1] - ys[i]);
            wr = w[i - 1] + t * (w[i] - w[i - 1]);
            break;
        }
    double g;
    if (std::isfinite(wl) && std::isfinite(wr)) g = wr - wl;
    else if (std::isfinite(wl)) g = 2.0 * (w[ip] - wl);
    else if (std::isfinite(wr)) g = 2.0 * (wr - w[ip]);
    else g = 0.25 * (w.back() - w.front());
    double dw = w.size() > 1 ? (w.back() - w.front()) / static_cast<double>(w.size() - 1) : 1.0;
    g = std::max(g, 2.0 * dw);
    return {w[ip], g, h};
}

double propagate(const Eigen::VectorXd& grad, const Eigen::MatrixXd& cov) {
    double v = grad.dot(cov * grad);
    return std::sqrt(std::max(v, 0.0));
}

// Numerical gradient of a scalar function of the parameter vector.
template <class F>
Eigen::VectorXd gradient(F f, const Eigen::VectorXd& x) {
    Eigen::VectorXd g(x.size()), xp = x;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        double h = 1e-6 * std::max(std::abs(x(k)), 1e-300);
        xp(k) = x(k) + h;
        double fp = f(xp);
        xp(k) = x(k) - h;
        double fm = f(xp);
        xp(k) = x(k);
        g(k) = (fp - fm) / (2.0 * h);
    }
    return g;
}

void finish(FitResult& r, const LmResult& lm, std::size_t n_res, std::size_t n_par, Eigen::MatrixXd& cov) {
    r.chi2_reduced = n_res > n_par ? lm.chi2 / static_cast<double>(n_res - n_par) : 0.0;
    r.iterations += lm.iterations;
    cov = lm.covariance;
    if (r.chi2_reduced > 1.0) cov *= r.chi2_reduced;
}

void require_points(std::size_t n, std::size_t p) {
    if (n < 3 * p) throw InvalidArgument("too few unmasked bins for the fit");
}

}  // namespace

// ---------------------------------------------------------------- sidebands

FitResult fit_sideband_pair(const Spectrum& s_rr, const Spectrum& s_bb, const FrequencyMask& mask) {
    if (s_rr.grid != s_bb.grid) throw InvalidArgument("sideband spectra must share a grid");
    Band br = select(s_rr.grid, s_rr.values, s_rr.n_averages, mask);
    Band bb = select(s_bb.grid, s_bb.values, s_bb.n_averages, mask);
    const std::size_t n = br.w.size();
    require_points(n, 6);
    const std::size_t half = std::max<std::size_t>(2, n / 400);
    auto sr = smooth(br.y, half), sb = smooth(bb.y, half);
    double fr = edge_floor(sr), fb = edge_floor(sb);
    std::vector<double> sum(n);
    for (std::size_t i = 0; i < n; ++i) sum[i] = sr[i] + sb[i];
    PeakGuess pk = guess_peak(br.w, sum, fr + fb);
    auto ip = static_cast<std::size_t>(std::lower_bound(br.w.begin(), br.w.end(), pk.w0) - br.w.begin());
    double ar = std::max(sr[ip] - fr, 1e-3 * pk.height);
    double ab = std::max(sb[ip] - fb, 1e-3 * pk.height);

    const double yscale = std::max(pk.height, 1e-300);
    Eigen::VectorXd x(6), sc(6);
    x << pk.w0, pk.gamma, ar, ab, std::max(fr, 1e-6 * yscale), std::max(fb, 1e-6 * yscale);
    sc << pk.w0, pk.gamma, yscale, yscale, yscale, yscale;

    std::vector<double> sig_r(n), sig_b(n);
    for (std::size_t i = 0; i < n; ++i) {
        sig_r[i] = std::max(sr[i], 1e-300) * br.se[i];
        sig_b[i] = std::max(sb[i], 1e-300) * bb.se[i];
    }
    auto residual = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
        r.resize(static_cast<Eigen::Index>(2 * n));
        for (std::size_t i = 0; i < n; ++i) {
            double l = lpk(br.w[i], p(0), p(1));
            r(static_cast<Eigen::Index>(i)) = (br.y[i] - (p(4) + p(2) * l)) / sig_r[i];
            r(static_cast<Eigen::Index>(n + i)) = (bb.y[i] - (p(5) + p(3) * l)) / sig_b[i];
        }
    };
    FitResult res;
    LmResult lm;
    for (int pass = 0; pass < 2; ++pass) {
        lm = levenberg_marquardt(residual, x, sc);
        x = lm.x;
        for (std::size_t i = 0; i < n; ++i) {
            double l = lpk(br.w[i], x(0), x(1));
            sig_r[i] = std::max(std::abs(x(4) + x(2) * l), 1e-300) * br.se[i];
            sig_b[i] = std::max(std::abs(x(5) + x(3) * l), 1e-300) * bb.se[i];
        }
    }
    Eigen::MatrixXd cov;
    finish(res, lm, 2 * n, 6, cov);
    res.mask_used = mask;
    res.n_points = n;
    res.grid_lo = br.w.front();
    res.grid_hi = br.w.back();

    auto sff = [](int j) {
        return [j](const Eigen::VectorXd& p) { return p(j) * p(1) * p(1) * p(0) * p(0); };
    };
    res.set("omega_z", x(0), std::sqrt(cov(0, 0)));
    res.set("gamma_eff", std::abs(x(1)), std::sqrt(cov(1, 1)));
    res.set("s_ff_r", sff(2)(x), propagate(gradient(sff(2), x), cov));
    res.set("s_ff_b", sff(3)(x), propagate(gradient(sff(3), x), cov));
    res.set("bg_r", x(4), std::sqrt(cov(4, 4)));
    res.set("bg_b", x(5), std::sqrt(cov(5, 5)));
    auto ratio_f = [](const Eigen::VectorXd& p) { return p(2) / p(3); };
    double ratio = ratio_f(x);
    double s_ratio = propagate(gradient(ratio_f, x), cov);
    res.set("ratio", ratio, s_ratio);
    if (x(2) <= 0.0 || x(3) <= 0.0) res.flags.push_back("negative_area");
    if (!(ratio > 1.0)) {
        res.flags.push_back("unphysical_asymmetry");
        res.set("n_bar", std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
    } else {
        double nb = 1.0 / (ratio - 1.0);
        res.set("n_bar", nb, s_ratio / ((ratio - 1.0) * (ratio - 1.0)));
    }
    return res;
}

ThermometryResult asymmetry_from_fit(const FitResult& f) {
    ThermometryResult t;
    t.method = ThermometryMethod::asymmetry;
    t.n_bar = f.value("n_bar");
    t.sigma = f.sigma("n_bar");
    t.flags = f.flags;
    t.unphysical = !std::isfinite(t.n_bar) || f.flagged("unphysical_asymmetry");
    t.below_zero = t.n_bar < 0.0;
    return t;
}

ThermometryResult asymmetry_double_lo(const FitResult& a, const FitResult& b) {
    double tol = 1e-9 * std::max(std::abs(a.grid_hi), 1.0);
    if (a.n_points != b.n_points || std::abs(a.grid_lo - b.grid_lo) > tol || std::abs(a.grid_hi - b.grid_hi) > tol)
        throw InvalidArgument("LO-sign fits use inconsistent grids");
    for (const auto* f : {&a, &b})
        if (!(f->value("s_ff_r") > 0.0) || !(f->value("s_ff_b") > 0.0))
            throw NumericalError("negative sideband area in double-LO combination");
    double rp = a.value("ratio"), rm = b.value("ratio");
    double ratio = rp * rm;
    double rel = std::hypot(a.sigma("ratio") / rp, b.sigma("ratio") / rm);
    double sq = std::sqrt(ratio);
    ThermometryResult t;
    t.method = ThermometryMethod::asymmetry_double_lo;
    if (!(sq > 1.0)) {
        t.n_bar = std::numeric_limits<double>::infinity();
        t.sigma = std::numeric_limits<double>::infinity();
        t.unphysical = true;
        t.flags.push_back("unphysical_asymmetry");
        return t;
    }
    t.n_bar = 1.0 / (sq - 1.0);
    t.sigma = 0.5 * sq * rel / ((sq - 1.0) * (sq - 1.0));
    t.below_zero = t.n_bar < 0.0;
    return t;
}

// ---------------------------------------------------------------- cross spectrum

FitResult fit_cross_spectrum(const CrossSpectrum& s, const FrequencyMask& mask, CrossFitPart part) {
    s.validate();
    auto keep = mask.keep(s.grid);
    std::vector<double> w, re, im, sg;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!keep[i]) continue;
        w.push_back(s.grid[i]);
        re.push_back(s.values[i].real());
        im.push_back(s.values[i].imag());
        sg.push_back(s.sigmas.empty() ? 1.0 : s.sigmas[i]);
    }
    const std::size_t n = w.size();
    const bool both = part == CrossFitPart::both;
    require_points(n, 4);
    // Work on data normalized to unit peak so the fit is scale free.
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::max(std::abs(re[i]), std::abs(im[i])));
    if (!(scale > 0.0)) throw NumericalError("cross-spectrum is identically zero");
    for (std::size_t i = 0; i < n; ++i) {
        re[i] /= scale;
        im[i] /= scale;
        sg[i] = std::max(sg[i] / scale, 1e-300);
    }
    const std::size_t half = std::max<std::size_t>(2, n / 400);
    auto sre = smooth(re, half), sim = smooth(im, half);
    PeakGuess pk{};
    if (both) {
        pk = guess_peak(w, sre, 0.0);
    } else {
        auto imax = std::max_element(sim.begin(), sim.end()) - sim.begin();
        auto imin = std::min_element(sim.begin(), sim.end()) - sim.begin();
        double g = std::abs(w[static_cast<std::size_t>(imax)] - w[static_cast<std::size_t>(imin)]);
        pk = {0.5 * (w[static_cast<std::size_t>(imax)] + w[static_cast<std::size_t>(imin)]), std::max(g, 1e-9), 0.0};
    }
    double lo = pk.w0 - 3.0 * pk.gamma, hi = pk.w0 + 3.0 * pk.gamma;
    double mx = -1e300, mn = 1e300;
    for (std::size_t i = 0; i < n; ++i)
        if (w[i] >= lo && w[i] <= hi) {
            mx = std::max(mx, sim[i]);
            mn = std::min(mn, sim[i]);
        }
    double ai = 2.0 * (mx - mn);
    if (!(ai > 0.0)) ai = 1.0;

    const auto np = static_cast<Eigen::Index>(both ? 4 : 3);
    Eigen::VectorXd x(np), sc(np);
    if (both) {
        x << pk.w0, pk.gamma, std::max(pk.height, 1e-3), ai;
        sc << pk.w0, pk.gamma, 1.0, 1.0;
    } else {
        x << pk.w0, pk.gamma, ai;
        sc << pk.w0, pk.gamma, 1.0;
    }
    const Eigen::Index ii = both ? 3 : 2;
    auto residual = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
        r.resize(static_cast<Eigen::Index>(both ? 2 * n : n));
        for (std::size_t i = 0; i < n; ++i) {
            double l = lpk(w[i], p(0), p(1));
            double xi = (w[i] * w[i] - p(0) * p(0)) / (2.0 * p(0) * p(1));
            double m_im = p(ii) * l * xi;
            if (both) {
                r(static_cast<Eigen::Index>(i)) = (re[i] - p(2) * l) / sg[i];
                r(static_cast<Eigen::Index>(n + i)) = (im[i] - m_im) / sg[i];
            } else {
                r(static_cast<Eigen::Index>(i)) = (im[i] - m_im) / sg[i];
            }
        }
    };
    LmResult lm = levenberg_marquardt(residual, x, sc);
    x = lm.x;
    FitResult res;
    Eigen::MatrixXd cov;
    finish(res, lm, both ? 2 * n : n, static_cast<std::size_t>(np), cov);
    res.mask_used = mask;
    res.n_points = n;
    res.grid_lo = w.front();
    res.grid_hi = w.back();
    // Report c = R with the unit-mass susceptibility, back in data units.
    auto c_of = [scale](Eigen::Index j) {
        return [j, scale](const Eigen::VectorXd& p) { return scale * p(j) * p(1) * p(1) * p(0) * p(0); };
    };
    res.set("omega_z", x(0), std::sqrt(cov(0, 0)));
    res.set("gamma_eff", std::abs(x(1)), std::sqrt(cov(1, 1)));
    if (both) res.set("c_r", c_of(2)(x), propagate(gradient(c_of(2), x), cov));
    res.set("c_i", c_of(ii)(x), propagate(gradient(c_of(ii), x), cov));
    if (x(ii) <= 0.0) res.flags.push_back("nonpositive_c_i");
    if (both) {
        auto nf = [](const Eigen::VectorXd& p) { return p(2) / p(3) - 0.5; };
        double nb = nf(x);
        res.set("n_bar", nb, propagate(gradient(nf, x), cov));
        if (nb < 0.0) res.flags.push_back("below_zero");
    }
    return res;
}

ThermometryResult cross_correlation_result(const FitResult& f) {
    ThermometryResult t;
    t.method = ThermometryMethod::cross_correlation;
    t.n_bar = f.value("n_bar");
    t.sigma = f.sigma("n_bar");
    t.flags = f.flags;
    t.unphysical = f.flagged("nonpositive_c_i");
    t.below_zero = t.n_bar < 0.0;
    return t;
}

// ---------------------------------------------------------------- homodyne

FitResult fit_reference_homodyne(const Spectrum& s, const FrequencyMask& mask, double mass) {
    if (!(mass > 0.0)) throw InvalidArgument("mass must be positive");
    Band b = select(s.grid, s.values, s.n_averages, mask);
    const std::size_t n = b.w.size();
    require_points(n, 4);
    auto ys = smooth(b.y, 1);
    double floor = median(b.y);
    PeakGuess pk = guess_peak(b.w, ys, floor);
    double ratio = pk.height / floor;
    FitResult res;
    if (!(ratio >= 3.0)) throw NumericalError("reference peak/floor ratio too small for a fit");

    Eigen::VectorXd x(4), sc(4);
    x << pk.w0, pk.gamma, pk.height, floor;
    sc << pk.w0, pk.gamma, pk.height, floor;
    std::vector<double> sig(n);
    for (std::size_t i = 0; i < n; ++i) sig[i] = std::max(ys[i], 1e-300) * b.se[i];
    auto residual = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
        r.resize(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
            r(static_cast<Eigen::Index>(i)) = (b.y[i] - (p(3) + p(2) * lpk(b.w[i], p(0), p(1)))) / sig[i];
    };
    LmResult lm;
    for (int pass = 0; pass < 2; ++pass) {
        lm = levenberg_marquardt(residual, x, sc);
        x = lm.x;
        for (std::size_t i = 0; i < n; ++i)
            sig[i] = std::max(std::abs(x(3) + x(2) * lpk(b.w[i], x(0), x(1))), 1e-300) * b.se[i];
    }
    Eigen::MatrixXd cov;
    finish(res, lm, n, 4, cov);
    res.mask_used = mask;
    res.n_points = n;
    res.grid_lo = b.w.front();
    res.grid_hi = b.w.back();
    if (x(2) / x(3) < 100.0)
        res.warnings.push_back("peak/floor below 100; reference fit outside the low-gain regime");
    auto sff = [mass](const Eigen::VectorXd& p) { return p(2) * mass * mass * p(1) * p(1) * p(0) * p(0); };
    res.set("omega_z", x(0), std::sqrt(cov(0, 0)));
    res.set("gamma_m", std::abs(x(1)), std::sqrt(cov(1, 1)));
    res.set("s_ff_tot", sff(x), propagate(gradient(sff, x), cov));
    res.set("s_imp", x(3), std::sqrt(cov(3, 3)));
    res.set("mass", mass, 0.0);
    // Keep the full covariance of (omega_z, gamma_m, s_ff_tot, s_imp) for propagation.
    Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(4, 4);
    jac.row(2) = gradient(sff, x).transpose();
    Eigen::MatrixXd cphys = jac * cov * jac.transpose();
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            res.set("cov_" + std::to_string(i) + std::to_string(j), cphys(i, j), 0.0);
    return res;
}

FitResult reference_from_truth(const OscillatorParams& p, const RateBudget& b) {
    FitResult r;
    r.set("omega_z", p.omega_z(), 0.0);
    r.set("gamma_m", p.gamma_m(), 0.0);
    r.set("s_ff_tot", force_psd_total(p, b), 0.0);
    r.set("s_imp", imprecision_psd(p, b), 0.0);
    r.set("mass", p.mass(), 0.0);
    return r;
}

namespace {

const char* kRefNames[4] = {"omega_z", "gamma_m", "s_ff_tot", "s_imp"};

Eigen::VectorXd ref_vector(const FitResult& f) {
    Eigen::VectorXd v(4);
    for (int i = 0; i < 4; ++i) v(i) = f.value(kRefNames[i]);
    return v;
}

Eigen::MatrixXd ref_covariance(const FitResult& f) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(4, 4);
    for (int i = 0; i < 4; ++i) {
        double s = f.sigma(kRefNames[i]);
        c(i, i) = s * s;
        for (int j = i + 1; j < 4; ++j) {
            std::string key = "cov_" + std::to_string(i) + std::to_string(j);
            if (f.has(key)) c(i, j) = c(j, i) = f.value(key);
        }
    }
    return c;
}

}  // namespace

ReferenceRates rates_from_reference(const FitResult& f) {
    const double m = f.value("mass");
    auto gtot = [m](const Eigen::VectorXd& p) {
        double z2 = kHbar / (2.0 * m * p(0));
        return kTwoPi * z2 * p(2) / (kHbar * kHbar);
    };
    auto gmeas = [m](const Eigen::VectorXd& p) {
        double z2 = kHbar / (2.0 * m * p(0));
        return z2 / (8.0 * kPi * p(3));
    };
    auto eta = [&](const Eigen::VectorXd& p) { return gmeas(p) / gtot(p); };
    Eigen::VectorXd x = ref_vector(f);
    Eigen::MatrixXd c = ref_covariance(f);
    ReferenceRates r;
    r.gamma_tot = gtot(x);
    r.sigma_gamma_tot = propagate(gradient(gtot, x), c);
    r.gamma_meas = gmeas(x);
    r.sigma_gamma_meas = propagate(gradient(gmeas, x), c);
    r.eta_meas = eta(x);
    r.sigma_eta_meas = propagate(gradient(eta, x), c);
    return r;
}

namespace {

struct LoopModel {
    double m, w0, gm, sff, simp;
    LoopModel(const FitResult& f)
        : m(f.value("mass")), w0(f.value("omega_z")), gm(f.value("gamma_m")), sff(f.value("s_ff_tot")),
          simp(f.value("s_imp")) {}

    // Returns {in-loop, true} densities at omega.
    std::pair<double, double> eval(double w, double gamma_fb, cplx h) const {
        cplx d(w0 * w0 - w * w, gm * w);
        cplx k = w0 * gamma_fb * h;
        double den = std::norm(d - k);
        if (!(den > 0.0)) throw SingularityError("closed-loop pole on the evaluation grid", w);
        double force = sff / (m * m);
        double inloop = (force + std::norm(d) * simp) / den;
        double truth = (force + std::norm(k) * simp) / den;
        return {inloop, truth};
    }
};

Spectrum model_spectrum(const FitResult& fixed, double gamma_fb, const FrequencyResponse& h,
                        const std::vector<double>& grid, bool in_loop) {
    LoopModel lm(fixed);
    Spectrum s;
    s.grid = grid;
    s.values.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        cplx hv = gamma_fb == 0.0 ? cplx(0.0) : h(grid[i]);
        auto v = lm.eval(grid[i], gamma_fb, hv);
        s.values[i] = in_loop ? v.first : v.second;
    }
    s.metadata["signal"] = "real";
    s.metadata["model"] = in_loop ? "inloop" : "true_motion";
    return s;
}

}  // namespace

Spectrum inloop_psd(const FitResult& fixed, double gamma_fb, const FrequencyResponse& h,
                    const std::vector<double>& grid) {
    return model_spectrum(fixed, gamma_fb, h, grid, true);
}

Spectrum true_displacement_psd(const FitResult& fixed, double gamma_fb, const FrequencyResponse& h,
                               const std::vector<double>& grid) {
    return model_spectrum(fixed, gamma_fb, h, grid, false);
}

FitResult fit_inloop_gain(const Spectrum& s, const FitResult& fixed, const FrequencyResponse& h_fb,
                          const FrequencyMask& mask) {
    Band b = select(s.grid, s.values, s.n_averages, mask);
    const std::size_t n = b.w.size();
    require_points(n, 1);
    if (!h_fb.covers(b.w.front(), b.w.back())) throw InvalidArgument("h_fb does not cover the fit band");
    LoopModel lmod(fixed);
    std::vector<cplx> hv(n);
    for (std::size_t i = 0; i < n; ++i) hv[i] = h_fb(b.w[i]);
    auto model = [&](double g, std::size_t i) { return lmod.eval(b.w[i], g, hv[i]).first; };

    std::vector<double> sig(n);
    auto set_weights = [&](double g) {
        for (std::size_t i = 0; i < n; ++i) sig[i] = std::max(model(g, i), 1e-300) * b.se[i];
    };
    // Coarse scan on a log grid, each point judged with its own model weights.
    double g_lo = std::max(1e-3 * lmod.gm, 1e-6 * lmod.w0), g_hi = 2.0 * lmod.w0;
    double best_g = g_lo, best_c = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 240; ++k) {
        double g = g_lo * std::pow(g_hi / g_lo, k / 239.0);
        double c = 0.0;
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i) {
            double m;
            try {
                m = model(g, i);
            } catch (const SingularityError&) {
                ok = false;
                break;
            }
            double r = (b.y[i] - m) / (m * b.se[i]);
            c += r * r;
        }
        if (ok && c < best_c) {
            best_c = c;
            best_g = g;
        }
    }
    Eigen::VectorXd x(1), sc(1);
    x << best_g;
    sc << best_g;
    auto residual = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
        r.resize(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) r(static_cast<Eigen::Index>(i)) = (b.y[i] - model(p(0), i)) / sig[i];
    };
    FitResult res;
    LmResult lm;
    for (int pass = 0; pass < 2; ++pass) {
        set_weights(x(0));
        lm = levenberg_marquardt(residual, x, sc);
        x = lm.x;
    }
    Eigen::MatrixXd cov;
    finish(res, lm, n, 1, cov);
    res.mask_used = mask;
    res.n_points = n;
    res.grid_lo = b.w.front();
    res.grid_hi = b.w.back();
    res.set("gamma_fb", x(0), std::sqrt(cov(0, 0)));
    if (x(0) < 0.0) res.flags.push_back("negative_gain");
    return res;
}

// ---------------------------------------------------------------- occupation

std::vector<double> occupation_grid(const OscillatorParams& p, double gamma, std::size_t n_log) {
    double w0 = p.omega_z();
    double lo = w0 / 50.0, hi = 10.0 * w0;
    std::vector<double> g;
    g.reserve(n_log + 3300);
    double a = std::log(lo), b = std::log(hi);
    for (std::size_t i = 0; i < n_log; ++i)
        g.push_back(std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n_log - 1)));
    g.front() = lo;
    g.back() = hi;
    if (gamma > 0.0) {
        double step = gamma / 40.0;
        for (double w = std::max(lo, w0 - 40.0 * gamma); w <= std::min(hi, w0 + 40.0 * gamma); w += step)
            g.push_back(w);
    }
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    return g;
}

ThermometryResult occupation_from_spectrum(const Spectrum& s_in, const OscillatorParams& p) {
    Spectrum s = convert_convention(s_in, SpectralConvention::two_sided_angular);
    s.validate();
    const double w0 = p.omega_z();
    if (s.size() < 2 || s.grid.front() > w0 / 50.0 * (1.0 + 1e-9) || s.grid.back() < 10.0 * w0 * (1.0 - 1e-9))
        throw InvalidArgument("occupation integral needs a grid spanning [omega_z/50, 10 omega_z]");
    const double z2 = p.z_zpf_sq();
    auto f = [&](std::size_t i) { return (1.0 + s.grid[i] * s.grid[i] / (w0 * w0)) * s.values[i] / (2.0 * z2); };
    double body = 0.0, var = 0.0;
    const bool have_sig = !s.sigmas.empty();
    for (std::size_t i = 0; i < s.size(); ++i) {
        double wl = i > 0 ? 0.5 * (s.grid[i] - s.grid[i - 1]) : 0.0;
        double wr = i + 1 < s.size() ? 0.5 * (s.grid[i + 1] - s.grid[i]) : 0.0;
        double wt = wl + wr;
        if (i == 0) wt += s.grid[0];
        double fi = f(i);
        body += wt * fi;
        if (have_sig && s.values[i] > 0.0) {
            double e = wt * fi * s.sigmas[i] / s.values[i];
            var += e * e;
        }
    }
    double tail = f(s.size() - 1) * s.grid.back();
    double total = body + tail;
    if (total > 0.0 && tail > 0.05 * total)
        throw NumericalError("occupation integral tail exceeds 5% of the total; widen the grid");
    ThermometryResult r;
    r.method = ThermometryMethod::inloop_integral;
    r.n_bar = total - 0.5;
    r.sigma = std::sqrt(var);
    r.below_zero = r.n_bar < 0.0;
    if (r.below_zero) r.flags.push_back("below_zero");
    return r;
}

double peak_frequency(const Spectrum& s) {
    if (s.size() == 0) throw InvalidArgument("empty spectrum");
    auto it = std::max_element(s.values.begin(), s.values.end());
    return s.grid[static_cast<std::size_t>(it - s.values.begin())];
}

double full_width_half_max(const Spectrum& s) {
    if (s.size() < 3) throw InvalidArgument("spectrum too short for a width");
    std::size_t ip = static_cast<std::size_t>(std::max_element(s.values.begin(), s.values.end()) - s.values.begin());
    double half = 0.5 * s.values[ip];
    double wl = std::numeric_limits<double>::quiet_NaN(), wr = wl;
    for (std::size_t i = ip; i-- > 0;)
        if (s.values[i] < half) {
            double t = (half - s.values[i]) / (s.values[i + 1] - s.values[i]);
            wl = s.grid[i] + t * (s.grid[i + 1] - s.grid[i]);
            break;
        }
    for (std::size_t i = ip + 1; i < s.size(); ++i)
        if (s.values[i] < half) {
            double t = (s.values[i - 1] - half) / (s.values[i - 1] - s.values[i]);
            wr = s.grid[i - 1] + t * (s.grid[i] - s.grid[i - 1]);
            break;
        }
    if (!std::isfinite(wl) || !std::isfinite(wr)) throw NumericalError("half-maximum not reached inside the grid");
    return wr - wl;
}

AnchorScale anchor_calibration(double n_uncal, double n_ref, double s_uncal, double s_ref) {
    if (!(n_uncal > 0.0) || !(n_ref > 0.0)) throw InvalidArgument("anchor inputs must be positive");
    AnchorScale a;
    a.scale = (n_ref + 0.5) / (n_uncal + 0.5);
    a.sigma = a.scale * std::hypot(s_ref / (n_ref + 0.5), s_uncal / (n_uncal + 0.5));
    return a;
}

ThermometryResult apply_anchor(const AnchorScale& a, double n_uncal, double s_uncal) {
    ThermometryResult r;
    r.method = ThermometryMethod::inloop_integral;
    double e = n_uncal + 0.5;
    r.n_bar = a.scale * e - 0.5;
    r.sigma = std::hypot(a.scale * s_uncal, e * a.sigma);
    r.below_zero = r.n_bar < 0.0;
    if (r.below_zero) r.flags.push_back("below_zero");
    return r;
}

}  // namespace levcool
