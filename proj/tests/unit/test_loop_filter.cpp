#include <doctest.h>

#include <cmath>

#include "levcool/core_model.hpp"
#include "levcool/errors.hpp"
#include "levcool/loop_filter.hpp"

using namespace levcool;

namespace {

OscillatorParams paper_params() { return OscillatorParams(1e-18, kTwoPi * 77.6e3, kTwoPi * 21.9); }
double gamma_star() { return optimal_gamma(budget_from_rates(kTwoPi * 1.33e3, kTwoPi * 5.5e3, 3.0)); }

// Numerical FWHM of |chi_fb|^2 on a fine scan around the resonance.
double scan_fwhm(const OscillatorParams& p, double gamma_fb, double tau, double span) {
    const int n = 400001;
    double w0 = p.omega_z(), best = 0.0, wpk = w0;
    std::vector<double> w(n), v(n);
    for (int i = 0; i < n; ++i) {
        w[i] = w0 - span + 2.0 * span * i / (n - 1);
        v[i] = std::norm(closed_loop_susceptibility(w[i], p, delay_filter_response(w[i], p, gamma_fb, tau)));
        if (v[i] > best) best = v[i], wpk = w[i];
    }
    (void)wpk;
    int lo = 0, hi = n - 1;
    while (v[lo] < 0.5 * best) ++lo;
    while (v[hi] < 0.5 * best) --hi;
    return w[hi] - w[lo];
}

}  // namespace

TEST_CASE("delay filter response") {
    auto p = paper_params();
    double g = kTwoPi * 1e3, tau = 2e-6;
    cplx h0 = delay_filter_response(0.0, p, g, tau);
    CHECK(h0.real() == doctest::Approx(p.mass() * p.omega_z() * g));
    CHECK(h0.imag() == 0.0);
    double w = 0.5 * kPi / tau;
    cplx hq = delay_filter_response(w, p, g, tau);
    CHECK(std::abs(hq.real()) < 1e-12 * std::abs(hq));
    CHECK(hq.imag() == doctest::Approx(-p.mass() * p.omega_z() * g));
    CHECK_THROWS_AS(delay_filter_response(1.0, p, -1.0, tau), InvalidArgument);
}

TEST_CASE("quarter-period delay damps at resonance") {
    auto p = paper_params();
    double tau0 = smallest_stable_delay(p, 0);
    for (double g : {kTwoPi * 100.0, kTwoPi * 1e3, gamma_star()}) {
        cplx a = closed_loop_susceptibility(p.omega_z(), p, delay_filter_response(p.omega_z(), p, g, tau0));
        cplx b = susceptibility(p.omega_z(), p, p.gamma_m() + g);
        CHECK(std::abs(a - b) <= 0.01 * std::abs(b));
    }
}

TEST_CASE("zero feedback gives the bare susceptibility") {
    auto p = paper_params();
    for (double w : {0.0, 0.3 * p.omega_z(), p.omega_z(), 2.5 * p.omega_z()})
        CHECK(closed_loop_susceptibility(w, p, 0.0) == susceptibility(w, p, p.gamma_m()));
}

TEST_CASE("analog stage responses") {
    auto hp = FilterStage::high_pass(9e3);
    CHECK(std::abs(stage_response(kTwoPi * 9e3, hp)) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(std::abs(stage_response(0.0, hp)) == 0.0);
    auto nt = FilterStage::notch(202e3, 5.0);
    CHECK(std::abs(stage_response(kTwoPi * 202e3, nt)) < 1e-12);
    CHECK(std::abs(stage_response(0.0, nt)) == doctest::Approx(1.0));
    CHECK(stage_response(123.0, FilterStage::scalar(-2.5)) == cplx(-2.5, 0.0));
    CHECK_THROWS_AS(FilterStage::high_pass(0.0), InvalidArgument);
    CHECK_THROWS_AS(FilterStage::notch(1e3, -1.0), InvalidArgument);
    CHECK_THROWS_AS(FilterStage::delay(-1e-6), InvalidArgument);
    for (auto k : {StageKind::high_pass, StageKind::notch, StageKind::delay, StageKind::gain})
        CHECK(stage_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(stage_kind_from_string("lowpass"), InvalidArgument);
}

TEST_CASE("digital sections track the analog prototypes well below Nyquist") {
    double fs = 4.0 * 977e3;
    for (auto s : {FilterStage::high_pass(9e3), FilterStage::notch(202e3, 5.0), FilterStage::notch(249e3, 5.0)}) {
        for (double f : {20e3, 77.6e3, 120e3}) {
            cplx a = stage_response(kTwoPi * f, s), d = stage_response(kTwoPi * f, s, fs);
            CHECK(std::abs(a - d) < 0.03);
        }
    }
    CHECK_THROWS_AS(discretize(FilterStage::delay(1e-6), fs), InvalidArgument);
    CHECK_THROWS_AS(discretize(FilterStage::notch(3e6, 5.0), fs), InvalidArgument);
}

TEST_CASE("paper chain phase at resonance") {
    auto p = paper_params();
    auto c = paper_chain(smallest_stable_delay(p, 0));
    double ph = std::arg(chain_response(p.omega_z(), c));
    CHECK(ph == doctest::Approx(-0.5 * kPi).epsilon(0.1 / (0.5 * kPi)));
    CHECK(std::abs(chain_response(p.omega_z(), c)) == doctest::Approx(1.0).epsilon(0.05));
    auto c2 = c.with_gamma_fb(p, kTwoPi * 1e3);
    CHECK(c2.overall_gain == doctest::Approx(1e3 / 77.6e3));
    CHECK(c2.unit_gain().overall_gain == 1.0);
    CHECK(std::abs(feedback_response(p.omega_z(), p, c2)) ==
          doctest::Approx(p.mass() * p.omega_z() * kTwoPi * 1e3 * std::abs(chain_response(p.omega_z(), c))));
}

TEST_CASE("stable delays") {
    auto p = paper_params();
    CHECK(smallest_stable_delay(p, 0) * 1e6 == doctest::Approx(3.2216).epsilon(1e-4));
    CHECK(smallest_stable_delay(p, 1) * 1e6 == doctest::Approx(16.108).epsilon(1e-4));
    CHECK_THROWS_AS(smallest_stable_delay(p, -1), InvalidArgument);
}

TEST_CASE("linewidth grows one-for-one with weak feedback") {
    OscillatorParams p(1e-18, kTwoPi * 77.6e3, kTwoPi * 20.0);
    double tau0 = smallest_stable_delay(p, 0);
    for (double gf : {kTwoPi * 200.0, kTwoPi * 500.0, kTwoPi * 1000.0}) {
        double w = scan_fwhm(p, gf, tau0, 6.0 * (gf + p.gamma_m()));
        CHECK(w == doctest::Approx(p.gamma_m() + gf).epsilon(0.02));
    }
}

TEST_CASE("stability check") {
    auto p = paper_params();
    auto c = paper_chain(smallest_stable_delay(p, 0));
    auto zero = stability_check(p, c.with_gamma_fb(p, 0.0));
    CHECK(zero.stable);
    CHECK(zero.margin == doctest::Approx(1.0));
    CHECK(stability_check(p, c.with_gamma_fb(p, gamma_star())).stable);
    CHECK(stability_check(p, c.with_gamma_fb(p, gamma_star() / 30.0)).stable);
    auto bad = paper_chain(3.0 * smallest_stable_delay(p, 0));
    for (double g : {gamma_star() / 30.0, gamma_star()}) CHECK_FALSE(stability_check(p, bad.with_gamma_fb(p, g)).stable);
    CHECK_THROWS_AS(stability_check(p, c, std::vector<double>{1.0}), ResolutionError);
}

TEST_CASE("pure delay chain is all-pass with linear phase") {
    auto p = paper_params();
    double tau = 2.5e-6;
    auto c = pure_delay_chain(tau);
    CHECK(c.total_delay() == tau);
    for (double w : {1e3, 4e5, p.omega_z(), 3e6}) {
        cplx h = chain_response(w, c);
        CHECK(std::abs(h) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(std::abs(std::remainder(std::arg(h) + w * tau, kTwoPi)) < 1e-9);
    }
}

TEST_CASE("tabulated response") {
    auto c = paper_chain(3e-6);
    std::vector<double> grid;
    for (int i = 0; i < 500; ++i) grid.push_back(1e4 * std::pow(1.01, i));
    auto r = tabulate(c, grid);
    for (std::size_t i = 0; i < grid.size(); i += 37) CHECK(r(grid[i]) == chain_response(grid[i], c));
    double mid = std::sqrt(grid[100] * grid[101]);
    CHECK(std::abs(r(mid) - chain_response(mid, c)) < 0.01);
    CHECK(r.covers(grid.front(), grid.back()));
    CHECK_FALSE(r.covers(0.0, grid.back()));
    CHECK_THROWS_AS(r(0.5 * grid.front()), InvalidArgument);
    CHECK_THROWS_AS(r(2.0 * grid.back()), InvalidArgument);
    CHECK_THROWS_AS(FrequencyResponse({1.0, 1.0}, {1.0, 1.0}), InvalidArgument);
}
