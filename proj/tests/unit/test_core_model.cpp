#include <doctest.h>

#include <cmath>
#include <random>

#include "levcool/core_model.hpp"
#include "levcool/errors.hpp"

using namespace levcool;

namespace {

const double kH = 1.054571817e-34;

OscillatorParams paper_params() { return OscillatorParams(1e-18, kTwoPi * 77.6e3, kTwoPi * 21.9); }
RateBudget paper_budget() { return budget_from_rates(kTwoPi * 1.33e3, kTwoPi * 5.5e3, 3.0); }

RateBudget random_budget(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> lg(2.0, 5.0), u(0.01, 1.0);
    double qba = kTwoPi * std::pow(10.0, lg(rng));
    double exc = kTwoPi * std::pow(10.0, lg(rng));
    return rates_from_budget(qba, exc, u(rng));
}

}  // namespace

TEST_CASE("oscillator parameter validation") {
    CHECK_THROWS_AS(OscillatorParams(0.0, 1.0, 0.0), InvalidArgument);
    CHECK_THROWS_AS(OscillatorParams(1.0, -1.0, 0.0), InvalidArgument);
    CHECK_THROWS_AS(OscillatorParams(1.0, 1.0, -0.1), InvalidArgument);
    CHECK_THROWS_AS(OscillatorParams(1.0, 1.0, 1.0), InvalidArgument);
    CHECK_NOTHROW(OscillatorParams(1.0, 1.0, 0.0));
}

TEST_CASE("zero-point amplitude from its definition") {
    auto p = paper_params();
    double oracle = kH / (2.0 * 1e-18 * kTwoPi * 77.6e3);
    CHECK(p.z_zpf_sq() == doctest::Approx(oracle).epsilon(1e-15));
    CHECK(p.z_zpf() == doctest::Approx(1.04e-11).epsilon(0.01));
}

TEST_CASE("rate budgets") {
    SUBCASE("lossless limit") {
        auto b = rates_from_budget(kTwoPi * 1e3, 0.0, 1.0);
        CHECK(b.eta_meas == doctest::Approx(1.0));
        CHECK(b.c_q_infinite);
    }
    SUBCASE("paper rates") {
        auto b = paper_budget();
        CHECK(b.eta_meas == doctest::Approx(0.2418).epsilon(1e-3));
        auto b2 = rates_from_budget(kTwoPi * 2.66e3, kTwoPi * 2.84e3, 0.5);
        CHECK(b2.gamma_meas == doctest::Approx(kTwoPi * 1.33e3));
        CHECK(b2.gamma_tot == doctest::Approx(kTwoPi * 5.5e3));
        CHECK(b2.eta_meas == doctest::Approx(0.2418).epsilon(1e-3));
    }
    SUBCASE("equal split") {
        auto b = rates_from_budget(kTwoPi * 1e3, kTwoPi * 1e3, 0.5);
        CHECK(b.eta_meas == doctest::Approx(0.25));
        CHECK(b.c_q == doctest::Approx(1.0));
    }
    SUBCASE("invalid") {
        CHECK_THROWS_AS(rates_from_budget(0.0, 0.0, 1.0), InvalidArgument);
        CHECK_THROWS_AS(rates_from_budget(1.0, 1.0, 1.5), InvalidArgument);
        CHECK_THROWS_AS(rates_from_budget(-1.0, 1.0, 0.5), InvalidArgument);
    }
    SUBCASE("efficiency invariants") {
        std::mt19937_64 rng(11);
        for (int i = 0; i < 200; ++i) {
            auto b = random_budget(rng);
            CHECK(b.eta_meas <= b.eta_d + 1e-15);
            CHECK(b.eta_d <= 1.0);
            CHECK(b.eta_meas == doctest::Approx(b.eta_d / (1.0 + 1.0 / b.c_q)).epsilon(1e-12));
        }
    }
}

TEST_CASE("susceptibility") {
    auto p = paper_params();
    double g = kTwoPi * 100.0;
    cplx c0 = susceptibility(0.0, p, g);
    CHECK(c0.real() == doctest::Approx(1.0 / (p.mass() * p.omega_z() * p.omega_z())));
    CHECK(c0.imag() == 0.0);
    cplx cz = susceptibility(p.omega_z(), p, g);
    CHECK(std::abs(cz.real()) < 1e-12 * std::abs(cz));
    CHECK(std::abs(cz) == doctest::Approx(1.0 / (p.mass() * g * p.omega_z())));
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 3.0 * p.omega_z());
    for (int i = 0; i < 100; ++i) {
        double w = u(rng);
        CHECK(std::abs(susceptibility(-w, p, g)) == doctest::Approx(std::abs(susceptibility(w, p, g))));
        CHECK(std::abs(susceptibility(w, p, g) * inverse_susceptibility(w, p, g) - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(susceptibility(p.omega_z(), p, 0.0), SingularityError);
}

TEST_CASE("force and imprecision densities") {
    auto p = paper_params();
    auto b = paper_budget();
    // Direct arithmetic: Gamma_tot = 2 pi S_FF z^2 / hbar^2 and Gamma_meas = z^2 / (8 pi S_imp).
    double z2 = kH / (2.0 * 1e-18 * kTwoPi * 77.6e3);
    double sff_oracle = kTwoPi * 5.5e3 * kH * kH / (kTwoPi * z2);
    double simp_oracle = z2 / (8.0 * kPi * kTwoPi * 1.33e3);
    CHECK(sff_oracle == doctest::Approx(5.65601347657445e-43).epsilon(1e-12));
    CHECK(simp_oracle == doctest::Approx(5.149122292521118e-28).epsilon(1e-12));
    CHECK(force_psd_total(p, b) == doctest::Approx(sff_oracle).epsilon(1e-12));
    CHECK(imprecision_psd(p, b) == doctest::Approx(simp_oracle).epsilon(1e-12));

    auto b2 = budget_from_rates(b.gamma_meas, 2.0 * b.gamma_tot, 3.0);
    CHECK(force_psd_total(p, b2) == doctest::Approx(2.0 * force_psd_total(p, b)).epsilon(1e-12));
    auto b3 = budget_from_rates(0.5 * b.gamma_meas, b.gamma_tot, 3.0);
    CHECK(imprecision_psd(p, b3) == doctest::Approx(2.0 * imprecision_psd(p, b)).epsilon(1e-12));
}

TEST_CASE("measurement-disturbance product for random budgets") {
    std::mt19937_64 rng(5);
    auto p = paper_params();
    const double lhs_const = std::pow(kH / (4.0 * kPi), 2);
    for (int i = 0; i < 100; ++i) {
        auto b = random_budget(rng);
        double prod = force_psd_total(p, b) * imprecision_psd(p, b);
        CHECK(prod == doctest::Approx(lhs_const / b.eta_meas).epsilon(1e-12));
    }
}

TEST_CASE("heterodyne sideband densities") {
    auto p = paper_params();
    double g = kTwoPi * 11.1e3, r = physical_scale_r(p, g), bg = 3e-30;
    CHECK(r == doctest::Approx(p.mass() * g * kH * p.omega_z() / kPi));
    for (double n : {0.0, 0.66, 5.0}) {
        double d = heterodyne_sideband_psd(p.omega_z(), p, g, n, r, bg, Sideband::stokes) -
                   heterodyne_sideband_psd(p.omega_z(), p, g, n, r, bg, Sideband::antistokes);
        CHECK(d == doctest::Approx(r / (p.mass() * p.mass() * g * g * p.omega_z() * p.omega_z())).epsilon(1e-12));
    }
    for (double w : {0.5 * p.omega_z(), p.omega_z(), 1.3 * p.omega_z()})
        CHECK(heterodyne_sideband_psd(w, p, g, 0.0, r, bg, Sideband::antistokes) == bg);

    // Area ratio by quadrature of both Lorentzians with backgrounds removed.
    double n = 0.66, ar = 0.0, ab = 0.0;
    for (int i = 0; i < 400000; ++i) {
        double w = p.omega_z() * (0.05 + 2.0 * i / 400000.0);
        ar += heterodyne_sideband_psd(w, p, g, n, r, 0.0, Sideband::stokes);
        ab += heterodyne_sideband_psd(w, p, g, n, r, 0.0, Sideband::antistokes);
    }
    CHECK(ar / ab == doctest::Approx(2.515151515).epsilon(1e-9));
}

TEST_CASE("heterodyne cross density") {
    auto p = paper_params();
    double g = kTwoPi * 11.1e3, r = physical_scale_r(p, g);
    CHECK(heterodyne_cross_psd(p.omega_z(), p, g, 0.66, r).imag() == 0.0);
    cplx a = heterodyne_cross_psd(p.omega_z(), p, g, 0.66, r);
    cplx b = heterodyne_cross_psd(p.omega_z(), p, g, 0.66, 7.0 * r);
    CHECK(a.real() / r == doctest::Approx(b.real() / (7.0 * r)));
    // c_r / c_i at any frequency reproduces n + 1/2 once the spectroscopic factor is removed.
    double w = 1.05 * p.omega_z();
    cplx c = heterodyne_cross_psd(w, p, g, 0.66, r);
    double xi = (w * w - p.omega_z() * p.omega_z()) / (2.0 * p.omega_z() * g);
    CHECK(c.real() / (c.imag() / xi) == doctest::Approx(1.16));
    // Narrowband expansion.
    OscillatorParams pn(1e-18, kTwoPi * 77.6e3, 0.0);
    double gn = 1e-3 * pn.omega_z();
    for (int i = -50; i <= 50; ++i) {
        double dw = gn * i / 50.0;
        if (i == 0) continue;
        double w2 = pn.omega_z() + dw;
        double exact = (w2 * w2 - pn.omega_z() * pn.omega_z()) / (2.0 * pn.omega_z() * gn);
        double approx = dw / gn;
        CHECK(std::abs(exact - approx) <= 0.01 * std::abs(approx));
    }
}

TEST_CASE("cold damping and conditional occupation") {
    auto b = paper_budget();
    CHECK(cold_damping_occupation(kTwoPi * 11.1e3, b) == doctest::Approx(0.5171).epsilon(1e-3));
    CHECK(optimal_gamma(b) / kTwoPi == doctest::Approx(4.0 * std::sqrt(5.5 * 1.33) * 1e3).epsilon(1e-12));
    CHECK(optimal_gamma(b) / kTwoPi == doctest::Approx(10818.5).epsilon(1e-5));
    CHECK(conditional_occupation(1.0) == 0.0);
    CHECK(conditional_occupation(0.25) == doctest::Approx(0.5));
    CHECK(conditional_occupation(0.24) == doctest::Approx(0.5206).epsilon(1e-4));
    CHECK_THROWS_AS(conditional_occupation(0.0), InvalidArgument);

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> f(0.05, 20.0);
    for (int i = 0; i < 100; ++i) {
        auto bb = random_budget(rng);
        double gs = optimal_gamma(bb);
        double nmin = conditional_occupation(bb.eta_meas);
        CHECK(cold_damping_occupation(gs, bb) == doctest::Approx(nmin).epsilon(1e-9));
        double x = f(rng);
        if (std::abs(x - 1.0) > 1e-3) CHECK(cold_damping_occupation(x * gs, bb) > nmin);
        auto cd = cold_damping(gs, bb);
        CHECK(cd.gamma_opt == gs);
    }
}

TEST_CASE("spectral conventions") {
    Spectrum s;
    s.grid = {0.0, 1.0, 2.0};
    s.values = {1.0, 1.0, 1.0};
    auto h = convert_convention(s, SpectralConvention::single_sided_hertz);
    for (double v : h.values) CHECK(v == doctest::Approx(4.0 * kPi));
    auto back = convert_convention(h, SpectralConvention::two_sided_angular);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(back.grid[i] == doctest::Approx(s.grid[i]).epsilon(1e-12));
        CHECK(back.values[i] == doctest::Approx(s.values[i]).epsilon(1e-12));
    }
    CHECK(convention_from_string(to_string(SpectralConvention::single_sided_hertz)) ==
          SpectralConvention::single_sided_hertz);
    CHECK_THROWS_AS(convention_from_string("nope"), InvalidArgument);

    // Lorentzian variance under both conventions.
    auto p = paper_params();
    Spectrum l;
    l.metadata["signal"] = "real";
    double g = kTwoPi * 500.0;
    for (int i = 0; i <= 200000; ++i) {
        double w = 3.0 * p.omega_z() * i / 200000.0;
        l.grid.push_back(w);
        l.values.push_back(std::norm(susceptibility(w, p, g)) * 1e-40);
    }
    double v1 = integrated_variance(l);
    double v2 = integrated_variance(convert_convention(l, SpectralConvention::single_sided_hertz));
    CHECK(v1 == doctest::Approx(v2).epsilon(1e-9));
    // Equipartition-style oracle: 2 * int_0^inf |chi|^2 S dw = pi S / (m^2 g w0^2).
    double oracle = kPi * 1e-40 / (p.mass() * p.mass() * g * p.omega_z() * p.omega_z());
    CHECK(v1 == doctest::Approx(oracle).epsilon(2e-3));
}

TEST_CASE("normalized units are exact inverses") {
    NormalizedUnits u(paper_params());
    for (double x : {1e-12, 3.3e-11, 7.0}) {
        CHECK(u.from_length(u.to_length(x)) == doctest::Approx(x).epsilon(1e-15));
        CHECK(u.from_freq(u.to_freq(x)) == doctest::Approx(x).epsilon(1e-15));
        CHECK(u.from_psd(u.to_psd(x)) == doctest::Approx(x).epsilon(1e-15));
    }
    CHECK(u.to_length(u.z0) == 1.0);
}
