#include <doctest.h>

#include <cmath>
#include <random>

#include "levcool/errors.hpp"
#include "levcool/estimate.hpp"

using namespace levcool;

namespace {

OscillatorParams paper_params() { return OscillatorParams(1e-18, kTwoPi * 77.6e3, kTwoPi * 21.9); }
RateBudget paper_budget() { return budget_from_rates(kTwoPi * 1.33e3, kTwoPi * 5.5e3, 3.0); }

std::vector<double> linear_grid(double lo, double hi, double step) {
    std::vector<double> g;
    for (double w = lo; w <= hi; w += step) g.push_back(w);
    return g;
}

// Averaged periodogram bins follow a gamma law with shape n_avg.
Spectrum noisy(std::vector<double> grid, std::vector<double> values, long n_avg, std::mt19937_64& rng) {
    Spectrum s;
    s.grid = std::move(grid);
    s.values = std::move(values);
    s.n_averages = n_avg;
    if (n_avg > 0) {
        std::gamma_distribution<double> gd(static_cast<double>(n_avg), 1.0 / static_cast<double>(n_avg));
        for (auto& v : s.values) v *= gd(rng);
    } else {
        s.n_averages = 1000;
    }
    for (double v : s.values) s.sigmas.push_back(v / std::sqrt(static_cast<double>(s.n_averages)));
    return s;
}

struct SidebandPair {
    Spectrum rr, bb;
};

SidebandPair sideband_pair(double n_bar, long n_avg, std::uint64_t seed) {
    auto p = paper_params();
    double g = kTwoPi * 11.1e3, r = physical_scale_r(p, g);
    double bg = r / std::pow(p.mass() * g * p.omega_z(), 2);
    auto grid = linear_grid(p.omega_z() - kTwoPi * 28e3, p.omega_z() + kTwoPi * 28e3, kTwoPi * 3.814697265625);
    std::vector<double> vr, vb;
    for (double w : grid) {
        vr.push_back(heterodyne_sideband_psd(w, p, g, n_bar, r, bg, Sideband::stokes));
        vb.push_back(heterodyne_sideband_psd(w, p, g, n_bar, r, bg, Sideband::antistokes));
    }
    std::mt19937_64 rng(seed);
    return {noisy(grid, vr, n_avg, rng), noisy(grid, vb, n_avg, rng)};
}

CrossSpectrum cross_model(double n_bar, long n_avg, std::uint64_t seed) {
    auto p = paper_params();
    double g = kTwoPi * 11.1e3, r = physical_scale_r(p, g);
    double bg = r / std::pow(p.mass() * g * p.omega_z(), 2);
    CrossSpectrum s;
    s.grid = linear_grid(p.omega_z() - kTwoPi * 28e3, p.omega_z() + kTwoPi * 28e3, kTwoPi * 3.814697265625);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    s.n_averages = n_avg > 0 ? n_avg : 1000;
    for (double w : s.grid) {
        cplx v = heterodyne_cross_psd(w, p, g, n_bar, r);
        double srr = heterodyne_sideband_psd(w, p, g, n_bar, r, bg, Sideband::stokes);
        double sbb = heterodyne_sideband_psd(w, p, g, n_bar, r, bg, Sideband::antistokes);
        double sig = std::sqrt(srr * sbb / (2.0 * static_cast<double>(s.n_averages)));
        if (n_avg > 0) v += cplx(sig * nd(rng), sig * nd(rng));
        s.values.push_back(v);
        s.sigmas.push_back(sig);
    }
    return s;
}

Spectrum reference_model(long n_avg, std::uint64_t seed) {
    auto p = paper_params();
    auto b = paper_budget();
    auto grid = linear_grid(p.omega_z() - kTwoPi * 25e3, p.omega_z() + kTwoPi * 25e3, kTwoPi * 1.0);
    std::vector<double> v;
    for (double w : grid)
        v.push_back(imprecision_psd(p, b) + std::norm(susceptibility(w, p, p.gamma_m())) * force_psd_total(p, b));
    std::mt19937_64 rng(seed);
    return noisy(grid, v, n_avg, rng);
}

FrequencyResponse unit_chain_response(const std::vector<double>& grid) {
    return tabulate(paper_chain(smallest_stable_delay(paper_params(), 0)).unit_gain(), grid);
}

}  // namespace

TEST_CASE("sideband pair recovers the occupation") {
    auto sp = sideband_pair(0.66, 381, 1);
    auto f = fit_sideband_pair(sp.rr, sp.bb, FrequencyMask());
    auto t = asymmetry_from_fit(f);
    CHECK(t.method == ThermometryMethod::asymmetry);
    CHECK(std::abs(t.n_bar - 0.66) <= 0.08);
    CHECK(t.sigma <= 0.08);
    CHECK(t.sigma > 0.0);
    CHECK(f.value("gamma_eff") == doctest::Approx(kTwoPi * 11.1e3).epsilon(0.02));
    CHECK(f.value("omega_z") == doctest::Approx(kTwoPi * 77.6e3).epsilon(1e-3));
    CHECK(f.chi2_reduced == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("sideband ratio inversion") {
    auto sp = sideband_pair(1.0, 0, 1);
    auto f = fit_sideband_pair(sp.rr, sp.bb, FrequencyMask());
    CHECK(f.value("ratio") == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(asymmetry_from_fit(f).n_bar == doctest::Approx(1.0).epsilon(1e-5));

    auto eq = fit_sideband_pair(sp.rr, sp.rr, FrequencyMask());
    CHECK(eq.value("ratio") == doctest::Approx(1.0).epsilon(1e-9));
    auto te = asymmetry_from_fit(eq);
    CHECK_FALSE(te.n_bar < 1e6);
    Spectrum shifted = sp.bb;
    shifted.grid[0] -= 1.0;
    CHECK_THROWS_AS(fit_sideband_pair(sp.rr, shifted, FrequencyMask()), InvalidArgument);
}

TEST_CASE("sidebands in the wrong order are flagged, not clamped") {
    auto sp = sideband_pair(0.66, 0, 1);
    auto f = fit_sideband_pair(sp.bb, sp.rr, FrequencyMask());
    CHECK(f.flagged("unphysical_asymmetry"));
    auto t = asymmetry_from_fit(f);
    CHECK(t.unphysical);
    CHECK(std::isinf(t.n_bar));
}

TEST_CASE("double-LO combination") {
    auto sp = sideband_pair(0.66, 381, 4);
    auto f = fit_sideband_pair(sp.rr, sp.bb, FrequencyMask());
    auto single = asymmetry_from_fit(f);
    auto dbl = asymmetry_double_lo(f, f);
    CHECK(dbl.method == ThermometryMethod::asymmetry_double_lo);
    CHECK(dbl.n_bar == doctest::Approx(single.n_bar).epsilon(1e-12));

    // A gain g on one sideband and 1/g on the other cancels when the LO sign swaps the roles.
    FitResult plus = f, minus = f;
    plus.set("ratio", f.value("ratio") * 1.3, f.sigma("ratio"));
    minus.set("ratio", f.value("ratio") / 1.3, f.sigma("ratio"));
    CHECK(asymmetry_double_lo(plus, minus).n_bar == doctest::Approx(single.n_bar).epsilon(1e-12));

    FitResult bad = f;
    bad.set("s_ff_b", -1.0, 0.0);
    CHECK_THROWS_AS(asymmetry_double_lo(f, bad), NumericalError);
    FitResult other = f;
    other.n_points += 1;
    CHECK_THROWS_AS(asymmetry_double_lo(f, other), InvalidArgument);
}

TEST_CASE("cross-spectrum fit") {
    SUBCASE("noiseless data is reproduced") {
        auto s = cross_model(0.64, 0, 1);
        auto f = fit_cross_spectrum(s, FrequencyMask());
        CHECK(cross_correlation_result(f).n_bar == doctest::Approx(0.64).epsilon(1e-6));
        CHECK(f.value("gamma_eff") == doctest::Approx(kTwoPi * 11.1e3).epsilon(1e-6));
        // Unit-mass susceptibility, so the amplitudes carry R / m^2.
        double r = physical_scale_r(paper_params(), kTwoPi * 11.1e3) / 1e-36;
        CHECK(f.value("c_i") == doctest::Approx(r).epsilon(1e-6));
        CHECK(f.value("c_r") == doctest::Approx(r * 1.14).epsilon(1e-6));
    }
    SUBCASE("noisy recovery and rescale invariance") {
        auto s = cross_model(0.64, 381, 2);
        auto f = fit_cross_spectrum(s, FrequencyMask());
        auto t = cross_correlation_result(f);
        CHECK(t.method == ThermometryMethod::cross_correlation);
        CHECK(std::abs(t.n_bar - 0.64) <= 0.09);
        CHECK(t.sigma <= 0.09);
        for (double k : {1e-6, 3.0, 1e9}) {
            auto fk = fit_cross_spectrum(s.scaled(k), FrequencyMask());
            CHECK(cross_correlation_result(fk).n_bar == doctest::Approx(t.n_bar).epsilon(1e-6));
        }
        auto fi = fit_cross_spectrum(s, FrequencyMask(), CrossFitPart::imag_only);
        CHECK(fi.value("gamma_eff") == doctest::Approx(kTwoPi * 11.1e3).epsilon(0.05));
        CHECK_FALSE(fi.has("n_bar"));
    }
    SUBCASE("flipped imaginary part is flagged") {
        auto s = cross_model(0.64, 0, 1);
        for (auto& v : s.values) v = std::conj(v);
        auto f = fit_cross_spectrum(s, FrequencyMask());
        CHECK(f.flagged("nonpositive_c_i"));
    }
    SUBCASE("zero data") {
        auto s = cross_model(0.64, 0, 1);
        for (auto& v : s.values) v = 0.0;
        CHECK_THROWS_AS(fit_cross_spectrum(s, FrequencyMask()), NumericalError);
    }
}

TEST_CASE("reference fit") {
    auto p = paper_params();
    auto b = paper_budget();
    SUBCASE("exact spectrum") {
        auto f = fit_reference_homodyne(reference_model(0, 1), FrequencyMask(), p.mass());
        CHECK(f.value("omega_z") == doctest::Approx(p.omega_z()).epsilon(1e-9));
        CHECK(f.value("gamma_m") == doctest::Approx(p.gamma_m()).epsilon(1e-5));
        CHECK(f.value("s_ff_tot") == doctest::Approx(force_psd_total(p, b)).epsilon(1e-5));
        CHECK(f.value("s_imp") == doctest::Approx(imprecision_psd(p, b)).epsilon(1e-6));
        auto r = rates_from_reference(f);
        CHECK(r.gamma_meas == doctest::Approx(b.gamma_meas).epsilon(1e-5));
        CHECK(r.gamma_tot == doctest::Approx(b.gamma_tot).epsilon(1e-5));
    }
    SUBCASE("noisy spectrum") {
        auto f = fit_reference_homodyne(reference_model(20, 7), FrequencyMask::paper_default(), p.mass());
        CHECK(f.value("omega_z") == doctest::Approx(p.omega_z()).epsilon(1e-3));
        CHECK(f.value("gamma_m") == doctest::Approx(p.gamma_m()).epsilon(0.1));
        auto r = rates_from_reference(f);
        CHECK(std::abs(r.gamma_meas - b.gamma_meas) < 3.0 * r.sigma_gamma_meas);
        CHECK(std::abs(r.gamma_tot - b.gamma_tot) < 3.0 * r.sigma_gamma_tot);
        CHECK(std::abs(r.eta_meas - 0.24) <= 0.02);
        CHECK(r.sigma_eta_meas > 0.0);
    }
    SUBCASE("truth packaging") {
        auto r = rates_from_reference(reference_from_truth(p, b));
        CHECK(r.eta_meas == doctest::Approx(b.eta_meas).epsilon(1e-12));
        CHECK(r.sigma_eta_meas == 0.0);
    }
    SUBCASE("flat spectrum") {
        auto s = reference_model(0, 1);
        for (auto& v : s.values) v = 1e-27;
        CHECK_THROWS_AS(fit_reference_homodyne(s, FrequencyMask(), p.mass()), NumericalError);
    }
}

TEST_CASE("in-loop gain fit") {
    auto p = paper_params();
    auto ref = reference_from_truth(p, paper_budget());
    double gs = optimal_gamma(paper_budget());
    std::mt19937_64 rng(5);
    double sxy = 0.0, sxx = 0.0;
    for (double g : {gs / 30.0, gs / 10.0, gs / 3.0, gs}) {
        double half = std::max(kTwoPi * 5e3, 5.0 * (g + p.gamma_m()));
        auto grid = linear_grid(p.omega_z() - half, p.omega_z() + half, kTwoPi * 20.0);
        auto h = unit_chain_response(grid);
        auto truth = inloop_psd(ref, g, h, grid);
        auto s = noisy(truth.grid, truth.values, 100, rng);
        auto f = fit_inloop_gain(s, ref, h, FrequencyMask());
        CHECK(f.value("gamma_fb") == doctest::Approx(g).epsilon(0.02));
        CHECK(f.sigma("gamma_fb") > 0.0);
        sxy += g * f.value("gamma_fb");
        sxx += g * g;
    }
    CHECK(sxy / sxx == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("in-loop and true-motion models") {
    auto p = paper_params();
    auto b = paper_budget();
    auto ref = reference_from_truth(p, b);
    auto grid = linear_grid(p.omega_z() * 0.5, p.omega_z() * 1.5, kTwoPi * 50.0);
    auto h = unit_chain_response(grid);
    double simp = imprecision_psd(p, b), sff = force_psd_total(p, b);

    auto zero = inloop_psd(ref, 0.0, h, grid);
    auto t0 = true_displacement_psd(ref, 0.0, h, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double chi2 = std::norm(susceptibility(grid[i], p, p.gamma_m()));
        CHECK(zero.values[i] == doctest::Approx(simp + chi2 * sff).epsilon(1e-9));
        CHECK(t0.values[i] == doctest::Approx(chi2 * sff).epsilon(1e-9));
    }

    double g = 5.0 * optimal_gamma(b);
    auto in = inloop_psd(ref, g, h, grid);
    auto tr = true_displacement_psd(ref, g, h, grid);
    double mn = *std::min_element(in.values.begin(), in.values.end());
    CHECK(mn < simp);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        cplx hfb = p.mass() * p.omega_z() * g * h(grid[i]);
        double force_only = std::norm(closed_loop_susceptibility(grid[i], p, hfb)) * sff;
        CHECK(tr.values[i] >= force_only * (1.0 - 1e-12));
    }

    // A noiseless squashed spectrum refits to a model that keeps its dip.
    auto half = linear_grid(p.omega_z() - kTwoPi * 60e3, p.omega_z() + kTwoPi * 60e3, kTwoPi * 50.0);
    auto hh = unit_chain_response(half);
    auto target = inloop_psd(ref, g, hh, half);
    std::mt19937_64 rng(3);
    auto f = fit_inloop_gain(noisy(target.grid, target.values, 200, rng), ref, hh, FrequencyMask());
    auto refit = inloop_psd(ref, f.value("gamma_fb"), hh, half);
    CHECK(*std::min_element(refit.values.begin(), refit.values.end()) < simp);
}

TEST_CASE("occupation integral against ideal viscous damping") {
    OscillatorParams p(1e-18, kTwoPi * 77.6e3, 0.0);
    auto b = paper_budget();
    auto ref = reference_from_truth(p, b);
    for (double x : {3e-4, 1e-3}) {
        double g = x * p.omega_z();
        auto grid = occupation_grid(p, g);
        std::vector<cplx> hv;
        for (double w : grid) hv.emplace_back(0.0, -w / p.omega_z());
        FrequencyResponse h(grid, hv);
        auto n = occupation_from_spectrum(true_displacement_psd(ref, g, h, grid), p);
        double closed = b.gamma_tot / g + g / (16.0 * b.gamma_meas) - 0.5;
        CHECK(n.n_bar == doctest::Approx(closed).epsilon(0.005));
        CHECK_FALSE(n.below_zero);
    }
}

TEST_CASE("occupation integral properties") {
    auto p = paper_params();
    auto ref = reference_from_truth(p, paper_budget());
    auto grid = occupation_grid(p, kTwoPi * 5e3);
    auto h = unit_chain_response(grid);
    auto s = true_displacement_psd(ref, kTwoPi * 5e3, h, grid);
    auto n1 = occupation_from_spectrum(s, p);
    for (auto& v : s.values) v *= 2.0;
    auto n2 = occupation_from_spectrum(s, p);
    CHECK(n2.n_bar + 0.5 == doctest::Approx(2.0 * (n1.n_bar + 0.5)).epsilon(1e-12));

    auto hz = convert_convention(s, SpectralConvention::single_sided_hertz);
    CHECK(occupation_from_spectrum(hz, p).n_bar == doctest::Approx(n2.n_bar).epsilon(1e-9));

    for (auto& v : s.values) v = 0.0;
    auto z = occupation_from_spectrum(s, p);
    CHECK(z.n_bar == -0.5);
    CHECK(z.below_zero);

    auto narrow = crop(true_displacement_psd(ref, kTwoPi * 5e3, h, grid), p.omega_z() / 2.0, 2.0 * p.omega_z());
    CHECK_THROWS_AS(occupation_from_spectrum(narrow, p), InvalidArgument);
    Spectrum flat;
    flat.grid = grid;
    flat.values.assign(grid.size(), 1e-30);
    CHECK_THROWS_AS(occupation_from_spectrum(flat, p), NumericalError);
}

TEST_CASE("line shape helpers") {
    auto p = paper_params();
    double g = kTwoPi * 700.0;
    Spectrum s;
    s.grid = linear_grid(p.omega_z() - 20.0 * g, p.omega_z() + 20.0 * g, g / 200.0);
    for (double w : s.grid) s.values.push_back(std::norm(susceptibility(w, p, g)));
    CHECK(full_width_half_max(s) == doctest::Approx(g).epsilon(1e-3));
    CHECK(peak_frequency(s) == doctest::Approx(p.omega_z()).epsilon(1e-6));
    auto c = crop(s, p.omega_z(), p.omega_z() + 20.0 * g);
    CHECK_THROWS_AS(full_width_half_max(c), NumericalError);
}

TEST_CASE("energy anchoring") {
    auto a = anchor_calibration(3.0, 3.0, 0.1, 0.1);
    CHECK(a.scale == 1.0);
    CHECK_THROWS_AS(anchor_calibration(0.0, 5.1), InvalidArgument);
    CHECK_THROWS_AS(anchor_calibration(5.1, -1.0), InvalidArgument);
    auto paper = anchor_calibration(4.0, 5.1, 0.0, 0.1);
    CHECK(apply_anchor(paper, 4.0, 0.0).n_bar == doctest::Approx(5.1));
    CHECK(apply_anchor(paper, 4.0, 0.0).sigma == doctest::Approx(0.1));

    // A displacement-calibration error scales every spectrum alike; one anchor removes it.
    auto p = paper_params();
    auto b = paper_budget();
    auto truth = reference_from_truth(p, b);
    FitResult wrong = truth;
    wrong.set("s_ff_tot", 1.37 * truth.value("s_ff_tot"), 0.0);
    wrong.set("s_imp", 1.37 * truth.value("s_imp"), 0.0);
    double gs = optimal_gamma(b);
    std::vector<double> gains{gs / 30.0, gs / 10.0, gs / 3.0, gs};
    std::vector<double> n_true, n_unc;
    for (double g : gains) {
        auto grid = occupation_grid(p, g + p.gamma_m());
        grid.insert(grid.begin(), p.omega_z() / 60.0);
        grid.push_back(12.0 * p.omega_z());
        auto h = unit_chain_response(grid);
        auto og = occupation_grid(p, g + p.gamma_m());
        n_true.push_back(occupation_from_spectrum(true_displacement_psd(truth, g, h, og), p).n_bar);
        n_unc.push_back(occupation_from_spectrum(true_displacement_psd(wrong, g, h, og), p).n_bar);
    }
    auto sc = anchor_calibration(n_unc[0], n_true[0]);
    for (std::size_t i = 1; i < gains.size(); ++i)
        CHECK(apply_anchor(sc, n_unc[i], 0.0).n_bar == doctest::Approx(n_true[i]).epsilon(0.1));
}
