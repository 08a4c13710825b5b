#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "levcool/errors.hpp"
#include "levcool/estimate.hpp"
#include "levcool/simulate.hpp"
#include "levcool/spectral.hpp"

using namespace levcool;

namespace {

TimeTrace complex_noise(std::size_t n, double fs, std::uint64_t seed, double sigma = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, sigma * std::sqrt(0.5));
    TimeTrace t;
    t.sample_rate = fs;
    t.is_complex = true;
    t.samples.resize(n);
    for (auto& s : t.samples) s = cplx(nd(rng), nd(rng));
    return t;
}

HetSynthConfig het_with_tone(double theta) {
    HetSynthConfig c;
    c.params = OscillatorParams(1e-18, kTwoPi * 77.6e3, kTwoPi * 21.9);
    c.n_bar = 0.66;
    c.gamma_eff = kTwoPi * 11.1e3;
    double a = c.r() / std::pow(c.params.mass() * c.gamma_eff * c.params.omega_z(), 2);
    c.bg_r = c.bg_b = 0.3 * a;
    c.duration = 20.0;
    c.lo_phase_start = theta;
    HetTone tone;
    tone.freq_hz = 90e3;
    tone.amplitude = std::sqrt(100.0 * a * kTwoPi * c.sample_rate / 4096.0);
    c.tone = tone;
    return c;
}

cplx resonant_sum(const CrossSpectrum& s, double w0, double half) {
    cplx acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (std::abs(s.grid[i] - w0) <= half) acc += s.values[i];
    return acc;
}

}  // namespace

TEST_CASE("white noise level and Parseval") {
    const double fs = 1e5;
    auto t = complex_noise(1 << 20, fs, 3);
    auto s = estimate_psd(t, 1024);
    CHECK(s.n_averages == 1024);
    CHECK(s.metadata.at("signal") == "complex");
    double mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / static_cast<double>(s.size());
    CHECK(mean == doctest::Approx(1.0 / (kTwoPi * fs)).epsilon(0.01));
    double var = 0.0;
    for (const auto& x : t.samples) var += std::norm(x);
    var /= static_cast<double>(t.size());
    double band = 0.0;
    for (double v : s.values) band += v * kTwoPi * fs / 1024.0;
    CHECK(band == doctest::Approx(var).epsilon(1e-12));
}

TEST_CASE("real tone power") {
    const double fs = 1e4, a = 2.5;
    std::vector<double> v(1 << 16);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * std::cos(kTwoPi * 1250.0 * static_cast<double>(i) / fs + 0.4);
    auto s = estimate_psd(make_real_trace(v, fs, "custom"), 4096);
    CHECK(s.metadata.at("signal") == "real");
    CHECK(integrated_variance(s) == doctest::Approx(a * a / 2.0).epsilon(1e-3));
    auto h = convert_convention(s, SpectralConvention::single_sided_hertz);
    double p = 0.0;
    for (std::size_t i = 1; i + 1 < h.size(); ++i) p += h.values[i] * (h.grid[1] - h.grid[0]);
    CHECK(p == doctest::Approx(a * a / 2.0).epsilon(1e-3));
}

TEST_CASE("zero trace gives a zero spectrum") {
    auto s = estimate_psd(make_real_trace(std::vector<double>(4096, 0.0), 1e3, "custom"), 512);
    for (double v : s.values) CHECK(v == 0.0);
    std::vector<TimeTrace> segs{make_real_trace(std::vector<double>(8, 0.0), 1e3, "custom"),
                                make_real_trace(std::vector<double>(9, 0.0), 1e3, "custom")};
    CHECK_THROWS_AS(estimate_psd(segs), InvalidArgument);
}

TEST_CASE("cross spectrum of a conjugate pair") {
    auto r = complex_noise(1 << 15, 5e4, 8);
    TimeTrace b = r;
    for (auto& x : b.samples) x = std::conj(x);
    auto cp = estimate_cross_psd(r, b, 1024);
    for (std::size_t i = 0; i < cp.s_rb.size(); ++i) {
        CHECK(std::abs(cp.s_rb.values[i].imag()) <= 1e-12 * cp.s_rr.values[i]);
        CHECK(cp.s_rb.values[i].real() == doctest::Approx(cp.s_rr.values[i]).epsilon(1e-12));
    }
    TimeTrace shifted = b;
    shifted.start_time = 1.0;
    CHECK_THROWS_AS(estimate_cross_psd(r, shifted, 1024), InvalidArgument);
}

TEST_CASE("independent records decorrelate as one over root n") {
    auto level = [](std::size_t averages) {
        const std::size_t seg = 256;
        auto r = complex_noise(seg * averages, 1e4, 21), b = complex_noise(seg * averages, 1e4, 22);
        auto cp = estimate_cross_psd(r, b, seg);
        double m = 0.0;
        for (std::size_t i = 0; i < cp.s_rb.size(); ++i)
            m += std::abs(cp.s_rb.values[i]) / std::sqrt(cp.s_rr.values[i] * cp.s_bb.values[i]);
        return m / static_cast<double>(cp.s_rb.size());
    };
    double l16 = level(16), l256 = level(256);
    CHECK(l16 / l256 == doctest::Approx(4.0).epsilon(0.15));
    CHECK(l256 == doctest::Approx(std::sqrt(kPi / 4.0) / 16.0).epsilon(0.15));
}

TEST_CASE("synthesized cross spectrum crosses zero at resonance") {
    auto c = het_with_tone(0.0);
    c.tone.reset();
    c.duration = 60.0;
    auto t = synthesize_heterodyne(c);
    auto cp = estimate_cross_psd(t.i_r, t.i_b, 1024);
    double bin = kTwoPi * c.sample_rate / 1024.0;
    auto band = crop(cp.s_rb, c.params.omega_z() - 2.0 * c.gamma_eff, c.params.omega_z() + 2.0 * c.gamma_eff);
    auto fit = fit_cross_spectrum(band, FrequencyMask(), CrossFitPart::imag_only);
    CHECK(std::abs(fit.value("omega_z") - c.params.omega_z()) < bin);
}

TEST_CASE("phase correction") {
    SUBCASE("constant carrier is the identity") {
        auto r = complex_noise(4096, 1e4, 1), b = complex_noise(4096, 1e4, 2);
        TimeTrace car = r;
        for (auto& x : car.samples) x = 1.0;
        auto [r2, b2] = phase_correct(r, b, car);
        CHECK(r2.samples == r.samples);
        CHECK(b2.samples == b.samples);
    }
    SUBCASE("injected frame rotation is undone") {
        auto c = het_with_tone(0.3);
        c.tone.reset();
        c.duration = 40.0;
        auto t = synthesize_heterodyne(c);
        auto before = estimate_cross_psd(t.i_r, t.i_b, 4096);
        auto [r2, b2] = phase_correct(t.i_r, t.i_b, t.i_car);
        auto after = estimate_cross_psd(r2, b2, 4096);
        double w0 = c.params.omega_z();
        CHECK(std::arg(resonant_sum(before.s_rb, w0, 0.5 * c.gamma_eff)) == doctest::Approx(0.6).epsilon(0.05));
        CrossSpectrum target = after.s_rb;
        for (std::size_t i = 0; i < target.size(); ++i) target.values[i] = heterodyne_bin_model(c, target.grid[i]).s_rb;
        double ref = std::arg(resonant_sum(target, w0, 0.5 * c.gamma_eff));
        CHECK(std::abs(std::arg(resonant_sum(after.s_rb, w0, 0.5 * c.gamma_eff)) - ref) < 0.01);
        for (std::size_t i = 0; i < after.s_rr.size(); ++i) {
            CHECK(after.s_rr.values[i] == doctest::Approx(before.s_rr.values[i]).epsilon(1e-12));
            CHECK(after.s_bb.values[i] == doctest::Approx(before.s_bb.values[i]).epsilon(1e-12));
        }
    }
    SUBCASE("corrections compose") {
        auto r = complex_noise(2048, 1e4, 4), b = complex_noise(2048, 1e4, 5);
        TimeTrace car = r;
        for (std::size_t i = 0; i < car.size(); ++i) car.samples[i] = std::polar(2.0, 0.001 * static_cast<double>(i));
        auto [r1, b1] = phase_correct(r, b, car);
        auto [r2, b2] = phase_correct(r1, b1, car);
        for (std::size_t i = 0; i < r.size(); ++i) {
            cplx rot = std::polar(1.0, -0.002 * static_cast<double>(i));
            CHECK(std::abs(r2.samples[i] - r.samples[i] * rot) < 1e-12 * std::abs(r.samples[i]) + 1e-15);
            CHECK(std::abs(b2.samples[i] - b.samples[i] * rot) < 1e-12 * std::abs(b.samples[i]) + 1e-15);
        }
    }
    SUBCASE("carrier buried in noise") {
        auto r = complex_noise(4096, 1e4, 1), b = complex_noise(4096, 1e4, 2), car = complex_noise(4096, 1e4, 3);
        CHECK_THROWS_AS(phase_correct(r, b, car), LowSnrError);
    }
}

TEST_CASE("frame calibration from the tone") {
    for (double theta : {0.0, 0.3}) {
        auto t = synthesize_heterodyne(het_with_tone(theta));
        auto cp = estimate_cross_psd(t.i_r, t.i_b, 4096);
        auto fc = calibrate_cross_frame(cp.s_rb, 90e3);
        CHECK(std::abs(fc.theta - theta) < (theta == 0.0 ? 0.01 : 0.02));
        CHECK(fc.snr > 10.0);
        std::size_t best = 0;
        for (std::size_t i = 0; i < cp.s_rb.size(); ++i) {
            CHECK(std::abs(fc.rotated.values[i]) == doctest::Approx(std::abs(cp.s_rb.values[i])).epsilon(1e-12));
            if (std::abs(cp.s_rb.grid[i] - kTwoPi * 90e3) < std::abs(cp.s_rb.grid[best] - kTwoPi * 90e3)) best = i;
        }
        cplx tb = fc.rotated.values[best];
        CHECK(std::abs(tb.imag()) < 0.02 * tb.real());
    }
    auto c = het_with_tone(0.0);
    c.tone.reset();
    c.duration = 3.0;
    auto t = synthesize_heterodyne(c);
    CHECK_THROWS_AS(calibrate_cross_frame(estimate_cross_psd(t.i_r, t.i_b, 4096).s_rb, 90e3), LowSnrError);
}

TEST_CASE("postselection") {
    const double fs = 2e4;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(10.5 * fs));
    for (auto& x : v) x = nd(rng);
    auto clean = make_real_trace(v, fs, "i_hom");

    SUBCASE("quiet witness gives contiguous windows") {
        BurstSpec quiet;
        auto b = inject_bursts(clean, 1.0, quiet);
        for (auto& x : b.i_dc.samples) x = 0.0;
        auto r = postselect({clean}, b.i_dc, 0.3, 0.4);
        CHECK(r.burst_times.empty());
        CHECK_FALSE(r.warnings.empty());
        CHECK(r.segments[0].size() == 35);
    }
    SUBCASE("round trip through burst injection") {
        BurstSpec spec;
        spec.amplitude = 20.0;
        spec.ring_hz = 3e3;
        auto b = inject_bursts(clean, 1.0, spec);
        REQUIRE(b.burst_times.size() == 10);
        auto r = postselect({b.contaminated, clean}, b.i_dc, 0.3, 0.4);
        REQUIRE(r.burst_times.size() == 10);
        for (std::size_t k = 0; k < 10; ++k) CHECK(std::abs(r.burst_times[k] - b.burst_times[k]) < 2e-3);
        REQUIRE(r.segments[0].size() == 9);
        for (std::size_t k = 0; k < 9; ++k) CHECK(r.segments[0][k].samples == r.segments[1][k].samples);
        for (const auto& seg : r.segments[0]) {
            auto first = static_cast<std::size_t>(std::llround(seg.start_time * fs));
            double worst = 0.0;
            for (std::size_t i = 0; i < seg.size(); ++i) worst = std::max(worst, std::abs(b.i_dc.samples[first + i]));
            CHECK(worst < 0.01);
        }
        auto s_sel = estimate_psd(r.segments[0]);
        auto s_ref = estimate_psd(clean, 6000);
        double a = std::accumulate(s_sel.values.begin(), s_sel.values.end(), 0.0) / static_cast<double>(s_sel.size());
        double c = std::accumulate(s_ref.values.begin(), s_ref.values.end(), 0.0) / static_cast<double>(s_ref.size());
        CHECK(a == doctest::Approx(c).epsilon(0.05));
        CHECK_THROWS_AS(postselect({b.contaminated}, b.i_dc, 0.7, 0.4), InvalidArgument);
    }
}

TEST_CASE("frequency masks") {
    auto m = FrequencyMask::paper_default();
    CHECK(m.intervals().size() == 3);
    CHECK(m.excluded(kTwoPi * 90e3));
    CHECK_FALSE(m.excluded(kTwoPi * 77.6e3));
    CHECK(m.merged(m).intervals() == m.intervals());
    auto k = m.keep({kTwoPi * 66.3e3, kTwoPi * 70e3});
    CHECK(k[0] == 0);
    CHECK(k[1] == 1);
    CHECK_THROWS_AS(FrequencyMask({{1.0, 3.0}, {2.0, 4.0}}), InvalidArgument);
    CHECK_THROWS_AS(FrequencyMask({{3.0, 1.0}}), InvalidArgument);
    auto j = FrequencyMask({{1.0, 3.0}}).merged(FrequencyMask({{2.0, 4.0}}));
    REQUIRE(j.intervals().size() == 1);
    CHECK(j.intervals()[0] == std::pair<double, double>{1.0, 4.0});
}

TEST_CASE("crop and rebin") {
    Spectrum s;
    for (int i = 0; i < 10; ++i) {
        s.grid.push_back(i);
        s.values.push_back(i * i);
    }
    s.n_averages = 4;
    auto c = crop(s, 2.0, 5.0);
    CHECK(c.grid == std::vector<double>{2, 3, 4, 5});
    auto r = rebin(s, 3);
    REQUIRE(r.size() == 3);
    CHECK(r.grid[1] == doctest::Approx(4.0));
    CHECK(r.values[1] == doctest::Approx((9 + 16 + 25) / 3.0));
    CHECK(r.n_averages == 12);
    CHECK_THROWS_AS(rebin(s, 0), InvalidArgument);
}
