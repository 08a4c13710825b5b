#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "levcool/errors.hpp"
#include "levcool/estimate.hpp"
#include "levcool/harness.hpp"
#include "levcool/io.hpp"
#include "levcool/simulate.hpp"
#include "levcool/spectral.hpp"

using namespace levcool;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 1;
};

ExperimentConfig load(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? default_config() : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    cfg.threads = c.threads;
    cfg.validate();
    return cfg;
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void add_common(CLI::App* app, Common& c, bool threads) {
    app->add_option("--config", c.config, "JSON experiment config (defaults to paper parameters)");
    app->add_option("--seed", c.seed, "override the config seed");
    app->add_option("--out", c.out, "output directory or file");
    if (threads) app->add_option("--threads", c.threads, "parallel sweep rows")->check(CLI::PositiveNumber);
}

int cmd_model(const Common& c) {
    ExperimentConfig cfg = load(c);
    SweepReport rep;
    rep.config_echo = config_to_json(cfg);
    rep.eta_meas = cfg.budget.eta_meas;
    rep.gamma_star = optimal_gamma(cfg.budget);
    rep.n_conditional = conditional_occupation(cfg.budget.eta_meas);
    rep.n_min = cold_damping_occupation(rep.gamma_star, cfg.budget);
    if (!cfg.gamma_fb.empty()) {
        auto [lo, hi] = std::minmax_element(cfg.gamma_fb.begin(), cfg.gamma_fb.end());
        rep.curves = theory_curves(cfg, log_sweep(*lo, *hi, cfg.curve_points));
    }
    io::write_atomic(path_in(cfg.output_dir, "theory_curves.csv"), curves_csv(rep));
    io::write_atomic(path_in(cfg.output_dir, "summary.txt"), summary_text(rep));
    std::cout << summary_text(rep);
    return 0;
}

int cmd_simulate(const Common& c, double gain_hz, double duration, bool allow_unstable, int decimation) {
    ExperimentConfig cfg = load(c);
    SimConfig s;
    s.params = cfg.params;
    s.budget = cfg.budget;
    s.chain = cfg.chain;
    s.gamma_fb = kTwoPi * gain_hz;
    s.dt = cfg.homodyne.dt_s;
    s.duration = duration;
    s.seed = cfg.seed;
    s.allow_unstable = allow_unstable;
    s.output_decimation = decimation;
    SimResult r = simulate_closed_loop(s);
    std::uint64_t h = fnv1a(config_to_json(cfg) + io::fmt(gain_hz) + io::fmt(duration));
    r.z.config_hash = r.i_hom.config_hash = h;
    io::write_trace(path_in(cfg.output_dir, "z.csv"), r.z);
    io::write_trace(path_in(cfg.output_dir, "i_hom.csv"), r.i_hom);
    for (auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "delay_samples: " << r.delay.samples << "\nrounding_error_s: " << r.delay.rounding_error_s << '\n';
    return 0;
}

int cmd_synth(const Common& c, double n_bar, double gamma_eff_hz, double duration, int lo_sign, double bg,
              double tone_amp, double drift_hz) {
    ExperimentConfig cfg = load(c);
    HetSynthConfig h;
    h.params = cfg.params;
    h.n_bar = n_bar;
    h.gamma_eff = kTwoPi * gamma_eff_hz;
    h.duration = duration;
    h.sample_rate = cfg.het.sample_rate_hz;
    h.seed = cfg.seed;
    h.lo_sign = lo_sign;
    const double m = cfg.params.mass();
    const double a0 = h.r() / (m * m * h.gamma_eff * h.gamma_eff * h.center() * h.center());
    h.bg_r = h.bg_b = bg * a0;
    if (tone_amp > 0.0) h.tone = HetTone{cfg.het.tone_hz, cplx(tone_amp, 0.0)};
    h.lo_phase_drift = kTwoPi * drift_hz;
    h.frame_phase = cfg.het.frame_phase_rad;
    HetTraces t = synthesize_heterodyne(h);
    std::uint64_t hash = fnv1a(config_to_json(cfg) + io::fmt(n_bar) + io::fmt(gamma_eff_hz) + std::to_string(lo_sign));
    for (auto* tr : {&t.i_r, &t.i_b, &t.i_car}) tr->config_hash = hash;
    io::write_trace(path_in(cfg.output_dir, "i_r.csv"), t.i_r);
    io::write_trace(path_in(cfg.output_dir, "i_b.csv"), t.i_b);
    io::write_trace(path_in(cfg.output_dir, "i_car.csv"), t.i_car);
    return 0;
}

struct EstimateArgs {
    std::string method;
    std::string trace, i_r, i_b, i_car, i_r_minus, i_b_minus;
    std::string spectrum, reference, response;
    std::size_t segment = 16384;
    double tone_hz = 90e3;
    double band_hz = 25e3;
};

FitResult sideband_fit(const TimeTrace& r, const TimeTrace& b, const EstimateArgs& a, const FrequencyMask& mask) {
    CrossPsd cp = estimate_cross_psd(r, b, a.segment);
    double c = kTwoPi * r.demod_hz, w = kTwoPi * a.band_hz;
    return fit_sideband_pair(crop(cp.s_rr, c - w, c + w), crop(cp.s_bb, c - w, c + w), mask);
}

void print_result(const ThermometryResult& t) {
    std::cout << "method: " << to_string(t.method) << "\nn_bar: " << t.n_bar << "\nsigma: " << t.sigma << '\n';
    for (auto& f : t.flags) std::cout << "flag: " << f << '\n';
}

int cmd_estimate(const Common& c, const EstimateArgs& a) {
    ExperimentConfig cfg = load(c);
    const std::string out = c.out.empty() ? "." : c.out;
    if (a.method == "psd") {
        if (a.trace.empty()) throw InvalidArgument("--trace is required for psd");
        Spectrum s = estimate_psd(io::read_trace(a.trace), a.segment);
        io::write_spectrum(path_in(out, "psd.csv"), s);
    } else if (a.method == "reference") {
        Spectrum s = io::read_spectrum(a.spectrum);
        double w0 = cfg.params.omega_z(), w = kTwoPi * a.band_hz;
        FitResult f = fit_reference_homodyne(crop(s, w0 - w, w0 + w), cfg.mask, cfg.params.mass());
        io::write_fit(path_in(out, "reference_fit.txt"), f);
        std::cout << io::fit_to_text(f);
    } else if (a.method == "inloop") {
        Spectrum s = io::read_spectrum(a.spectrum);
        FitResult ref = io::read_fit(a.reference);
        FrequencyResponse h;
        auto grid = occupation_grid(cfg.params, cfg.params.gamma_m() + optimal_gamma(cfg.budget));
        grid.insert(grid.begin(), cfg.params.omega_z() / 60.0);
        grid.push_back(12.0 * cfg.params.omega_z());
        h = a.response.empty() ? tabulate(cfg.chain.unit_gain(), grid) : io::read_response(a.response);
        double w0 = ref.value("omega_z"), w = kTwoPi * a.band_hz;
        FitResult f = fit_inloop_gain(crop(s, w0 - w, w0 + w), ref, h, cfg.mask);
        OscillatorParams pf(ref.value("mass"), ref.value("omega_z"), ref.value("gamma_m"));
        auto og = occupation_grid(pf, pf.gamma_m() + f.value("gamma_fb"));
        ThermometryResult n = occupation_from_spectrum(true_displacement_psd(ref, f.value("gamma_fb"), h, og), pf);
        f.set("n_bar_uncalibrated", n.n_bar, n.sigma);
        io::write_fit(path_in(out, "inloop_fit.txt"), f);
        std::cout << io::fit_to_text(f);
    } else if (a.method == "asymmetry") {
        FitResult fp = sideband_fit(io::read_trace(a.i_r), io::read_trace(a.i_b), a, cfg.mask);
        io::write_fit(path_in(out, "asymmetry_fit.txt"), fp);
        if (!a.i_r_minus.empty()) {
            FitResult fm = sideband_fit(io::read_trace(a.i_r_minus), io::read_trace(a.i_b_minus), a, cfg.mask);
            io::write_fit(path_in(out, "asymmetry_fit_minus.txt"), fm);
            print_result(asymmetry_double_lo(fp, fm));
        } else {
            print_result(asymmetry_from_fit(fp));
        }
    } else if (a.method == "cross") {
        auto pc = phase_correct(io::read_trace(a.i_r), io::read_trace(a.i_b), io::read_trace(a.i_car));
        CrossPsd cp = estimate_cross_psd(pc.first, pc.second, a.segment);
        FrameCalibration cal = calibrate_cross_frame(cp.s_rb, a.tone_hz);
        double cc = kTwoPi * pc.first.demod_hz, w = kTwoPi * a.band_hz;
        FitResult f = fit_cross_spectrum(crop(cal.rotated, cc - w, cc + w), cfg.mask);
        f.set("frame_theta", cal.theta, 0.0);
        io::write_cross(path_in(out, "cross_rotated.csv"), cal.rotated);
        io::write_fit(path_in(out, "cross_fit.txt"), f);
        print_result(cross_correlation_result(f));
    } else {
        throw InvalidArgument("unknown estimate method: " + a.method);
    }
    return 0;
}

int cmd_sweep(const Common& c) {
    ExperimentConfig cfg = load(c);
    SweepReport rep = run_gain_sweep(cfg);
    ReportFiles f = emit_report(rep, cfg.output_dir);
    std::cout << summary_text(rep);
    std::cout << "rows: " << f.rows << "\ncurves: " << f.curves << '\n';
    int code = 0;
    if (!rep.reference_error.empty()) {
        std::cerr << "reference: " << rep.reference_error << '\n';
        code = 3;
    }
    for (const auto& r : rep.rows) {
        if (!r.error.empty()) std::cerr << "row " << r.index << ": " << r.error << '\n';
        if (r.stable && !r.error.empty()) code = 3;
    }
    return code;
}

int cmd_squash(const Common& c) {
    ExperimentConfig cfg = load(c);
    auto rows = run_squashing_demo(cfg);
    std::string text = squash_csv(rows);
    io::write_atomic(path_in(cfg.output_dir, "squashing.csv"), text);
    std::cout << text;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"levcool: feedback cooling digital twin"};
    app.require_subcommand(1);
    Common common;

    auto* model = app.add_subcommand("model", "analytic cooling curves and budget summary");
    add_common(model, common, false);

    auto* sim = app.add_subcommand("simulate", "closed-loop time-domain simulation");
    add_common(sim, common, false);
    double gain_hz = 1e3, duration = 0.1;
    bool allow_unstable = false;
    int decimation = 4;
    sim->add_option("--gamma-fb-hz", gain_hz, "feedback gain / 2 pi")->check(CLI::NonNegativeNumber);
    sim->add_option("--duration-s", duration, "record length")->check(CLI::PositiveNumber);
    sim->add_option("--decimation", decimation, "boxcar decimation of the output")->check(CLI::PositiveNumber);
    sim->add_flag("--allow-unstable", allow_unstable, "skip the pre-run Nyquist check");

    auto* het = app.add_subcommand("synth-het", "synthesize heterodyne sideband records");
    add_common(het, common, false);
    double n_bar = 0.66, gamma_eff_hz = 11.1e3, het_duration = 1.0, bg = 1.0, tone_amp = 0.0, drift = 0.0;
    int lo_sign = 1;
    het->add_option("--n-bar", n_bar)->check(CLI::NonNegativeNumber);
    het->add_option("--gamma-eff-hz", gamma_eff_hz)->check(CLI::PositiveNumber);
    het->add_option("--duration-s", het_duration)->check(CLI::PositiveNumber);
    het->add_option("--lo-sign", lo_sign)->check(CLI::IsMember({1, -1}));
    het->add_option("--background", bg, "background in units of the peak motional density")->check(CLI::NonNegativeNumber);
    het->add_option("--tone-amplitude", tone_amp)->check(CLI::NonNegativeNumber);
    het->add_option("--lo-drift-hz", drift);

    auto* est = app.add_subcommand("estimate", "spectra, fits and thermometry from files");
    add_common(est, common, false);
    EstimateArgs ea;
    est->add_option("method", ea.method, "psd | reference | inloop | asymmetry | cross")->required();
    est->add_option("--trace", ea.trace);
    est->add_option("--i-r", ea.i_r);
    est->add_option("--i-b", ea.i_b);
    est->add_option("--i-car", ea.i_car);
    est->add_option("--i-r-minus", ea.i_r_minus);
    est->add_option("--i-b-minus", ea.i_b_minus);
    est->add_option("--spectrum", ea.spectrum);
    est->add_option("--reference", ea.reference);
    est->add_option("--response", ea.response, "feedback shape CSV (frequency_hz, re, im)");
    est->add_option("--segment", ea.segment)->check(CLI::PositiveNumber);
    est->add_option("--tone-hz", ea.tone_hz);
    est->add_option("--band-hz", ea.band_hz, "half width of the fit band")->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "gain sweep with all thermometers");
    add_common(sweep, common, true);
    auto* squash = app.add_subcommand("squash", "in-loop noise squashing table");
    add_common(squash, common, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int r = app.exit(e);
        return r == 0 ? 0 : 2;
    }

    try {
        if (*model) return cmd_model(common);
        if (*sim) return cmd_simulate(common, gain_hz, duration, allow_unstable, decimation);
        if (*het) return cmd_synth(common, n_bar, gamma_eff_hz, het_duration, lo_sign, bg, tone_amp, drift);
        if (*est) return cmd_estimate(common, ea);
        if (*sweep) return cmd_sweep(common);
        if (*squash) return cmd_squash(common);
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return 4;
    }
    return 2;
}
