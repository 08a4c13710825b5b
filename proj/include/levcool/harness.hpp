#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "levcool/core_model.hpp"
#include "levcool/estimate.hpp"
#include "levcool/loop_filter.hpp"
#include "levcool/simulate.hpp"

namespace levcool {

struct HomodyneSettings {
    double dt_s = 1.0 / (4.0 * 977e3);
    double burn_in_s = 0.02;
    std::size_t n_segments = 100;
    double min_segment_s = 0.02;
    double linewidths_per_segment = 20.0;  // segment >= this many 2 pi / gamma_eff
    double reference_segment_s = 1.0;
    std::size_t reference_segments = 20;
    double reference_band_hz = 25e3;  // half width around omega_z
    double fit_band_min_hz = 5e3;     // gain fits use +- max(this, fit_band_linewidths * gamma_eff)
    double fit_band_linewidths = 5.0;
};

struct HetSettings {
    bool enabled = true;
    double duration_s = 100.0;
    double sample_rate_hz = 62.5e3;
    std::size_t segment_samples = 16384;
    double band_fraction = 0.9;      // fraction of the baseband used in fits
    double background_factor = 1.0;  // bg = factor * peak anti-Stokes Lorentzian height scaled by (n + 1)
    double tone_hz = 90e3;
    double tone_to_floor = 100.0;    // single-bin tone power over the background
    double lo_phase_drift_hz = 0.5;  // drift rate / 2 pi
    double lo_phase_walk = 0.01;     // rad / sqrt(s)
    double frame_phase_rad = 0.7;
    double tilt = 0.05;              // relative gain change per omega_z of acquisition offset
};

struct ExperimentConfig {
    OscillatorParams params;
    RateBudget budget;
    FilterChain chain;                      // unit-gain shape
    std::vector<double> gamma_fb;           // rad/s
    std::vector<std::string> labels;        // echoed verbatim, never interpreted
    HomodyneSettings homodyne;
    HetSettings het;
    FrequencyMask mask;
    double anchor_gamma_fb = kTwoPi * 1e3;  // rad/s; nearest sweep row is the anchor
    std::uint64_t seed = 1;
    std::string output_dir = "levcool_out";
    int threads = 1;
    std::size_t curve_points = 60;

    void validate() const;
};

// Paper parameters with the default sweep of 8 log-spaced gains on [gamma*/30, 10 gamma*].
ExperimentConfig default_config();

// Unit-suffixed JSON. Missing keys take the defaults above.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

std::vector<double> log_sweep(double lo, double hi, std::size_t n);

struct SweepRow {
    std::size_t index = 0;
    std::string label;
    double gamma_fb_injected = 0.0;
    bool stable = true;
    bool ok = false;
    std::string error;
    std::vector<std::string> flags;
    std::vector<std::string> warnings;

    double gamma_eff_true = 0.0;  // FWHM of the exact true-motion spectrum
    double omega_eff_true = 0.0;
    double n_true = 0.0;

    double gamma_fb_fitted = 0.0, sigma_gamma_fb = 0.0;
    double gamma_eff_fitted = 0.0;
    double n_uncal = 0.0, sigma_n_uncal = 0.0;
    std::optional<ThermometryResult> inloop;  // anchored
    std::optional<ThermometryResult> asymmetry;
    std::optional<ThermometryResult> asymmetry_single;
    std::optional<ThermometryResult> cross;
};

struct CurvePoint {
    double gamma_fb = 0.0;
    double gamma_eff = 0.0;
    double n_delay_filter = 0.0;
    double n_ideal = 0.0;
    double n_conditional = 0.0;
};

struct SweepReport {
    std::vector<SweepRow> rows;  // sorted by injected gain
    std::optional<FitResult> reference;
    std::optional<ReferenceRates> reference_rates;
    std::string reference_error;
    double eta_meas = 0.0;
    double gamma_star = 0.0;
    double n_min = 0.0;
    double n_conditional = 0.0;
    std::optional<std::size_t> anchor_row;
    AnchorScale anchor;
    std::vector<CurvePoint> curves;
    std::string config_echo;
};

// Exact occupation and linewidth of the true motion for a realized loop.
struct TruthPoint {
    double n_bar = 0.0;
    double gamma_eff = 0.0;
    double omega_eff = 0.0;
};
TruthPoint true_occupation(const OscillatorParams& p, const RateBudget& b, double gamma_fb,
                           const FrequencyResponse& h);

// Delay-filter and ideal cold-damping curves over gains; unstable gains are skipped.
std::vector<CurvePoint> theory_curves(const ExperimentConfig& cfg, const std::vector<double>& gains);

// Reference homodyne fit at gamma_fb = 0.
FitResult run_reference(const ExperimentConfig& cfg);

// One sweep row without anchoring. Failures are recorded in the row.
SweepRow run_row(const ExperimentConfig& cfg, const FitResult& reference, std::size_t index);

SweepReport run_gain_sweep(const ExperimentConfig& cfg);

struct SquashRow {
    double gamma_fb = 0.0;
    bool stable = true;
    double omega_at_min = 0.0;
    double inloop_over_imp = 0.0;    // min over the band of in-loop PSD / S_imp
    double true_over_force = 0.0;    // true PSD / (|chi_fb|^2 S_FF) at the same bin
    double true_over_force_min = 0.0;
};

std::vector<SquashRow> run_squashing_demo(const ExperimentConfig& cfg);

struct ReportFiles {
    std::string rows, curves, config, summary;
};

ReportFiles emit_report(const SweepReport& report, const std::string& dir);
std::string rows_csv(const SweepReport& report);
std::string curves_csv(const SweepReport& report);
std::string summary_text(const SweepReport& report);
std::string squash_csv(const std::vector<SquashRow>& rows);

}  // namespace levcool
