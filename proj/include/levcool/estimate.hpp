#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "levcool/core_model.hpp"
#include "levcool/loop_filter.hpp"
#include "levcool/spectral.hpp"

namespace levcool {

struct FitResult {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<double> sigmas;
    double chi2_reduced = 0.0;
    FrequencyMask mask_used;
    std::size_t n_points = 0;
    int iterations = 0;
    double grid_lo = 0.0;  // rad/s
    double grid_hi = 0.0;
    std::vector<std::string> flags;
    std::vector<std::string> warnings;

    bool has(const std::string& name) const;
    double value(const std::string& name) const;
    double sigma(const std::string& name) const;
    void set(const std::string& name, double value, double sigma);
    bool flagged(const std::string& flag) const;
    void validate() const;
};

enum class CrossFitPart { both, imag_only };

// Joint fit of S_j = bg_j + |chi_eff|^2 S_FF^j (unit mass) to both sidebands.
// Parameters: omega_z, gamma_eff, s_ff_r, s_ff_b, bg_r, bg_b; derived: ratio, n_bar.
FitResult fit_sideband_pair(const Spectrum& s_rr, const Spectrum& s_bb, const FrequencyMask& mask);
ThermometryResult asymmetry_from_fit(const FitResult& fit);
ThermometryResult asymmetry_double_lo(const FitResult& fits_plus, const FitResult& fits_minus);

// Re/Im of S_rb = R |chi_eff|^2 (n + 1/2 + i (W^2 - Wz^2)/(2 Wz g)).
// Parameters: omega_z, gamma_eff, c_r, c_i; derived: n_bar.
FitResult fit_cross_spectrum(const CrossSpectrum& rotated, const FrequencyMask& mask,
                             CrossFitPart part = CrossFitPart::both);
ThermometryResult cross_correlation_result(const FitResult& fit);

// S_imp + |chi_m|^2 S_FF. Parameters: omega_z, gamma_m, s_ff_tot, s_imp; mass stored fixed.
FitResult fit_reference_homodyne(const Spectrum& s_hom, const FrequencyMask& mask, double mass);

// Exact model parameters packaged like a reference fit, with zero uncertainties.
FitResult reference_from_truth(const OscillatorParams& p, const RateBudget& b);

struct ReferenceRates {
    double gamma_tot = 0.0, sigma_gamma_tot = 0.0;
    double gamma_meas = 0.0, sigma_gamma_meas = 0.0;
    double eta_meas = 0.0, sigma_eta_meas = 0.0;
};

ReferenceRates rates_from_reference(const FitResult& reference);

// One-parameter fit of gamma_fb with H_fb = m omega_z gamma_fb h_fb(omega).
FitResult fit_inloop_gain(const Spectrum& s_hom, const FitResult& fixed, const FrequencyResponse& h_fb,
                          const FrequencyMask& mask);

// In-loop record spectrum |chi_fb|^2 (S_FF + |chi_m|^-2 S_imp).
Spectrum inloop_psd(const FitResult& fixed, double gamma_fb, const FrequencyResponse& h_fb,
                    const std::vector<double>& grid);
// Actual motion |chi_fb|^2 (S_FF + |H_fb|^2 S_imp).
Spectrum true_displacement_psd(const FitResult& fixed, double gamma_fb, const FrequencyResponse& h_fb,
                               const std::vector<double>& grid);

ThermometryResult occupation_from_spectrum(const Spectrum& s_zz, const OscillatorParams& params);

// Log grid on [omega_z/50, 10 omega_z] refined across omega_z +- 40 gamma.
std::vector<double> occupation_grid(const OscillatorParams& p, double gamma, std::size_t n_log = 4000);

double full_width_half_max(const Spectrum& s);
double peak_frequency(const Spectrum& s);

struct AnchorScale {
    double scale = 1.0;
    double sigma = 0.0;
};

// Energy anchoring: scale = (n_ref + 1/2) / (n_uncal + 1/2).
AnchorScale anchor_calibration(double n_uncal_at_ref, double n_ref, double sigma_uncal = 0.0,
                               double sigma_ref = 0.0);
ThermometryResult apply_anchor(const AnchorScale& a, double n_uncal, double sigma_uncal);

}  // namespace levcool
