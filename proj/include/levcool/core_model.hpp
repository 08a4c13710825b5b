#pragma once

#include <complex>
#include <map>
#include <string>
#include <vector>

namespace levcool {

using cplx = std::complex<double>;

inline constexpr double kHbar = 1.054571817e-34;  // J s
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Mass, resonance and residual damping of the levitated oscillator.
/// z_zpf is recomputed from mass and omega_z on every call.
class OscillatorParams {
public:
    OscillatorParams() = default;
    OscillatorParams(double mass_kg, double omega_z, double gamma_m);

    double mass() const { return mass_; }
    double omega_z() const { return omega_z_; }
    double gamma_m() const { return gamma_m_; }
    double z_zpf() const;
    double z_zpf_sq() const;

private:
    double mass_ = 1e-18;
    double omega_z_ = kTwoPi * 77.6e3;
    double gamma_m_ = kTwoPi * 21.9;
};

/// Decoherence and measurement rates, all in rad/s.
struct RateBudget {
    double gamma_qba = 0.0;
    double gamma_exc = 0.0;
    double eta_d = 1.0;
    double gamma_tot = 0.0;
    double gamma_meas = 0.0;
    double eta_meas = 0.0;
    double c_q = 0.0;          // meaningless when c_q_infinite
    bool c_q_infinite = false;
};

RateBudget rates_from_budget(double gamma_qba, double gamma_exc, double eta_d);

// Budget with prescribed measurement and total rates, split by cooperativity c_q.
RateBudget budget_from_rates(double gamma_meas, double gamma_tot, double c_q);

enum class SpectralConvention { two_sided_angular, single_sided_hertz };

std::string to_string(SpectralConvention c);
SpectralConvention convention_from_string(const std::string& s);

struct Spectrum {
    std::vector<double> grid;
    std::vector<double> values;
    std::vector<double> sigmas;  // empty when unknown
    SpectralConvention convention = SpectralConvention::two_sided_angular;
    long n_averages = 1;
    std::map<std::string, std::string> metadata;

    std::size_t size() const { return grid.size(); }
    void validate() const;
};

enum class ThermometryMethod { asymmetry, asymmetry_double_lo, cross_correlation, inloop_integral };

std::string to_string(ThermometryMethod m);

struct ThermometryResult {
    double n_bar = 0.0;
    double sigma = 0.0;
    ThermometryMethod method = ThermometryMethod::asymmetry;
    bool below_zero = false;
    bool unphysical = false;  // n_bar infinite or undefined
    std::vector<std::string> flags;
};

enum class Sideband { stokes, antistokes };

cplx susceptibility(double omega, const OscillatorParams& params, double gamma);
cplx inverse_susceptibility(double omega, const OscillatorParams& params, double gamma);

double force_psd_total(const OscillatorParams& params, const RateBudget& budget);
double imprecision_psd(const OscillatorParams& params, const RateBudget& budget);

// R = m gamma_eff hbar omega_z / pi
double physical_scale_r(const OscillatorParams& params, double gamma_eff);

double heterodyne_sideband_psd(double omega, const OscillatorParams& params, double gamma_eff,
                               double n_bar, double scale_r, double bg, Sideband side);
cplx heterodyne_cross_psd(double omega, const OscillatorParams& params, double gamma_eff,
                          double n_bar, double scale_r);

struct ColdDamping {
    double n_bar;
    double gamma_opt;
    double n_min;
};

double cold_damping_occupation(double gamma_eff, const RateBudget& budget);
ColdDamping cold_damping(double gamma_eff, const RateBudget& budget);
double optimal_gamma(const RateBudget& budget);
double conditional_occupation(double eta_meas);

Spectrum convert_convention(const Spectrum& s, SpectralConvention to);

// Trapezoid over the grid, doubled for two-sided spectra stored on a
// non-negative grid.
double integrated_variance(const Spectrum& s);

/// Dimensionless units: lengths in z_zpf, frequencies in omega_z.
struct NormalizedUnits {
    explicit NormalizedUnits(const OscillatorParams& p) : z0(p.z_zpf()), w0(p.omega_z()) {}
    double z0;
    double w0;

    double to_freq(double omega) const { return omega / w0; }
    double from_freq(double x) const { return x * w0; }
    double to_length(double z) const { return z / z0; }
    double from_length(double x) const { return x * z0; }
    // Displacement density in m^2 s/rad
    double to_psd(double s) const { return s * w0 / (z0 * z0); }
    double from_psd(double x) const { return x * z0 * z0 / w0; }
};

}  // namespace levcool
