#include "levcool/core_model.hpp"

#include <cmath>
#include <limits>

#include "levcool/errors.hpp"

namespace levcool {

OscillatorParams::OscillatorParams(double mass_kg, double omega_z, double gamma_m)
    : mass_(mass_kg), omega_z_(omega_z), gamma_m_(gamma_m) {
    if (!(mass_kg > 0.0) || !std::isfinite(mass_kg)) throw InvalidArgument("mass must be positive");
    if (!(omega_z > 0.0) || !std::isfinite(omega_z)) throw InvalidArgument("omega_z must be positive");
    if (!(gamma_m >= 0.0) || !(gamma_m < omega_z))
        throw InvalidArgument("gamma_m must satisfy 0 <= gamma_m < omega_z");
}

double OscillatorParams::z_zpf_sq() const { return kHbar / (2.0 * mass_ * omega_z_); }
double OscillatorParams::z_zpf() const { return std::sqrt(z_zpf_sq()); }

RateBudget rates_from_budget(double gamma_qba, double gamma_exc, double eta_d) {
    if (!(gamma_qba >= 0.0) || !(gamma_exc >= 0.0))
        throw InvalidArgument("decoherence rates must be non-negative");
    if (!(gamma_qba + gamma_exc > 0.0)) throw InvalidArgument("total decoherence must be positive");
    if (!(eta_d >= 0.0 && eta_d <= 1.0)) throw InvalidArgument("eta_d outside [0,1]");
    RateBudget b;
    b.gamma_qba = gamma_qba;
    b.gamma_exc = gamma_exc;
    b.eta_d = eta_d;
    b.gamma_tot = gamma_qba + gamma_exc;
    b.gamma_meas = eta_d * gamma_qba;
    b.eta_meas = b.gamma_meas / b.gamma_tot;
    if (gamma_exc == 0.0) {
        b.c_q_infinite = true;
        b.c_q = 0.0;
    } else {
        b.c_q = gamma_qba / gamma_exc;
    }
    return b;
}

RateBudget budget_from_rates(double gamma_meas, double gamma_tot, double c_q) {
    if (!(gamma_tot > 0.0)) throw InvalidArgument("gamma_tot must be positive");
    if (!(gamma_meas >= 0.0)) throw InvalidArgument("gamma_meas must be non-negative");
    if (!(c_q > 0.0)) throw InvalidArgument("c_q must be positive");
    double qba = std::isinf(c_q) ? gamma_tot : gamma_tot * c_q / (1.0 + c_q);
    double exc = gamma_tot - qba;
    if (gamma_meas > qba) throw InvalidArgument("gamma_meas exceeds backaction rate for this c_q");
    return rates_from_budget(qba, exc, gamma_meas / qba);
}

std::string to_string(SpectralConvention c) {
    return c == SpectralConvention::two_sided_angular ? "two_sided_angular" : "single_sided_hertz";
}

SpectralConvention convention_from_string(const std::string& s) {
    if (s == "two_sided_angular") return SpectralConvention::two_sided_angular;
    if (s == "single_sided_hertz") return SpectralConvention::single_sided_hertz;
    throw InvalidArgument("unknown spectral convention: " + s);
}

void Spectrum::validate() const {
    if (grid.size() != values.size()) throw InvalidArgument("spectrum grid/value length mismatch");
    if (!sigmas.empty() && sigmas.size() != values.size())
        throw InvalidArgument("spectrum sigma length mismatch");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1])) throw InvalidArgument("spectrum grid not strictly increasing");
    for (double v : values)
        if (!(v >= 0.0)) throw InvalidArgument("spectrum has negative or NaN values");
}

std::string to_string(ThermometryMethod m) {
    switch (m) {
        case ThermometryMethod::asymmetry: return "asymmetry";
        case ThermometryMethod::asymmetry_double_lo: return "asymmetry_double_lo";
        case ThermometryMethod::cross_correlation: return "cross_correlation";
        case ThermometryMethod::inloop_integral: return "inloop_integral";
    }
    return "unknown";
}

cplx inverse_susceptibility(double omega, const OscillatorParams& p, double gamma) {
    double w0 = p.omega_z();
    return p.mass() * cplx(w0 * w0 - omega * omega, gamma * omega);
}

cplx susceptibility(double omega, const OscillatorParams& p, double gamma) {
    if (gamma < 0.0) throw InvalidArgument("gamma must be non-negative");
    cplx inv = inverse_susceptibility(omega, p, gamma);
    if (inv == cplx(0.0, 0.0))
        throw SingularityError("susceptibility pole at omega = omega_z with zero damping", omega);
    return 1.0 / inv;
}

double force_psd_total(const OscillatorParams& p, const RateBudget& b) {
    return kHbar * kHbar * b.gamma_tot / (kTwoPi * p.z_zpf_sq());
}

double imprecision_psd(const OscillatorParams& p, const RateBudget& b) {
    if (!(b.gamma_meas > 0.0)) throw InvalidArgument("imprecision requires gamma_meas > 0");
    return p.z_zpf_sq() / (8.0 * kPi * b.gamma_meas);
}

double physical_scale_r(const OscillatorParams& p, double gamma_eff) {
    return p.mass() * gamma_eff * kHbar * p.omega_z() / kPi;
}

double heterodyne_sideband_psd(double omega, const OscillatorParams& p, double gamma_eff,
                               double n_bar, double scale_r, double bg, Sideband side) {
    if (!(n_bar >= 0.0)) throw InvalidArgument("n_bar must be non-negative");
    if (!(bg >= 0.0)) throw InvalidArgument("background must be non-negative");
    if (!(scale_r > 0.0)) throw InvalidArgument("scale_R must be positive");
    double chi2 = std::norm(susceptibility(omega, p, gamma_eff));
    double occ = side == Sideband::stokes ? n_bar + 1.0 : n_bar;
    return bg + scale_r * chi2 * occ;
}

cplx heterodyne_cross_psd(double omega, const OscillatorParams& p, double gamma_eff, double n_bar,
                          double scale_r) {
    if (!(n_bar >= 0.0)) throw InvalidArgument("n_bar must be non-negative");
    if (!(scale_r > 0.0)) throw InvalidArgument("scale_R must be positive");
    double chi2 = std::norm(susceptibility(omega, p, gamma_eff));
    double w0 = p.omega_z();
    double im = (omega * omega - w0 * w0) / (2.0 * w0 * gamma_eff);
    return scale_r * chi2 * cplx(n_bar + 0.5, im);
}

double optimal_gamma(const RateBudget& b) { return 4.0 * std::sqrt(b.gamma_tot * b.gamma_meas); }

double cold_damping_occupation(double gamma_eff, const RateBudget& b) {
    if (!(gamma_eff > 0.0)) throw InvalidArgument("gamma_eff must be positive");
    if (!(b.gamma_meas > 0.0)) throw InvalidArgument("cold damping requires gamma_meas > 0");
    return b.gamma_tot / gamma_eff + gamma_eff / (16.0 * b.gamma_meas) - 0.5;
}

ColdDamping cold_damping(double gamma_eff, const RateBudget& b) {
    return {cold_damping_occupation(gamma_eff, b), optimal_gamma(b), conditional_occupation(b.eta_meas)};
}

double conditional_occupation(double eta) {
    if (!(eta > 0.0 && eta <= 1.0)) throw InvalidArgument("eta_meas outside (0,1]");
    return 0.5 * (1.0 / std::sqrt(eta) - 1.0);
}

Spectrum convert_convention(const Spectrum& s, SpectralConvention to) {
    if (s.convention == to) return s;
    Spectrum out = s;
    out.convention = to;
    if (to == SpectralConvention::single_sided_hertz) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            out.grid[i] = s.grid[i] / kTwoPi;
            out.values[i] = 4.0 * kPi * s.values[i];
            if (!s.sigmas.empty()) out.sigmas[i] = 4.0 * kPi * s.sigmas[i];
        }
    } else {
        for (std::size_t i = 0; i < s.size(); ++i) {
            out.grid[i] = s.grid[i] * kTwoPi;
            out.values[i] = s.values[i] / (4.0 * kPi);
            if (!s.sigmas.empty()) out.sigmas[i] = s.sigmas[i] / (4.0 * kPi);
        }
    }
    return out;
}

double integrated_variance(const Spectrum& s) {
    double acc = 0.0;
    for (std::size_t i = 1; i < s.size(); ++i)
        acc += 0.5 * (s.values[i] + s.values[i - 1]) * (s.grid[i] - s.grid[i - 1]);
    if (s.convention == SpectralConvention::two_sided_angular) {
        auto it = s.metadata.find("signal");
        bool complex_signal = it != s.metadata.end() && it->second == "complex";
        bool nonneg = !s.grid.empty() && s.grid.front() >= 0.0;
        return nonneg && !complex_signal ? 2.0 * acc : acc;
    }
    return acc;
}

}  // namespace levcool
