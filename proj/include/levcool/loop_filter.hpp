#pragma once

#include <string>
#include <vector>

#include "levcool/core_model.hpp"

namespace levcool {

enum class StageKind { high_pass, notch, delay, gain };

std::string to_string(StageKind k);
StageKind stage_kind_from_string(const std::string& s);

struct FilterStage {
    StageKind kind = StageKind::gain;
    double cutoff_hz = 0.0;  // high_pass
    double center_hz = 0.0;  // notch
    double quality = 0.0;    // notch
    double tau_s = 0.0;      // delay
    double gain = 1.0;       // gain

    static FilterStage high_pass(double cutoff_hz);
    static FilterStage notch(double center_hz, double quality);
    static FilterStage delay(double tau_s);
    static FilterStage scalar(double gain);

    void validate() const;
};

/// Ordered feedback electronics. overall_gain is the dimensionless loop gain
/// g = gamma_fb / omega_z, so that H_fb(omega) = m omega_z^2 * chain_response(omega).
/// With sample_rate_hz > 0 the high-pass and notch stages are evaluated as
/// their bilinear-transform digital counterparts at that rate.
struct FilterChain {
    std::vector<FilterStage> stages;
    double overall_gain = 1.0;
    double sample_rate_hz = 0.0;

    void validate() const;
    double total_delay() const;
    FilterChain with_gamma_fb(const OscillatorParams& p, double gamma_fb) const;
    FilterChain unit_gain() const;
};

// HP 9 kHz, notches at 202 and 249 kHz (Q = 5) and a delay. Unit gain.
FilterChain paper_chain(double tau_s);
FilterChain pure_delay_chain(double tau_s);

/// Tabulated complex response, interpolated linearly in log-magnitude and
/// unwrapped phase.
class FrequencyResponse {
public:
    FrequencyResponse() = default;
    FrequencyResponse(std::vector<double> grid, std::vector<cplx> values);

    const std::vector<double>& grid() const { return grid_; }
    const std::vector<cplx>& values() const { return values_; }
    std::size_t size() const { return grid_.size(); }
    bool covers(double lo, double hi) const;

    cplx operator()(double omega) const;

private:
    std::vector<double> grid_;
    std::vector<cplx> values_;
    std::vector<double> logmag_;
    std::vector<double> phase_;
};

/// Digital first/second order section, H(z) = (b0 + b1 z^-1 + b2 z^-2)/(1 + a1 z^-1 + a2 z^-2).
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;
    cplx response(double omega, double sample_rate_hz) const;
};

Biquad discretize(const FilterStage& stage, double sample_rate_hz);

cplx delay_filter_response(double omega, const OscillatorParams& p, double gamma_fb, double tau);
cplx stage_response(double omega, const FilterStage& stage, double sample_rate_hz = 0.0);
cplx chain_response(double omega, const FilterChain& chain);
cplx feedback_response(double omega, const OscillatorParams& p, const FilterChain& chain);

FrequencyResponse tabulate(const FilterChain& chain, const std::vector<double>& grid);

double smallest_stable_delay(const OscillatorParams& p, int n);

cplx closed_loop_susceptibility(double omega, const OscillatorParams& p, cplx h_fb);

struct StabilityResult {
    bool stable = true;
    double margin = 1.0;
    int encirclements = 0;
};

StabilityResult stability_check(const OscillatorParams& p, const FilterChain& chain,
                                const std::vector<double>& grid);
StabilityResult stability_check(const OscillatorParams& p, const FilterChain& chain);

// Log grid over [omega_z/100, 100 omega_z] merged with a fine linear patch
// across the bare resonance.
std::vector<double> stability_grid(const OscillatorParams& p, std::size_t n_log = 20000);

}  // namespace levcool
