#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "levcool/core_model.hpp"
#include "levcool/loop_filter.hpp"
#include "levcool/time_trace.hpp"

namespace levcool {

struct ToneForce {
    double freq_hz = 90e3;
    double force_amplitude = 0.0;  // N
};

struct SimConfig {
    OscillatorParams params;
    RateBudget budget;
    FilterChain chain;   // shape; the overall gain is set from gamma_fb
    double gamma_fb = 0.0;
    double dt = 1.0 / (4.0 * 977e3);
    double duration = 0.1;
    std::uint64_t seed = 1;
    std::optional<ToneForce> tone;
    bool imprecision_on = true;
    bool allow_unstable = false;
    int output_decimation = 1;  // boxcar average of this many steps per output sample

    // Throws InvalidArgument on hard violations; soft ones go to warnings.
    void validate(std::vector<std::string>* warnings = nullptr) const;
};

struct DelayRealization {
    long samples = 0;
    double effective_s = 0.0;
    double rounding_error_s = 0.0;
};

DelayRealization realize_delay(const FilterChain& chain, double dt);

struct SimResult {
    TimeTrace z;
    TimeTrace i_hom;
    DelayRealization delay;
    std::vector<std::string> warnings;
};

SimResult simulate_closed_loop(const SimConfig& cfg);

struct SimSpectra {
    Spectrum s_zz;
    Spectrum s_hom;
    DelayRealization delay;
    std::vector<std::string> warnings;
};

// Streams the run through a periodogram accumulator instead of keeping the
// traces. The first burn_in_s of the run is discarded.
SimSpectra simulate_closed_loop_psd(const SimConfig& cfg, std::size_t segment_samples,
                                    std::size_t n_segments, double burn_in_s);

// Unit-gain shape of the loop actually realized by the simulator, including
// discrete filters, integer delay and the zero-order hold.
FrequencyResponse realized_loop_response(const SimConfig& cfg, const std::vector<double>& grid);

struct HetTone {
    double freq_hz = 90e3;
    cplx amplitude = 0.0;
};

struct HetSynthConfig {
    OscillatorParams params;
    double n_bar = 0.66;
    double gamma_eff = kTwoPi * 11.1e3;
    double omega_eff = 0.0;  // line center, omega_z when <= 0
    std::optional<double> scale_r;  // physical R when empty
    double bg_r = 0.0;
    double bg_b = 0.0;
    double duration = 1.0;
    double sample_rate = 62.5e3;
    double demod_hz = 0.0;  // omega_eff / 2 pi when <= 0
    std::size_t block_size = 65536;
    std::uint64_t seed = 1;
    double lo_phase_start = 0.0;   // rad, seen by the carrier too
    double lo_phase_drift = 0.0;   // rad/s
    double lo_phase_walk = 0.0;    // rad/sqrt(s)
    double frame_phase = 0.0;      // rad, sideband-only offset
    std::optional<HetTone> tone;
    std::optional<FrequencyResponse> chain_distortion;  // over acquisition frequency, rad/s
    double rf_hz = 1e6;
    int lo_sign = 1;
    double carrier_noise_db = -40.0;

    void validate() const;
    double center() const { return omega_eff > 0.0 ? omega_eff : params.omega_z(); }
    double demod() const { return demod_hz > 0.0 ? demod_hz : center() / kTwoPi; }
    double r() const;
};

struct HetTraces {
    TimeTrace i_r;
    TimeTrace i_b;
    TimeTrace i_car;
};

struct HetBinModel {
    double s_rr;
    double s_bb;
    cplx s_rb;
};

// Target densities at physical frequency omega, before distortion.
HetBinModel heterodyne_bin_model(const HetSynthConfig& cfg, double omega);

// Acquisition frequency (rad/s) at which a sideband at physical omega is digitized.
double acquisition_frequency(const HetSynthConfig& cfg, Sideband side, double omega);

HetTraces synthesize_heterodyne(const HetSynthConfig& cfg);

struct BurstSpec {
    double duration_s = 0.2;
    double amplitude = 0.0;
    double ring_hz = 75e3;
    double decay_s = 0.04;
    double offset_s = 0.0;  // position of the burst within each period
    double witness_amplitude = 1.0;
    double witness_noise = 1e-3;
    std::string shape = "decaying_sine";
    std::uint64_t seed = 7;
};

struct BurstResult {
    TimeTrace contaminated;
    TimeTrace i_dc;
    std::vector<double> burst_times;
};

BurstResult inject_bursts(const TimeTrace& trace, double period_s, const BurstSpec& burst);

}  // namespace levcool
