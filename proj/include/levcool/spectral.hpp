#pragma once

#include <string>
#include <utility>
#include <vector>

#include "levcool/core_model.hpp"
#include "levcool/time_trace.hpp"

namespace levcool {

struct CrossSpectrum {
    std::vector<double> grid;
    std::vector<cplx> values;
    std::vector<double> sigmas;  // per-component standard error
    SpectralConvention convention = SpectralConvention::two_sided_angular;
    long n_averages = 1;
    std::map<std::string, std::string> metadata;

    std::size_t size() const { return grid.size(); }
    void validate() const;
    CrossSpectrum scaled(double k) const;
};

/// Running average of rectangular-window periodograms,
/// S = dt |DFT|^2 / (2 pi N), two-sided angular.
class PsdAccumulator {
public:
    PsdAccumulator(std::size_t n, double sample_rate, bool complex_signal, double demod_hz = 0.0);

    void add(const cplx* x);
    void add(const double* x);
    // Two real records through one complex transform; y goes to `other`.
    void add_pair(PsdAccumulator& other, const double* x, const double* y);
    long count() const { return count_; }
    std::size_t segment_size() const { return n_; }
    Spectrum result() const;

private:
    std::size_t n_;
    double fs_;
    bool complex_;
    double demod_hz_;
    long count_ = 0;
    std::vector<double> acc_;
    std::vector<cplx> buf_;
    std::vector<cplx> spec_;
};

Spectrum estimate_psd(const std::vector<TimeTrace>& segments);
Spectrum estimate_psd(const TimeTrace& trace, std::size_t segment_samples);

struct CrossPsd {
    Spectrum s_rr;
    Spectrum s_bb;
    CrossSpectrum s_rb;
};

// S_rr[W] = <|i_r[-W]|^2>, S_bb[W] = <|i_b[W]|^2>, S_rb[W] = <i_r[-W] i_b[W]>.
CrossPsd estimate_cross_psd(const TimeTrace& i_r, const TimeTrace& i_b,
                            std::size_t segment_samples = 16384);
CrossPsd estimate_cross_psd(const std::vector<TimeTrace>& seg_r, const std::vector<TimeTrace>& seg_b);

std::pair<TimeTrace, TimeTrace> phase_correct(const TimeTrace& i_r, const TimeTrace& i_b,
                                              const TimeTrace& i_car);

struct FrameCalibration {
    double theta = 0.0;
    double snr = 0.0;
    CrossSpectrum rotated;
};

FrameCalibration calibrate_cross_frame(const CrossSpectrum& s_rb, double tone_freq_hz);

struct PostselectOptions {
    double k_mad = 8.0;
    double smooth_s = 1e-3;
    double merge_s = 0.05;
};

struct PostselectResult {
    std::vector<std::vector<TimeTrace>> segments;  // one list per input trace
    std::vector<double> burst_times;
    double threshold = 0.0;
    std::vector<std::string> warnings;
};

PostselectResult postselect(const std::vector<TimeTrace>& traces, const TimeTrace& witness_dc,
                            double window_s, double delay_after_burst_s,
                            const PostselectOptions& opts = {});

/// Excluded intervals in hertz, kept sorted and disjoint.
class FrequencyMask {
public:
    FrequencyMask() = default;
    explicit FrequencyMask(std::vector<std::pair<double, double>> excluded_hz);

    static FrequencyMask paper_default(double half_width_hz = 100.0);

    const std::vector<std::pair<double, double>>& intervals() const { return excluded_; }
    bool excluded(double omega) const;
    std::vector<char> keep(const std::vector<double>& grid) const;
    FrequencyMask merged(const FrequencyMask& other) const;

private:
    std::vector<std::pair<double, double>> excluded_;
};

// Restrict a spectrum to omega in [lo, hi].
Spectrum crop(const Spectrum& s, double lo, double hi);
CrossSpectrum crop(const CrossSpectrum& s, double lo, double hi);

// Mean over consecutive groups of `width` bins; sigmas shrink accordingly.
Spectrum rebin(const Spectrum& s, std::size_t width);

}  // namespace levcool
