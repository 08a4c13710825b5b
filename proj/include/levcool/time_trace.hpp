#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "levcool/core_model.hpp"

namespace levcool {

/// Uniformly sampled record. Real traces keep `samples` with zero imaginary
/// parts and is_complex = false. demod_hz is the physical frequency that maps
/// to baseband zero for demodulated records.
struct TimeTrace {
    double sample_rate = 1.0;
    std::vector<cplx> samples;
    bool is_complex = false;
    double start_time = 0.0;
    std::string label = "custom";
    std::string units = "";
    double demod_hz = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;

    std::size_t size() const { return samples.size(); }
    double dt() const { return 1.0 / sample_rate; }
    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
    void validate() const;

    // Copy of samples [first, first + count).
    TimeTrace slice(std::size_t first, std::size_t count) const;
};

TimeTrace make_real_trace(std::vector<double> values, double sample_rate, std::string label,
                          std::string units = "");

std::vector<TimeTrace> split_segments(const TimeTrace& t, std::size_t samples_per_segment);

// FNV-1a over a string, used to tag outputs with their generating config.
std::uint64_t fnv1a(const std::string& s);

}  // namespace levcool
