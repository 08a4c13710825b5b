#include "levcool/time_trace.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "levcool/errors.hpp"

namespace levcool {

namespace {
constexpr std::array<const char*, 7> kLabels = {"z", "i_hom", "i_dc", "i_r", "i_b", "i_car", "custom"};
}

void TimeTrace::validate() const {
    if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) throw InvalidArgument("sample_rate must be positive");
    if (samples.empty()) throw InvalidArgument("time trace is empty");
    if (std::find(kLabels.begin(), kLabels.end(), label) == kLabels.end())
        throw InvalidArgument("unknown trace label: " + label);
}

TimeTrace TimeTrace::slice(std::size_t first, std::size_t count) const {
    if (first + count > samples.size()) throw InvalidArgument("slice exceeds trace length");
    TimeTrace t = *this;
    t.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(first),
                     samples.begin() + static_cast<std::ptrdiff_t>(first + count));
    t.start_time = start_time + static_cast<double>(first) / sample_rate;
    return t;
}

TimeTrace make_real_trace(std::vector<double> values, double sample_rate, std::string label,
                          std::string units) {
    TimeTrace t;
    t.sample_rate = sample_rate;
    t.samples.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) t.samples[i] = values[i];
    t.label = std::move(label);
    t.units = std::move(units);
    t.validate();
    return t;
}

std::vector<TimeTrace> split_segments(const TimeTrace& t, std::size_t n) {
    if (n == 0) throw InvalidArgument("segment length must be positive");
    std::vector<TimeTrace> out;
    for (std::size_t i = 0; i + n <= t.size(); i += n) out.push_back(t.slice(i, n));
    return out;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace levcool
