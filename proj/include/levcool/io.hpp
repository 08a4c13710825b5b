#pragma once

#include <map>
#include <string>
#include <vector>

#include "levcool/estimate.hpp"
#include "levcool/loop_filter.hpp"
#include "levcool/spectral.hpp"
#include "levcool/time_trace.hpp"

namespace levcool::io {

// Write to path.tmp then rename over path. Throws IoError naming the path.
void write_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

// Shortest text that parses back to the same double.
std::string fmt(double x);

// Header: sample_rate_hz, label, units, seed, config_hash, demod_hz, start_time_s.
// Columns: t_s, re[, im].
std::string trace_to_csv(const TimeTrace& t);
TimeTrace trace_from_csv(const std::string& text);
void write_trace(const std::string& path, const TimeTrace& t);
TimeTrace read_trace(const std::string& path);

// Header: convention, n_averages, metadata. Columns: freq_hz, value, sigma.
std::string spectrum_to_csv(const Spectrum& s);
Spectrum spectrum_from_csv(const std::string& text);
void write_spectrum(const std::string& path, const Spectrum& s);
Spectrum read_spectrum(const std::string& path);

// Columns: freq_hz, value, im, sigma.
std::string cross_to_csv(const CrossSpectrum& s);
CrossSpectrum cross_from_csv(const std::string& text);
void write_cross(const std::string& path, const CrossSpectrum& s);
CrossSpectrum read_cross(const std::string& path);

// "name": value lines plus sigma_<name>, flags and warnings.
std::string fit_to_text(const FitResult& f);
FitResult fit_from_text(const std::string& text);
void write_fit(const std::string& path, const FitResult& f);
FitResult read_fit(const std::string& path);

// Columns: frequency_hz, re, im.
FrequencyResponse response_from_csv(const std::string& text);
std::string response_to_csv(const FrequencyResponse& r);
FrequencyResponse read_response(const std::string& path);

// Generic '#'-headed numeric table.
struct Table {
    std::vector<std::string> header_lines;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

std::string table_to_csv(const Table& t);
Table table_from_csv(const std::string& text);

std::string key_values(const std::vector<std::pair<std::string, std::string>>& kv, const std::string& title);
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace levcool::io
