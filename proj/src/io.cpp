#include "levcool/io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "levcool/errors.hpp"

namespace levcool::io {

namespace fs = std::filesystem;

void write_atomic(const std::string& path, const std::string& contents) {
    fs::path p(path);
    std::error_code ec;
    if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out << contents;
        out.flush();
        if (!out) throw IoError("write failed for " + tmp);
    }
    fs::rename(tmp, p, ec);
    if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed for " + path);
    return ss.str();
}

std::string fmt(double x) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

namespace {

double parse_double(const std::string& s) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw InvalidArgument("not a number: '" + s + "'");
    }
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw InvalidArgument("not a number: '" + s + "'");
    return v;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, sep)) out.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

struct Parsed {
    std::map<std::string, std::string> header;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

// '# key: value' header lines, one column-name line, numeric rows.
Parsed parse_csv(const std::string& text) {
    Parsed p;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto body = trim(line.substr(1));
            auto colon = body.find(':');
            if (colon != std::string::npos) p.header[trim(body.substr(0, colon))] = trim(body.substr(colon + 1));
            continue;
        }
        if (p.columns.empty()) {
            p.columns = split(line, ',');
            continue;
        }
        auto cells = split(line, ',');
        if (cells.size() != p.columns.size())
            throw InvalidArgument("line " + std::to_string(lineno) + ": expected " + std::to_string(p.columns.size()) +
                                  " columns");
        std::vector<double> row;
        row.reserve(cells.size());
        for (auto& c : cells) row.push_back(parse_double(c));
        p.rows.push_back(std::move(row));
    }
    if (p.columns.empty()) throw InvalidArgument("missing column header line");
    return p;
}

int column(const Parsed& p, const std::string& name, bool required = true) {
    for (std::size_t i = 0; i < p.columns.size(); ++i)
        if (p.columns[i] == name) return static_cast<int>(i);
    if (required) throw InvalidArgument("missing column " + name);
    return -1;
}

std::string header_or(const Parsed& p, const std::string& key, const std::string& dflt) {
    auto it = p.header.find(key);
    return it == p.header.end() ? dflt : it->second;
}

template <class F>
auto with_path(const std::string& path, F f) {
    try {
        return f();
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(path + ": " + e.what());
    }
}

void write_metadata(std::ostringstream& o, const std::map<std::string, std::string>& md) {
    for (auto& [k, v] : md) o << "# meta." << k << ": " << v << '\n';
}

std::map<std::string, std::string> read_metadata(const Parsed& p) {
    std::map<std::string, std::string> md;
    for (auto& [k, v] : p.header)
        if (k.rfind("meta.", 0) == 0) md[k.substr(5)] = v;
    return md;
}

}  // namespace

// ---------------------------------------------------------------- traces

std::string trace_to_csv(const TimeTrace& t) {
    std::ostringstream o;
    o << "# sample_rate_hz: " << fmt(t.sample_rate) << '\n'
      << "# label: " << t.label << '\n'
      << "# units: " << t.units << '\n'
      << "# seed: " << t.seed << '\n'
      << "# config_hash: " << t.config_hash << '\n'
      << "# demod_hz: " << fmt(t.demod_hz) << '\n'
      << "# start_time_s: " << fmt(t.start_time) << '\n'
      << (t.is_complex ? "t_s,re,im\n" : "t_s,re\n");
    for (std::size_t i = 0; i < t.size(); ++i) {
        o << fmt(t.start_time + static_cast<double>(i) / t.sample_rate) << ',' << fmt(t.samples[i].real());
        if (t.is_complex) o << ',' << fmt(t.samples[i].imag());
        o << '\n';
    }
    return o.str();
}

TimeTrace trace_from_csv(const std::string& text) {
    Parsed p = parse_csv(text);
    TimeTrace t;
    auto sr = p.header.find("sample_rate_hz");
    if (sr == p.header.end()) throw InvalidArgument("trace header lacks sample_rate_hz");
    t.sample_rate = parse_double(sr->second);
    t.label = header_or(p, "label", "custom");
    t.units = header_or(p, "units", "");
    t.seed = std::stoull(header_or(p, "seed", "0"));
    t.config_hash = std::stoull(header_or(p, "config_hash", "0"));
    t.demod_hz = parse_double(header_or(p, "demod_hz", "0"));
    t.start_time = parse_double(header_or(p, "start_time_s", "0"));
    column(p, "t_s");
    int re = column(p, "re");
    int im = column(p, "im", false);
    t.is_complex = im >= 0;
    t.samples.reserve(p.rows.size());
    for (auto& r : p.rows) t.samples.emplace_back(r[static_cast<std::size_t>(re)], im >= 0 ? r[static_cast<std::size_t>(im)] : 0.0);
    t.validate();
    return t;
}

void write_trace(const std::string& path, const TimeTrace& t) { write_atomic(path, trace_to_csv(t)); }

TimeTrace read_trace(const std::string& path) {
    auto text = read_file(path);
    return with_path(path, [&] { return trace_from_csv(text); });
}

// ---------------------------------------------------------------- spectra

std::string spectrum_to_csv(const Spectrum& s) {
    std::ostringstream o;
    o << "# convention: " << to_string(s.convention) << '\n' << "# n_averages: " << s.n_averages << '\n';
    write_metadata(o, s.metadata);
    const bool angular = s.convention == SpectralConvention::two_sided_angular;
    o << "freq_hz,value,sigma\n";
    for (std::size_t i = 0; i < s.size(); ++i) {
        double f = angular ? s.grid[i] / kTwoPi : s.grid[i];
        o << fmt(f) << ',' << fmt(s.values[i]) << ',' << fmt(s.sigmas.empty() ? 0.0 : s.sigmas[i]) << '\n';
    }
    return o.str();
}

Spectrum spectrum_from_csv(const std::string& text) {
    Parsed p = parse_csv(text);
    Spectrum s;
    s.convention = convention_from_string(header_or(p, "convention", "two_sided_angular"));
    s.n_averages = std::stol(header_or(p, "n_averages", "1"));
    s.metadata = read_metadata(p);
    int f = column(p, "freq_hz"), v = column(p, "value"), sg = column(p, "sigma", false);
    const bool angular = s.convention == SpectralConvention::two_sided_angular;
    bool any_sigma = false;
    for (auto& r : p.rows) {
        double x = r[static_cast<std::size_t>(f)];
        s.grid.push_back(angular ? x * kTwoPi : x);
        s.values.push_back(r[static_cast<std::size_t>(v)]);
        double e = sg >= 0 ? r[static_cast<std::size_t>(sg)] : 0.0;
        any_sigma = any_sigma || e != 0.0;
        s.sigmas.push_back(e);
    }
    if (!any_sigma) s.sigmas.clear();
    s.validate();
    return s;
}

void write_spectrum(const std::string& path, const Spectrum& s) { write_atomic(path, spectrum_to_csv(s)); }

Spectrum read_spectrum(const std::string& path) {
    auto text = read_file(path);
    return with_path(path, [&] { return spectrum_from_csv(text); });
}

std::string cross_to_csv(const CrossSpectrum& s) {
    std::ostringstream o;
    o << "# convention: " << to_string(s.convention) << '\n' << "# n_averages: " << s.n_averages << '\n';
    write_metadata(o, s.metadata);
    const bool angular = s.convention == SpectralConvention::two_sided_angular;
    o << "freq_hz,value,im,sigma\n";
    for (std::size_t i = 0; i < s.size(); ++i) {
        double f = angular ? s.grid[i] / kTwoPi : s.grid[i];
        o << fmt(f) << ',' << fmt(s.values[i].real()) << ',' << fmt(s.values[i].imag()) << ','
          << fmt(s.sigmas.empty() ? 0.0 : s.sigmas[i]) << '\n';
    }
    return o.str();
}

CrossSpectrum cross_from_csv(const std::string& text) {
    Parsed p = parse_csv(text);
    CrossSpectrum s;
    s.convention = convention_from_string(header_or(p, "convention", "two_sided_angular"));
    s.n_averages = std::stol(header_or(p, "n_averages", "1"));
    s.metadata = read_metadata(p);
    int f = column(p, "freq_hz"), v = column(p, "value"), im = column(p, "im"), sg = column(p, "sigma", false);
    const bool angular = s.convention == SpectralConvention::two_sided_angular;
    bool any_sigma = false;
    for (auto& r : p.rows) {
        double x = r[static_cast<std::size_t>(f)];
        s.grid.push_back(angular ? x * kTwoPi : x);
        s.values.emplace_back(r[static_cast<std::size_t>(v)], r[static_cast<std::size_t>(im)]);
        double e = sg >= 0 ? r[static_cast<std::size_t>(sg)] : 0.0;
        any_sigma = any_sigma || e != 0.0;
        s.sigmas.push_back(e);
    }
    if (!any_sigma) s.sigmas.clear();
    s.validate();
    return s;
}

void write_cross(const std::string& path, const CrossSpectrum& s) { write_atomic(path, cross_to_csv(s)); }

CrossSpectrum read_cross(const std::string& path) {
    auto text = read_file(path);
    return with_path(path, [&] { return cross_from_csv(text); });
}

// ---------------------------------------------------------------- fits

namespace {

std::string quote(const std::string& s) {
    std::string o = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') o += '\\';
        o += c;
    }
    return o + '"';
}

std::string unquote(const std::string& s) {
    if (s.size() < 2 || s.front() != '"' || s.back() != '"') return s;
    std::string o;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        if (s[i] == '\\' && i + 2 < s.size()) ++i;
        o += s[i];
    }
    return o;
}

}  // namespace

std::string fit_to_text(const FitResult& f) {
    std::ostringstream o;
    o << "# fit result\n";
    for (std::size_t i = 0; i < f.names.size(); ++i) {
        o << quote(f.names[i]) << ": " << fmt(f.values[i]) << '\n';
        o << quote("sigma_" + f.names[i]) << ": " << fmt(f.sigmas[i]) << '\n';
    }
    o << quote("chi2_reduced") << ": " << fmt(f.chi2_reduced) << '\n'
      << quote("n_points") << ": " << f.n_points << '\n'
      << quote("iterations") << ": " << f.iterations << '\n'
      << quote("grid_lo_hz") << ": " << fmt(f.grid_lo / kTwoPi) << '\n'
      << quote("grid_hi_hz") << ": " << fmt(f.grid_hi / kTwoPi) << '\n';
    std::string mask;
    for (auto& [a, b] : f.mask_used.intervals()) mask += (mask.empty() ? "" : ";") + fmt(a) + "-" + fmt(b);
    o << quote("mask_hz") << ": " << quote(mask) << '\n';
    std::string flags;
    for (auto& fl : f.flags) flags += (flags.empty() ? "" : ";") + fl;
    o << quote("flags") << ": " << quote(flags) << '\n';
    for (std::size_t i = 0; i < f.warnings.size(); ++i)
        o << quote("warning_" + std::to_string(i)) << ": " << quote(f.warnings[i]) << '\n';
    return o.str();
}

FitResult fit_from_text(const std::string& text) {
    auto kv = parse_key_values(text);
    FitResult f;
    std::vector<std::string> order;
    {
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            line = trim(line);
            if (line.empty() || line[0] == '#') continue;
            auto c = line.find("\":");
            if (c == std::string::npos) continue;
            order.push_back(unquote(line.substr(0, c + 1)));
        }
    }
    static const std::vector<std::string> fixed = {"chi2_reduced", "n_points", "iterations", "grid_lo_hz",
                                                   "grid_hi_hz", "mask_hz", "flags"};
    for (auto& k : order) {
        if (std::find(fixed.begin(), fixed.end(), k) != fixed.end()) continue;
        if (k.rfind("sigma_", 0) == 0 || k.rfind("warning_", 0) == 0) continue;
        auto s = kv.find("sigma_" + k);
        f.set(k, parse_double(kv.at(k)), s == kv.end() ? 0.0 : parse_double(s->second));
    }
    auto get = [&](const std::string& k, const std::string& d) {
        auto it = kv.find(k);
        return it == kv.end() ? d : it->second;
    };
    f.chi2_reduced = parse_double(get("chi2_reduced", "0"));
    f.n_points = static_cast<std::size_t>(parse_double(get("n_points", "0")));
    f.iterations = static_cast<int>(parse_double(get("iterations", "0")));
    f.grid_lo = parse_double(get("grid_lo_hz", "0")) * kTwoPi;
    f.grid_hi = parse_double(get("grid_hi_hz", "0")) * kTwoPi;
    std::vector<std::pair<double, double>> iv;
    for (auto& part : split(get("mask_hz", ""), ';')) {
        if (part.empty()) continue;
        auto dash = part.find('-', 1);
        if (dash == std::string::npos) throw InvalidArgument("bad mask interval " + part);
        iv.emplace_back(parse_double(part.substr(0, dash)), parse_double(part.substr(dash + 1)));
    }
    f.mask_used = FrequencyMask(iv);
    for (auto& fl : split(get("flags", ""), ';'))
        if (!fl.empty()) f.flags.push_back(fl);
    for (std::size_t i = 0; kv.count("warning_" + std::to_string(i)); ++i)
        f.warnings.push_back(kv.at("warning_" + std::to_string(i)));
    f.validate();
    return f;
}

void write_fit(const std::string& path, const FitResult& f) { write_atomic(path, fit_to_text(f)); }

FitResult read_fit(const std::string& path) {
    auto text = read_file(path);
    return with_path(path, [&] { return fit_from_text(text); });
}

// ---------------------------------------------------------------- responses

FrequencyResponse response_from_csv(const std::string& text) {
    Parsed p = parse_csv(text);
    int f = column(p, "frequency_hz"), re = column(p, "re"), im = column(p, "im");
    std::vector<double> grid;
    std::vector<cplx> vals;
    for (auto& r : p.rows) {
        grid.push_back(kTwoPi * r[static_cast<std::size_t>(f)]);
        vals.emplace_back(r[static_cast<std::size_t>(re)], r[static_cast<std::size_t>(im)]);
    }
    return FrequencyResponse(std::move(grid), std::move(vals));
}

std::string response_to_csv(const FrequencyResponse& r) {
    std::ostringstream o;
    o << "frequency_hz,re,im\n";
    for (std::size_t i = 0; i < r.size(); ++i)
        o << fmt(r.grid()[i] / kTwoPi) << ',' << fmt(r.values()[i].real()) << ',' << fmt(r.values()[i].imag()) << '\n';
    return o.str();
}

FrequencyResponse read_response(const std::string& path) {
    auto text = read_file(path);
    return with_path(path, [&] { return response_from_csv(text); });
}

// ---------------------------------------------------------------- tables

std::string table_to_csv(const Table& t) {
    std::ostringstream o;
    for (auto& h : t.header_lines) o << "# " << h << '\n';
    for (std::size_t i = 0; i < t.columns.size(); ++i) o << (i ? "," : "") << t.columns[i];
    o << '\n';
    for (auto& r : t.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) o << (i ? "," : "") << fmt(r[i]);
        o << '\n';
    }
    return o.str();
}

Table table_from_csv(const std::string& text) {
    Table t;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (!line.empty() && line[0] == '#') t.header_lines.push_back(trim(line.substr(1)));
    }
    Parsed p = parse_csv(text);
    t.columns = p.columns;
    t.rows = p.rows;
    return t;
}

std::string key_values(const std::vector<std::pair<std::string, std::string>>& kv, const std::string& title) {
    std::ostringstream o;
    o << "# " << title << '\n';
    for (auto& [k, v] : kv) o << quote(k) << ": " << v << '\n';
    return o.str();
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        std::size_t c;
        if (line[0] == '"') {
            c = line.find("\":");
            if (c == std::string::npos) throw InvalidArgument("malformed key/value line: " + line);
            ++c;
        } else {
            c = line.find(':');
            if (c == std::string::npos) throw InvalidArgument("malformed key/value line: " + line);
        }
        std::string v = trim(line.substr(c + 1));
        if (!v.empty() && v.back() == ',') v.pop_back();
        kv[unquote(trim(line.substr(0, c)))] = unquote(v);
    }
    return kv;
}

}  // namespace levcool::io
