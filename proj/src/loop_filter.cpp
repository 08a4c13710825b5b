#include "levcool/loop_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "levcool/errors.hpp"

namespace levcool {

std::string to_string(StageKind k) {
    switch (k) {
        case StageKind::high_pass: return "high_pass";
        case StageKind::notch: return "notch";
        case StageKind::delay: return "delay";
        case StageKind::gain: return "gain";
    }
    return "unknown";
}

StageKind stage_kind_from_string(const std::string& s) {
    if (s == "high_pass") return StageKind::high_pass;
    if (s == "notch") return StageKind::notch;
    if (s == "delay") return StageKind::delay;
    if (s == "gain") return StageKind::gain;
    throw InvalidArgument("unknown filter stage kind: " + s);
}

FilterStage FilterStage::high_pass(double cutoff_hz) {
    FilterStage s;
    s.kind = StageKind::high_pass;
    s.cutoff_hz = cutoff_hz;
    s.validate();
    return s;
}

FilterStage FilterStage::notch(double center_hz, double quality) {
    FilterStage s;
    s.kind = StageKind::notch;
    s.center_hz = center_hz;
    s.quality = quality;
    s.validate();
    return s;
}

FilterStage FilterStage::delay(double tau_s) {
    FilterStage s;
    s.kind = StageKind::delay;
    s.tau_s = tau_s;
    s.validate();
    return s;
}

FilterStage FilterStage::scalar(double gain) {
    FilterStage s;
    s.kind = StageKind::gain;
    s.gain = gain;
    s.validate();
    return s;
}

void FilterStage::validate() const {
    switch (kind) {
        case StageKind::high_pass:
            if (!(cutoff_hz > 0.0) || !std::isfinite(cutoff_hz)) throw InvalidArgument("high-pass cutoff must be positive");
            break;
        case StageKind::notch:
            if (!(center_hz > 0.0) || !std::isfinite(center_hz)) throw InvalidArgument("notch center must be positive");
            if (!(quality > 0.0) || !std::isfinite(quality)) throw InvalidArgument("notch quality must be positive");
            break;
        case StageKind::delay:
            if (!(tau_s >= 0.0) || !std::isfinite(tau_s)) throw InvalidArgument("delay must be non-negative");
            break;
        case StageKind::gain:
            if (!std::isfinite(gain)) throw InvalidArgument("gain must be finite");
            break;
    }
}

void FilterChain::validate() const {
    for (const auto& s : stages) s.validate();
    if (!std::isfinite(overall_gain)) throw InvalidArgument("overall gain must be finite");
    if (!(sample_rate_hz >= 0.0)) throw InvalidArgument("sample rate must be non-negative");
}

double FilterChain::total_delay() const {
    double t = 0.0;
    for (const auto& s : stages)
        if (s.kind == StageKind::delay) t += s.tau_s;
    return t;
}

FilterChain FilterChain::with_gamma_fb(const OscillatorParams& p, double gamma_fb) const {
    if (!(gamma_fb >= 0.0)) throw InvalidArgument("gamma_fb must be non-negative");
    FilterChain c = *this;
    c.overall_gain = gamma_fb / p.omega_z();
    return c;
}

FilterChain FilterChain::unit_gain() const {
    FilterChain c = *this;
    c.overall_gain = 1.0;
    return c;
}

FilterChain paper_chain(double tau_s) {
    FilterChain c;
    c.stages = {FilterStage::high_pass(9e3), FilterStage::notch(202e3, 5.0),
                FilterStage::notch(249e3, 5.0), FilterStage::delay(tau_s)};
    return c;
}

FilterChain pure_delay_chain(double tau_s) {
    FilterChain c;
    c.stages = {FilterStage::delay(tau_s)};
    return c;
}

FrequencyResponse::FrequencyResponse(std::vector<double> grid, std::vector<cplx> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
    if (grid_.size() != values_.size() || grid_.empty())
        throw InvalidArgument("frequency response needs equal, nonempty grid and values");
    for (std::size_t i = 1; i < grid_.size(); ++i)
        if (!(grid_[i] > grid_[i - 1])) throw InvalidArgument("frequency response grid not strictly increasing");
    logmag_.resize(values_.size());
    phase_.resize(values_.size());
    constexpr double floor = 1e-300;
    double prev = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        logmag_[i] = std::log(std::max(std::abs(values_[i]), floor));
        double ph = std::arg(values_[i]);
        if (i > 0) {
            double d = std::remainder(ph - prev, kTwoPi);
            ph = phase_[i - 1] + d;
        }
        prev = std::arg(values_[i]);
        phase_[i] = ph;
    }
}

bool FrequencyResponse::covers(double lo, double hi) const {
    return !grid_.empty() && lo >= grid_.front() && hi <= grid_.back();
}

cplx FrequencyResponse::operator()(double omega) const {
    if (grid_.empty() || omega < grid_.front() || omega > grid_.back())
        throw InvalidArgument("frequency response queried outside its grid");
    auto it = std::lower_bound(grid_.begin(), grid_.end(), omega);
    std::size_t j = static_cast<std::size_t>(it - grid_.begin());
    if (grid_[j] == omega) return values_[j];
    std::size_t i = j - 1;
    double t = (omega - grid_[i]) / (grid_[j] - grid_[i]);
    double lm = logmag_[i] + t * (logmag_[j] - logmag_[i]);
    double ph = phase_[i] + t * (phase_[j] - phase_[i]);
    return std::polar(std::exp(lm), ph);
}

cplx Biquad::response(double omega, double fs) const {
    cplx z1 = std::polar(1.0, -omega / fs);
    cplx z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

Biquad discretize(const FilterStage& s, double fs) {
    if (!(fs > 0.0)) throw InvalidArgument("discretization needs a positive sample rate");
    Biquad q;
    switch (s.kind) {
        case StageKind::high_pass: {
            double wc = kTwoPi * s.cutoff_hz;
            if (s.cutoff_hz >= 0.5 * fs) throw InvalidArgument("high-pass cutoff above Nyquist");
            double k = wc / std::tan(wc / (2.0 * fs));
            q.b0 = k / (k + wc);
            q.b1 = -q.b0;
            q.a1 = (wc - k) / (k + wc);
            break;
        }
        case StageKind::notch: {
            double w0 = kTwoPi * s.center_hz;
            if (s.center_hz >= 0.5 * fs) throw InvalidArgument("notch center above Nyquist");
            double k = w0 / std::tan(w0 / (2.0 * fs));
            double k2 = k * k, w2 = w0 * w0, bw = k * w0 / s.quality;
            double a0 = k2 + bw + w2;
            q.b0 = (k2 + w2) / a0;
            q.b1 = 2.0 * (w2 - k2) / a0;
            q.b2 = q.b0;
            q.a1 = q.b1;
            q.a2 = (k2 - bw + w2) / a0;
            break;
        }
        case StageKind::gain:
            q.b0 = s.gain;
            break;
        case StageKind::delay:
            throw InvalidArgument("delay stages are not realized as biquads");
    }
    return q;
}

cplx delay_filter_response(double omega, const OscillatorParams& p, double gamma_fb, double tau) {
    if (!(gamma_fb >= 0.0)) throw InvalidArgument("gamma_fb must be non-negative");
    if (!(tau >= 0.0)) throw InvalidArgument("tau must be non-negative");
    return p.mass() * p.omega_z() * gamma_fb * std::polar(1.0, -omega * tau);
}

cplx stage_response(double omega, const FilterStage& s, double fs) {
    switch (s.kind) {
        case StageKind::high_pass: {
            if (fs > 0.0) return discretize(s, fs).response(omega, fs);
            cplx x(0.0, omega / (kTwoPi * s.cutoff_hz));
            return x / (1.0 + x);
        }
        case StageKind::notch: {
            if (fs > 0.0) return discretize(s, fs).response(omega, fs);
            double w0 = kTwoPi * s.center_hz;
            cplx sv(0.0, omega);
            return (sv * sv + w0 * w0) / (sv * sv + w0 * sv / s.quality + w0 * w0);
        }
        case StageKind::delay:
            return std::polar(1.0, -omega * s.tau_s);
        case StageKind::gain:
            return s.gain;
    }
    return 1.0;
}

cplx chain_response(double omega, const FilterChain& chain) {
    cplx h = chain.overall_gain;
    for (const auto& s : chain.stages) h *= stage_response(omega, s, chain.sample_rate_hz);
    return h;
}

cplx feedback_response(double omega, const OscillatorParams& p, const FilterChain& chain) {
    return p.mass() * p.omega_z() * p.omega_z() * chain_response(omega, chain);
}

FrequencyResponse tabulate(const FilterChain& chain, const std::vector<double>& grid) {
    std::vector<cplx> v(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) v[i] = chain_response(grid[i], chain);
    return FrequencyResponse(grid, std::move(v));
}

double smallest_stable_delay(const OscillatorParams& p, int n) {
    if (n < 0) throw InvalidArgument("n must be non-negative");
    return (0.5 * kPi + kTwoPi * n) / p.omega_z();
}

cplx closed_loop_susceptibility(double omega, const OscillatorParams& p, cplx h_fb) {
    cplx inv = inverse_susceptibility(omega, p, p.gamma_m()) - h_fb;
    double scale = p.mass() * std::max(p.omega_z() * p.omega_z(), omega * omega);
    if (std::abs(inv) <= 1e-15 * scale)
        throw SingularityError("closed-loop pole at omega = " + std::to_string(omega) + " rad/s", omega);
    return 1.0 / inv;
}

std::vector<double> stability_grid(const OscillatorParams& p, std::size_t n_log) {
    double w0 = p.omega_z();
    std::vector<double> g;
    g.reserve(n_log + 4001);
    double lo = std::log(w0 / 100.0), hi = std::log(100.0 * w0);
    for (std::size_t i = 0; i < n_log; ++i)
        g.push_back(std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_log - 1)));
    double gm = std::max(p.gamma_m(), 1e-6 * w0);
    double half = 100.0 * gm, step = gm / 20.0;
    for (double w = w0 - half; w <= w0 + half; w += step) g.push_back(w);
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    return g;
}

StabilityResult stability_check(const OscillatorParams& p, const FilterChain& chain,
                                const std::vector<double>& grid) {
    if (grid.size() < 2) throw ResolutionError("stability grid too small");
    double w0 = p.omega_z();
    // Poles on the imaginary axis are indented into the left half plane.
    double gm = std::max(p.gamma_m(), 1e-9 * w0);
    auto loop = [&](double w) {
        return w0 * w0 * chain_response(w, chain) / cplx(w0 * w0 - w * w, gm * w);
    };
    StabilityResult r;
    std::vector<double> pts;
    pts.reserve(grid.size() + 1);
    if (grid.front() > 0.0) pts.push_back(0.0);
    pts.insert(pts.end(), grid.begin(), grid.end());

    double margin = std::numeric_limits<double>::infinity();
    double total = 0.0;
    cplx prev = 1.0 - loop(pts.front());
    margin = std::min(margin, std::abs(prev));
    for (std::size_t i = 1; i < pts.size(); ++i) {
        cplx cur = 1.0 - loop(pts[i]);
        if (!std::isfinite(cur.real()) || !std::isfinite(cur.imag()))
            throw ResolutionError("non-finite loop response on stability grid");
        double d = std::arg(cur / prev);
        if (std::abs(d) > 0.5 * kPi)
            throw ResolutionError("stability grid too sparse near " + std::to_string(pts[i] / kTwoPi) + " Hz");
        total += d;
        margin = std::min(margin, std::abs(cur));
        prev = cur;
    }
    if (std::abs(1.0 - prev) > 0.5)
        throw ResolutionError("stability grid ends before the loop gain rolls off");
    total += std::arg(1.0 / prev);
    r.encirclements = static_cast<int>(std::lround(total / kPi));
    r.stable = r.encirclements == 0;
    r.margin = margin;
    return r;
}

StabilityResult stability_check(const OscillatorParams& p, const FilterChain& chain) {
    return stability_check(p, chain, stability_grid(p));
}

}  // namespace levcool
