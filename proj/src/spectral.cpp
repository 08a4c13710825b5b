#include "levcool/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "levcool/errors.hpp"
#include "levcool/fft.hpp"

namespace levcool {

void CrossSpectrum::validate() const {
    if (grid.size() != values.size()) throw InvalidArgument("cross-spectrum grid/value length mismatch");
    if (!sigmas.empty() && sigmas.size() != values.size())
        throw InvalidArgument("cross-spectrum sigma length mismatch");
    if (n_averages < 1) throw InvalidArgument("cross-spectrum needs n_averages >= 1");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1])) throw InvalidArgument("cross-spectrum grid not strictly increasing");
}

CrossSpectrum CrossSpectrum::scaled(double k) const {
    CrossSpectrum c = *this;
    for (auto& v : c.values) v *= k;
    for (auto& s : c.sigmas) s *= std::abs(k);
    return c;
}

namespace {

std::size_t bin_of(long k, std::size_t n) {
    long nn = static_cast<long>(n);
    return static_cast<std::size_t>(((k % nn) + nn) % nn);
}

long lowest_index(std::size_t n) { return -static_cast<long>(n / 2); }
long highest_index(std::size_t n) { return static_cast<long>((n - 1) / 2); }

}  // namespace

PsdAccumulator::PsdAccumulator(std::size_t n, double fs, bool complex_signal, double demod_hz)
    : n_(n), fs_(fs), complex_(complex_signal), demod_hz_(demod_hz), acc_(n, 0.0), buf_(n), spec_(n) {
    if (n < 2) throw InvalidArgument("segments need at least two samples");
    if (!(fs > 0.0)) throw InvalidArgument("sample rate must be positive");
}

void PsdAccumulator::add(const cplx* x) {
    fft::forward(x, spec_.data(), n_);
    for (std::size_t j = 0; j < n_; ++j) acc_[j] += std::norm(spec_[j]);
    ++count_;
}

void PsdAccumulator::add(const double* x) {
    for (std::size_t j = 0; j < n_; ++j) buf_[j] = x[j];
    add(buf_.data());
}

void PsdAccumulator::add_pair(PsdAccumulator& other, const double* x, const double* y) {
    if (complex_ || other.complex_ || other.n_ != n_) throw InvalidArgument("add_pair needs two real accumulators of equal size");
    for (std::size_t j = 0; j < n_; ++j) buf_[j] = cplx(x[j], y[j]);
    fft::forward(buf_.data(), spec_.data(), n_);
    for (std::size_t j = 0; j < n_; ++j) {
        cplx a = spec_[j];
        cplx b = std::conj(spec_[j == 0 ? 0 : n_ - j]);
        acc_[j] += 0.25 * std::norm(a + b);
        other.acc_[j] += 0.25 * std::norm(a - b);
    }
    ++count_;
    ++other.count_;
}

Spectrum PsdAccumulator::result() const {
    if (count_ < 1) throw InvalidArgument("no segments accumulated");
    Spectrum s;
    s.convention = SpectralConvention::two_sided_angular;
    s.n_averages = count_;
    double norm = 1.0 / (fs_ * kTwoPi * static_cast<double>(n_) * static_cast<double>(count_));
    double df = fs_ / static_cast<double>(n_);
    double se = 1.0 / std::sqrt(static_cast<double>(count_));
    auto push = [&](long k) {
        double v = acc_[bin_of(k, n_)] * norm;
        s.grid.push_back(kTwoPi * (demod_hz_ + static_cast<double>(k) * df));
        s.values.push_back(v);
        s.sigmas.push_back(v * se);
    };
    if (complex_) {
        for (long k = lowest_index(n_); k <= highest_index(n_); ++k) push(k);
        s.metadata["signal"] = "complex";
    } else {
        for (long k = 0; k <= static_cast<long>(n_ / 2); ++k) push(k);
        s.metadata["signal"] = "real";
    }
    s.metadata["segment_samples"] = std::to_string(n_);
    return s;
}

Spectrum estimate_psd(const std::vector<TimeTrace>& segments) {
    if (segments.empty()) throw InvalidArgument("no segments");
    const auto& f = segments.front();
    bool cx = false;
    for (const auto& s : segments) {
        if (s.size() != f.size() || s.sample_rate != f.sample_rate)
            throw InvalidArgument("segments differ in length or sample rate");
        cx = cx || s.is_complex;
    }
    PsdAccumulator acc(f.size(), f.sample_rate, cx, cx ? f.demod_hz : 0.0);
    for (const auto& s : segments) acc.add(s.samples.data());
    Spectrum out = acc.result();
    out.metadata["label"] = f.label;
    return out;
}

Spectrum estimate_psd(const TimeTrace& t, std::size_t n) {
    if (n == 0 || n > t.size()) throw InvalidArgument("segment length must be in [1, trace length]");
    PsdAccumulator acc(n, t.sample_rate, t.is_complex, t.is_complex ? t.demod_hz : 0.0);
    for (std::size_t i = 0; i + n <= t.size(); i += n) acc.add(t.samples.data() + i);
    Spectrum out = acc.result();
    out.metadata["label"] = t.label;
    return out;
}

namespace {

struct CrossAcc {
    std::size_t n;
    std::vector<double> rr, bb;
    std::vector<cplx> rb, xr, xb;
    long count = 0;
    explicit CrossAcc(std::size_t n_) : n(n_), rr(n_), bb(n_), rb(n_), xr(n_), xb(n_) {}
    void add(const cplx* r, const cplx* b) {
        fft::forward(r, xr.data(), n);
        fft::forward(b, xb.data(), n);
        for (std::size_t j = 0; j < n; ++j) {
            std::size_t jm = (n - j) % n;
            rr[j] += std::norm(xr[jm]);
            bb[j] += std::norm(xb[j]);
            rb[j] += xr[jm] * xb[j];
        }
        ++count;
    }
    CrossPsd result(double fs, double demod_hz) const {
        CrossPsd out;
        double norm = 1.0 / (fs * kTwoPi * static_cast<double>(n) * static_cast<double>(count));
        double df = fs / static_cast<double>(n);
        double se = 1.0 / std::sqrt(static_cast<double>(count));
        for (auto* s : {&out.s_rr, &out.s_bb}) {
            s->n_averages = count;
            s->metadata["signal"] = "complex";
        }
        out.s_rb.n_averages = count;
        for (long k = lowest_index(n); k <= highest_index(n); ++k) {
            std::size_t j = bin_of(k, n);
            double w = kTwoPi * (demod_hz + static_cast<double>(k) * df);
            double vr = rr[j] * norm, vb = bb[j] * norm;
            out.s_rr.grid.push_back(w);
            out.s_rr.values.push_back(vr);
            out.s_rr.sigmas.push_back(vr * se);
            out.s_bb.grid.push_back(w);
            out.s_bb.values.push_back(vb);
            out.s_bb.sigmas.push_back(vb * se);
            out.s_rb.grid.push_back(w);
            out.s_rb.values.push_back(rb[j] * norm);
            out.s_rb.sigmas.push_back(std::sqrt(vr * vb / (2.0 * static_cast<double>(count))));
        }
        out.s_rr.metadata["label"] = "i_r";
        out.s_bb.metadata["label"] = "i_b";
        return out;
    }
};

void check_pair(const TimeTrace& a, const TimeTrace& b) {
    if (a.size() != b.size() || a.sample_rate != b.sample_rate)
        throw InvalidArgument("traces differ in length or sample rate");
    if (std::abs(a.start_time - b.start_time) > 0.5 / a.sample_rate)
        throw InvalidArgument("traces are not time aligned");
}

}  // namespace

CrossPsd estimate_cross_psd(const TimeTrace& i_r, const TimeTrace& i_b, std::size_t n) {
    check_pair(i_r, i_b);
    if (n == 0) throw InvalidArgument("segment length must be positive");
    n = std::min(n, i_r.size());
    CrossAcc acc(n);
    for (std::size_t i = 0; i + n <= i_r.size(); i += n) acc.add(i_r.samples.data() + i, i_b.samples.data() + i);
    return acc.result(i_r.sample_rate, i_b.demod_hz);
}

CrossPsd estimate_cross_psd(const std::vector<TimeTrace>& seg_r, const std::vector<TimeTrace>& seg_b) {
    if (seg_r.empty() || seg_r.size() != seg_b.size()) throw InvalidArgument("segment lists differ");
    std::size_t n = seg_r.front().size();
    CrossAcc acc(n);
    for (std::size_t i = 0; i < seg_r.size(); ++i) {
        check_pair(seg_r[i], seg_b[i]);
        if (seg_r[i].size() != n) throw InvalidArgument("segments differ in length");
        acc.add(seg_r[i].samples.data(), seg_b[i].samples.data());
    }
    return acc.result(seg_r.front().sample_rate, seg_b.front().demod_hz);
}

std::pair<TimeTrace, TimeTrace> phase_correct(const TimeTrace& i_r, const TimeTrace& i_b,
                                              const TimeTrace& i_car) {
    check_pair(i_r, i_b);
    check_pair(i_r, i_car);
    const std::size_t n = i_car.size();
    // Carrier SNR: coherent power over the residual around a short moving average.
    const std::size_t w = std::min<std::size_t>(64, n);
    double coherent = 0.0, resid = 0.0;
    std::size_t blocks = 0;
    for (std::size_t i = 0; i + w <= n; i += w) {
        cplx m = 0.0;
        for (std::size_t j = i; j < i + w; ++j) m += i_car.samples[j];
        m /= static_cast<double>(w);
        coherent += std::norm(m);
        for (std::size_t j = i; j < i + w; ++j) resid += std::norm(i_car.samples[j] - m);
        ++blocks;
    }
    coherent /= static_cast<double>(blocks);
    resid /= static_cast<double>(blocks * w);
    if (!(coherent > 10.0 * resid) || coherent == 0.0)
        throw LowSnrError("carrier amplitude below its noise floor; phase undefined");
    TimeTrace r = i_r, b = i_b;
    for (std::size_t i = 0; i < n; ++i) {
        double a = std::abs(i_car.samples[i]);
        if (a == 0.0) throw LowSnrError("carrier sample with zero amplitude");
        cplx rot = std::conj(i_car.samples[i]) / a;
        r.samples[i] *= rot;
        b.samples[i] *= rot;
    }
    return {std::move(r), std::move(b)};
}

FrameCalibration calibrate_cross_frame(const CrossSpectrum& s, double tone_hz) {
    s.validate();
    if (s.size() < 16) throw LowSnrError("cross-spectrum too short for tone calibration");
    double wt = kTwoPi * tone_hz;
    if (wt < s.grid.front() || wt > s.grid.back()) throw LowSnrError("tone frequency outside cross-spectrum band");
    auto it = std::lower_bound(s.grid.begin(), s.grid.end(), wt);
    std::size_t c = static_cast<std::size_t>(it - s.grid.begin());
    if (c > 0 && (c == s.size() || std::abs(s.grid[c - 1] - wt) < std::abs(s.grid[c] - wt))) --c;
    std::size_t best = c;
    for (std::size_t j = c >= 2 ? c - 2 : 0; j <= std::min(s.size() - 1, c + 2); ++j)
        if (std::abs(s.values[j]) > std::abs(s.values[best])) best = j;

    std::vector<double> local;
    for (long d = -60; d <= 60; ++d) {
        if (std::abs(d) <= 4) continue;
        long j = static_cast<long>(best) + d;
        if (j < 0 || j >= static_cast<long>(s.size())) continue;
        double sig = s.sigmas.empty() ? 0.0 : s.sigmas[static_cast<std::size_t>(j)];
        local.push_back(std::abs(s.values[static_cast<std::size_t>(j)]) + sig);
    }
    if (local.empty()) throw LowSnrError("no reference bins around the tone");
    std::nth_element(local.begin(), local.begin() + static_cast<long>(local.size() / 2), local.end());
    double floor = local[local.size() / 2];
    FrameCalibration out;
    out.snr = floor > 0.0 ? std::abs(s.values[best]) / floor : std::numeric_limits<double>::infinity();
    if (!(out.snr > 10.0))
        throw LowSnrError("calibration tone absent or weak (SNR " + std::to_string(out.snr) + ")");
    out.theta = 0.5 * std::arg(s.values[best]);
    out.rotated = s;
    cplx rot = std::polar(1.0, -2.0 * out.theta);
    for (auto& v : out.rotated.values) v *= rot;
    out.rotated.metadata["frame_theta"] = std::to_string(out.theta);
    return out;
}

namespace {

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    auto mid = v.begin() + static_cast<long>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

}  // namespace

PostselectResult postselect(const std::vector<TimeTrace>& traces, const TimeTrace& w,
                            double window_s, double delay_s, const PostselectOptions& opt) {
    if (!(window_s > 0.0)) throw InvalidArgument("window must be positive");
    if (!(delay_s >= 0.0)) throw InvalidArgument("delay must be non-negative");
    w.validate();
    for (const auto& t : traces) {
        double t_end = t.start_time + t.duration();
        if (t.start_time < w.start_time - 0.5 / w.sample_rate ||
            t_end > w.start_time + w.duration() + 0.5 / w.sample_rate)
            throw InvalidArgument("witness does not cover the traces");
    }
    PostselectResult res;
    res.segments.resize(traces.size());

    const std::size_t n = w.size();
    std::size_t half = static_cast<std::size_t>(std::max(0.0, std::round(0.5 * opt.smooth_s * w.sample_rate)));
    std::vector<double> mag(n), sm(n);
    for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(w.samples[i]);
    std::vector<double> cum(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) cum[i + 1] = cum[i] + mag[i];
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t a = i >= half ? i - half : 0;
        std::size_t b = std::min(n, i + half + 1);
        sm[i] = (cum[b] - cum[a]) / static_cast<double>(b - a);
    }
    double med = median_of(sm);
    std::vector<double> dev(n);
    for (std::size_t i = 0; i < n; ++i) dev[i] = std::abs(sm[i] - med);
    double mad = median_of(dev);
    res.threshold = med + opt.k_mad * mad;

    double last_above = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        if (sm[i] <= res.threshold) continue;
        double t = w.start_time + static_cast<double>(i) / w.sample_rate;
        if (t - last_above > opt.merge_s) res.burst_times.push_back(t);
        last_above = t;
    }

    auto cut = [&](double t0) {
        for (std::size_t k = 0; k < traces.size(); ++k) {
            const auto& tr = traces[k];
            auto len = static_cast<std::size_t>(std::llround(window_s * tr.sample_rate));
            auto first = static_cast<std::size_t>(std::ceil((t0 - tr.start_time) * tr.sample_rate - 1e-9));
            if (first + len > tr.size()) return false;
            res.segments[k].push_back(tr.slice(first, len));
        }
        return true;
    };
    auto clean = [&](double t0) {
        auto a = static_cast<std::size_t>(std::max(0.0, std::floor((t0 - w.start_time) * w.sample_rate)));
        auto b = std::min(n, static_cast<std::size_t>(std::ceil((t0 + window_s - w.start_time) * w.sample_rate)));
        for (std::size_t i = a; i < b; ++i)
            if (sm[i] > res.threshold) return false;
        return true;
    };

    if (res.burst_times.empty()) {
        res.warnings.push_back("no bursts found; returning contiguous segmentation");
        double t_start = traces.empty() ? w.start_time : traces.front().start_time;
        double t_end = traces.empty() ? w.start_time + w.duration() : traces.front().start_time + traces.front().duration();
        for (double t0 = t_start; t0 + window_s <= t_end + 1e-12; t0 += window_s)
            if (!cut(t0)) break;
        return res;
    }
    for (std::size_t j = 0; j + 1 < res.burst_times.size(); ++j) {
        double t0 = res.burst_times[j] + delay_s;
        if (t0 + window_s > res.burst_times[j + 1])
            throw InvalidArgument("postselection window longer than the inter-burst gap");
        if (!clean(t0)) {
            res.warnings.push_back("window after burst at " + std::to_string(res.burst_times[j]) +
                                   " s overlaps witness activity; skipped");
            continue;
        }
        cut(t0);
    }
    return res;
}

FrequencyMask::FrequencyMask(std::vector<std::pair<double, double>> ex) : excluded_(std::move(ex)) {
    std::sort(excluded_.begin(), excluded_.end());
    for (std::size_t i = 0; i < excluded_.size(); ++i) {
        if (!(excluded_[i].first <= excluded_[i].second)) throw InvalidArgument("mask interval with low > high");
        if (i > 0 && excluded_[i].first <= excluded_[i - 1].second)
            throw InvalidArgument("mask intervals overlap");
    }
}

FrequencyMask FrequencyMask::paper_default(double hw) {
    return FrequencyMask({{66.3e3 - hw, 66.3e3 + hw}, {73.5e3 - hw, 73.5e3 + hw}, {90e3 - hw, 90e3 + hw}});
}

bool FrequencyMask::excluded(double omega) const {
    double f = omega / kTwoPi;
    for (const auto& [lo, hi] : excluded_)
        if (f >= lo && f <= hi) return true;
    return false;
}

std::vector<char> FrequencyMask::keep(const std::vector<double>& grid) const {
    std::vector<char> k(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) k[i] = excluded(grid[i]) ? 0 : 1;
    return k;
}

FrequencyMask FrequencyMask::merged(const FrequencyMask& other) const {
    auto all = excluded_;
    all.insert(all.end(), other.excluded_.begin(), other.excluded_.end());
    std::sort(all.begin(), all.end());
    std::vector<std::pair<double, double>> out;
    for (const auto& iv : all) {
        if (!out.empty() && iv.first <= out.back().second)
            out.back().second = std::max(out.back().second, iv.second);
        else
            out.push_back(iv);
    }
    return FrequencyMask(std::move(out));
}

Spectrum crop(const Spectrum& s, double lo, double hi) {
    Spectrum o;
    o.convention = s.convention;
    o.n_averages = s.n_averages;
    o.metadata = s.metadata;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.grid[i] < lo || s.grid[i] > hi) continue;
        o.grid.push_back(s.grid[i]);
        o.values.push_back(s.values[i]);
        if (!s.sigmas.empty()) o.sigmas.push_back(s.sigmas[i]);
    }
    return o;
}

CrossSpectrum crop(const CrossSpectrum& s, double lo, double hi) {
    CrossSpectrum o;
    o.convention = s.convention;
    o.n_averages = s.n_averages;
    o.metadata = s.metadata;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.grid[i] < lo || s.grid[i] > hi) continue;
        o.grid.push_back(s.grid[i]);
        o.values.push_back(s.values[i]);
        if (!s.sigmas.empty()) o.sigmas.push_back(s.sigmas[i]);
    }
    return o;
}

Spectrum rebin(const Spectrum& s, std::size_t width) {
    if (width == 0) throw InvalidArgument("rebin width must be positive");
    Spectrum o;
    o.convention = s.convention;
    o.metadata = s.metadata;
    o.n_averages = s.n_averages * static_cast<long>(width);
    for (std::size_t i = 0; i + width <= s.size(); i += width) {
        double g = 0.0, v = 0.0;
        for (std::size_t j = i; j < i + width; ++j) {
            g += s.grid[j];
            v += s.values[j];
        }
        g /= static_cast<double>(width);
        v /= static_cast<double>(width);
        o.grid.push_back(g);
        o.values.push_back(v);
        o.sigmas.push_back(v / std::sqrt(static_cast<double>(o.n_averages)));
    }
    return o;
}

}  // namespace levcool
