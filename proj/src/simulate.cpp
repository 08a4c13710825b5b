#include "levcool/simulate.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "levcool/errors.hpp"
#include "levcool/fft.hpp"
#include "levcool/spectral.hpp"

namespace levcool {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Exact zero-order-hold discretization in the scaled state (z, v / omega_z).
struct OscillatorStep {
    Eigen::Matrix2d phi;
    Eigen::Vector2d gam;   // response to unit acceleration held over dt
    Eigen::Matrix2d chol;  // Cholesky factor of the per-step noise covariance
};

OscillatorStep discretize_oscillator(const OscillatorParams& p, double dt, double accel_intensity) {
    const double w0 = p.omega_z(), g = p.gamma_m();
    Eigen::Matrix2d a;
    a << 0.0, w0, -w0, -g;
    Eigen::Matrix3d m3 = Eigen::Matrix3d::Zero();
    m3.topLeftCorner<2, 2>() = a * dt;
    m3(1, 2) = dt / w0;
    Eigen::Matrix3d e3 = m3.exp();

    Eigen::Matrix4d vl = Eigen::Matrix4d::Zero();
    vl.topLeftCorner<2, 2>() = -a * dt;
    vl(1, 3) = dt;
    vl.bottomRightCorner<2, 2>() = a.transpose() * dt;
    Eigen::Matrix4d e4 = vl.exp();

    OscillatorStep s;
    s.phi = e4.bottomRightCorner<2, 2>().transpose();
    s.gam = e3.topRightCorner<2, 1>();
    Eigen::Matrix2d q = s.phi * e4.topRightCorner<2, 2>() * (accel_intensity / (w0 * w0));
    q = 0.5 * (q + q.transpose());
    s.chol.setZero();
    if (accel_intensity > 0.0) {
        Eigen::LLT<Eigen::Matrix2d> llt(q);
        if (llt.info() != Eigen::Success) throw NumericalError("noise covariance is not positive definite");
        s.chol = llt.matrixL();
    }
    return s;
}

struct BiquadState {
    Biquad q;
    double s1 = 0.0, s2 = 0.0;
    double operator()(double x) {
        double y = q.b0 * x + s1;
        s1 = q.b1 * x - q.a1 * y + s2;
        s2 = q.b2 * x - q.a2 * y;
        return y;
    }
};

class LoopRunner {
public:
    explicit LoopRunner(const SimConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
        const auto& p = cfg.params;
        double s_ff = force_psd_total(p, cfg.budget);
        double q = kTwoPi * s_ff / (p.mass() * p.mass());
        step_ = discretize_oscillator(p, cfg.dt, q);
        sigma_imp_ = cfg.imprecision_on ? std::sqrt(kTwoPi * imprecision_psd(p, cfg.budget) / cfg.dt) : 0.0;
        double fs = 1.0 / cfg.dt;
        for (const auto& st : cfg.chain.stages)
            if (st.kind != StageKind::delay) filters_.push_back({discretize(st, fs)});
        delay_ = realize_delay(cfg.chain, cfg.dt);
        ring_.assign(static_cast<std::size_t>(delay_.samples) + 1, 0.0);
        k_fb_ = p.mass() * p.omega_z() * cfg.gamma_fb;
        w0_ = p.omega_z();

        double gl = std::max(p.gamma_m(), 1e-4 * w0_);
        double sigma_th = std::sqrt(kPi * s_ff / (p.mass() * p.mass() * w0_ * w0_ * gl));
        double tone_amp = cfg.tone ? std::abs(cfg.tone->force_amplitude) / (p.mass() * w0_ * gl) : 0.0;
        threshold_ = 1e4 * (sigma_th + tone_amp);
        if (!(threshold_ > 0.0)) threshold_ = 1e-3;
    }

    const DelayRealization& delay() const { return delay_; }

    // Advances one step; returns the sampled position and measurement record.
    void step(double& z_out, double& y_out) {
        const double t = static_cast<double>(n_) * cfg_.dt;
        const double z = x0_;
        if (!(std::abs(z) < threshold_)) {
            std::ostringstream os;
            os << "closed-loop simulation diverged at t = " << t << " s (|z| = " << std::abs(z) << " m)";
            throw DivergenceError(os.str(), t);
        }
        double y = z + (sigma_imp_ > 0.0 ? sigma_imp_ * normal_(rng_) : 0.0);
        double u = y;
        for (auto& f : filters_) u = f(u);
        ring_[head_] = u;
        std::size_t tail = head_ + 1 == ring_.size() ? 0 : head_ + 1;
        double force = k_fb_ * ring_[tail];
        head_ = tail;
        if (cfg_.tone) force += cfg_.tone->force_amplitude * std::cos(kTwoPi * cfg_.tone->freq_hz * t);
        double acc = force / cfg_.params.mass();
        double xi0 = normal_(rng_), xi1 = normal_(rng_);
        double n0 = step_.chol(0, 0) * xi0;
        double n1 = step_.chol(1, 0) * xi0 + step_.chol(1, 1) * xi1;
        double a0 = step_.phi(0, 0) * x0_ + step_.phi(0, 1) * x1_ + step_.gam(0) * acc + n0;
        double a1 = step_.phi(1, 0) * x0_ + step_.phi(1, 1) * x1_ + step_.gam(1) * acc + n1;
        x0_ = a0;
        x1_ = a1;
        ++n_;
        z_out = z;
        y_out = y;
    }

private:
    const SimConfig& cfg_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    OscillatorStep step_;
    double sigma_imp_ = 0.0;
    std::vector<BiquadState> filters_;
    DelayRealization delay_;
    std::vector<double> ring_;
    std::size_t head_ = 0;
    double k_fb_ = 0.0;
    double w0_ = 1.0;
    double threshold_ = 0.0;
    double x0_ = 0.0, x1_ = 0.0;
    long n_ = 0;
};

void pre_run_checks(const SimConfig& cfg, std::vector<std::string>& warnings) {
    cfg.validate(&warnings);
    if (cfg.gamma_fb > 0.0 && !cfg.allow_unstable) {
        auto st = stability_check(cfg.params, cfg.chain.with_gamma_fb(cfg.params, cfg.gamma_fb));
        if (!st.stable)
            throw UnstableLoopError("loop is unstable at gamma_fb = " + std::to_string(cfg.gamma_fb) +
                                    " rad/s (Nyquist encirclements " + std::to_string(st.encirclements) +
                                    "); set allow_unstable to run anyway");
    }
}

}  // namespace

void SimConfig::validate(std::vector<std::string>* warnings) const {
    chain.validate();
    if (!(gamma_fb >= 0.0) || !std::isfinite(gamma_fb)) throw InvalidArgument("gamma_fb must be non-negative");
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    if (!(duration > 0.0)) throw InvalidArgument("duration must be positive");
    if (output_decimation < 1) throw InvalidArgument("output_decimation must be >= 1");
    double f_z = params.omega_z() / kTwoPi;
    if (dt > 1.0 / (20.0 * f_z) * (1.0 + 1e-12))
        throw InvalidArgument("dt exceeds 1/(20 f_z); resonance under-resolved");
    for (const auto& s : chain.stages)
        if (s.kind == StageKind::delay && s.tau_s > 0.0 && dt > s.tau_s / 4.0 * (1.0 + 1e-12))
            throw InvalidArgument("dt too coarse for the delay stage (needs dt <= tau/4)");
    if (imprecision_on && !(budget.gamma_meas > 0.0))
        throw InvalidArgument("imprecision noise requires gamma_meas > 0");
    double g_eff = params.gamma_m() + gamma_fb;
    if (warnings && g_eff > 0.0 && duration < 100.0 * kTwoPi / g_eff)
        warnings->push_back("duration shorter than 100 linewidth periods");
}

DelayRealization realize_delay(const FilterChain& chain, double dt) {
    DelayRealization d;
    double tau = chain.total_delay();
    d.samples = std::max(0L, std::lround(tau / dt - 0.5));
    d.effective_s = (static_cast<double>(d.samples) + 0.5) * dt;
    d.rounding_error_s = d.effective_s - tau;
    return d;
}

SimResult simulate_closed_loop(const SimConfig& cfg) {
    SimResult r;
    pre_run_checks(cfg, r.warnings);
    LoopRunner run(cfg);
    r.delay = run.delay();
    const auto dec = static_cast<std::size_t>(cfg.output_decimation);
    const auto n_out = static_cast<std::size_t>(std::floor(cfg.duration / cfg.dt / static_cast<double>(dec) + 1e-9));
    if (n_out == 0) throw InvalidArgument("duration shorter than one output sample");
    std::vector<double> zs(n_out), ys(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
        double za = 0.0, ya = 0.0;
        for (std::size_t j = 0; j < dec; ++j) {
            double z, y;
            run.step(z, y);
            za += z;
            ya += y;
        }
        zs[i] = za / static_cast<double>(dec);
        ys[i] = ya / static_cast<double>(dec);
    }
    double fs = 1.0 / (cfg.dt * static_cast<double>(dec));
    r.z = make_real_trace(std::move(zs), fs, "z", "m");
    r.i_hom = make_real_trace(std::move(ys), fs, "i_hom", "m");
    r.z.seed = r.i_hom.seed = cfg.seed;
    return r;
}

SimSpectra simulate_closed_loop_psd(const SimConfig& cfg, std::size_t seg, std::size_t n_seg, double burn_in_s) {
    SimSpectra r;
    pre_run_checks(cfg, r.warnings);
    if (seg < 2 || n_seg < 1) throw InvalidArgument("need segments of >= 2 samples and >= 1 segment");
    LoopRunner run(cfg);
    r.delay = run.delay();
    const auto dec = static_cast<std::size_t>(cfg.output_decimation);
    const double fs = 1.0 / (cfg.dt * static_cast<double>(dec));
    const auto burn = static_cast<std::size_t>(std::ceil(burn_in_s / cfg.dt));
    double z, y;
    for (std::size_t i = 0; i < burn; ++i) run.step(z, y);
    PsdAccumulator acc_z(seg, fs, false), acc_y(seg, fs, false);
    std::vector<double> zs(seg), ys(seg);
    for (std::size_t k = 0; k < n_seg; ++k) {
        for (std::size_t i = 0; i < seg; ++i) {
            double za = 0.0, ya = 0.0;
            for (std::size_t j = 0; j < dec; ++j) {
                run.step(z, y);
                za += z;
                ya += y;
            }
            zs[i] = za / static_cast<double>(dec);
            ys[i] = ya / static_cast<double>(dec);
        }
        acc_z.add_pair(acc_y, zs.data(), ys.data());
    }
    r.s_zz = acc_z.result();
    r.s_hom = acc_y.result();
    r.s_zz.metadata["label"] = "z";
    r.s_hom.metadata["label"] = "i_hom";
    return r;
}

FrequencyResponse realized_loop_response(const SimConfig& cfg, const std::vector<double>& grid) {
    const double fs = 1.0 / cfg.dt;
    std::vector<Biquad> qs;
    for (const auto& st : cfg.chain.stages)
        if (st.kind != StageKind::delay) qs.push_back(discretize(st, fs));
    auto d = realize_delay(cfg.chain, cfg.dt);
    std::vector<cplx> v(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double w = grid[i];
        cplx h = 1.0;
        for (const auto& q : qs) h *= q.response(w, fs);
        double x = 0.5 * w * cfg.dt;
        double sinc = x == 0.0 ? 1.0 : std::sin(x) / x;
        v[i] = h * std::polar(sinc, -w * d.effective_s);
    }
    return FrequencyResponse(grid, std::move(v));
}

// ---------------------------------------------------------------- heterodyne

void HetSynthConfig::validate() const {
    if (!(n_bar >= 0.0)) throw InvalidArgument("n_bar must be non-negative");
    if (!(gamma_eff > 0.0)) throw InvalidArgument("gamma_eff must be positive");
    if (!(bg_r >= 0.0) || !(bg_b >= 0.0)) throw InvalidArgument("backgrounds must be non-negative");
    if (scale_r && !(*scale_r > 0.0)) throw InvalidArgument("scale_R must be positive");
    if (!(duration > 0.0)) throw InvalidArgument("duration must be positive");
    if (!(sample_rate > 0.0)) throw InvalidArgument("sample_rate must be positive");
    if (block_size < 65536) throw InvalidArgument("block_size must be at least 2^16");
    if (lo_sign != 1 && lo_sign != -1) throw InvalidArgument("lo_sign must be +1 or -1");
    if (!(lo_phase_walk >= 0.0)) throw InvalidArgument("lo_phase_walk must be non-negative");
    if (kTwoPi * demod() - kPi * sample_rate <= 0.0)
        throw InvalidArgument("band reaches negative physical frequencies; raise demod_hz or lower sample_rate");
    if (chain_distortion) {
        double w_lo = kTwoPi * (rf_hz - demod()) - kPi * sample_rate;
        double w_hi = kTwoPi * (rf_hz + demod()) + kPi * sample_rate;
        if (w_lo <= 0.0) throw InvalidArgument("rf_hz too low for the acquisition band");
        if (!chain_distortion->covers(w_lo, w_hi))
            throw InvalidArgument("chain distortion does not cover the acquisition band");
    }
}

double HetSynthConfig::r() const { return scale_r ? *scale_r : physical_scale_r(params, gamma_eff); }

HetBinModel heterodyne_bin_model(const HetSynthConfig& cfg, double omega) {
    OscillatorParams pe(cfg.params.mass(), cfg.center(), 0.0);
    double r = cfg.r();
    HetBinModel m;
    m.s_rr = heterodyne_sideband_psd(omega, pe, cfg.gamma_eff, cfg.n_bar, r, cfg.bg_r, Sideband::stokes);
    m.s_bb = heterodyne_sideband_psd(omega, pe, cfg.gamma_eff, cfg.n_bar, r, cfg.bg_b, Sideband::antistokes);
    m.s_rb = heterodyne_cross_psd(omega, pe, cfg.gamma_eff, cfg.n_bar, r);
    return m;
}

double acquisition_frequency(const HetSynthConfig& cfg, Sideband side, double omega) {
    double w_rf = kTwoPi * cfg.rf_hz;
    bool upper = (side == Sideband::stokes) == (cfg.lo_sign > 0);
    return upper ? w_rf + omega : w_rf - omega;
}

HetTraces synthesize_heterodyne(const HetSynthConfig& cfg) {
    cfg.validate();
    const std::size_t nb = cfg.block_size;
    const std::size_t edge = nb / 8;
    const std::size_t keep = nb - 2 * edge;
    const double fs = cfg.sample_rate;
    const double demod = cfg.demod();
    const auto total = static_cast<std::size_t>(std::llround(cfg.duration * fs));
    if (total == 0) throw InvalidArgument("duration shorter than one sample");

    // Per-bin factors, indexed by signed frequency k in [-nb/2, nb/2).
    const long kmin = -static_cast<long>(nb / 2);
    std::vector<double> l11(nb), l22(nb), gr(nb, 1.0), gb(nb, 1.0);
    std::vector<cplx> l21(nb);
    double worst = 0.0, worst_w = 0.0;
    for (std::size_t i = 0; i < nb; ++i) {
        long k = kmin + static_cast<long>(i);
        double w = kTwoPi * (demod + static_cast<double>(k) * fs / static_cast<double>(nb));
        HetBinModel m = heterodyne_bin_model(cfg, w);
        double tr = m.s_rr + m.s_bb;
        double lam = 0.5 * tr - std::sqrt(0.25 * (m.s_rr - m.s_bb) * (m.s_rr - m.s_bb) + std::norm(m.s_rb));
        double rel = tr > 0.0 ? lam / tr : 0.0;
        if (rel < worst) {
            worst = rel;
            worst_w = w;
        }
        l11[i] = std::sqrt(std::max(m.s_rr, 0.0));
        l21[i] = l11[i] > 0.0 ? std::conj(m.s_rb) / l11[i] : cplx(0.0);
        l22[i] = std::sqrt(std::max(m.s_bb - std::norm(l21[i]), 0.0));
        if (cfg.chain_distortion) {
            gr[i] = std::abs((*cfg.chain_distortion)(acquisition_frequency(cfg, Sideband::stokes, w)));
            gb[i] = std::abs((*cfg.chain_distortion)(acquisition_frequency(cfg, Sideband::antistokes, w)));
        }
    }
    if (worst < -1e-12) {
        std::ostringstream os;
        os << "unphysical model: backgrounds too small (worst bin at " << worst_w / kTwoPi
           << " Hz, min eigenvalue/trace = " << worst << ")";
        throw UnphysicalModelError(os.str(), worst_w);
    }

    HetTraces out;
    for (auto* t : {&out.i_r, &out.i_b, &out.i_car}) {
        t->sample_rate = fs;
        t->samples.assign(total, cplx(0.0));
        t->is_complex = true;
        t->demod_hz = demod;
        t->seed = cfg.seed;
        t->units = "arb";
    }
    out.i_r.label = "i_r";
    out.i_b.label = "i_b";
    out.i_car.label = "i_car";

    const double amp = std::sqrt(kTwoPi * static_cast<double>(nb) * fs);
    std::vector<cplx> xr(nb), xb(nb), tr(nb), tb(nb);
    const std::size_t n_blocks = (total + keep - 1) / keep;
    for (std::size_t blk = 0; blk < n_blocks; ++blk) {
        std::mt19937_64 rng(splitmix64(cfg.seed ^ splitmix64(blk + 1)));
        std::normal_distribution<double> nd(0.0, std::sqrt(0.5));
        for (std::size_t i = 0; i < nb; ++i) {
            long k = kmin + static_cast<long>(i);
            cplx x1(nd(rng), nd(rng)), x2(nd(rng), nd(rng));
            cplx u = gr[i] * l11[i] * x1;
            cplx w = gb[i] * (l21[i] * x1 + l22[i] * x2);
            auto nn = static_cast<long>(nb);
            std::size_t jb = static_cast<std::size_t>(((k % nn) + nn) % nn);
            std::size_t jr = static_cast<std::size_t>((((-k) % nn) + nn) % nn);
            xr[jr] = amp * u;
            xb[jb] = amp * std::conj(w);
        }
        fft::backward(xr.data(), tr.data(), nb);
        fft::backward(xb.data(), tb.data(), nb);
        std::size_t base = blk * keep;
        std::size_t count = std::min(keep, total - base);
        double inv = 1.0 / static_cast<double>(nb);
        for (std::size_t i = 0; i < count; ++i) {
            out.i_r.samples[base + i] = tr[edge + i] * inv;
            out.i_b.samples[base + i] = tb[edge + i] * inv;
        }
    }

    if (cfg.tone) {
        double wt = kTwoPi * cfg.tone->freq_hz;
        double dlt = wt - kTwoPi * demod;
        cplx c = cfg.tone->amplitude;
        double g_r = 1.0, g_b = 1.0;
        if (cfg.chain_distortion) {
            g_r = std::abs((*cfg.chain_distortion)(acquisition_frequency(cfg, Sideband::stokes, wt)));
            g_b = std::abs((*cfg.chain_distortion)(acquisition_frequency(cfg, Sideband::antistokes, wt)));
        }
        for (std::size_t i = 0; i < total; ++i) {
            double t = static_cast<double>(i) / fs;
            cplx e = std::polar(1.0, dlt * t);
            out.i_r.samples[i] += g_r * std::conj(c) * std::conj(e);
            out.i_b.samples[i] += g_b * c * e;
        }
    }

    std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x6c6f5f7068617365ULL));
    std::normal_distribution<double> nd(0.0, 1.0);
    const double car_sigma = std::sqrt(0.5 * std::pow(10.0, cfg.carrier_noise_db / 10.0));
    const double walk = cfg.lo_phase_walk * std::sqrt(1.0 / fs);
    double theta_walk = 0.0;
    for (std::size_t i = 0; i < total; ++i) {
        double t = static_cast<double>(i) / fs;
        if (walk > 0.0) theta_walk += walk * nd(rng);
        double theta = cfg.lo_phase_start + cfg.lo_phase_drift * t + theta_walk;
        cplx rot = std::polar(1.0, theta);
        cplx side = std::polar(1.0, theta + cfg.frame_phase);
        out.i_r.samples[i] *= side;
        out.i_b.samples[i] *= side;
        out.i_car.samples[i] = rot * cplx(1.0 + car_sigma * nd(rng), car_sigma * nd(rng));
    }
    return out;
}

// ---------------------------------------------------------------- bursts

BurstResult inject_bursts(const TimeTrace& trace, double period, const BurstSpec& b) {
    trace.validate();
    if (!(period > b.duration_s)) throw InvalidArgument("burst period must exceed burst duration");
    if (!(b.duration_s > 0.0) || !(b.decay_s > 0.0)) throw InvalidArgument("burst duration and decay must be positive");
    if (b.shape != "decaying_sine") throw InvalidArgument("unknown burst shape: " + b.shape);
    if (!(b.offset_s >= 0.0) || b.offset_s + b.duration_s > period)
        throw InvalidArgument("burst must fit inside one period");
    BurstResult r;
    r.contaminated = trace;
    r.i_dc = trace;
    r.i_dc.label = "i_dc";
    r.i_dc.units = "arb";
    r.i_dc.is_complex = false;
    r.i_dc.demod_hz = 0.0;
    const double fs = trace.sample_rate;
    const double t_end = trace.start_time + trace.duration();
    std::mt19937_64 rng(b.seed);
    std::normal_distribution<double> nd(0.0, b.witness_noise);
    for (auto& s : r.i_dc.samples) s = nd(rng);
    for (long k = 0;; ++k) {
        if (trace.start_time + static_cast<double>(k + 1) * period > t_end + 1e-9) break;
        double t0 = trace.start_time + b.offset_s + static_cast<double>(k) * period;
        r.burst_times.push_back(t0);
        auto first = static_cast<std::size_t>(std::ceil((t0 - trace.start_time) * fs - 1e-9));
        auto last = std::min(trace.size(), static_cast<std::size_t>(std::ceil((t0 + b.duration_s - trace.start_time) * fs - 1e-9)));
        for (std::size_t i = first; i < last; ++i) {
            double tau = trace.start_time + static_cast<double>(i) / fs - t0;
            double env = std::exp(-tau / b.decay_s);
            r.contaminated.samples[i] += b.amplitude * env * std::sin(kTwoPi * b.ring_hz * tau);
            r.i_dc.samples[i] += b.witness_amplitude * env;
        }
    }
    return r;
}

}  // namespace levcool
