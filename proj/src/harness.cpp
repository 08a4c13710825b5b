#include "levcool/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "levcool/errors.hpp"
#include "levcool/fft.hpp"
#include "levcool/io.hpp"

namespace levcool {

using json = nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t row_seed(std::uint64_t seed, std::size_t row, std::uint64_t stream) {
    return mix(seed ^ mix(static_cast<std::uint64_t>(row) * 0x100 + stream));
}

}  // namespace

// ---------------------------------------------------------------- config

std::vector<double> log_sweep(double lo, double hi, std::size_t n) {
    if (!(lo > 0.0) || !(hi >= lo) || n == 0) throw InvalidArgument("log sweep needs 0 < lo <= hi and n > 0");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = n == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(n - 1));
    return v;
}

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.params = OscillatorParams(1e-18, kTwoPi * 77.6e3, kTwoPi * 21.9);
    c.budget = budget_from_rates(kTwoPi * 1.33e3, kTwoPi * 5.5e3, 3.0);
    c.chain = paper_chain(smallest_stable_delay(c.params, 0));
    double gs = optimal_gamma(c.budget);
    c.gamma_fb = log_sweep(gs / 30.0, 10.0 * gs, 8);
    c.mask = FrequencyMask::paper_default();
    return c;
}

void ExperimentConfig::validate() const {
    chain.validate();
    if (!(budget.gamma_meas > 0.0) || !(budget.gamma_tot >= budget.gamma_meas))
        throw InvalidArgument("budget needs 0 < gamma_meas <= gamma_tot");
    if (!labels.empty() && labels.size() != gamma_fb.size())
        throw InvalidArgument("sweep labels and gains differ in length");
    for (double g : gamma_fb)
        if (!(g > 0.0) || !std::isfinite(g)) throw InvalidArgument("sweep gains must be positive");
    if (!(homodyne.dt_s > 0.0) || homodyne.n_segments < 1 || homodyne.reference_segments < 1)
        throw InvalidArgument("homodyne settings out of range");
    const double nyq = 0.5 / homodyne.dt_s;
    if (params.omega_z() / kTwoPi + homodyne.reference_band_hz >= nyq)
        throw InvalidArgument("reference band exceeds the simulated band");
    for (auto& [a, b] : mask.intervals())
        if (b >= nyq) throw InvalidArgument("mask interval beyond the simulated band");
    if (het.enabled) {
        if (!(het.duration_s > 0.0) || !(het.sample_rate_hz > 0.0) || het.segment_samples < 16)
            throw InvalidArgument("heterodyne settings out of range");
        if (!(het.band_fraction > 0.0 && het.band_fraction <= 1.0))
            throw InvalidArgument("band_fraction must be in (0, 1]");
        if (!(het.background_factor > 0.0)) throw InvalidArgument("background_factor must be positive");
        if (!(std::abs(het.tilt) < 0.3)) throw InvalidArgument("tilt must be below 0.3 in magnitude");
        if (params.omega_z() / kTwoPi <= 0.5 * het.sample_rate_hz)
            throw InvalidArgument("heterodyne band reaches negative frequencies");
    }
    if (threads < 1) throw InvalidArgument("threads must be >= 1");
    if (curve_points < 2) throw InvalidArgument("curve_points must be >= 2");
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw InvalidArgument(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw InvalidArgument("unknown key '" + it.key() + "' in " + where);
}

double num(const json& j, const std::string& key, double dflt, const std::string& where) {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_number()) throw InvalidArgument(where + "." + key + " must be a number");
    return j[key].get<double>();
}

FilterStage stage_from_json(const json& s) {
    check_keys(s, {"kind", "cutoff_hz", "center_hz", "quality", "tau_s", "gain"}, "chain stage");
    if (!s.contains("kind") || !s["kind"].is_string()) throw InvalidArgument("chain stage needs a kind");
    StageKind k = stage_kind_from_string(s["kind"].get<std::string>());
    FilterStage st;
    switch (k) {
        case StageKind::high_pass: st = FilterStage::high_pass(num(s, "cutoff_hz", 0.0, "stage")); break;
        case StageKind::notch:
            st = FilterStage::notch(num(s, "center_hz", 0.0, "stage"), num(s, "quality", 0.0, "stage"));
            break;
        case StageKind::delay: st = FilterStage::delay(num(s, "tau_s", 0.0, "stage")); break;
        case StageKind::gain: st = FilterStage::scalar(num(s, "gain", 1.0, "stage")); break;
    }
    st.validate();
    return st;
}

json stage_to_json(const FilterStage& s) {
    json j;
    j["kind"] = to_string(s.kind);
    switch (s.kind) {
        case StageKind::high_pass: j["cutoff_hz"] = s.cutoff_hz; break;
        case StageKind::notch:
            j["center_hz"] = s.center_hz;
            j["quality"] = s.quality;
            break;
        case StageKind::delay: j["tau_s"] = s.tau_s; break;
        case StageKind::gain: j["gain"] = s.gain; break;
    }
    return j;
}

}  // namespace

namespace {

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, {"oscillator", "budget", "chain", "sweep", "homodyne", "heterodyne", "estimation", "seed",
                   "output_dir", "threads", "curve_points"},
               "config");
    ExperimentConfig c = default_config();

    if (j.contains("oscillator")) {
        const json& o = j["oscillator"];
        check_keys(o, {"mass_kg", "omega_z_hz", "gamma_m_hz"}, "oscillator");
        c.params = OscillatorParams(num(o, "mass_kg", c.params.mass(), "oscillator"),
                                    kTwoPi * num(o, "omega_z_hz", c.params.omega_z() / kTwoPi, "oscillator"),
                                    kTwoPi * num(o, "gamma_m_hz", c.params.gamma_m() / kTwoPi, "oscillator"));
    }
    if (j.contains("budget")) {
        const json& b = j["budget"];
        check_keys(b, {"gamma_meas_hz", "gamma_tot_hz", "c_q", "gamma_qba_hz", "gamma_exc_hz", "eta_d"}, "budget");
        if (b.contains("gamma_qba_hz")) {
            if (b.contains("gamma_meas_hz") || b.contains("gamma_tot_hz"))
                throw InvalidArgument("budget: give either rates (meas, tot) or (qba, exc, eta_d), not both");
            c.budget = rates_from_budget(kTwoPi * num(b, "gamma_qba_hz", 0.0, "budget"),
                                         kTwoPi * num(b, "gamma_exc_hz", 0.0, "budget"), num(b, "eta_d", 1.0, "budget"));
        } else {
            c.budget = budget_from_rates(kTwoPi * num(b, "gamma_meas_hz", c.budget.gamma_meas / kTwoPi, "budget"),
                                         kTwoPi * num(b, "gamma_tot_hz", c.budget.gamma_tot / kTwoPi, "budget"),
                                         num(b, "c_q", 3.0, "budget"));
        }
    }
    if (j.contains("chain")) {
        const json& ch = j["chain"];
        check_keys(ch, {"preset", "tau_s", "stages", "sample_rate_hz"}, "chain");
        double tau = num(ch, "tau_s", smallest_stable_delay(c.params, 0), "chain");
        if (ch.contains("stages")) {
            if (ch.contains("preset")) throw InvalidArgument("chain: give a preset or stages, not both");
            c.chain = FilterChain{};
            for (const auto& s : ch["stages"]) c.chain.stages.push_back(stage_from_json(s));
        } else {
            std::string preset = ch.value("preset", std::string("paper"));
            if (preset == "paper") c.chain = paper_chain(tau);
            else if (preset == "pure_delay") c.chain = pure_delay_chain(tau);
            else throw InvalidArgument("unknown chain preset: " + preset);
        }
        c.chain.sample_rate_hz = num(ch, "sample_rate_hz", 0.0, "chain");
        c.chain.overall_gain = 1.0;
    } else {
        c.chain = paper_chain(smallest_stable_delay(c.params, 0));
    }
    c.chain.validate();

    double gs = optimal_gamma(c.budget);
    c.gamma_fb = log_sweep(gs / 30.0, 10.0 * gs, 8);
    if (j.contains("sweep")) {
        const json& s = j["sweep"];
        check_keys(s, {"gamma_fb_hz", "labels", "gamma_star_range", "n_points"}, "sweep");
        if (s.contains("gamma_fb_hz")) {
            if (s.contains("gamma_star_range")) throw InvalidArgument("sweep: give gamma_fb_hz or gamma_star_range");
            c.gamma_fb.clear();
            for (const auto& v : s["gamma_fb_hz"]) {
                if (!v.is_number()) throw InvalidArgument("sweep.gamma_fb_hz entries must be numbers");
                c.gamma_fb.push_back(kTwoPi * v.get<double>());
            }
        } else if (s.contains("gamma_star_range")) {
            const json& r = s["gamma_star_range"];
            if (!r.is_array() || r.size() != 2) throw InvalidArgument("sweep.gamma_star_range must be [lo, hi]");
            auto n = static_cast<std::size_t>(num(s, "n_points", 8, "sweep"));
            c.gamma_fb = log_sweep(r[0].get<double>() * gs, r[1].get<double>() * gs, n);
        }
        if (s.contains("labels"))
            for (const auto& v : s["labels"]) c.labels.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }

    if (j.contains("homodyne")) {
        const json& h = j["homodyne"];
        check_keys(h, {"dt_s", "burn_in_s", "n_segments", "min_segment_s", "linewidths_per_segment",
                       "reference_segment_s", "reference_segments", "reference_band_hz", "fit_band_min_hz",
                       "fit_band_linewidths"},
                   "homodyne");
        auto& H = c.homodyne;
        H.dt_s = num(h, "dt_s", H.dt_s, "homodyne");
        H.burn_in_s = num(h, "burn_in_s", H.burn_in_s, "homodyne");
        H.n_segments = static_cast<std::size_t>(num(h, "n_segments", static_cast<double>(H.n_segments), "homodyne"));
        H.min_segment_s = num(h, "min_segment_s", H.min_segment_s, "homodyne");
        H.linewidths_per_segment = num(h, "linewidths_per_segment", H.linewidths_per_segment, "homodyne");
        H.reference_segment_s = num(h, "reference_segment_s", H.reference_segment_s, "homodyne");
        H.reference_segments = static_cast<std::size_t>(
            num(h, "reference_segments", static_cast<double>(H.reference_segments), "homodyne"));
        H.reference_band_hz = num(h, "reference_band_hz", H.reference_band_hz, "homodyne");
        H.fit_band_min_hz = num(h, "fit_band_min_hz", H.fit_band_min_hz, "homodyne");
        H.fit_band_linewidths = num(h, "fit_band_linewidths", H.fit_band_linewidths, "homodyne");
    }
    if (j.contains("heterodyne")) {
        const json& h = j["heterodyne"];
        check_keys(h, {"enabled", "duration_s", "sample_rate_hz", "segment_samples", "band_fraction",
                       "background_factor", "tone_hz", "tone_to_floor", "lo_phase_drift_hz",
                       "lo_phase_walk_rad_per_sqrt_s", "frame_phase_rad", "tilt"},
                   "heterodyne");
        auto& H = c.het;
        if (h.contains("enabled")) {
            if (!h["enabled"].is_boolean()) throw InvalidArgument("heterodyne.enabled must be a boolean");
            H.enabled = h["enabled"].get<bool>();
        }
        H.duration_s = num(h, "duration_s", H.duration_s, "heterodyne");
        H.sample_rate_hz = num(h, "sample_rate_hz", H.sample_rate_hz, "heterodyne");
        H.segment_samples = static_cast<std::size_t>(
            num(h, "segment_samples", static_cast<double>(H.segment_samples), "heterodyne"));
        H.band_fraction = num(h, "band_fraction", H.band_fraction, "heterodyne");
        H.background_factor = num(h, "background_factor", H.background_factor, "heterodyne");
        H.tone_hz = num(h, "tone_hz", H.tone_hz, "heterodyne");
        H.tone_to_floor = num(h, "tone_to_floor", H.tone_to_floor, "heterodyne");
        H.lo_phase_drift_hz = num(h, "lo_phase_drift_hz", H.lo_phase_drift_hz, "heterodyne");
        H.lo_phase_walk = num(h, "lo_phase_walk_rad_per_sqrt_s", H.lo_phase_walk, "heterodyne");
        H.frame_phase_rad = num(h, "frame_phase_rad", H.frame_phase_rad, "heterodyne");
        H.tilt = num(h, "tilt", H.tilt, "heterodyne");
    }
    if (j.contains("estimation")) {
        const json& e = j["estimation"];
        check_keys(e, {"mask_hz", "mask_half_width_hz", "anchor_gamma_fb_hz"}, "estimation");
        if (e.contains("mask_hz")) {
            if (e.contains("mask_half_width_hz")) throw InvalidArgument("estimation: give mask_hz or mask_half_width_hz");
            std::vector<std::pair<double, double>> iv;
            for (const auto& p : e["mask_hz"]) {
                if (!p.is_array() || p.size() != 2) throw InvalidArgument("estimation.mask_hz entries must be [lo, hi]");
                iv.emplace_back(p[0].get<double>(), p[1].get<double>());
            }
            c.mask = FrequencyMask(iv);
        } else if (e.contains("mask_half_width_hz")) {
            c.mask = FrequencyMask::paper_default(num(e, "mask_half_width_hz", 100.0, "estimation"));
        }
        c.anchor_gamma_fb = kTwoPi * num(e, "anchor_gamma_fb_hz", c.anchor_gamma_fb / kTwoPi, "estimation");
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_integer() && !j["seed"].is_number_unsigned())
            throw InvalidArgument("seed must be an integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("threads")) c.threads = j["threads"].get<int>();
    if (j.contains("curve_points")) c.curve_points = j["curve_points"].get<std::size_t>();
    c.validate();
    return c;
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
    try {
        return parse_config(text);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
}

std::string config_to_json(const ExperimentConfig& c) {
    json j;
    j["oscillator"] = {{"mass_kg", c.params.mass()},
                       {"omega_z_hz", c.params.omega_z() / kTwoPi},
                       {"gamma_m_hz", c.params.gamma_m() / kTwoPi}};
    j["budget"] = {{"gamma_meas_hz", c.budget.gamma_meas / kTwoPi}, {"gamma_tot_hz", c.budget.gamma_tot / kTwoPi}};
    if (c.budget.c_q_infinite) j["budget"]["c_q"] = 1e300;
    else j["budget"]["c_q"] = c.budget.c_q;
    json stages = json::array();
    for (const auto& s : c.chain.stages) stages.push_back(stage_to_json(s));
    j["chain"] = {{"stages", stages}, {"sample_rate_hz", c.chain.sample_rate_hz}};
    json g = json::array();
    for (double v : c.gamma_fb) g.push_back(v / kTwoPi);
    j["sweep"] = {{"gamma_fb_hz", g}};
    if (!c.labels.empty()) j["sweep"]["labels"] = c.labels;
    const auto& H = c.homodyne;
    j["homodyne"] = {{"dt_s", H.dt_s},
                     {"burn_in_s", H.burn_in_s},
                     {"n_segments", H.n_segments},
                     {"min_segment_s", H.min_segment_s},
                     {"linewidths_per_segment", H.linewidths_per_segment},
                     {"reference_segment_s", H.reference_segment_s},
                     {"reference_segments", H.reference_segments},
                     {"reference_band_hz", H.reference_band_hz},
                     {"fit_band_min_hz", H.fit_band_min_hz},
                     {"fit_band_linewidths", H.fit_band_linewidths}};
    const auto& T = c.het;
    j["heterodyne"] = {{"enabled", T.enabled},
                       {"duration_s", T.duration_s},
                       {"sample_rate_hz", T.sample_rate_hz},
                       {"segment_samples", T.segment_samples},
                       {"band_fraction", T.band_fraction},
                       {"background_factor", T.background_factor},
                       {"tone_hz", T.tone_hz},
                       {"tone_to_floor", T.tone_to_floor},
                       {"lo_phase_drift_hz", T.lo_phase_drift_hz},
                       {"lo_phase_walk_rad_per_sqrt_s", T.lo_phase_walk},
                       {"frame_phase_rad", T.frame_phase_rad},
                       {"tilt", T.tilt}};
    json mask = json::array();
    for (auto& [a, b] : c.mask.intervals()) mask.push_back({a, b});
    j["estimation"] = {{"mask_hz", mask}, {"anchor_gamma_fb_hz", c.anchor_gamma_fb / kTwoPi}};
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["threads"] = c.threads;
    j["curve_points"] = c.curve_points;
    return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::string& path) {
    std::string text = io::read_file(path);
    try {
        return config_from_json(text);
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------- truth

namespace {

// Occupation grid padded on both ends so that responses tabulated on it cover
// grids built from slightly different resonance estimates.
std::vector<double> padded_grid(const OscillatorParams& p, double gamma) {
    auto g = occupation_grid(p, gamma);
    g.insert(g.begin(), p.omega_z() / 60.0);
    g.push_back(12.0 * p.omega_z());
    return g;
}

}  // namespace

TruthPoint true_occupation(const OscillatorParams& p, const RateBudget& b, double gamma_fb,
                           const FrequencyResponse& h) {
    auto grid = occupation_grid(p, p.gamma_m() + gamma_fb);
    Spectrum s = true_displacement_psd(reference_from_truth(p, b), gamma_fb, h, grid);
    TruthPoint t;
    t.n_bar = occupation_from_spectrum(s, p).n_bar;
    t.gamma_eff = full_width_half_max(s);
    t.omega_eff = peak_frequency(s);
    return t;
}

std::vector<CurvePoint> theory_curves(const ExperimentConfig& cfg, const std::vector<double>& gains) {
    std::vector<CurvePoint> out;
    const auto& p = cfg.params;
    double n_cond = conditional_occupation(cfg.budget.eta_meas);
    FilterChain unit = cfg.chain.unit_gain();
    for (double g : gains) {
        if (!stability_check(p, cfg.chain.with_gamma_fb(p, g)).stable) continue;
        FrequencyResponse h = tabulate(unit, padded_grid(p, p.gamma_m() + g));
        TruthPoint t = true_occupation(p, cfg.budget, g, h);
        out.push_back({g, t.gamma_eff, t.n_bar, cold_damping_occupation(t.gamma_eff, cfg.budget), n_cond});
    }
    return out;
}

// ---------------------------------------------------------------- rows

namespace {

SimConfig sim_config(const ExperimentConfig& cfg, double gamma_fb, std::uint64_t seed) {
    SimConfig s;
    s.params = cfg.params;
    s.budget = cfg.budget;
    s.chain = cfg.chain;
    s.gamma_fb = gamma_fb;
    s.dt = cfg.homodyne.dt_s;
    s.seed = seed;
    return s;
}

std::size_t segment_samples(double seconds, double dt) {
    return fft::good_size(static_cast<std::size_t>(std::ceil(seconds / dt)));
}

FrequencyResponse tilt_response(const ExperimentConfig& cfg, double rf_hz, double tilt) {
    const double w0 = cfg.params.omega_z();
    const double wrf = kTwoPi * rf_hz;
    std::vector<double> grid;
    std::vector<cplx> vals;
    for (int i = 0; i <= 600; ++i) {
        double w = wrf - 3.0 * w0 + 6.0 * w0 * i / 600.0;
        grid.push_back(w);
        vals.emplace_back(1.0 + tilt * (w - wrf) / w0, 0.0);
    }
    return FrequencyResponse(grid, vals);
}

struct HetOutcome {
    ThermometryResult asym_double, asym_single, cross;
};

HetOutcome run_het(const ExperimentConfig& cfg, const TruthPoint& truth, std::size_t row, std::vector<std::string>& warnings) {
    const auto& H = cfg.het;
    HetSynthConfig hc;
    hc.params = cfg.params;
    hc.n_bar = truth.n_bar;
    hc.gamma_eff = truth.gamma_eff;
    hc.omega_eff = truth.omega_eff;
    hc.duration = H.duration_s;
    hc.sample_rate = H.sample_rate_hz;
    const double df = H.sample_rate_hz / static_cast<double>(H.segment_samples);
    // Put the tone on a bin of the estimation grid.
    hc.demod_hz = H.tone_hz - std::round((H.tone_hz - truth.omega_eff / kTwoPi) / df) * df;
    const double m = cfg.params.mass();
    const double a0 = hc.r() / (m * m * hc.gamma_eff * hc.gamma_eff * hc.center() * hc.center());
    hc.bg_r = hc.bg_b = H.background_factor * a0;
    hc.tone = HetTone{H.tone_hz, cplx(std::sqrt(H.tone_to_floor * hc.bg_r * kTwoPi * hc.sample_rate /
                                                static_cast<double>(H.segment_samples)),
                                      0.0)};
    hc.lo_phase_start = 0.3;
    hc.lo_phase_drift = kTwoPi * H.lo_phase_drift_hz;
    hc.lo_phase_walk = H.lo_phase_walk;
    hc.frame_phase = H.frame_phase_rad;
    if (H.tilt != 0.0) hc.chain_distortion = tilt_response(cfg, hc.rf_hz, H.tilt);

    const double half = 0.5 * H.band_fraction * H.sample_rate_hz;
    const double lo = kTwoPi * (hc.demod() - half), hi = kTwoPi * (hc.demod() + half);

    HetOutcome out;
    FitResult fits[2];
    for (int s = 0; s < 2; ++s) {
        hc.lo_sign = s == 0 ? 1 : -1;
        hc.seed = row_seed(cfg.seed, row, 10 + static_cast<std::uint64_t>(s));
        CrossPsd cp;
        {
            HetTraces tr = synthesize_heterodyne(hc);
            if (s == 0) {
                auto pc = phase_correct(tr.i_r, tr.i_b, tr.i_car);
                tr = HetTraces{};
                cp = estimate_cross_psd(pc.first, pc.second, H.segment_samples);
            } else {
                cp = estimate_cross_psd(tr.i_r, tr.i_b, H.segment_samples);
            }
        }
        fits[s] = fit_sideband_pair(crop(cp.s_rr, lo, hi), crop(cp.s_bb, lo, hi), cfg.mask);
        if (s == 0) {
            out.asym_single = asymmetry_from_fit(fits[0]);
            FrameCalibration cal = calibrate_cross_frame(cp.s_rb, H.tone_hz);
            FitResult cf = fit_cross_spectrum(crop(cal.rotated, lo, hi), cfg.mask);
            out.cross = cross_correlation_result(cf);
            for (auto& w : cf.warnings) warnings.push_back("cross: " + w);
        }
    }
    out.asym_double = asymmetry_double_lo(fits[0], fits[1]);
    return out;
}

}  // namespace

FitResult run_reference(const ExperimentConfig& cfg) {
    SimConfig sc = sim_config(cfg, 0.0, row_seed(cfg.seed, 0xffff, 1));
    const auto& H = cfg.homodyne;
    auto sp = simulate_closed_loop_psd(sc, segment_samples(H.reference_segment_s, H.dt_s), H.reference_segments,
                                       H.burn_in_s + 5.0 / std::max(cfg.params.gamma_m(), 1.0));
    const double w0 = cfg.params.omega_z(), b = kTwoPi * H.reference_band_hz;
    return fit_reference_homodyne(crop(sp.s_hom, w0 - b, w0 + b), cfg.mask, cfg.params.mass());
}

SweepRow run_row(const ExperimentConfig& cfg, const FitResult& ref, std::size_t index) {
    SweepRow row;
    row.index = index;
    row.gamma_fb_injected = cfg.gamma_fb.at(index);
    if (!cfg.labels.empty()) row.label = cfg.labels[index];
    const double g = row.gamma_fb_injected;
    const auto& p = cfg.params;
    const auto& H = cfg.homodyne;
    std::string stage = "stability";
    try {
        if (!stability_check(p, cfg.chain.with_gamma_fb(p, g)).stable) {
            row.stable = false;
            row.flags.push_back("unstable");
            row.error = "skipped: loop unstable at this gain";
            return row;
        }
        stage = "truth";
        SimConfig sc = sim_config(cfg, g, row_seed(cfg.seed, index, 1));
        FrequencyResponse h = realized_loop_response(sc, padded_grid(p, p.gamma_m() + g));
        TruthPoint truth = true_occupation(p, cfg.budget, g, h);
        row.n_true = truth.n_bar;
        row.gamma_eff_true = truth.gamma_eff;
        row.omega_eff_true = truth.omega_eff;

        stage = "homodyne";
        double seg_s = std::max(H.min_segment_s, H.linewidths_per_segment * kTwoPi / truth.gamma_eff);
        auto sp = simulate_closed_loop_psd(sc, segment_samples(seg_s, H.dt_s), H.n_segments,
                                           H.burn_in_s + 10.0 / truth.gamma_eff);
        for (auto& w : sp.warnings) row.warnings.push_back(w);
        double half = std::max(kTwoPi * H.fit_band_min_hz, H.fit_band_linewidths * truth.gamma_eff);
        double w0 = ref.value("omega_z");
        Spectrum band = crop(sp.s_hom, std::max(w0 - half, 0.1 * w0), w0 + half);
        FitResult gf = fit_inloop_gain(band, ref, h, cfg.mask);
        row.gamma_fb_fitted = gf.value("gamma_fb");
        row.sigma_gamma_fb = gf.sigma("gamma_fb");
        for (auto& f : gf.flags) row.flags.push_back("gain_fit:" + f);

        stage = "occupation";
        OscillatorParams pf(ref.value("mass"), ref.value("omega_z"), ref.value("gamma_m"));
        auto grid = occupation_grid(pf, pf.gamma_m() + row.gamma_fb_fitted);
        auto n_at = [&](double gg) { return occupation_from_spectrum(true_displacement_psd(ref, gg, h, grid), pf).n_bar; };
        Spectrum st = true_displacement_psd(ref, row.gamma_fb_fitted, h, grid);
        row.n_uncal = occupation_from_spectrum(st, pf).n_bar;
        row.gamma_eff_fitted = full_width_half_max(st);
        double sg = row.sigma_gamma_fb;
        row.sigma_n_uncal = sg > 0.0 ? 0.5 * std::abs(n_at(row.gamma_fb_fitted + sg) - n_at(row.gamma_fb_fitted - sg)) : 0.0;
        row.ok = true;

        if (cfg.het.enabled) {
            stage = "heterodyne";
            HetOutcome het = run_het(cfg, truth, index, row.warnings);
            row.asymmetry = het.asym_double;
            row.asymmetry_single = het.asym_single;
            row.cross = het.cross;
        }
    } catch (const std::exception& e) {
        row.error = stage + ": " + e.what();
        row.flags.push_back("failed_" + stage);
    }
    return row;
}

SweepReport run_gain_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    SweepReport rep;
    rep.config_echo = config_to_json(cfg);
    rep.eta_meas = cfg.budget.eta_meas;
    rep.gamma_star = optimal_gamma(cfg.budget);
    rep.n_conditional = conditional_occupation(cfg.budget.eta_meas);
    rep.n_min = cold_damping_occupation(rep.gamma_star, cfg.budget);

    if (!cfg.gamma_fb.empty()) {
        auto lo = *std::min_element(cfg.gamma_fb.begin(), cfg.gamma_fb.end());
        auto hi = *std::max_element(cfg.gamma_fb.begin(), cfg.gamma_fb.end());
        rep.curves = theory_curves(cfg, log_sweep(lo, hi, cfg.curve_points));
    }

    try {
        rep.reference = run_reference(cfg);
        rep.reference_rates = rates_from_reference(*rep.reference);
    } catch (const std::exception& e) {
        rep.reference_error = e.what();
    }

    std::vector<std::size_t> order(cfg.gamma_fb.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return cfg.gamma_fb[a] < cfg.gamma_fb[b]; });
    rep.rows.resize(order.size());
    if (rep.reference) {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t k; (k = next++) < order.size();) rep.rows[k] = run_row(cfg, *rep.reference, order[k]);
        };
        int nt = std::max(1, std::min<int>(cfg.threads, static_cast<int>(order.size())));
        std::vector<std::thread> pool;
        for (int t = 1; t < nt; ++t) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
    } else {
        for (std::size_t k = 0; k < order.size(); ++k) {
            auto& r = rep.rows[k];
            r.index = order[k];
            r.gamma_fb_injected = cfg.gamma_fb[order[k]];
            if (!cfg.labels.empty()) r.label = cfg.labels[order[k]];
            r.error = "reference fit failed: " + rep.reference_error;
            r.flags.push_back("failed_reference");
        }
    }

    // Energy anchoring at the row nearest the configured gain.
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < rep.rows.size(); ++k) {
        const auto& r = rep.rows[k];
        if (!r.ok || !r.asymmetry || r.asymmetry->unphysical || !(r.n_uncal > 0.0)) continue;
        double d = std::abs(std::log(r.gamma_fb_injected / cfg.anchor_gamma_fb));
        if (d < best) {
            best = d;
            rep.anchor_row = k;
        }
    }
    if (rep.anchor_row) {
        const auto& a = rep.rows[*rep.anchor_row];
        rep.anchor = anchor_calibration(a.n_uncal, a.asymmetry->n_bar, a.sigma_n_uncal, a.asymmetry->sigma);
    }
    for (auto& r : rep.rows) {
        if (!r.ok) continue;
        r.inloop = apply_anchor(rep.anchor, r.n_uncal, r.sigma_n_uncal);
        if (!rep.anchor_row) r.flags.push_back("unanchored");
    }
    return rep;
}

// ---------------------------------------------------------------- squashing

std::vector<SquashRow> run_squashing_demo(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto& p = cfg.params;
    FitResult truth = reference_from_truth(p, cfg.budget);
    const double sff = truth.value("s_ff_tot"), simp = truth.value("s_imp");
    FilterChain unit = cfg.chain.unit_gain();
    std::vector<double> gains = cfg.gamma_fb;
    std::sort(gains.begin(), gains.end());
    std::vector<SquashRow> out;
    for (double g : gains) {
        SquashRow r;
        r.gamma_fb = g;
        r.stable = stability_check(p, cfg.chain.with_gamma_fb(p, g)).stable;
        auto grid = occupation_grid(p, p.gamma_m() + g);
        FrequencyResponse h = tabulate(unit, grid);
        Spectrum in = inloop_psd(truth, g, h, grid);
        Spectrum tr = true_displacement_psd(truth, g, h, grid);
        std::size_t imin = 0;
        r.true_over_force_min = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (in.values[i] < in.values[imin]) imin = i;
            cplx d(p.omega_z() * p.omega_z() - grid[i] * grid[i], p.gamma_m() * grid[i]);
            cplx l = p.omega_z() * g * h(grid[i]) / d;
            double force = sff / (p.mass() * p.mass() * std::norm(d) * std::norm(1.0 - l));
            r.true_over_force_min = std::min(r.true_over_force_min, tr.values[i] / force);
        }
        cplx d(p.omega_z() * p.omega_z() - grid[imin] * grid[imin], p.gamma_m() * grid[imin]);
        cplx l = p.omega_z() * g * h(grid[imin]) / d;
        double force = sff / (p.mass() * p.mass() * std::norm(d) * std::norm(1.0 - l));
        r.omega_at_min = grid[imin];
        r.inloop_over_imp = in.values[imin] / simp;
        r.true_over_force = tr.values[imin] / force;
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------- report

namespace {

std::string cell(double v) { return std::isfinite(v) ? io::fmt(v) : "nan"; }

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (auto& x : v) {
        std::string y = x;
        std::replace(y.begin(), y.end(), ',', ' ');
        std::replace(y.begin(), y.end(), '\n', ' ');
        s += (s.empty() ? "" : ";") + y;
    }
    return s;
}

void therm(std::ostringstream& o, const std::optional<ThermometryResult>& t) {
    o << ',' << (t ? cell(t->n_bar) : "nan") << ',' << (t ? cell(t->sigma) : "nan");
}

}  // namespace

std::string rows_csv(const SweepReport& rep) {
    std::ostringstream o;
    o << "# gain sweep rows; rates and gains in Hz (angular / 2 pi)\n";
    o << "# n_inloop is anchored; n_asymmetry is the double-LO estimate\n";
    o << "index,gamma_fb_injected_hz,stable,ok,gamma_eff_true_hz,n_true,gamma_fb_fitted_hz,sigma_gamma_fb_hz,"
         "gamma_eff_fitted_hz,n_inloop_uncal,sigma_n_inloop_uncal,n_inloop,sigma_n_inloop,n_asymmetry,"
         "sigma_n_asymmetry,n_asymmetry_single,sigma_n_asymmetry_single,n_cross,sigma_n_cross,label,flags,error\n";
    for (const auto& r : rep.rows) {
        o << r.index << ',' << cell(r.gamma_fb_injected / kTwoPi) << ',' << (r.stable ? 1 : 0) << ',' << (r.ok ? 1 : 0);
        if (r.ok) {
            o << ',' << cell(r.gamma_eff_true / kTwoPi) << ',' << cell(r.n_true) << ',' << cell(r.gamma_fb_fitted / kTwoPi)
              << ',' << cell(r.sigma_gamma_fb / kTwoPi) << ',' << cell(r.gamma_eff_fitted / kTwoPi) << ','
              << cell(r.n_uncal) << ',' << cell(r.sigma_n_uncal);
        } else {
            o << ",nan,nan,nan,nan,nan,nan,nan";
        }
        therm(o, r.inloop);
        therm(o, r.asymmetry);
        therm(o, r.asymmetry_single);
        therm(o, r.cross);
        o << ',' << join({r.label}) << ',' << join(r.flags) << ',' << join({r.error}) << '\n';
    }
    return o.str();
}

std::string curves_csv(const SweepReport& rep) {
    io::Table t;
    t.header_lines = {"theory curves; rates in Hz (angular / 2 pi)",
                      "n_delay_filter: occupation integral of the true-motion spectrum with the configured chain",
                      "n_ideal: ideal cold damping at the same linewidth"};
    t.columns = {"gamma_fb_hz", "gamma_eff_hz", "n_delay_filter", "n_ideal", "n_conditional"};
    for (const auto& c : rep.curves)
        t.rows.push_back({c.gamma_fb / kTwoPi, c.gamma_eff / kTwoPi, c.n_delay_filter, c.n_ideal, c.n_conditional});
    return io::table_to_csv(t);
}

std::string summary_text(const SweepReport& rep) {
    std::vector<std::pair<std::string, std::string>> kv = {
        {"eta_meas", cell(rep.eta_meas)},
        {"gamma_star_hz", cell(rep.gamma_star / kTwoPi)},
        {"n_min", cell(rep.n_min)},
        {"n_conditional", cell(rep.n_conditional)},
        {"n_rows", std::to_string(rep.rows.size())},
    };
    if (rep.reference) {
        const auto& f = *rep.reference;
        kv.push_back({"reference_omega_z_hz", cell(f.value("omega_z") / kTwoPi)});
        kv.push_back({"reference_gamma_m_hz", cell(f.value("gamma_m") / kTwoPi)});
        kv.push_back({"reference_sigma_gamma_m_hz", cell(f.sigma("gamma_m") / kTwoPi)});
        kv.push_back({"reference_s_ff_tot", cell(f.value("s_ff_tot"))});
        kv.push_back({"reference_s_imp", cell(f.value("s_imp"))});
    }
    if (rep.reference_rates) {
        kv.push_back({"reference_gamma_tot_hz", cell(rep.reference_rates->gamma_tot / kTwoPi)});
        kv.push_back({"reference_gamma_meas_hz", cell(rep.reference_rates->gamma_meas / kTwoPi)});
        kv.push_back({"reference_eta_meas", cell(rep.reference_rates->eta_meas)});
    }
    if (!rep.reference_error.empty()) kv.push_back({"reference_error", "\"" + rep.reference_error + "\""});
    if (rep.anchor_row) {
        kv.push_back({"anchor_row", std::to_string(rep.rows[*rep.anchor_row].index)});
        kv.push_back({"anchor_scale", cell(rep.anchor.scale)});
        kv.push_back({"anchor_sigma", cell(rep.anchor.sigma)});
    }
    return io::key_values(kv, "sweep summary");
}

std::string squash_csv(const std::vector<SquashRow>& rows) {
    io::Table t;
    t.header_lines = {"noise squashing; in-loop minimum over S_imp and true motion over its force-driven part"};
    t.columns = {"gamma_fb_hz", "stable", "freq_at_min_hz", "inloop_over_imp", "true_over_force", "true_over_force_min"};
    for (const auto& r : rows)
        t.rows.push_back({r.gamma_fb / kTwoPi, r.stable ? 1.0 : 0.0, r.omega_at_min / kTwoPi, r.inloop_over_imp,
                          r.true_over_force, r.true_over_force_min});
    return io::table_to_csv(t);
}

ReportFiles emit_report(const SweepReport& rep, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
    ReportFiles f;
    f.rows = (fs::path(dir) / "sweep_rows.csv").string();
    f.curves = (fs::path(dir) / "theory_curves.csv").string();
    f.config = (fs::path(dir) / "config_echo.json").string();
    f.summary = (fs::path(dir) / "summary.txt").string();
    io::write_atomic(f.rows, rows_csv(rep));
    io::write_atomic(f.curves, curves_csv(rep));
    io::write_atomic(f.config, rep.config_echo);
    io::write_atomic(f.summary, summary_text(rep));
    return f;
}

}  // namespace levcool
