#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "levcool/errors.hpp"
#include "levcool/estimate.hpp"
#include "levcool/harness.hpp"
#include "levcool/io.hpp"
#include "levcool/simulate.hpp"
#include "levcool/spectral.hpp"

namespace py = pybind11;
using namespace levcool;

namespace {

py::array_t<double> real_array(const std::vector<cplx>& v) {
    py::array_t<double> a(static_cast<py::ssize_t>(v.size()));
    auto m = a.mutable_unchecked<1>();
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<py::ssize_t>(i)) = v[i].real();
    return a;
}

py::array_t<cplx> complex_array(const std::vector<cplx>& v) {
    return py::array_t<cplx>(static_cast<py::ssize_t>(v.size()), v.data());
}

py::array_t<double> arr(const std::vector<double>& v) {
    return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
}

py::dict trace_dict(const TimeTrace& t) {
    py::dict d;
    d["sample_rate"] = t.sample_rate;
    d["samples"] = t.is_complex ? py::object(complex_array(t.samples)) : py::object(real_array(t.samples));
    d["label"] = t.label;
    d["demod_hz"] = t.demod_hz;
    return d;
}

}  // namespace

PYBIND11_MODULE(_levcool, m) {
    m.doc() = "Feedback-cooled levitated oscillator: models, simulation and thermometry";

    static py::exception<NumericalError> numerical(m, "NumericalError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const InvalidArgument& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const NumericalError& e) {
            py::set_error(numerical, e.what());
        } catch (const IoError& e) {
            PyErr_SetString(PyExc_OSError, e.what());
        }
    });

    m.attr("HBAR") = kHbar;

    py::class_<OscillatorParams>(m, "OscillatorParams")
        .def(py::init<double, double, double>(), py::arg("mass"), py::arg("omega_z"), py::arg("gamma_m"))
        .def_property_readonly("mass", &OscillatorParams::mass)
        .def_property_readonly("omega_z", &OscillatorParams::omega_z)
        .def_property_readonly("gamma_m", &OscillatorParams::gamma_m)
        .def_property_readonly("z_zpf", &OscillatorParams::z_zpf);

    py::class_<RateBudget>(m, "RateBudget")
        .def(py::init<>())
        .def_readwrite("gamma_qba", &RateBudget::gamma_qba)
        .def_readwrite("gamma_exc", &RateBudget::gamma_exc)
        .def_readwrite("eta_d", &RateBudget::eta_d)
        .def_readwrite("gamma_tot", &RateBudget::gamma_tot)
        .def_readwrite("gamma_meas", &RateBudget::gamma_meas)
        .def_readwrite("eta_meas", &RateBudget::eta_meas)
        .def_readwrite("c_q", &RateBudget::c_q);

    m.def("rates_from_budget", &rates_from_budget, py::arg("gamma_qba"), py::arg("gamma_exc"), py::arg("eta_d"));
    m.def("budget_from_rates", &budget_from_rates, py::arg("gamma_meas"), py::arg("gamma_tot"), py::arg("c_q") = 3.0);
    m.def("susceptibility", &susceptibility, py::arg("omega"), py::arg("params"), py::arg("gamma"));
    m.def("force_psd_total", &force_psd_total);
    m.def("imprecision_psd", &imprecision_psd);
    m.def("cold_damping_occupation", &cold_damping_occupation, py::arg("gamma_eff"), py::arg("budget"));
    m.def("optimal_gamma", &optimal_gamma);
    m.def("conditional_occupation", &conditional_occupation);

    py::class_<Spectrum>(m, "Spectrum")
        .def(py::init<>())
        .def_property(
            "grid", [](const Spectrum& s) { return arr(s.grid); },
            [](Spectrum& s, std::vector<double> v) { s.grid = std::move(v); })
        .def_property(
            "values", [](const Spectrum& s) { return arr(s.values); },
            [](Spectrum& s, std::vector<double> v) { s.values = std::move(v); })
        .def_readwrite("n_averages", &Spectrum::n_averages)
        .def_readwrite("metadata", &Spectrum::metadata);

    py::class_<ThermometryResult>(m, "ThermometryResult")
        .def_readonly("n_bar", &ThermometryResult::n_bar)
        .def_readonly("sigma", &ThermometryResult::sigma)
        .def_readonly("below_zero", &ThermometryResult::below_zero)
        .def_readonly("unphysical", &ThermometryResult::unphysical)
        .def_readonly("flags", &ThermometryResult::flags)
        .def_property_readonly("method", [](const ThermometryResult& t) { return to_string(t.method); });

    py::class_<FitResult>(m, "FitResult")
        .def_readonly("names", &FitResult::names)
        .def_readonly("values", &FitResult::values)
        .def_readonly("sigmas", &FitResult::sigmas)
        .def_readonly("chi2_reduced", &FitResult::chi2_reduced)
        .def_readonly("flags", &FitResult::flags)
        .def("value", &FitResult::value)
        .def("sigma", &FitResult::sigma);

    py::class_<FilterChain>(m, "FilterChain")
        .def_property_readonly("total_delay", &FilterChain::total_delay)
        .def_readwrite("overall_gain", &FilterChain::overall_gain);
    m.def("paper_chain", &paper_chain, py::arg("tau_s"));
    m.def("pure_delay_chain", &pure_delay_chain, py::arg("tau_s"));
    m.def("smallest_stable_delay", &smallest_stable_delay, py::arg("params"), py::arg("n") = 0);
    m.def("stability_check",
          [](const OscillatorParams& p, const FilterChain& chain, double gamma_fb) {
              auto r = stability_check(p, chain.with_gamma_fb(p, gamma_fb));
              return py::make_tuple(r.stable, r.margin, r.encirclements);
          },
          py::arg("params"), py::arg("chain"), py::arg("gamma_fb"));

    m.def(
        "simulate_closed_loop",
        [](const OscillatorParams& p, const RateBudget& b, const FilterChain& chain, double gamma_fb,
           double duration, std::uint64_t seed, bool imprecision_on, int decimation, bool allow_unstable) {
            SimConfig c;
            c.params = p;
            c.budget = b;
            c.chain = chain;
            c.gamma_fb = gamma_fb;
            c.duration = duration;
            c.seed = seed;
            c.imprecision_on = imprecision_on;
            c.output_decimation = decimation;
            c.allow_unstable = allow_unstable;
            SimResult r;
            {
                py::gil_scoped_release nogil;
                r = simulate_closed_loop(c);
            }
            py::dict d;
            d["z"] = trace_dict(r.z);
            d["i_hom"] = trace_dict(r.i_hom);
            d["delay_samples"] = r.delay.samples;
            return d;
        },
        py::arg("params"), py::arg("budget"), py::arg("chain"), py::arg("gamma_fb"), py::arg("duration"),
        py::arg("seed") = 1, py::arg("imprecision_on") = true, py::arg("decimation") = 1,
        py::arg("allow_unstable") = false);

    m.def(
        "estimate_psd",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> x, double sample_rate, std::size_t segment) {
            std::vector<double> v(x.data(), x.data() + x.size());
            return estimate_psd(make_real_trace(std::move(v), sample_rate, "custom"), segment);
        },
        py::arg("samples"), py::arg("sample_rate"), py::arg("segment"));

    m.def(
        "synthesize_heterodyne",
        [](const OscillatorParams& p, double n_bar, double gamma_eff, double duration, double bg_r, double bg_b,
           std::uint64_t seed, int lo_sign) {
            HetSynthConfig c;
            c.params = p;
            c.n_bar = n_bar;
            c.gamma_eff = gamma_eff;
            c.duration = duration;
            c.bg_r = bg_r;
            c.bg_b = bg_b;
            c.seed = seed;
            c.lo_sign = lo_sign;
            HetTraces t;
            {
                py::gil_scoped_release nogil;
                t = synthesize_heterodyne(c);
            }
            py::dict d;
            d["i_r"] = trace_dict(t.i_r);
            d["i_b"] = trace_dict(t.i_b);
            d["i_car"] = trace_dict(t.i_car);
            return d;
        },
        py::arg("params"), py::arg("n_bar"), py::arg("gamma_eff"), py::arg("duration"), py::arg("bg_r"),
        py::arg("bg_b"), py::arg("seed") = 1, py::arg("lo_sign") = 1);

    m.def(
        "sideband_asymmetry",
        [](py::array_t<cplx, py::array::c_style | py::array::forcecast> i_r,
           py::array_t<cplx, py::array::c_style | py::array::forcecast> i_b, double sample_rate, double demod_hz,
           std::size_t segment, double band_hz) {
            auto mk = [&](const py::array_t<cplx, py::array::c_style | py::array::forcecast>& a, const char* label) {
                TimeTrace t;
                t.sample_rate = sample_rate;
                t.samples.assign(a.data(), a.data() + a.size());
                t.is_complex = true;
                t.demod_hz = demod_hz;
                t.label = label;
                return t;
            };
            CrossPsd cp = estimate_cross_psd(mk(i_r, "i_r"), mk(i_b, "i_b"), segment);
            double c = kTwoPi * demod_hz, w = kTwoPi * band_hz;
            FitResult f = fit_sideband_pair(crop(cp.s_rr, c - w, c + w), crop(cp.s_bb, c - w, c + w), FrequencyMask());
            return py::make_tuple(asymmetry_from_fit(f), f);
        },
        py::arg("i_r"), py::arg("i_b"), py::arg("sample_rate"), py::arg("demod_hz"), py::arg("segment") = 16384,
        py::arg("band_hz") = 28e3);

    m.def("reference_from_truth", &reference_from_truth);
    m.def(
        "true_occupation",
        [](const OscillatorParams& p, const RateBudget& b, const FilterChain& chain, double gamma_fb) {
            auto grid = occupation_grid(p, p.gamma_m() + gamma_fb);
            grid.push_back(12.0 * p.omega_z());
            grid.insert(grid.begin(), p.omega_z() / 60.0);
            auto t = true_occupation(p, b, gamma_fb, tabulate(chain.unit_gain(), grid));
            return py::make_tuple(t.n_bar, t.gamma_eff, t.omega_eff);
        },
        py::arg("params"), py::arg("budget"), py::arg("chain"), py::arg("gamma_fb"));

    m.def(
        "squashing_table",
        [](const std::string& config_json) {
            auto cfg = config_json.empty() ? default_config() : config_from_json(config_json);
            py::list out;
            for (auto& r : run_squashing_demo(cfg)) {
                py::dict d;
                d["gamma_fb"] = r.gamma_fb;
                d["stable"] = r.stable;
                d["inloop_over_imp"] = r.inloop_over_imp;
                d["true_over_force"] = r.true_over_force;
                d["true_over_force_min"] = r.true_over_force_min;
                out.append(d);
            }
            return out;
        },
        py::arg("config_json") = "");
    m.def("default_config_json", [] { return config_to_json(default_config()); });
}
