#include "levcool/fft.hpp"

#include <fftw3.h>

#include <map>
#include <memory>
#include <mutex>
#include <utility>

namespace levcool::fft {

namespace {

std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

struct Plan {
    fftw_plan plan = nullptr;
    fftw_complex* in = nullptr;
    fftw_complex* out = nullptr;
    std::size_t n = 0;

    Plan(std::size_t size, int sign) : n(size) {
        std::lock_guard<std::mutex> lock(planner_mutex());
        in = fftw_alloc_complex(n);
        out = fftw_alloc_complex(n);
        plan = fftw_plan_dft_1d(static_cast<int>(n), in, out, sign, FFTW_ESTIMATE);
    }
    ~Plan() {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(plan);
        fftw_free(in);
        fftw_free(out);
    }
    Plan(const Plan&) = delete;
    Plan& operator=(const Plan&) = delete;
};

// Plans are cached per thread so execution never races on the buffers.
Plan& get_plan(std::size_t n, int sign) {
    thread_local std::map<std::pair<std::size_t, int>, std::unique_ptr<Plan>> cache;
    auto key = std::make_pair(n, sign);
    auto it = cache.find(key);
    if (it == cache.end()) {
        if (cache.size() > 16) cache.clear();
        it = cache.emplace(key, std::make_unique<Plan>(n, sign)).first;
    }
    return *it->second;
}

void run(const std::complex<double>* in, std::complex<double>* out, std::size_t n, int sign) {
    if (n == 0) return;
    Plan& p = get_plan(n, sign);
    auto* pin = reinterpret_cast<std::complex<double>*>(p.in);
    std::copy(in, in + n, pin);
    fftw_execute(p.plan);
    auto* pout = reinterpret_cast<std::complex<double>*>(p.out);
    std::copy(pout, pout + n, out);
}

}  // namespace

void forward(const std::complex<double>* in, std::complex<double>* out, std::size_t n) {
    run(in, out, n, FFTW_FORWARD);
}

void backward(const std::complex<double>* in, std::complex<double>* out, std::size_t n) {
    run(in, out, n, FFTW_BACKWARD);
}

std::vector<std::complex<double>> forward(const std::vector<std::complex<double>>& x) {
    std::vector<std::complex<double>> y(x.size());
    forward(x.data(), y.data(), x.size());
    return y;
}

std::vector<std::complex<double>> backward(const std::vector<std::complex<double>>& x) {
    std::vector<std::complex<double>> y(x.size());
    backward(x.data(), y.data(), x.size());
    return y;
}

std::size_t good_size(std::size_t n) {
    if (n <= 1) return 1;
    for (std::size_t m = n;; ++m) {
        std::size_t r = m;
        for (std::size_t f : {2u, 3u, 5u, 7u})
            while (r % f == 0) r /= f;
        if (r == 1) return m;
    }
}

}  // namespace levcool::fft
