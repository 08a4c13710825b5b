#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace levcool::fft {

// Unnormalized forward transform, X_k = sum_n x_n exp(-2 pi i k n / N).
void forward(const std::complex<double>* in, std::complex<double>* out, std::size_t n);
// Unnormalized inverse transform (no 1/N).
void backward(const std::complex<double>* in, std::complex<double>* out, std::size_t n);

std::vector<std::complex<double>> forward(const std::vector<std::complex<double>>& x);
std::vector<std::complex<double>> backward(const std::vector<std::complex<double>>& x);

// Smallest n' >= n whose only prime factors are 2, 3, 5 and 7.
std::size_t good_size(std::size_t n);

}  // namespace levcool::fft
