#pragma once

#include <complex>
#include <numbers>

namespace nvmem {

using cplx = std::complex<double>;

inline constexpr double two_pi = 2.0 * std::numbers::pi;

// CODATA 2018
inline constexpr double hbar = 1.054571817e-34;       // J s
inline constexpr double mu0 = 1.25663706212e-6;       // N / A^2

// Plain Hz <-> angular frequency. Files carry Hz, everything inside is rad/s.
constexpr double angular(double hz) { return two_pi * hz; }
constexpr double hertz(double omega) { return omega / two_pi; }

}  // namespace nvmem
