// fft.hpp: thin FFTW wrapper (complex transforms + orthonormal DCTs).
#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <map>
#include <mutex>
#include <vector>

#include "earshot/common.hpp"

namespace earshot {
namespace detail {

// FFTW plan creation is not thread safe; execution through the new-array
// interface is. Plans are created once per (size, direction/kind) with
// FFTW_UNALIGNED so they accept caller-owned buffers.
struct PlanCache {
  std::mutex mu;
  std::map<std::pair<int, int>, fftw_plan> c2c;   // (n, sign)
  std::map<std::pair<int, int>, fftw_plan> r2r;   // (n, kind)

  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get_c2c(int n, int sign) {
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(n, sign);
    auto it = c2c.find(key);
    if (it != c2c.end()) return it->second;
    std::vector<cplx> in(n), out(n);
    fftw_plan p = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(in.data()),
                                   reinterpret_cast<fftw_complex*>(out.data()), sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    c2c.emplace(key, p);
    return p;
  }

  fftw_plan get_r2r(int n, fftw_r2r_kind kind) {
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(n, static_cast<int>(kind));
    auto it = r2r.find(key);
    if (it != r2r.end()) return it->second;
    std::vector<double> in(n), out(n);
    fftw_plan p =
        fftw_plan_r2r_1d(n, in.data(), out.data(), kind, FFTW_ESTIMATE | FFTW_UNALIGNED);
    r2r.emplace(key, p);
    return p;
  }
};

}  // namespace detail

/// Forward DFT, X[k] = sum_n x[n] e^{-j 2 pi k n / N}. No normalisation.
inline std::vector<cplx> fft_forward(const std::vector<cplx>& x) {
  const int n = static_cast<int>(x.size());
  std::vector<cplx> out(n);
  std::vector<cplx> in(x);  // FFTW may not accept const input
  fftw_execute_dft(detail::PlanCache::instance().get_c2c(n, FFTW_FORWARD),
                   reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

/// Inverse DFT with 1/N normalisation, so fft_inverse(fft_forward(x)) == x.
inline std::vector<cplx> fft_inverse(const std::vector<cplx>& X) {
  const int n = static_cast<int>(X.size());
  std::vector<cplx> out(n);
  std::vector<cplx> in(X);
  fftw_execute_dft(detail::PlanCache::instance().get_c2c(n, FFTW_BACKWARD),
                   reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  const double s = 1.0 / n;
  for (auto& v : out) v *= s;
  return out;
}

/// Forward DFT of a real signal; full N complex bins (conjugate symmetric).
inline std::vector<cplx> fft_forward_real(const std::vector<double>& x) {
  std::vector<cplx> in(x.size());
  for (size_t i = 0; i < x.size(); ++i) in[i] = cplx(x[i], 0.0);
  return fft_forward(in);
}

/// Real part of the inverse DFT (input assumed conjugate symmetric).
inline std::vector<double> fft_inverse_real(const std::vector<cplx>& X) {
  std::vector<cplx> t = fft_inverse(X);
  std::vector<double> out(t.size());
  for (size_t i = 0; i < t.size(); ++i) out[i] = t[i].real();
  return out;
}

/// Orthonormal DCT-II. Satisfies dct3(dct2(x)) == x and preserves the L2 norm.
inline std::vector<double> dct2_orthonormal(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  std::vector<double> out(n);
  std::vector<double> in(x);
  fftw_execute_r2r(detail::PlanCache::instance().get_r2r(n, FFTW_REDFT10), in.data(),
                   out.data());
  // FFTW REDFT10 is unnormalised: Y[k] = 2 sum x[n] cos(pi (n + 1/2) k / N),
  // so the orthonormal coefficients are Y[k] / sqrt(2N), with an extra
  // 1/sqrt(2) on k = 0.
  const double s = std::sqrt(1.0 / (2.0 * n));
  for (int k = 0; k < n; ++k) out[k] *= s;
  out[0] /= std::sqrt(2.0);
  return out;
}

/// Orthonormal DCT-III (inverse of dct2_orthonormal).
inline std::vector<double> dct3_orthonormal(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  std::vector<double> in(x);
  // Undo the orthonormal scaling so FFTW's REDFT01 (whose composition with
  // REDFT10 equals 2n * identity) restores the original samples.
  const double s = std::sqrt(1.0 / (2.0 * n));
  for (int k = 0; k < n; ++k) in[k] *= s;
  in[0] *= std::sqrt(2.0);
  std::vector<double> out(n);
  fftw_execute_r2r(detail::PlanCache::instance().get_r2r(n, FFTW_REDFT01), in.data(),
                   out.data());
  return out;
}

}  // namespace earshot
