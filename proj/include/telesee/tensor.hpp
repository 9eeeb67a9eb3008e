#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace telesee {

// Dense double-precision kernels used by the model. Row-major throughout.
// Loop orders keep the innermost stride at 1 so -O3 can vectorize.

// C += A(M×K) · B(K×N)
inline void matmul_acc(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C = A(M×K) · B(K×N)
inline void matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  std::fill(c, c + m * n, 0.0);
  matmul_acc(a, b, c, m, k, n);
}

// C += A(M×K) · B(N×K)ᵀ  -> M×N
inline void matmul_bt_acc(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double sum = 0.0;
      for (size_t p = 0; p < k; ++p) sum += ai[p] * bj[p];
      ci[j] += sum;
    }
  }
}

inline void matmul_bt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  std::fill(c, c + m * n, 0.0);
  matmul_bt_acc(a, b, c, m, k, n);
}

// C += A(M×K)ᵀ · B(M×N)  -> K×N
inline void matmul_at_acc(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (size_t p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

inline void add_inplace(double* a, const double* b, size_t n) {
  for (size_t i = 0; i < n; ++i) a[i] += b[i];
}

// GELU (tanh approximation) and its exact derivative.
inline double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return 0.5 * x * (1.0 + std::tanh(c * (x + a * x * x * x)));
}

inline double gelu_grad(double x) {
  constexpr double c = 0.7978845608028654;
  constexpr double a = 0.044715;
  double u = c * (x + a * x * x * x);
  double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * a * x * x);
}

}  // namespace telesee
