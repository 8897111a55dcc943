#pragma once

#include <cstddef>

// Arithmetic primitives behind the embedding math. Scalar reference
// implementations always exist; an AVX2+FMA variant is selected at runtime
// when the CPU supports it. Selection is process-wide and stable for the
// lifetime of a run, so repeated runs on one machine are bit-reproducible.
//
// Override order: set_backend() > GEN_KERNELS env (scalar|avx2|auto) > auto.

namespace gen::kernels {

enum class Backend { Auto, Scalar, Avx2 };

void set_backend(Backend b);   // throws if the requested backend is unavailable
Backend active_backend();      // resolved backend (never Auto)
const char* backend_name();
bool avx2_available();

// sum_i a[i]*b[i]
double dot(const double* a, const double* b, std::size_t n);
// sum_i a[i]*b[i]*c[i]
double dot3(const double* a, const double* b, const double* c, std::size_t n);
// sum_i (a[i]-b[i])^2
double sq_dist(const double* a, const double* b, std::size_t n);
// sum_i (h[i]+r[i]-t[i])^2, the TransE residual
double trans_sq(const double* h, const double* r, const double* t,
                std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
// One Adam update over n contiguous entries. bc1/bc2 are the bias
// corrections 1-beta1^t and 1-beta2^t for the global step t.
void adam_step(double* p, const double* g, double* m, double* v, std::size_t n,
               double lr, double beta1, double beta2, double eps, double bc1,
               double bc2);

// Row-composed helpers. These loop over rows and call the dispatched
// primitives, so scalar and SIMD builds share the same summation structure.

// y += M x, M row-major rows x cols, x len cols, y len rows
inline void gemv_acc(const double* m, std::size_t rows, std::size_t cols,
                     const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] += dot(m + r * cols, x, cols);
}

// y += M^T x, x len rows, y len cols
inline void gemv_t_acc(const double* m, std::size_t rows, std::size_t cols,
                       const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) axpy(x[r], m + r * cols, y, cols);
}

// M += alpha * u v^T, u len rows, v len cols
inline void outer_acc(double* m, std::size_t rows, std::size_t cols,
                      double alpha, const double* u, const double* v) {
  for (std::size_t r = 0; r < rows; ++r)
    axpy(alpha * u[r], v, m + r * cols, cols);
}

// Reference implementations, exposed so equivalence tests can compare the
// dispatched path against them directly.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double dot3(const double* a, const double* b, const double* c, std::size_t n);
double sq_dist(const double* a, const double* b, std::size_t n);
double trans_sq(const double* h, const double* r, const double* t,
                std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void adam_step(double* p, const double* g, double* m, double* v, std::size_t n,
               double lr, double beta1, double beta2, double eps, double bc1,
               double bc2);
}  // namespace scalar

}  // namespace gen::kernels
