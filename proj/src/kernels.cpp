#include "gen/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "gen/error.hpp"

namespace gen::kernels {

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double*, const double*, std::size_t);
double dot3(const double*, const double*, const double*, std::size_t);
double sq_dist(const double*, const double*, std::size_t);
double trans_sq(const double*, const double*, const double*, std::size_t);
void axpy(double, const double*, double*, std::size_t);
void adam_step(double*, const double*, double*, double*, std::size_t, double,
               double, double, double, double, double);
}  // namespace avx2
#endif

namespace {

struct Table {
  double (*dot)(const double*, const double*, std::size_t);
  double (*dot3)(const double*, const double*, const double*, std::size_t);
  double (*sq_dist)(const double*, const double*, std::size_t);
  double (*trans_sq)(const double*, const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*adam_step)(double*, const double*, double*, double*, std::size_t,
                    double, double, double, double, double, double);
};

constexpr Table kScalar = {scalar::dot,      scalar::dot3, scalar::sq_dist,
                           scalar::trans_sq, scalar::axpy, scalar::adam_step};

#if defined(__x86_64__) || defined(_M_X64)
constexpr Table kAvx2 = {avx2::dot,      avx2::dot3, avx2::sq_dist,
                         avx2::trans_sq, avx2::axpy, avx2::adam_step};
#endif

Table g_table = kScalar;
Backend g_backend = Backend::Scalar;

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && defined(__GNUC__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

void apply(Backend b) {
  if (b == Backend::Auto) b = cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
  if (b == Backend::Avx2) {
    if (!cpu_has_avx2())
      fail(ErrorKind::Config, "AVX2 kernel backend requested but unavailable");
#if defined(__x86_64__) || defined(_M_X64)
    g_table = kAvx2;
    g_backend = Backend::Avx2;
    return;
#endif
  }
  g_table = kScalar;
  g_backend = Backend::Scalar;
}

struct Init {
  Init() {
    Backend b = Backend::Auto;
    if (const char* env = std::getenv("GEN_KERNELS")) {
      if (std::strcmp(env, "scalar") == 0) b = Backend::Scalar;
      else if (std::strcmp(env, "avx2") == 0) b = Backend::Avx2;
    }
    apply(b);
  }
};

Init& init_once() {
  static Init init;
  return init;
}

}  // namespace

void set_backend(Backend b) {
  init_once();
  apply(b);
}

Backend active_backend() {
  init_once();
  return g_backend;
}

const char* backend_name() {
  return active_backend() == Backend::Avx2 ? "avx2" : "scalar";
}

bool avx2_available() { return cpu_has_avx2(); }

double dot(const double* a, const double* b, std::size_t n) {
  init_once();
  return g_table.dot(a, b, n);
}

double dot3(const double* a, const double* b, const double* c, std::size_t n) {
  init_once();
  return g_table.dot3(a, b, c, n);
}

double sq_dist(const double* a, const double* b, std::size_t n) {
  init_once();
  return g_table.sq_dist(a, b, n);
}

double trans_sq(const double* h, const double* r, const double* t,
                std::size_t n) {
  init_once();
  return g_table.trans_sq(h, r, t, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  init_once();
  g_table.axpy(alpha, x, y, n);
}

void adam_step(double* p, const double* g, double* m, double* v, std::size_t n,
               double lr, double beta1, double beta2, double eps, double bc1,
               double bc2) {
  init_once();
  g_table.adam_step(p, g, m, v, n, lr, beta1, beta2, eps, bc1, bc2);
}

}  // namespace gen::kernels
