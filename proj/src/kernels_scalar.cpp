#include <cmath>
#include <cstddef>

#include "cbfkit/kernels.hpp"

namespace cbfkit::kernels {
namespace {

double dot_s(std::size_t n, const double* x, const double* y) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_s(std::size_t n, double a, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_s(std::size_t n, double a, double* x) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void vmul_s(std::size_t n, const double* x, const double* y, double* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void vmul_acc_s(std::size_t n, const double* x, const double* y, double* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] += x[i] * y[i];
}

void vmul3_acc_s(std::size_t n, double s, const double* x, const double* y, const double* z,
                 double* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] += s * x[i] * y[i] * z[i];
}

void tanh_fwd_s(std::size_t n, const double* a, double* t, double* d) {
    for (std::size_t i = 0; i < n; ++i) {
        double ti = std::tanh(a[i]);
        t[i] = ti;
        d[i] = 1.0 - ti * ti;
    }
}

void affine_s(std::size_t m, std::size_t n, const double* W, const double* b, const double* z,
              double* out) {
    for (std::size_t i = 0; i < m; ++i) out[i] = b[i] + dot_s(n, W + i * n, z);
}

void matvec_s(std::size_t m, std::size_t n, const double* W, const double* z, double* out) {
    for (std::size_t i = 0; i < m; ++i) out[i] = dot_s(n, W + i * n, z);
}

void matvec_t_s(std::size_t m, std::size_t n, const double* W, const double* x, double* out) {
    for (std::size_t j = 0; j < n; ++j) out[j] = 0.0;
    for (std::size_t i = 0; i < m; ++i) axpy_s(n, x[i], W + i * n, out);
}

void ger_acc_s(std::size_t m, std::size_t n, double alpha, const double* x, const double* y,
               double* A) {
    for (std::size_t i = 0; i < m; ++i) axpy_s(n, alpha * x[i], y, A + i * n);
}

void adam_update_s(std::size_t n, const double* g, double* m1, double* v1, double* p, double lr,
                   double b1, double b2, double eps, double inv_bc1, double inv_bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        m1[i] = b1 * m1[i] + (1.0 - b1) * g[i];
        v1[i] = b2 * v1[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (m1[i] * inv_bc1) / (std::sqrt(v1[i] * inv_bc2) + eps);
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table = {
        "scalar",  dot_s,    axpy_s,     scale_s,   vmul_s,    vmul_acc_s,    vmul3_acc_s,
        tanh_fwd_s, affine_s, matvec_s,  matvec_t_s, ger_acc_s, adam_update_s,
    };
    return table;
}

bool all_finite(std::size_t n, const double* x) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i])) return false;
    }
    return true;
}

double abs_max(std::size_t n, const double* x) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double a = std::fabs(x[i]);
        if (a > m) m = a;
    }
    return m;
}

}  // namespace cbfkit::kernels
