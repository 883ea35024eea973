#pragma once

#include <cstddef>

// Hot-loop primitives behind a runtime-dispatched table. The scalar variants
// are the reference semantics; the AVX2 variants must agree with them to
// floating-point reassociation error only (see tests/test_kernels.cpp).
// Selection: CBF_KIT_KERNELS=scalar|avx2 overrides, otherwise the best
// variant the CPU supports. Matrices are row-major with contiguous rows.

namespace cbfkit::kernels {

struct KernelTable {
    const char* name;

    // sum_i x[i]*y[i]
    double (*dot)(std::size_t n, const double* x, const double* y);
    // y += a*x
    void (*axpy)(std::size_t n, double a, const double* x, double* y);
    // x *= a
    void (*scale)(std::size_t n, double a, double* x);
    // out = x.*y
    void (*vmul)(std::size_t n, const double* x, const double* y, double* out);
    // out += x.*y
    void (*vmul_acc)(std::size_t n, const double* x, const double* y, double* out);
    // out += s * x.*y.*z
    void (*vmul3_acc)(std::size_t n, double s, const double* x, const double* y,
                      const double* z, double* out);
    // t = tanh(a), d = 1 - t.^2
    void (*tanh_fwd)(std::size_t n, const double* a, double* t, double* d);
    // out = W*z + b, W is m x n
    void (*affine)(std::size_t m, std::size_t n, const double* W, const double* b,
                   const double* z, double* out);
    // out = W*z
    void (*matvec)(std::size_t m, std::size_t n, const double* W, const double* z, double* out);
    // out = W'*x, out has length n
    void (*matvec_t)(std::size_t m, std::size_t n, const double* W, const double* x, double* out);
    // A += alpha * x*y', A is m x n
    void (*ger_acc)(std::size_t m, std::size_t n, double alpha, const double* x, const double* y,
                    double* A);
    // m1 = b1*m1 + (1-b1)*g; v1 = b2*v1 + (1-b2)*g.^2;
    // p -= lr * (m1*inv_bc1) / (sqrt(v1*inv_bc2) + eps)
    void (*adam_update)(std::size_t n, const double* g, double* m1, double* v1, double* p,
                        double lr, double b1, double b2, double eps, double inv_bc1,
                        double inv_bc2);
};

const KernelTable& scalar_table();
// Null when the build or the CPU lacks AVX2.
const KernelTable* avx2_table();
// Selected table; resolved once per process.
const KernelTable& active();

bool cpu_has_avx2();

inline double dot(std::size_t n, const double* x, const double* y) {
    return active().dot(n, x, y);
}
inline void axpy(std::size_t n, double a, const double* x, double* y) {
    active().axpy(n, a, x, y);
}
inline void scale(std::size_t n, double a, double* x) { active().scale(n, a, x); }
inline void vmul(std::size_t n, const double* x, const double* y, double* out) {
    active().vmul(n, x, y, out);
}
inline void vmul_acc(std::size_t n, const double* x, const double* y, double* out) {
    active().vmul_acc(n, x, y, out);
}
inline void vmul3_acc(std::size_t n, double s, const double* x, const double* y, const double* z,
                      double* out) {
    active().vmul3_acc(n, s, x, y, z, out);
}
inline void tanh_fwd(std::size_t n, const double* a, double* t, double* d) {
    active().tanh_fwd(n, a, t, d);
}
inline void affine(std::size_t m, std::size_t n, const double* W, const double* b, const double* z,
                   double* out) {
    active().affine(m, n, W, b, z, out);
}
inline void matvec(std::size_t m, std::size_t n, const double* W, const double* z, double* out) {
    active().matvec(m, n, W, z, out);
}
inline void matvec_t(std::size_t m, std::size_t n, const double* W, const double* x, double* out) {
    active().matvec_t(m, n, W, x, out);
}
inline void ger_acc(std::size_t m, std::size_t n, double alpha, const double* x, const double* y,
                    double* A) {
    active().ger_acc(m, n, alpha, x, y, A);
}
inline void adam_update(std::size_t n, const double* g, double* m1, double* v1, double* p,
                        double lr, double b1, double b2, double eps, double inv_bc1,
                        double inv_bc2) {
    active().adam_update(n, g, m1, v1, p, lr, b1, b2, eps, inv_bc1, inv_bc2);
}

// True iff every element is finite. Not dispatched; detection must not depend
// on how a variant folds NaNs through min/max.
bool all_finite(std::size_t n, const double* x);

// max_i |x[i]|, ignoring NaNs (diagnostics only; pair with all_finite).
double abs_max(std::size_t n, const double* x);

}  // namespace cbfkit::kernels
