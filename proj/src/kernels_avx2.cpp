// AVX2+FMA kernel variants. This TU is the only one compiled with -mavx2; it
// must not be entered unless cpu_has_avx2() returned true.

#include <cstddef>

#include "cbfkit/kernels.hpp"

#ifdef CBFKIT_BUILD_AVX2

#include <immintrin.h>

#include <cmath>

namespace cbfkit::kernels {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

double dot_v(std::size_t n, const double* x, const double* y) {
    __m256d s0 = _mm256_setzero_pd();
    __m256d s1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
    }
    for (; i + 4 <= n; i += 4)
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    double s = hsum(_mm256_add_pd(s0, s1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_v(std::size_t n, double a, const double* x, double* y) {
    __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void scale_v(std::size_t n, double a, double* x) {
    __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

void vmul_v(std::size_t n, const double* x, const double* y, double* out) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void vmul_acc_v(std::size_t n, const double* x, const double* y, double* out) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i),
                                                  _mm256_loadu_pd(out + i)));
    for (; i < n; ++i) out[i] += x[i] * y[i];
}

void vmul3_acc_v(std::size_t n, double s, const double* x, const double* y, const double* z,
                 double* out) {
    __m256d sv = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xy = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        __m256d xyz = _mm256_mul_pd(xy, _mm256_loadu_pd(z + i));
        _mm256_storeu_pd(out + i, _mm256_fmadd_pd(sv, xyz, _mm256_loadu_pd(out + i)));
    }
    for (; i < n; ++i) out[i] += s * x[i] * y[i] * z[i];
}

// exp on [-709, 709], Cody-Waite reduction plus the classic rational kernel
// (expm1-style 2x/(Q-P) form). Good to ~1 ulp on the tanh argument range.
inline __m256d exp_pd(__m256d x) {
    const __m256d max_x = _mm256_set1_pd(709.0);
    const __m256d min_x = _mm256_set1_pd(-709.0);
    x = _mm256_min_pd(_mm256_max_pd(x, min_x), max_x);

    const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
    const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
    const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);
    __m256d nf = _mm256_floor_pd(_mm256_fmadd_pd(x, log2e, _mm256_set1_pd(0.5)));
    __m256d r = _mm256_fnmadd_pd(nf, c1, x);
    r = _mm256_fnmadd_pd(nf, c2, r);
    __m256d r2 = _mm256_mul_pd(r, r);

    __m256d p = _mm256_set1_pd(1.26177193074810590878e-4);
    p = _mm256_fmadd_pd(p, r2, _mm256_set1_pd(3.02994407707441961300e-2));
    p = _mm256_fmadd_pd(p, r2, _mm256_set1_pd(9.99999999999999999910e-1));
    __m256d px = _mm256_mul_pd(r, p);

    __m256d q = _mm256_set1_pd(3.00198505138664455042e-6);
    q = _mm256_fmadd_pd(q, r2, _mm256_set1_pd(2.52448340349684104192e-3));
    q = _mm256_fmadd_pd(q, r2, _mm256_set1_pd(2.27265548208155028766e-1));
    q = _mm256_fmadd_pd(q, r2, _mm256_set1_pd(2.00000000000000000005e0));

    __m256d e = _mm256_div_pd(px, _mm256_sub_pd(q, px));
    e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), e, _mm256_set1_pd(1.0));

    // scale by 2^n via exponent bits; |n| <= 1023 after the clamp above
    __m128i n32 = _mm256_cvtpd_epi32(nf);
    __m256i n64 = _mm256_cvtepi32_epi64(n32);
    __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
    return _mm256_mul_pd(e, _mm256_castsi256_pd(bits));
}

// tanh via (e^{2|x|}-1)/(e^{2|x|}+1) with an odd polynomial below 0.0625
// (the ratio form loses relative accuracy as e^{2x} -> 1) and saturation to
// +-1 above 19.1 (where 1-|tanh| < 2^-53). NaN inputs pass through.
inline __m256d tanh_pd(__m256d x) {
    const __m256d sign_mask = _mm256_set1_pd(-0.0);
    const __m256d one = _mm256_set1_pd(1.0);
    __m256d sign = _mm256_and_pd(x, sign_mask);
    __m256d ax = _mm256_andnot_pd(sign_mask, x);

    __m256d e = exp_pd(_mm256_add_pd(_mm256_min_pd(ax, _mm256_set1_pd(19.5)),
                                     _mm256_min_pd(ax, _mm256_set1_pd(19.5))));
    __m256d main = _mm256_div_pd(_mm256_sub_pd(e, one), _mm256_add_pd(e, one));
    main = _mm256_or_pd(main, sign);

    __m256d x2 = _mm256_mul_pd(x, x);
    __m256d p = _mm256_set1_pd(-1382.0 / 155925.0);
    p = _mm256_fmadd_pd(p, x2, _mm256_set1_pd(62.0 / 2835.0));
    p = _mm256_fmadd_pd(p, x2, _mm256_set1_pd(-17.0 / 315.0));
    p = _mm256_fmadd_pd(p, x2, _mm256_set1_pd(2.0 / 15.0));
    p = _mm256_fmadd_pd(p, x2, _mm256_set1_pd(-1.0 / 3.0));
    __m256d tiny = _mm256_fmadd_pd(_mm256_mul_pd(x, x2), p, x);

    __m256d r = _mm256_blendv_pd(main, tiny,
                                 _mm256_cmp_pd(ax, _mm256_set1_pd(0.0625), _CMP_LT_OQ));
    r = _mm256_blendv_pd(r, _mm256_or_pd(one, sign),
                         _mm256_cmp_pd(ax, _mm256_set1_pd(19.1), _CMP_GT_OQ));
    return _mm256_blendv_pd(r, x, _mm256_cmp_pd(x, x, _CMP_UNORD_Q));
}

void tanh_fwd_v(std::size_t n, const double* a, double* t, double* d) {
    const __m256d one = _mm256_set1_pd(1.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d ti = tanh_pd(_mm256_loadu_pd(a + i));
        _mm256_storeu_pd(t + i, ti);
        _mm256_storeu_pd(d + i, _mm256_fnmadd_pd(ti, ti, one));
    }
    for (; i < n; ++i) {
        double ti = std::tanh(a[i]);
        t[i] = ti;
        d[i] = 1.0 - ti * ti;
    }
}

void affine_v(std::size_t m, std::size_t n, const double* W, const double* b, const double* z,
              double* out) {
    for (std::size_t i = 0; i < m; ++i) out[i] = b[i] + dot_v(n, W + i * n, z);
}

void matvec_v(std::size_t m, std::size_t n, const double* W, const double* z, double* out) {
    for (std::size_t i = 0; i < m; ++i) out[i] = dot_v(n, W + i * n, z);
}

void matvec_t_v(std::size_t m, std::size_t n, const double* W, const double* x, double* out) {
    for (std::size_t j = 0; j < n; ++j) out[j] = 0.0;
    for (std::size_t i = 0; i < m; ++i) axpy_v(n, x[i], W + i * n, out);
}

void ger_acc_v(std::size_t m, std::size_t n, double alpha, const double* x, const double* y,
               double* A) {
    for (std::size_t i = 0; i < m; ++i) axpy_v(n, alpha * x[i], y, A + i * n);
}

void adam_update_v(std::size_t n, const double* g, double* m1, double* v1, double* p, double lr,
                   double b1, double b2, double eps, double inv_bc1, double inv_bc2) {
    const __m256d b1v = _mm256_set1_pd(b1);
    const __m256d ob1 = _mm256_set1_pd(1.0 - b1);
    const __m256d b2v = _mm256_set1_pd(b2);
    const __m256d ob2 = _mm256_set1_pd(1.0 - b2);
    const __m256d lrv = _mm256_set1_pd(lr);
    const __m256d epsv = _mm256_set1_pd(eps);
    const __m256d bc1 = _mm256_set1_pd(inv_bc1);
    const __m256d bc2 = _mm256_set1_pd(inv_bc2);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d gv = _mm256_loadu_pd(g + i);
        __m256d mv = _mm256_fmadd_pd(ob1, gv, _mm256_mul_pd(b1v, _mm256_loadu_pd(m1 + i)));
        __m256d vv = _mm256_fmadd_pd(ob2, _mm256_mul_pd(gv, gv),
                                     _mm256_mul_pd(b2v, _mm256_loadu_pd(v1 + i)));
        _mm256_storeu_pd(m1 + i, mv);
        _mm256_storeu_pd(v1 + i, vv);
        __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vv, bc2)), epsv);
        __m256d step = _mm256_div_pd(_mm256_mul_pd(lrv, _mm256_mul_pd(mv, bc1)), denom);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
    }
    for (; i < n; ++i) {
        m1[i] = b1 * m1[i] + (1.0 - b1) * g[i];
        v1[i] = b2 * v1[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (m1[i] * inv_bc1) / (std::sqrt(v1[i] * inv_bc2) + eps);
    }
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable table = {
        "avx2",    dot_v,    axpy_v,    scale_v,    vmul_v,    vmul_acc_v,    vmul3_acc_v,
        tanh_fwd_v, affine_v, matvec_v, matvec_t_v, ger_acc_v, adam_update_v,
    };
    return &table;
}

}  // namespace cbfkit::kernels

#else

namespace cbfkit::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace cbfkit::kernels

#endif
