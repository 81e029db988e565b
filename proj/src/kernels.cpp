#include "lidet/kernels.hpp"

#include <atomic>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lidet::kernels {

namespace {

std::atomic<int> g_max_threads{1};

// Below this many output elements the fork overhead dominates.
constexpr std::int64_t kParallelCutoff = 16 * 1024;

bool use_parallel(std::int64_t work) {
#ifdef _OPENMP
    return g_max_threads.load(std::memory_order_relaxed) > 1 && work >= kParallelCutoff;
#else
    (void)work;
    return false;
#endif
}

} // namespace

void set_max_threads(int n) {
    g_max_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed);
#ifdef _OPENMP
    omp_set_num_threads(n < 1 ? 1 : n);
#endif
}

int max_threads() {
    return g_max_threads.load(std::memory_order_relaxed);
}

// ---------------------------------------------------------------- matmul --

namespace {

inline void matmul_nn_row(const double* a, const double* b, double* c, std::int64_t i,
                          std::int64_t k, std::int64_t n, bool accumulate) {
    double* crow = c + i * n;
    if (!accumulate) {
        std::memset(crow, 0, static_cast<std::size_t>(n) * sizeof(double));
    }
    const double* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b + p * n;
        for (std::int64_t j = 0; j < n; ++j) {
            crow[j] += av * brow[j];
        }
    }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, std::int64_t i,
                          std::int64_t n, std::int64_t k, bool accumulate) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::int64_t j = 0; j < k; ++j) {
        const double* brow = b + j * n;
        double acc = 0.0;
        for (std::int64_t p = 0; p < n; ++p) {
            acc += arow[p] * brow[p];
        }
        crow[j] = accumulate ? crow[j] + acc : acc;
    }
}

// One output row of C[K,N] = A^T * B; sums over m in ascending order.
inline void matmul_tn_row(const double* a, const double* b, double* c, std::int64_t row,
                          std::int64_t m, std::int64_t k, std::int64_t n, bool accumulate) {
    double* crow = c + row * n;
    if (!accumulate) {
        std::memset(crow, 0, static_cast<std::size_t>(n) * sizeof(double));
    }
    for (std::int64_t i = 0; i < m; ++i) {
        const double av = a[i * k + row];
        const double* brow = b + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            crow[j] += av * brow[j];
        }
    }
}

} // namespace

void matmul_nn_serial(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                      std::int64_t n, bool accumulate) {
    for (std::int64_t i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n, accumulate);
}

void matmul_nn_omp(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                   std::int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n, accumulate);
}

void matmul_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate) {
    if (use_parallel(m * n)) {
        matmul_nn_omp(a, b, c, m, k, n, accumulate);
    } else {
        matmul_nn_serial(a, b, c, m, k, n, accumulate);
    }
}

void matmul_nt_serial(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
                      std::int64_t k, bool accumulate) {
    for (std::int64_t i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, n, k, accumulate);
}

void matmul_nt_omp(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
                   std::int64_t k, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, n, k, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
               std::int64_t k, bool accumulate) {
    if (use_parallel(m * k)) {
        matmul_nt_omp(a, b, c, m, n, k, accumulate);
    } else {
        matmul_nt_serial(a, b, c, m, n, k, accumulate);
    }
}

void matmul_tn_serial(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                      std::int64_t n, bool accumulate) {
    for (std::int64_t row = 0; row < k; ++row) matmul_tn_row(a, b, c, row, m, k, n, accumulate);
}

void matmul_tn_omp(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                   std::int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (std::int64_t row = 0; row < k; ++row) matmul_tn_row(a, b, c, row, m, k, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate) {
    if (use_parallel(k * n)) {
        matmul_tn_omp(a, b, c, m, k, n, accumulate);
    } else {
        matmul_tn_serial(a, b, c, m, k, n, accumulate);
    }
}

// ---------------------------------------------------------------- conv2d --

namespace {

inline void conv2d_fwd_pixel(const double* in, const double* w, double* out, const Conv2dDims& d,
                             std::int64_t oy, std::int64_t ox) {
    double* optr = out + (oy * d.w_out + ox) * d.c_out;
    std::memset(optr, 0, static_cast<std::size_t>(d.c_out) * sizeof(double));
    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
        const std::int64_t iy = oy * d.stride - d.pad + ky;
        if (iy < 0 || iy >= d.h_in) continue;
        for (std::int64_t kx = 0; kx < d.kw; ++kx) {
            const std::int64_t ix = ox * d.stride - d.pad + kx;
            if (ix < 0 || ix >= d.w_in) continue;
            const double* iptr = in + (iy * d.w_in + ix) * d.c_in;
            const double* wptr = w + ((ky * d.kw + kx) * d.c_in) * d.c_out;
            for (std::int64_t ci = 0; ci < d.c_in; ++ci) {
                const double iv = iptr[ci];
                const double* wrow = wptr + ci * d.c_out;
                for (std::int64_t co = 0; co < d.c_out; ++co) {
                    optr[co] += iv * wrow[co];
                }
            }
        }
    }
}

inline void conv2d_dx_pixel(const double* dout, const double* w, double* dx, const Conv2dDims& d,
                            std::int64_t iy, std::int64_t ix) {
    double* xptr = dx + (iy * d.w_in + ix) * d.c_in;
    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
        const std::int64_t ty = iy + d.pad - ky;
        if (ty < 0 || ty % d.stride != 0) continue;
        const std::int64_t oy = ty / d.stride;
        if (oy >= d.h_out) continue;
        for (std::int64_t kx = 0; kx < d.kw; ++kx) {
            const std::int64_t tx = ix + d.pad - kx;
            if (tx < 0 || tx % d.stride != 0) continue;
            const std::int64_t ox = tx / d.stride;
            if (ox >= d.w_out) continue;
            const double* gptr = dout + (oy * d.w_out + ox) * d.c_out;
            const double* wptr = w + ((ky * d.kw + kx) * d.c_in) * d.c_out;
            for (std::int64_t ci = 0; ci < d.c_in; ++ci) {
                const double* wrow = wptr + ci * d.c_out;
                double acc = 0.0;
                for (std::int64_t co = 0; co < d.c_out; ++co) {
                    acc += gptr[co] * wrow[co];
                }
                xptr[ci] += acc;
            }
        }
    }
}

// Accumulates one (ky,kx,ci) slab of dw, summing output pixels row-major.
inline void conv2d_dw_slab(const double* in, const double* dout, double* dw, const Conv2dDims& d,
                           std::int64_t ky, std::int64_t kx, std::int64_t ci) {
    double* wrow = dw + (((ky * d.kw + kx) * d.c_in) + ci) * d.c_out;
    for (std::int64_t oy = 0; oy < d.h_out; ++oy) {
        const std::int64_t iy = oy * d.stride - d.pad + ky;
        if (iy < 0 || iy >= d.h_in) continue;
        for (std::int64_t ox = 0; ox < d.w_out; ++ox) {
            const std::int64_t ix = ox * d.stride - d.pad + kx;
            if (ix < 0 || ix >= d.w_in) continue;
            const double iv = in[(iy * d.w_in + ix) * d.c_in + ci];
            const double* gptr = dout + (oy * d.w_out + ox) * d.c_out;
            for (std::int64_t co = 0; co < d.c_out; ++co) {
                wrow[co] += iv * gptr[co];
            }
        }
    }
}

} // namespace

void conv2d_fwd_serial(const double* in, const double* w, double* out, const Conv2dDims& d) {
    for (std::int64_t oy = 0; oy < d.h_out; ++oy)
        for (std::int64_t ox = 0; ox < d.w_out; ++ox) conv2d_fwd_pixel(in, w, out, d, oy, ox);
}

void conv2d_fwd_omp(const double* in, const double* w, double* out, const Conv2dDims& d) {
#pragma omp parallel for schedule(static)
    for (std::int64_t oy = 0; oy < d.h_out; ++oy)
        for (std::int64_t ox = 0; ox < d.w_out; ++ox) conv2d_fwd_pixel(in, w, out, d, oy, ox);
}

void conv2d_fwd(const double* in, const double* w, double* out, const Conv2dDims& d) {
    if (use_parallel(d.h_out * d.w_out * d.c_out)) {
        conv2d_fwd_omp(in, w, out, d);
    } else {
        conv2d_fwd_serial(in, w, out, d);
    }
}

void conv2d_dx_serial(const double* dout, const double* w, double* dx, const Conv2dDims& d) {
    for (std::int64_t iy = 0; iy < d.h_in; ++iy)
        for (std::int64_t ix = 0; ix < d.w_in; ++ix) conv2d_dx_pixel(dout, w, dx, d, iy, ix);
}

void conv2d_dx_omp(const double* dout, const double* w, double* dx, const Conv2dDims& d) {
#pragma omp parallel for schedule(static)
    for (std::int64_t iy = 0; iy < d.h_in; ++iy)
        for (std::int64_t ix = 0; ix < d.w_in; ++ix) conv2d_dx_pixel(dout, w, dx, d, iy, ix);
}

void conv2d_dx(const double* dout, const double* w, double* dx, const Conv2dDims& d) {
    if (use_parallel(d.h_in * d.w_in * d.c_in)) {
        conv2d_dx_omp(dout, w, dx, d);
    } else {
        conv2d_dx_serial(dout, w, dx, d);
    }
}

void conv2d_dw_serial(const double* in, const double* dout, double* dw, const Conv2dDims& d) {
    for (std::int64_t ky = 0; ky < d.kh; ++ky)
        for (std::int64_t kx = 0; kx < d.kw; ++kx)
            for (std::int64_t ci = 0; ci < d.c_in; ++ci) conv2d_dw_slab(in, dout, dw, d, ky, kx, ci);
}

void conv2d_dw_omp(const double* in, const double* dout, double* dw, const Conv2dDims& d) {
    const std::int64_t slabs = d.kh * d.kw * d.c_in;
#pragma omp parallel for schedule(static)
    for (std::int64_t s = 0; s < slabs; ++s) {
        const std::int64_t ky = s / (d.kw * d.c_in);
        const std::int64_t kx = (s / d.c_in) % d.kw;
        const std::int64_t ci = s % d.c_in;
        conv2d_dw_slab(in, dout, dw, d, ky, kx, ci);
    }
}

void conv2d_dw(const double* in, const double* dout, double* dw, const Conv2dDims& d) {
    if (use_parallel(d.kh * d.kw * d.c_in * d.c_out)) {
        conv2d_dw_omp(in, dout, dw, d);
    } else {
        conv2d_dw_serial(in, dout, dw, d);
    }
}

} // namespace lidet::kernels
