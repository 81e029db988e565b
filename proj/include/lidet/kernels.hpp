#pragma once

#include <cstdint>

// Hot inner loops of the tensor library. Each kernel has a serial reference
// implementation and an OpenMP variant that parallelizes over independent
// output elements only, so both produce bit-identical results for any thread
// count. The dispatching entry points pick the OpenMP path when the global
// thread count is > 1 and the problem is large enough to amortize the fork.
namespace lidet::kernels {

void set_max_threads(int n);
int max_threads();

// C[M,N] = A[M,K] * B[K,N]  (+= when accumulate)
void matmul_nn_serial(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                      std::int64_t n, bool accumulate);
void matmul_nn_omp(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                   std::int64_t n, bool accumulate);
void matmul_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate);

// C[M,K] = A[M,N] * B[K,N]^T
void matmul_nt_serial(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
                      std::int64_t k, bool accumulate);
void matmul_nt_omp(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
                   std::int64_t k, bool accumulate);
void matmul_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
               std::int64_t k, bool accumulate);

// C[K,N] = A[M,K]^T * B[M,N]
void matmul_tn_serial(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                      std::int64_t n, bool accumulate);
void matmul_tn_omp(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                   std::int64_t n, bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate);

// 2D convolution, channels-last [H][W][C], weights [KH][KW][CI][CO].
struct Conv2dDims {
    std::int64_t h_in, w_in, c_in;
    std::int64_t kh, kw, c_out;
    std::int64_t stride, pad;
    std::int64_t h_out, w_out;
};

void conv2d_fwd_serial(const double* in, const double* w, double* out, const Conv2dDims& d);
void conv2d_fwd_omp(const double* in, const double* w, double* out, const Conv2dDims& d);
void conv2d_fwd(const double* in, const double* w, double* out, const Conv2dDims& d);

// Gradient w.r.t. input (accumulates into dx); gather formulation so every
// element is owned by one loop iteration, which keeps the OpenMP path
// bit-identical to serial.
void conv2d_dx_serial(const double* dout, const double* w, double* dx, const Conv2dDims& d);
void conv2d_dx_omp(const double* dout, const double* w, double* dx, const Conv2dDims& d);
void conv2d_dx(const double* dout, const double* w, double* dx, const Conv2dDims& d);

// Gradient w.r.t. weights (accumulates into dw).
void conv2d_dw_serial(const double* in, const double* dout, double* dw, const Conv2dDims& d);
void conv2d_dw_omp(const double* in, const double* dout, double* dw, const Conv2dDims& d);
void conv2d_dw(const double* in, const double* dout, double* dw, const Conv2dDims& d);

} // namespace lidet::kernels
