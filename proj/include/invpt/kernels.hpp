#pragma once

#include <cstdint>

// Low-level numeric kernels on raw row-major double buffers. Every kernel
// assigns each output element to exactly one thread and keeps the per-element
// accumulation order fixed, so the parallel entry points are bit-identical to
// the serial references in kern::serial regardless of the thread count.
// Thread count is capped by INVPT_THREADS (default 1) or set_threads().
namespace invpt::kern {

int threads();
void set_threads(int n);  // <=0 restores the INVPT_THREADS/env default

namespace serial {
void matmul_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate);
void matmul_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate);
void conv2d_fwd(const double* x, const double* w, double* y, std::int64_t cin, std::int64_t h,
                std::int64_t wid, std::int64_t cout, std::int64_t kh, std::int64_t kw,
                std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow);
void bilinear_fwd(const double* x, double* y, std::int64_t c, std::int64_t h, std::int64_t w,
                  std::int64_t oh, std::int64_t ow);
void softmax_rows_fwd(const double* a, double* y, std::int64_t m, std::int64_t n);
void avgpool_fwd(const double* x, double* y, std::int64_t c, std::int64_t h, std::int64_t w,
                 std::int64_t k);
}  // namespace serial

// matmul: a is (m,k), b is (k,n) [nn], (n,k) [nt], or a is (k,m) [tn]; c is (m,n).
void matmul_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate = false);
void matmul_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate = false);
void matmul_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate = false);

// conv2d, cross-correlation convention: x (cin,h,w), w (cout,cin,kh,kw), y (cout,oh,ow).
void conv2d_fwd(const double* x, const double* w, double* y, std::int64_t cin, std::int64_t h,
                std::int64_t wid, std::int64_t cout, std::int64_t kh, std::int64_t kw,
                std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow);
void conv2d_dgrad(const double* dy, const double* w, double* dx, std::int64_t cin, std::int64_t h,
                  std::int64_t wid, std::int64_t cout, std::int64_t kh, std::int64_t kw,
                  std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow);
void conv2d_wgrad(const double* x, const double* dy, double* dw, std::int64_t cin, std::int64_t h,
                  std::int64_t wid, std::int64_t cout, std::int64_t kh, std::int64_t kw,
                  std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow);

// transposed conv with kernel size == stride: x (cin,h,w), w (cin,cout,k,k), y (cout,h*k,w*k).
void tconv2d_fwd(const double* x, const double* w, double* y, std::int64_t cin, std::int64_t h,
                 std::int64_t wid, std::int64_t cout, std::int64_t k);
void tconv2d_dgrad(const double* dy, const double* w, double* dx, std::int64_t cin, std::int64_t h,
                   std::int64_t wid, std::int64_t cout, std::int64_t k);
void tconv2d_wgrad(const double* x, const double* dy, double* dw, std::int64_t cin, std::int64_t h,
                   std::int64_t wid, std::int64_t cout, std::int64_t k);

// average pooling with kernel == stride == k; k divides h and w.
void avgpool_fwd(const double* x, double* y, std::int64_t c, std::int64_t h, std::int64_t w,
                 std::int64_t k);
void avgpool_bwd(const double* dy, double* dx, std::int64_t c, std::int64_t h, std::int64_t w,
                 std::int64_t k);

// bilinear resize, half-pixel sample centers: x (c,h,w) -> y (c,oh,ow).
void bilinear_fwd(const double* x, double* y, std::int64_t c, std::int64_t h, std::int64_t w,
                  std::int64_t oh, std::int64_t ow);
void bilinear_bwd(const double* dy, double* dx, std::int64_t c, std::int64_t h, std::int64_t w,
                  std::int64_t oh, std::int64_t ow);

// row-wise softmax with max-subtraction stabilization; a, y are (m,n).
void softmax_rows_fwd(const double* a, double* y, std::int64_t m, std::int64_t n);
void softmax_rows_bwd(const double* y, const double* dy, double* da, std::int64_t m,
                      std::int64_t n);
void log_softmax_rows_fwd(const double* a, double* y, std::int64_t m, std::int64_t n);
void log_softmax_rows_bwd(const double* y, const double* dy, double* da, std::int64_t m,
                          std::int64_t n);

// per-row layer norm over the last axis; saves mean/rstd for the backward pass.
void layernorm_fwd(const double* x, const double* gamma, const double* beta, double* y,
                   double* mean, double* rstd, std::int64_t m, std::int64_t n, double eps);
void layernorm_bwd(const double* x, const double* gamma, const double* mean, const double* rstd,
                   const double* dy, double* dx, double* dgamma, double* dbeta, std::int64_t m,
                   std::int64_t n);

}  // namespace invpt::kern
