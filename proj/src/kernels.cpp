#include "invpt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace invpt::kern {

namespace {

int env_threads() {
    const char* v = std::getenv("INVPT_THREADS");
    if (!v) return 1;
    const int n = std::atoi(v);
    return n > 0 ? n : 1;
}

int g_override = 0;

}  // namespace

int threads() {
    if (g_override > 0) return g_override;
    static const int from_env = env_threads();
    return from_env;
}

void set_threads(int n) { g_override = n > 0 ? n : 0; }

// Per-element bodies shared by the serial references and the parallel entry
// points; bit parity between the two follows from using the same body.
namespace detail {

inline void matmul_nn_row(const double* a, const double* b, double* c, std::int64_t i,
                          std::int64_t k, std::int64_t n, bool accumulate) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    for (std::int64_t p = 0; p < k; ++p) {
        const double av = ai[p];
        const double* bp = b + p * n;
        for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

// Eight-lane dot product with a fixed combination order: deterministic for a
// given length and SIMD-friendly despite -ffp-contract=off.
inline double dot8(const double* a, const double* b, std::int64_t n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

inline void matmul_nt_row(const double* a, const double* b, double* c, std::int64_t i,
                          std::int64_t k, std::int64_t n, bool accumulate) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
        const double acc = dot8(ai, b + j * k, k);
        ci[j] = accumulate ? ci[j] + acc : acc;
    }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, std::int64_t i,
                          std::int64_t m, std::int64_t k, std::int64_t n, bool accumulate) {
    // a is (k,m) and we produce row i of c = a^T b.
    double* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    for (std::int64_t p = 0; p < k; ++p) {
        const double av = a[p * m + i];
        const double* bp = b + p * n;
        for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

// Valid output range for one kernel column: 0 <= ox*stride - pad + kx < wid.
inline void tap_range(std::int64_t kx, std::int64_t stride, std::int64_t pad, std::int64_t wid,
                      std::int64_t ow, std::int64_t& lo, std::int64_t& hi) {
    lo = 0;
    while (lo < ow && lo * stride - pad + kx < 0) ++lo;
    hi = ow;
    while (hi > lo && (hi - 1) * stride - pad + kx >= wid) --hi;
}

inline void conv2d_out_channel(const double* x, const double* w, double* y, std::int64_t co,
                               std::int64_t cin, std::int64_t h, std::int64_t wid,
                               std::int64_t kh, std::int64_t kw, std::int64_t stride,
                               std::int64_t pad, std::int64_t oh, std::int64_t ow) {
    const double* wc = w + co * cin * kh * kw;
    double* yc = y + co * oh * ow;
    // Output rows accumulate in a stack chunk so the repeated tap updates stay
    // in registers/L1. Per output element the taps still arrive in (ci,ky,kx)
    // order, which keeps the result bit-identical to the naive nest.
    constexpr std::int64_t kChunk = 256;
    double buf[kChunk];
    for (std::int64_t oy = 0; oy < oh; ++oy) {
        double* yrow = yc + oy * ow;
        for (std::int64_t base = 0; base < ow; base += kChunk) {
            const std::int64_t len = std::min(kChunk, ow - base);
            std::fill(buf, buf + len, 0.0);
            for (std::int64_t ci = 0; ci < cin; ++ci) {
                const double* xc = x + ci * h * wid;
                const double* wk = wc + ci * kh * kw;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* xrow = xc + iy * wid;
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const double wv = wk[ky * kw + kx];
                        std::int64_t lo, hi;
                        tap_range(kx, stride, pad, wid, ow, lo, hi);
                        lo = std::max(lo, base);
                        hi = std::min(hi, base + len);
                        const double* xp = xrow - pad + kx;
                        if (stride == 1) {
                            for (std::int64_t ox = lo; ox < hi; ++ox)
                                buf[ox - base] += xp[ox] * wv;
                        } else {
                            for (std::int64_t ox = lo; ox < hi; ++ox)
                                buf[ox - base] += xp[ox * stride] * wv;
                        }
                    }
                }
            }
            std::copy(buf, buf + len, yrow + base);
        }
    }
}

inline void softmax_row(const double* a, double* y, std::int64_t i, std::int64_t n) {
    const double* ai = a + i * n;
    double* yi = y + i * n;
    double mx = ai[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, ai[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
        yi[j] = std::exp(ai[j] - mx);
        sum += yi[j];
    }
    const double inv = 1.0 / sum;
    for (std::int64_t j = 0; j < n; ++j) yi[j] *= inv;
}

inline void bilinear_out_row(const double* x, double* y, std::int64_t c, std::int64_t oy,
                             std::int64_t h, std::int64_t w, std::int64_t oh, std::int64_t ow) {
    const double sy = (static_cast<double>(oy) + 0.5) * static_cast<double>(h) /
                          static_cast<double>(oh) -
                      0.5;
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
    const double fy = sy - static_cast<double>(y0);
    const std::int64_t y0c = std::clamp<std::int64_t>(y0, 0, h - 1);
    const std::int64_t y1c = std::clamp<std::int64_t>(y0 + 1, 0, h - 1);
    const double* xc = x + c * h * w;
    double* yc = y + c * oh * ow + oy * ow;
    for (std::int64_t ox = 0; ox < ow; ++ox) {
        const double sx = (static_cast<double>(ox) + 0.5) * static_cast<double>(w) /
                              static_cast<double>(ow) -
                          0.5;
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
        const double fx = sx - static_cast<double>(x0);
        const std::int64_t x0c = std::clamp<std::int64_t>(x0, 0, w - 1);
        const std::int64_t x1c = std::clamp<std::int64_t>(x0 + 1, 0, w - 1);
        yc[ox] = (1.0 - fy) * ((1.0 - fx) * xc[y0c * w + x0c] + fx * xc[y0c * w + x1c]) +
                 fy * ((1.0 - fx) * xc[y1c * w + x0c] + fx * xc[y1c * w + x1c]);
    }
}

inline void avgpool_channel(const double* x, double* y, std::int64_t c, std::int64_t h,
                            std::int64_t w, std::int64_t k) {
    const std::int64_t oh = h / k, ow = w / k;
    const double inv = 1.0 / static_cast<double>(k * k);
    const double* xc = x + c * h * w;
    double* yc = y + c * oh * ow;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
            double acc = 0.0;
            for (std::int64_t ky = 0; ky < k; ++ky)
                for (std::int64_t kx = 0; kx < k; ++kx)
                    acc += xc[(oy * k + ky) * w + ox * k + kx];
            yc[oy * ow + ox] = acc * inv;
        }
    }
}

}  // namespace detail

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate) {
    for (std::int64_t i = 0; i < m; ++i) detail::matmul_nn_row(a, b, c, i, k, n, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate) {
    for (std::int64_t i = 0; i < m; ++i) detail::matmul_nt_row(a, b, c, i, k, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate) {
    for (std::int64_t i = 0; i < m; ++i) detail::matmul_tn_row(a, b, c, i, m, k, n, accumulate);
}

void conv2d_fwd(const double* x, const double* w, double* y, std::int64_t cin, std::int64_t h,
                std::int64_t wid, std::int64_t cout, std::int64_t kh, std::int64_t kw,
                std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow) {
    for (std::int64_t co = 0; co < cout; ++co)
        detail::conv2d_out_channel(x, w, y, co, cin, h, wid, kh, kw, stride, pad, oh, ow);
}

void bilinear_fwd(const double* x, double* y, std::int64_t c, std::int64_t h, std::int64_t w,
                  std::int64_t oh, std::int64_t ow) {
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t oy = 0; oy < oh; ++oy) detail::bilinear_out_row(x, y, ch, oy, h, w, oh, ow);
}

void softmax_rows_fwd(const double* a, double* y, std::int64_t m, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) detail::softmax_row(a, y, i, n);
}

void avgpool_fwd(const double* x, double* y, std::int64_t c, std::int64_t h, std::int64_t w,
                 std::int64_t k) {
    for (std::int64_t ch = 0; ch < c; ++ch) detail::avgpool_channel(x, y, ch, h, w, k);
}

}  // namespace serial

void matmul_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && m > 1) schedule(static)
    for (std::int64_t i = 0; i < m; ++i) detail::matmul_nn_row(a, b, c, i, k, n, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && m > 1) schedule(static)
    for (std::int64_t i = 0; i < m; ++i) detail::matmul_nt_row(a, b, c, i, k, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool accumulate) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && m > 1) schedule(static)
    for (std::int64_t i = 0; i < m; ++i) detail::matmul_tn_row(a, b, c, i, m, k, n, accumulate);
}

void conv2d_fwd(const double* x, const double* w, double* y, std::int64_t cin, std::int64_t h,
                std::int64_t wid, std::int64_t cout, std::int64_t kh, std::int64_t kw,
                std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && cout > 1) schedule(static)
    for (std::int64_t co = 0; co < cout; ++co)
        detail::conv2d_out_channel(x, w, y, co, cin, h, wid, kh, kw, stride, pad, oh, ow);
}

void conv2d_dgrad(const double* dy, const double* w, double* dx, std::int64_t cin, std::int64_t h,
                  std::int64_t wid, std::int64_t cout, std::int64_t kh, std::int64_t kw,
                  std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow) {
    const int nt = threads();
    // Each thread owns one input channel, so accumulation stays race-free and
    // ordered regardless of nt.
#pragma omp parallel for num_threads(nt) if (nt > 1 && cin > 1) schedule(static)
    for (std::int64_t ci = 0; ci < cin; ++ci) {
        double* dxc = dx + ci * h * wid;
        for (std::int64_t co = 0; co < cout; ++co) {
            const double* dyc = dy + co * oh * ow;
            const double* wk = w + (co * cin + ci) * kh * kw;
            for (std::int64_t ky = 0; ky < kh; ++ky) {
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                    const double wv = wk[ky * kw + kx];
                    std::int64_t lo, hi;
                    detail::tap_range(kx, stride, pad, wid, ow, lo, hi);
                    for (std::int64_t oy = 0; oy < oh; ++oy) {
                        const std::int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        double* dxrow = dxc + iy * wid - pad + kx;
                        const double* dyrow = dyc + oy * ow;
                        if (stride == 1) {
                            for (std::int64_t ox = lo; ox < hi; ++ox)
                                dxrow[ox] += dyrow[ox] * wv;
                        } else {
                            for (std::int64_t ox = lo; ox < hi; ++ox)
                                dxrow[ox * stride] += dyrow[ox] * wv;
                        }
                    }
                }
            }
        }
    }
}

void conv2d_wgrad(const double* x, const double* dy, double* dw, std::int64_t cin, std::int64_t h,
                  std::int64_t wid, std::int64_t cout, std::int64_t kh, std::int64_t kw,
                  std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && cout > 1) schedule(static)
    for (std::int64_t co = 0; co < cout; ++co) {
        const double* dyc = dy + co * oh * ow;
        for (std::int64_t ci = 0; ci < cin; ++ci) {
            const double* xc = x + ci * h * wid;
            double* wk = dw + (co * cin + ci) * kh * kw;
            for (std::int64_t ky = 0; ky < kh; ++ky) {
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                    std::int64_t lo, hi;
                    detail::tap_range(kx, stride, pad, wid, ow, lo, hi);
                    double acc = 0.0;
                    for (std::int64_t oy = 0; oy < oh; ++oy) {
                        const std::int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = xc + iy * wid - pad + kx;
                        const double* dyrow = dyc + oy * ow;
                        if (stride == 1) {
                            acc += detail::dot8(xrow + lo, dyrow + lo, hi - lo);
                        } else {
                            for (std::int64_t ox = lo; ox < hi; ++ox)
                                acc += xrow[ox * stride] * dyrow[ox];
                        }
                    }
                    wk[ky * kw + kx] += acc;
                }
            }
        }
    }
}

void tconv2d_fwd(const double* x, const double* w, double* y, std::int64_t cin, std::int64_t h,
                 std::int64_t wid, std::int64_t cout, std::int64_t k) {
    const std::int64_t oh = h * k, ow = wid * k;
    const int nt = threads();
    // kernel == stride, so each output pixel receives exactly one kernel tap.
#pragma omp parallel for num_threads(nt) if (nt > 1 && cout > 1) schedule(static)
    for (std::int64_t co = 0; co < cout; ++co) {
        double* yc = y + co * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            const std::int64_t iy = oy / k, ky = oy % k;
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                const std::int64_t ix = ox / k, kx = ox % k;
                double acc = 0.0;
                for (std::int64_t ci = 0; ci < cin; ++ci)
                    acc += x[(ci * h + iy) * wid + ix] * w[((ci * cout + co) * k + ky) * k + kx];
                yc[oy * ow + ox] = acc;
            }
        }
    }
}

void tconv2d_dgrad(const double* dy, const double* w, double* dx, std::int64_t cin, std::int64_t h,
                   std::int64_t wid, std::int64_t cout, std::int64_t k) {
    const std::int64_t ow = wid * k;
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && cin > 1) schedule(static)
    for (std::int64_t ci = 0; ci < cin; ++ci) {
        double* dxc = dx + ci * h * wid;
        for (std::int64_t iy = 0; iy < h; ++iy) {
            for (std::int64_t ix = 0; ix < wid; ++ix) {
                double acc = 0.0;
                for (std::int64_t co = 0; co < cout; ++co) {
                    const double* dyc = dy + co * h * k * ow;
                    const double* wk = w + (ci * cout + co) * k * k;
                    for (std::int64_t ky = 0; ky < k; ++ky)
                        for (std::int64_t kx = 0; kx < k; ++kx)
                            acc += dyc[(iy * k + ky) * ow + ix * k + kx] * wk[ky * k + kx];
                }
                dxc[iy * wid + ix] += acc;
            }
        }
    }
}

void tconv2d_wgrad(const double* x, const double* dy, double* dw, std::int64_t cin, std::int64_t h,
                   std::int64_t wid, std::int64_t cout, std::int64_t k) {
    const std::int64_t ow = wid * k;
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && cin > 1) schedule(static)
    for (std::int64_t ci = 0; ci < cin; ++ci) {
        const double* xc = x + ci * h * wid;
        for (std::int64_t co = 0; co < cout; ++co) {
            const double* dyc = dy + co * h * k * ow;
            double* wk = dw + (ci * cout + co) * k * k;
            for (std::int64_t ky = 0; ky < k; ++ky) {
                for (std::int64_t kx = 0; kx < k; ++kx) {
                    double acc = 0.0;
                    for (std::int64_t iy = 0; iy < h; ++iy)
                        for (std::int64_t ix = 0; ix < wid; ++ix)
                            acc += xc[iy * wid + ix] * dyc[(iy * k + ky) * ow + ix * k + kx];
                    wk[ky * k + kx] += acc;
                }
            }
        }
    }
}

void avgpool_fwd(const double* x, double* y, std::int64_t c, std::int64_t h, std::int64_t w,
                 std::int64_t k) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && c > 1) schedule(static)
    for (std::int64_t ch = 0; ch < c; ++ch) detail::avgpool_channel(x, y, ch, h, w, k);
}

void avgpool_bwd(const double* dy, double* dx, std::int64_t c, std::int64_t h, std::int64_t w,
                 std::int64_t k) {
    const std::int64_t ow = w / k;
    const double inv = 1.0 / static_cast<double>(k * k);
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && c > 1) schedule(static)
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const double* dyc = dy + ch * (h / k) * ow;
        double* dxc = dx + ch * h * w;
        for (std::int64_t iy = 0; iy < h; ++iy)
            for (std::int64_t ix = 0; ix < w; ++ix)
                dxc[iy * w + ix] += dyc[(iy / k) * ow + ix / k] * inv;
    }
}

void bilinear_fwd(const double* x, double* y, std::int64_t c, std::int64_t h, std::int64_t w,
                  std::int64_t oh, std::int64_t ow) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && c * oh > 1) schedule(static) collapse(2)
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t oy = 0; oy < oh; ++oy) detail::bilinear_out_row(x, y, ch, oy, h, w, oh, ow);
}

void bilinear_bwd(const double* dy, double* dx, std::int64_t c, std::int64_t h, std::int64_t w,
                  std::int64_t oh, std::int64_t ow) {
    const int nt = threads();
    // Scatter within a channel is serial; channels are independent.
#pragma omp parallel for num_threads(nt) if (nt > 1 && c > 1) schedule(static)
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const double* dyc = dy + ch * oh * ow;
        double* dxc = dx + ch * h * w;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            const double sy = (static_cast<double>(oy) + 0.5) * static_cast<double>(h) /
                                  static_cast<double>(oh) -
                              0.5;
            const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
            const double fy = sy - static_cast<double>(y0);
            const std::int64_t y0c = std::clamp<std::int64_t>(y0, 0, h - 1);
            const std::int64_t y1c = std::clamp<std::int64_t>(y0 + 1, 0, h - 1);
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                const double sx = (static_cast<double>(ox) + 0.5) * static_cast<double>(w) /
                                      static_cast<double>(ow) -
                                  0.5;
                const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
                const double fx = sx - static_cast<double>(x0);
                const std::int64_t x0c = std::clamp<std::int64_t>(x0, 0, w - 1);
                const std::int64_t x1c = std::clamp<std::int64_t>(x0 + 1, 0, w - 1);
                const double g = dyc[oy * ow + ox];
                dxc[y0c * w + x0c] += g * (1.0 - fy) * (1.0 - fx);
                dxc[y0c * w + x1c] += g * (1.0 - fy) * fx;
                dxc[y1c * w + x0c] += g * fy * (1.0 - fx);
                dxc[y1c * w + x1c] += g * fy * fx;
            }
        }
    }
}

void softmax_rows_fwd(const double* a, double* y, std::int64_t m, std::int64_t n) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && m > 1) schedule(static)
    for (std::int64_t i = 0; i < m; ++i) detail::softmax_row(a, y, i, n);
}

void softmax_rows_bwd(const double* y, const double* dy, double* da, std::int64_t m,
                      std::int64_t n) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && m > 1) schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        const double* yi = y + i * n;
        const double* di = dy + i * n;
        double* ai = da + i * n;
        double dot = 0.0;
        for (std::int64_t j = 0; j < n; ++j) dot += yi[j] * di[j];
        for (std::int64_t j = 0; j < n; ++j) ai[j] += yi[j] * (di[j] - dot);
    }
}

void log_softmax_rows_fwd(const double* a, double* y, std::int64_t m, std::int64_t n) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && m > 1) schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* yi = y + i * n;
        double mx = ai[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, ai[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < n; ++j) sum += std::exp(ai[j] - mx);
        const double lse = mx + std::log(sum);
        for (std::int64_t j = 0; j < n; ++j) yi[j] = ai[j] - lse;
    }
}

void log_softmax_rows_bwd(const double* y, const double* dy, double* da, std::int64_t m,
                          std::int64_t n) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && m > 1) schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        const double* yi = y + i * n;
        const double* di = dy + i * n;
        double* ai = da + i * n;
        double sum = 0.0;
        for (std::int64_t j = 0; j < n; ++j) sum += di[j];
        for (std::int64_t j = 0; j < n; ++j) ai[j] += di[j] - std::exp(yi[j]) * sum;
    }
}

void layernorm_fwd(const double* x, const double* gamma, const double* beta, double* y,
                   double* mean, double* rstd, std::int64_t m, std::int64_t n, double eps) {
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && m > 1) schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        const double* xi = x + i * n;
        double* yi = y + i * n;
        double mu = 0.0;
        for (std::int64_t j = 0; j < n; ++j) mu += xi[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            const double d = xi[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double rs = 1.0 / std::sqrt(var + eps);
        mean[i] = mu;
        rstd[i] = rs;
        for (std::int64_t j = 0; j < n; ++j) yi[j] = (xi[j] - mu) * rs * gamma[j] + beta[j];
    }
}

void layernorm_bwd(const double* x, const double* gamma, const double* mean, const double* rstd,
                   const double* dy, double* dx, double* dgamma, double* dbeta, std::int64_t m,
                   std::int64_t n) {
    // dgamma/dbeta are shared across rows; keep their accumulation serial and
    // ordered. dx rows are independent.
    for (std::int64_t i = 0; i < m; ++i) {
        const double* xi = x + i * n;
        const double* di = dy + i * n;
        const double rs = rstd[i];
        const double mu = mean[i];
        for (std::int64_t j = 0; j < n; ++j) {
            const double xhat = (xi[j] - mu) * rs;
            dgamma[j] += di[j] * xhat;
            dbeta[j] += di[j];
        }
    }
    const int nt = threads();
#pragma omp parallel for num_threads(nt) if (nt > 1 && m > 1) schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        const double* xi = x + i * n;
        const double* di = dy + i * n;
        double* oi = dx + i * n;
        const double rs = rstd[i];
        const double mu = mean[i];
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            const double g = di[j] * gamma[j];
            const double xhat = (xi[j] - mu) * rs;
            sum_g += g;
            sum_gx += g * xhat;
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::int64_t j = 0; j < n; ++j) {
            const double g = di[j] * gamma[j];
            const double xhat = (xi[j] - mu) * rs;
            oi[j] += rs * (g - inv_n * sum_g - xhat * inv_n * sum_gx);
        }
    }
}

}  // namespace invpt::kern
