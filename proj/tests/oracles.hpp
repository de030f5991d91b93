#pragma once

// Brute-force reference implementations used as independent oracles. These
// stay deliberately naive (plain loop nests, no shared code with the library
// kernels) so a defect in the implementation cannot hide in its own oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace oracle {

// plain triple loop, c = a(m,k) * b(k,n)
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::int64_t m, std::int64_t k, std::int64_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            for (std::int64_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

// direct 6-loop cross-correlation
inline std::vector<double> conv2d(const std::vector<double>& x, const std::vector<double>& w,
                                  std::int64_t cin, std::int64_t h, std::int64_t wid,
                                  std::int64_t cout, std::int64_t kh, std::int64_t kw,
                                  std::int64_t stride, std::int64_t pad) {
    const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t ow = (wid + 2 * pad - kw) / stride + 1;
    std::vector<double> y(cout * oh * ow, 0.0);
    for (std::int64_t co = 0; co < cout; ++co)
        for (std::int64_t oy = 0; oy < oh; ++oy)
            for (std::int64_t ox = 0; ox < ow; ++ox)
                for (std::int64_t ci = 0; ci < cin; ++ci)
                    for (std::int64_t ky = 0; ky < kh; ++ky)
                        for (std::int64_t kx = 0; kx < kw; ++kx) {
                            const std::int64_t iy = oy * stride - pad + ky;
                            const std::int64_t ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wid) continue;
                            y[(co * oh + oy) * ow + ox] +=
                                x[(ci * h + iy) * wid + ix] *
                                w[((co * cin + ci) * kh + ky) * kw + kx];
                        }
    return y;
}

// scatter-accumulate transposed conv, kernel k == stride
inline std::vector<double> tconv2d(const std::vector<double>& x, const std::vector<double>& w,
                                   std::int64_t cin, std::int64_t h, std::int64_t wid,
                                   std::int64_t cout, std::int64_t k) {
    std::vector<double> y(cout * h * k * wid * k, 0.0);
    const std::int64_t ow = wid * k;
    for (std::int64_t ci = 0; ci < cin; ++ci)
        for (std::int64_t iy = 0; iy < h; ++iy)
            for (std::int64_t ix = 0; ix < wid; ++ix)
                for (std::int64_t co = 0; co < cout; ++co)
                    for (std::int64_t ky = 0; ky < k; ++ky)
                        for (std::int64_t kx = 0; kx < k; ++kx)
                            y[(co * h * k + iy * k + ky) * ow + ix * k + kx] +=
                                x[(ci * h + iy) * wid + ix] *
                                w[((ci * cout + co) * k + ky) * k + kx];
    return y;
}

// closed-form bilinear weights with half-pixel centers, one output pixel
inline double bilinear_at(const std::vector<double>& x, std::int64_t c, std::int64_t h,
                          std::int64_t w, std::int64_t oh, std::int64_t ow, std::int64_t ch,
                          std::int64_t oy, std::int64_t ox) {
    const double sy = (oy + 0.5) * static_cast<double>(h) / oh - 0.5;
    const double sx = (ox + 0.5) * static_cast<double>(w) / ow - 0.5;
    const auto clampi = [](std::int64_t v, std::int64_t hi) {
        return std::max<std::int64_t>(0, std::min(v, hi));
    };
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
    const double fy = sy - y0, fx = sx - x0;
    const auto at = [&](std::int64_t yy, std::int64_t xx) {
        return x[(ch * h + clampi(yy, h - 1)) * w + clampi(xx, w - 1)];
    };
    (void)c;
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
           fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

// full-sort top-k with the lowest-index tie break, result ascending
inline std::vector<std::int64_t> topk(const std::vector<double>& v, std::int64_t k) {
    std::vector<std::int64_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::int64_t a, std::int64_t b) { return v[a] > v[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
        m = std::max(m, std::fabs(a[i] - b[i]) / denom);
    }
    return m;
}

}  // namespace oracle
