#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "invpt/decoder.hpp"

namespace invpt::metrics {

// Class-mean intersection over union. Classes absent from both prediction and
// label are excluded from the mean. Returns nullopt when every pixel carries
// the ignore id.
std::optional<double> miou(const std::vector<std::int64_t>& pred,
                           const std::vector<std::int64_t>& label, std::int64_t num_classes,
                           std::int64_t ignore = 255);

// Masked root mean square error; nullopt on an empty mask.
std::optional<double> rmse(const std::vector<double>& pred, const std::vector<double>& label,
                           const std::vector<std::uint8_t>& mask);

// Mean angular error in degrees between per-pixel direction vectors, layout
// (dims, count). Predictions are normalized internally (eps 1e-12); labels
// must be unit vectors.
double mean_angle_error_deg(const std::vector<double>& pred, const std::vector<double>& label,
                            std::int64_t dims, std::int64_t count);

// Pixel-tolerant boundary F1: precision/recall matched within a Chebyshev
// radius via dilation. Both masks empty -> 1, exactly one empty -> 0.
double boundary_f1(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& label,
                   std::int64_t h, std::int64_t w, std::int64_t tolerance = 1);

// Match counts behind boundary_f1, for dataset-level precision/recall.
struct BoundaryCounts {
    std::int64_t matched_pred = 0, pred_total = 0;
    std::int64_t matched_label = 0, label_total = 0;
    BoundaryCounts& operator+=(const BoundaryCounts& o);
    double f1() const;
};
BoundaryCounts boundary_match_counts(const std::vector<std::uint8_t>& pred,
                                     const std::vector<std::uint8_t>& label, std::int64_t h,
                                     std::int64_t w, std::int64_t tolerance = 1);

// Multi-task gain in percent: (100/T) * sum_t sign_t * (M_t - S_t) / S_t,
// with the sign flipped for lower-is-better metrics.
double delta_m(const std::vector<double>& multi, const std::vector<double>& single,
               const std::vector<bool>& lower_is_better);

// ---------------------------------------------------------------------------
// Analytic FLOPs accountant for the decoder.
//
// Conventions (fixed so percentages are reproducible): 1 MAC = 2 FLOPs;
// softmax and norm layers cost 5 FLOPs per element; bilinear resize costs 4
// MACs per output element; average pooling costs k^2 MACs per output element;
// the fusion blend a1*A + a2*M costs 2 MACs per element. ReLU, biases,
// elementwise adds and index bookkeeping (top-k, gather, column means) are
// not counted.

struct FlopsCounts {
    std::int64_t conv = 0;       // all convolutions incl. 1x1 and transposed
    std::int64_t linear = 0;     // QKV projection matrices
    std::int64_t matmul_qk = 0;  // Q K^T
    std::int64_t matmul_av = 0;  // A V
    std::int64_t pool = 0;
    std::int64_t resize = 0;
    std::int64_t norm = 0;       // LN + BN + softmax
    std::int64_t blend = 0;      // fusion combination term

    std::int64_t total() const {
        return conv + linear + matmul_qk + matmul_av + pool + resize + norm + blend;
    }
    FlopsCounts& operator+=(const FlopsCounts& o);
};

struct FlopsBreakdown {
    std::vector<FlopsCounts> per_stage;  // one entry per executed stage
    FlopsCounts output_head;             // multi-scale output fusion
    FlopsCounts decoder_total() const;
    // attention matmul share (QK^T + AV) over all stages
    std::int64_t attention_matmul_total() const;
    // same, restricted to the cross-scale stages (s >= 1). Stage 0 has no
    // incoming message and stays dense under both variants, so this is the
    // quantity that scales exactly linearly with the retention ratio.
    std::int64_t attention_matmul_cross_scale() const;
};

FlopsBreakdown flops_count(const DecoderConfig& cfg, std::int64_t tasks, std::int64_t h0,
                           std::int64_t w0, std::int64_t c0, std::int64_t c_e);

}  // namespace invpt::metrics
