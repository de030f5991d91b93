#include "invpt/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "invpt/error.hpp"

namespace invpt::metrics {

std::optional<double> miou(const std::vector<std::int64_t>& pred,
                           const std::vector<std::int64_t>& label, std::int64_t num_classes,
                           std::int64_t ignore) {
    if (pred.size() != label.size()) throw ArgumentError("miou: pred/label size mismatch");
    std::vector<std::int64_t> inter(num_classes, 0), pred_n(num_classes, 0),
        label_n(num_classes, 0);
    std::size_t valid = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (label[i] == ignore) continue;
        ++valid;
        if (label[i] < 0 || label[i] >= num_classes)
            throw DataError("label id " + std::to_string(label[i]) + " out of range");
        if (pred[i] < 0 || pred[i] >= num_classes)
            throw DataError("prediction id " + std::to_string(pred[i]) + " out of range");
        ++label_n[label[i]];
        ++pred_n[pred[i]];
        if (pred[i] == label[i]) ++inter[pred[i]];
    }
    if (valid == 0) return std::nullopt;
    double sum = 0.0;
    std::int64_t present = 0;
    for (std::int64_t c = 0; c < num_classes; ++c) {
        const std::int64_t uni = pred_n[c] + label_n[c] - inter[c];
        if (uni == 0) continue;  // absent from both pred and label
        sum += static_cast<double>(inter[c]) / static_cast<double>(uni);
        ++present;
    }
    return sum / static_cast<double>(present);
}

std::optional<double> rmse(const std::vector<double>& pred, const std::vector<double>& label,
                           const std::vector<std::uint8_t>& mask) {
    if (pred.size() != label.size() || pred.size() != mask.size())
        throw ArgumentError("rmse: size mismatch");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i]) continue;
        const double d = pred[i] - label[i];
        acc += d * d;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return std::sqrt(acc / static_cast<double>(n));
}

double mean_angle_error_deg(const std::vector<double>& pred, const std::vector<double>& label,
                            std::int64_t dims, std::int64_t count) {
    if (static_cast<std::int64_t>(pred.size()) != dims * count ||
        pred.size() != label.size())
        throw ArgumentError("mean_angle_error: size mismatch");
    constexpr double kEps = 1e-12;
    double acc = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
        double norm = 0.0, dot = 0.0;
        for (std::int64_t d = 0; d < dims; ++d) {
            const double p = pred[d * count + i];
            norm += p * p;
            dot += p * label[d * count + i];
        }
        dot /= std::max(std::sqrt(norm), kEps);
        acc += std::acos(std::clamp(dot, -1.0, 1.0));
    }
    return acc / static_cast<double>(count) * (180.0 / 3.14159265358979323846);
}

namespace {

std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& m, std::int64_t h,
                                 std::int64_t w, std::int64_t radius) {
    std::vector<std::uint8_t> out(m.size(), 0);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            if (!m[y * w + x]) continue;
            for (std::int64_t dy = -radius; dy <= radius; ++dy)
                for (std::int64_t dx = -radius; dx <= radius; ++dx) {
                    const std::int64_t ny = y + dy, nx = x + dx;
                    if (ny >= 0 && ny < h && nx >= 0 && nx < w) out[ny * w + nx] = 1;
                }
        }
    return out;
}

std::int64_t count_on(const std::vector<std::uint8_t>& m) {
    std::int64_t n = 0;
    for (auto v : m) n += v ? 1 : 0;
    return n;
}

}  // namespace

BoundaryCounts& BoundaryCounts::operator+=(const BoundaryCounts& o) {
    matched_pred += o.matched_pred;
    pred_total += o.pred_total;
    matched_label += o.matched_label;
    label_total += o.label_total;
    return *this;
}

double BoundaryCounts::f1() const {
    if (pred_total == 0 && label_total == 0) return 1.0;
    if (pred_total == 0 || label_total == 0) return 0.0;
    const double precision =
        static_cast<double>(matched_pred) / static_cast<double>(pred_total);
    const double recall =
        static_cast<double>(matched_label) / static_cast<double>(label_total);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

BoundaryCounts boundary_match_counts(const std::vector<std::uint8_t>& pred,
                                     const std::vector<std::uint8_t>& label, std::int64_t h,
                                     std::int64_t w, std::int64_t tolerance) {
    if (static_cast<std::int64_t>(pred.size()) != h * w || pred.size() != label.size())
        throw ArgumentError("boundary_f1: size mismatch");
    BoundaryCounts c;
    c.pred_total = count_on(pred);
    c.label_total = count_on(label);
    if (c.pred_total == 0 || c.label_total == 0) return c;
    const auto label_d = dilate(label, h, w, tolerance);
    const auto pred_d = dilate(pred, h, w, tolerance);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && label_d[i]) ++c.matched_pred;
        if (label[i] && pred_d[i]) ++c.matched_label;
    }
    return c;
}

double boundary_f1(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& label,
                   std::int64_t h, std::int64_t w, std::int64_t tolerance) {
    return boundary_match_counts(pred, label, h, w, tolerance).f1();
}

double delta_m(const std::vector<double>& multi, const std::vector<double>& single,
               const std::vector<bool>& lower_is_better) {
    if (multi.size() != single.size() || multi.size() != lower_is_better.size())
        throw ArgumentError("delta_m: task count mismatch");
    if (multi.empty()) throw ArgumentError("delta_m: empty task set");
    double acc = 0.0;
    for (std::size_t t = 0; t < multi.size(); ++t) {
        if (single[t] == 0.0)
            throw ArgumentError("delta_m: single-task score for task " + std::to_string(t) +
                                " is zero");
        const double rel = (multi[t] - single[t]) / single[t];
        acc += lower_is_better[t] ? -rel : rel;
    }
    return 100.0 * acc / static_cast<double>(multi.size());
}

// ---------------------------------------------------------------------------
// FLOPs accounting

FlopsCounts& FlopsCounts::operator+=(const FlopsCounts& o) {
    conv += o.conv;
    linear += o.linear;
    matmul_qk += o.matmul_qk;
    matmul_av += o.matmul_av;
    pool += o.pool;
    resize += o.resize;
    norm += o.norm;
    blend += o.blend;
    return *this;
}

FlopsCounts FlopsBreakdown::decoder_total() const {
    FlopsCounts t;
    for (const auto& s : per_stage) t += s;
    t += output_head;
    return t;
}

std::int64_t FlopsBreakdown::attention_matmul_total() const {
    std::int64_t t = 0;
    for (const auto& s : per_stage) t += s.matmul_qk + s.matmul_av;
    return t;
}

std::int64_t FlopsBreakdown::attention_matmul_cross_scale() const {
    std::int64_t t = 0;
    for (std::size_t s = 1; s < per_stage.size(); ++s)
        t += per_stage[s].matmul_qk + per_stage[s].matmul_av;
    return t;
}

namespace {

constexpr std::int64_t kMac = 2;        // FLOPs per multiply-add
constexpr std::int64_t kNormPerElem = 5;

}  // namespace

FlopsBreakdown flops_count(const DecoderConfig& cfg, std::int64_t tasks, std::int64_t h0,
                           std::int64_t w0, std::int64_t c0, std::int64_t c_e) {
    cfg.validate();
    if (cfg.stages < 1) throw ConfigError("flops_count needs at least one decoder stage");
    FlopsBreakdown out;
    for (std::int64_t s = 0; s < cfg.stages; ++s) {
        const auto p = StagePlan::make(tasks, h0, w0, c0, s);
        FlopsCounts f;
        const std::int64_t grid = p.grid_h * p.grid_w;
        if (s > 0) {
            // Reshape&Up: bilinear x2 then 3x3 conv halving the channels.
            f.resize += kMac * 4 * tasks * p.in_c * grid;
            f.conv += kMac * tasks * (p.c_attn * grid) * (p.in_c * 9);
            f.norm += kNormPerElem * tasks * p.c_attn * grid;
        }
        const bool use_efa = s == 0 ? cfg.efa_stage0 : cfg.efa;
        if (use_efa) {
            if (s > 0) f.conv += kMac * (c_e * grid) * c_e;  // transposed conv, one tap/output
            f.conv += kMac * (p.c_attn * grid) * (c_e * 9);
        }
        f.norm += kNormPerElem * tasks * grid * p.c_attn;  // LN
        // QKV: strided query conv, key/value pooling, three projections.
        f.conv += kMac * tasks * (p.c_attn * p.q_h * p.q_w) * (p.c_attn * 9);
        f.pool += kMac * tasks * (p.c_attn * p.kv_h * p.kv_w) * (p.pool_stride * p.pool_stride);
        f.linear += kMac * (p.n_q + 2 * p.n_k) * p.c_attn * p.c_attn;

        const bool selective = cfg.variant == AttentionVariant::Selective && s > 0;
        const std::int64_t kept = selective ? retained_keys(cfg.retention, p.n_k) : p.n_k;
        if (s > 0) f.resize += kMac * 4 * cfg.heads * p.n_q * p.n_k;  // message upsampling
        f.matmul_qk += kMac * p.n_q * kept * p.c_attn;
        if (!selective && s > 0) f.blend += kMac * 2 * cfg.heads * p.n_q * p.n_k;
        f.norm += kNormPerElem * cfg.heads * p.n_q * kept;  // softmax
        f.matmul_av += kMac * p.n_q * kept * p.c_attn;
        // attention output back to the F' grid
        f.resize += kMac * 4 * tasks * grid * p.c_attn;
        out.per_stage.push_back(f);
    }

    // Multi-scale output fusion to the (4H0,4W0) grid.
    const std::int64_t c_out = c0 / 4;
    const std::int64_t out_grid = 16 * h0 * w0;
    for (std::int64_t s = 0; s < cfg.stages; ++s) {
        const auto p = StagePlan::make(tasks, h0, w0, c0, s);
        out.output_head.resize += kMac * 4 * tasks * p.c_attn * out_grid;
        out.output_head.conv += kMac * tasks * (c_out * out_grid) * p.c_attn;
    }
    out.output_head.conv += kMac * tasks * (c_out * out_grid) * (c_out * 9);
    out.output_head.norm += kNormPerElem * tasks * c_out * out_grid;
    return out;
}

}  // namespace invpt::metrics
