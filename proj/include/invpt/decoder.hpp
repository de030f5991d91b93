#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "invpt/layers.hpp"
#include "invpt/sequence.hpp"

namespace invpt {

enum class AttentionVariant { Fusion, Selective };

struct DecoderConfig {
    AttentionVariant variant = AttentionVariant::Selective;
    double retention = 0.5;  // fraction of key tokens kept by selective attention
    std::int64_t heads = 1;
    bool efa = true;          // encoder feature aggregation at stages 1 and 2
    bool efa_stage0 = false;  // optional aggregation at stage 0
    std::int64_t stages = 3;  // 1..3 decoder stages; 0 = preliminary-only baseline

    void validate() const;
};

// Per-stage geometry. The pool stride k_s = 2^(s+1) keeps the key-token count
// at T*H0*W0/4 for every stage, which is what lets attention messages pass
// between scales unchanged along the key axis.
struct StagePlan {
    std::int64_t stage = 0;
    std::int64_t in_h = 0, in_w = 0, in_c = 0;  // F_s per-task grid and width
    std::int64_t up = 1;                        // spatial up-factor of Reshape&Up
    std::int64_t grid_h = 0, grid_w = 0;        // F'_s per-task grid
    std::int64_t c_attn = 0;                    // C'_s, the attention width
    std::int64_t pool_stride = 0;               // k_s
    std::int64_t q_h = 0, q_w = 0;              // per-task query grid
    std::int64_t kv_h = 0, kv_w = 0;            // per-task key grid
    std::int64_t n_q = 0, n_k = 0;              // total query/key token counts

    static StagePlan make(std::int64_t tasks, std::int64_t h0, std::int64_t w0, std::int64_t c0,
                          std::int64_t stage);
};

// Pre-softmax attention scores with selection metadata. Selective states are
// stored scattered back to the full key width, zeros at dropped keys.
struct AttentionState {
    TensorPtr scores;               // (n_q, n_k)
    std::vector<std::int64_t> kept; // I_s; empty when all keys participate
    std::int64_t n_q = 0, n_k = 0;
    std::int64_t q_h = 0, q_w = 0;  // per-task row grid of the score matrix
};

// ---- cross-scale attention primitives (exposed for tests) ----

// k = ceil(retention * n_k), clamped to [1, n_k].
std::int64_t retained_keys(double retention, std::int64_t n_k);

// A = Q K^T / sqrt(c_scale), pre-softmax.
TensorPtr attention_scores(const TensorPtr& q, const TensorPtr& k, std::int64_t c_scale);

// Upsamples the previous stage's score matrix x2 along the per-task row grid,
// treating key columns as channels; quadruples the row count.
AttentionState attention_message_pass(const AttentionState& prev, std::int64_t tasks);

struct FusionResult {
    TensorPtr attn;     // row-stochastic A^m
    TensorPtr message;  // pre-softmax A' = a1*A + a2*M, the outgoing message
};
FusionResult fusion_attention(const TensorPtr& scores, const TensorPtr& message,
                              const TensorPtr& alpha1, const TensorPtr& alpha2);

struct SelectiveResult {
    TensorPtr attn;     // (n_q, k) rows softmaxed over the kept columns
    TensorPtr v_imp;    // (k, c) value rows for the kept keys
    TensorPtr message;  // A' scattered to (n_q, n_k), zeros at dropped keys
    std::vector<std::int64_t> kept;
};
SelectiveResult selective_attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                                    const TensorPtr& prev_message, double retention,
                                    std::int64_t c_scale);

// Reshape&Up without the conv: per-task bilinear x`up` on the token grid.
MultiTaskSequence reshape_up_bilinear(const MultiTaskSequence& seq, std::int64_t up);

// One decoder stage. Stage 0 runs with up-factor 1, no channel halving and no
// incoming message; stages 1 and 2 are full UP-Transformer blocks.
struct UpTransformerStage {
    std::int64_t stage = 0;
    ConvBnRelu up_conv;         // stages 1,2: C -> C/2 after bilinear x2
    TransposedConv2d efa_up;    // stage 1: k=2, stage 2: k=4
    Conv2d efa_conv;            // C_e -> C'_s, 3x3
    LayerNorm ln;
    Conv2d q_conv;              // C'_s -> C'_s, 3x3 stride 2
    Linear wq, wk, wv;          // C'_s -> C'_s, no bias
    TensorPtr alpha1, alpha2;   // fusion blend weights, init (1, 0)

    void init(ParamStore& ps, const std::string& name, std::int64_t stage, std::int64_t c_e,
              const StagePlan& plan, Rng& rng);

    MultiTaskSequence reshape_and_up_conv(const MultiTaskSequence& seq, bool training,
                                          bool update_running) const;
    MultiTaskSequence efa_inject(const MultiTaskSequence& f_up, const TensorPtr& tap) const;

    struct QKV {
        TensorPtr q, k, v;
    };
    QKV qkv_project(const MultiTaskSequence& f_prime, const StagePlan& plan) const;

    struct Result {
        MultiTaskSequence next;               // F_{s+1}
        std::vector<AttentionState> message;  // A'_s per head
        MultiTaskSequence f_prime;            // post-LN input (skip source)
    };
    Result forward(const MultiTaskSequence& f_in, const std::vector<AttentionState>* prev_message,
                   const TensorPtr& tap, const DecoderConfig& cfg, const StagePlan& plan,
                   bool training, bool update_running) const;
};

class InvptDecoder {
public:
    void init(ParamStore& ps, std::int64_t tasks, std::int64_t h0, std::int64_t w0,
              std::int64_t c0, std::int64_t c_e, const DecoderConfig& cfg, Rng& rng);

    struct Output {
        std::vector<TensorPtr> refined;             // per task (C_out, 4H0, 4W0)
        std::vector<MultiTaskSequence> stage_out;   // F_1..F_S
        std::vector<std::vector<AttentionState>> messages;  // per stage, per head
    };
    Output forward(const MultiTaskSequence& f_c, const std::vector<TensorPtr>& taps, bool training,
                   bool update_running) const;

    const DecoderConfig& config() const { return cfg_; }
    std::int64_t c_out() const { return c0_ / 4; }
    StagePlan plan(std::int64_t s) const { return StagePlan::make(tasks_, h0_, w0_, c0_, s); }

private:
    DecoderConfig cfg_;
    std::int64_t tasks_ = 0, h0_ = 0, w0_ = 0, c0_ = 0, c_e_ = 0;
    std::vector<UpTransformerStage> stages_;
    std::vector<Conv2d> out_proj_;  // per stage 1x1 to C_out
    ConvBnRelu out_fuse_;
};

}  // namespace invpt
