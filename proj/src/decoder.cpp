#include "invpt/decoder.hpp"

#include <cmath>

namespace invpt {

void DecoderConfig::validate() const {
    if (retention <= 0.0 || retention > 1.0)
        throw ConfigError("retention ratio must be in (0,1], got " + std::to_string(retention));
    if (heads < 1) throw ConfigError("decoder heads must be >= 1");
    if (stages < 0 || stages > 3)
        throw ConfigError("decoder stages must be in [0,3], got " + std::to_string(stages));
}

StagePlan StagePlan::make(std::int64_t tasks, std::int64_t h0, std::int64_t w0, std::int64_t c0,
                          std::int64_t stage) {
    if (stage < 0 || stage > 2) throw ArgumentError("stage must be 0, 1 or 2");
    if (tasks < 2) throw ConfigError("stage plan needs T >= 2");
    if (h0 % 4 != 0 || w0 % 4 != 0 || c0 % 4 != 0)
        throw ConfigError("stage plan needs H0, W0 and C0 divisible by 4");
    StagePlan p;
    p.stage = stage;
    const std::int64_t prev_scale = stage <= 1 ? 1 : (1LL << (stage - 1));
    p.in_h = h0 * prev_scale;
    p.in_w = w0 * prev_scale;
    p.in_c = c0 / prev_scale;
    p.up = stage == 0 ? 1 : 2;
    p.grid_h = p.in_h * p.up;
    p.grid_w = p.in_w * p.up;
    p.c_attn = c0 / (1LL << stage);
    p.pool_stride = 1LL << (stage + 1);
    p.q_h = p.grid_h / 2;
    p.q_w = p.grid_w / 2;
    p.kv_h = p.grid_h / p.pool_stride;
    p.kv_w = p.grid_w / p.pool_stride;
    p.n_q = tasks * p.q_h * p.q_w;
    p.n_k = tasks * p.kv_h * p.kv_w;
    return p;
}

TensorPtr attention_scores(const TensorPtr& q, const TensorPtr& k, std::int64_t c_scale) {
    if (q->dim(1) != k->dim(1))
        throw DimensionError("attention_scores channel widths differ: " + shape_str(q->shape) +
                             " vs " + shape_str(k->shape));
    return scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(c_scale)));
}

AttentionState attention_message_pass(const AttentionState& prev, std::int64_t tasks) {
    if (prev.n_q != tasks * prev.q_h * prev.q_w)
        throw DimensionError("attention message rows do not match the per-task query grid");
    std::vector<TensorPtr> parts;
    for (auto& slice : split_even(prev.scores, 0, tasks)) {
        auto as_map = tokens_to_map(slice, prev.q_h, prev.q_w);  // (n_k, q_h, q_w)
        parts.push_back(map_to_tokens(bilinear_resize(as_map, 2 * prev.q_h, 2 * prev.q_w)));
    }
    AttentionState out;
    out.scores = concat(parts, 0);
    out.n_q = prev.n_q * 4;
    out.n_k = prev.n_k;
    out.q_h = 2 * prev.q_h;
    out.q_w = 2 * prev.q_w;
    return out;
}

FusionResult fusion_attention(const TensorPtr& scores, const TensorPtr& message,
                              const TensorPtr& alpha1, const TensorPtr& alpha2) {
    if (scores->shape != message->shape)
        throw DimensionError("fusion_attention shapes differ: " + shape_str(scores->shape) +
                             " vs " + shape_str(message->shape));
    FusionResult r;
    r.message = add(scale_by(scores, alpha1), scale_by(message, alpha2));
    r.attn = softmax_rows(r.message);
    return r;
}

namespace {

TensorPtr gather_rows(const TensorPtr& a, const std::vector<std::int64_t>& idx) {
    return transpose(gather_columns(transpose(a), idx));
}

}  // namespace

std::int64_t retained_keys(double retention, std::int64_t n_k) {
    if (retention <= 0.0 || retention > 1.0)
        throw ConfigError("retention ratio must be in (0,1], got " + std::to_string(retention));
    const auto k = static_cast<std::int64_t>(
        std::ceil(retention * static_cast<double>(n_k) - 1e-9));
    return std::max<std::int64_t>(1, std::min(k, n_k));
}

SelectiveResult selective_attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                                    const TensorPtr& prev_message, double retention,
                                    std::int64_t c_scale) {
    const std::int64_t n_k = k->dim(0);
    if (prev_message->dim(1) != n_k)
        throw DimensionError("message key width " + std::to_string(prev_message->dim(1)) +
                             " does not match key count " + std::to_string(n_k));
    SelectiveResult r;
    r.kept = topk_indices(column_means(*prev_message), retained_keys(retention, n_k));
    auto k_imp = gather_rows(k, r.kept);
    auto a_imp = attention_scores(q, k_imp, c_scale);
    r.attn = softmax_rows(a_imp);  // softmax over the kept columns only
    r.v_imp = gather_rows(v, r.kept);
    r.message = scatter_columns(a_imp, r.kept, n_k);
    return r;
}

MultiTaskSequence reshape_up_bilinear(const MultiTaskSequence& seq, std::int64_t up) {
    if (up < 1) throw ArgumentError("up factor must be >= 1");
    if (up == 1) return seq;
    std::vector<TensorPtr> parts;
    for (auto& slice : seq.task_slices()) {
        auto m = tokens_to_map(slice, seq.h, seq.w);
        parts.push_back(map_to_tokens(bilinear_resize(m, seq.h * up, seq.w * up)));
    }
    return MultiTaskSequence::wrap(concat(parts, 0), seq.tasks, seq.h * up, seq.w * up);
}

void UpTransformerStage::init(ParamStore& ps, const std::string& name, std::int64_t stage_,
                              std::int64_t c_e, const StagePlan& plan, Rng& rng) {
    stage = stage_;
    if (stage > 0) up_conv.init(ps, name + ".up", plan.in_c, plan.c_attn, 3, 1, 1, rng);
    if (stage > 0) efa_up.init(ps, name + ".efa.up", c_e, c_e, 1LL << stage, rng);
    efa_conv.init(ps, name + ".efa.conv", c_e, plan.c_attn, 3, 1, 1, true, rng);
    ln.init(ps, name + ".ln", plan.c_attn);
    q_conv.init(ps, name + ".q.conv", plan.c_attn, plan.c_attn, 3, 2, 1, true, rng);
    wq.init(ps, name + ".wq", plan.c_attn, plan.c_attn, false, rng);
    wk.init(ps, name + ".wk", plan.c_attn, plan.c_attn, false, rng);
    wv.init(ps, name + ".wv", plan.c_attn, plan.c_attn, false, rng);
    // Blend weights start as plain attention.
    alpha1 = init_const(ps, name + ".a1", {1}, 1.0);
    alpha2 = init_const(ps, name + ".a2", {1}, 0.0);
}

MultiTaskSequence UpTransformerStage::reshape_and_up_conv(const MultiTaskSequence& seq,
                                                          bool training,
                                                          bool update_running) const {
    std::vector<TensorPtr> parts;
    for (auto& slice : seq.task_slices()) {
        auto m = tokens_to_map(slice, seq.h, seq.w);
        auto up = bilinear_resize(m, seq.h * 2, seq.w * 2);
        parts.push_back(map_to_tokens(up_conv.forward(up, training, update_running)));
    }
    return MultiTaskSequence::wrap(concat(parts, 0), seq.tasks, seq.h * 2, seq.w * 2);
}

MultiTaskSequence UpTransformerStage::efa_inject(const MultiTaskSequence& f_up,
                                                 const TensorPtr& tap) const {
    const std::int64_t hw = tap->dim(0);
    // Tap grid is the encoder grid; stages 1/2 upsample it by 2/4 first.
    const std::int64_t scale_f = stage == 0 ? 1 : (1LL << stage);
    const std::int64_t h0 = f_up.h / scale_f, w0 = f_up.w / scale_f;
    if (hw != h0 * w0)
        throw DimensionError("encoder tap grid " + std::to_string(hw) +
                             " does not match decoder stage grid " + std::to_string(h0 * w0));
    auto m = tokens_to_map(tap, h0, w0);
    if (stage > 0) m = efa_up.forward(m);
    auto tok = map_to_tokens(efa_conv.forward(m));
    std::vector<TensorPtr> tiled(static_cast<std::size_t>(f_up.tasks), tok);
    return MultiTaskSequence::wrap(add(f_up.tokens, concat(tiled, 0)), f_up.tasks, f_up.h, f_up.w);
}

UpTransformerStage::QKV UpTransformerStage::qkv_project(const MultiTaskSequence& f_prime,
                                                        const StagePlan& plan) const {
    if (f_prime.h % 2 != 0 || f_prime.w % 2 != 0 || f_prime.h % plan.pool_stride != 0 ||
        f_prime.w % plan.pool_stride != 0)
        throw DimensionError("stage " + std::to_string(stage) + " grid " +
                             std::to_string(f_prime.h) + "x" + std::to_string(f_prime.w) +
                             " is not divisible by the query stride and pool stride");
    std::vector<TensorPtr> q_parts, kv_parts;
    for (auto& slice : f_prime.task_slices()) {
        auto m = tokens_to_map(slice, f_prime.h, f_prime.w);
        q_parts.push_back(map_to_tokens(q_conv.forward(m)));
        kv_parts.push_back(map_to_tokens(avg_pool2d(m, plan.pool_stride)));
    }
    auto q_tokens = concat(q_parts, 0);
    auto kv_tokens = concat(kv_parts, 0);
    QKV out;
    out.q = wq.forward(q_tokens);
    out.k = wk.forward(kv_tokens);
    out.v = wv.forward(kv_tokens);
    return out;
}

UpTransformerStage::Result UpTransformerStage::forward(
    const MultiTaskSequence& f_in, const std::vector<AttentionState>* prev_message,
    const TensorPtr& tap, const DecoderConfig& cfg, const StagePlan& plan, bool training,
    bool update_running) const {
    MultiTaskSequence f_up =
        stage == 0 ? f_in : reshape_and_up_conv(f_in, training, update_running);
    const bool use_efa = stage == 0 ? cfg.efa_stage0 : cfg.efa;
    if (use_efa && tap) f_up = efa_inject(f_up, tap);

    auto f_prime =
        MultiTaskSequence::wrap(ln.forward(f_up.tokens), f_up.tasks, f_up.h, f_up.w);
    auto qkv = qkv_project(f_prime, plan);

    const std::int64_t heads = cfg.heads;
    if (plan.c_attn % heads != 0)
        throw ConfigError("heads must divide the stage attention width " +
                          std::to_string(plan.c_attn));
    const std::int64_t head_dim = plan.c_attn / heads;
    auto qs = split_even(qkv.q, 1, heads);
    auto ks = split_even(qkv.k, 1, heads);
    auto vs = split_even(qkv.v, 1, heads);
    if (prev_message && static_cast<std::int64_t>(prev_message->size()) != heads)
        throw DimensionError("incoming message carries " +
                             std::to_string(prev_message->size()) + " heads, expected " +
                             std::to_string(heads));

    Result res;
    std::vector<TensorPtr> head_out;
    for (std::int64_t h = 0; h < heads; ++h) {
        AttentionState st;
        st.n_q = plan.n_q;
        st.n_k = plan.n_k;
        st.q_h = plan.q_h;
        st.q_w = plan.q_w;
        if (!prev_message) {
            // Stage 0: plain softmax attention; scores double as the message.
            auto a = attention_scores(qs[h], ks[h], head_dim);
            st.scores = a;
            head_out.push_back(matmul(softmax_rows(a), vs[h]));
        } else if (cfg.variant == AttentionVariant::Fusion) {
            auto msg = attention_message_pass((*prev_message)[h], f_prime.tasks);
            auto a = attention_scores(qs[h], ks[h], head_dim);
            auto fused = fusion_attention(a, msg.scores, alpha1, alpha2);
            st.scores = fused.message;
            head_out.push_back(matmul(fused.attn, vs[h]));
        } else {
            auto msg = attention_message_pass((*prev_message)[h], f_prime.tasks);
            auto sel = selective_attention(qs[h], ks[h], vs[h], msg.scores, cfg.retention,
                                           head_dim);
            st.scores = sel.message;
            st.kept = sel.kept;
            head_out.push_back(matmul(sel.attn, sel.v_imp));
        }
        res.message.push_back(std::move(st));
    }

    auto o_tokens = heads == 1 ? head_out[0] : concat(head_out, 1);
    auto o_seq = MultiTaskSequence::wrap(o_tokens, f_prime.tasks, plan.q_h, plan.q_w);
    auto o_up = reshape_up_bilinear(o_seq, 2);
    res.next = MultiTaskSequence::wrap(add(o_up.tokens, f_prime.tokens), f_prime.tasks, f_prime.h,
                                       f_prime.w);
    res.f_prime = f_prime;
    return res;
}

void InvptDecoder::init(ParamStore& ps, std::int64_t tasks, std::int64_t h0, std::int64_t w0,
                        std::int64_t c0, std::int64_t c_e, const DecoderConfig& cfg, Rng& rng) {
    cfg.validate();
    cfg_ = cfg;
    tasks_ = tasks;
    h0_ = h0;
    w0_ = w0;
    c0_ = c0;
    c_e_ = c_e;
    stages_.resize(3);
    out_proj_.resize(3);
    for (std::int64_t s = 0; s < 3; ++s) {
        const auto plan = StagePlan::make(tasks, h0, w0, c0, s);
        stages_[s].init(ps, "dec.s" + std::to_string(s), s, c_e, plan, rng);
        out_proj_[s].init(ps, "dec.out.proj" + std::to_string(s), plan.c_attn, c_out(), 1, 1, 0,
                          true, rng);
    }
    out_fuse_.init(ps, "dec.out.fuse", c_out(), c_out(), 3, 1, 1, rng);
}

InvptDecoder::Output InvptDecoder::forward(const MultiTaskSequence& f_c,
                                           const std::vector<TensorPtr>& taps, bool training,
                                           bool update_running) const {
    if (cfg_.stages < 1) throw ConfigError("decoder_forward called with stages == 0");
    if (f_c.tasks != tasks_ || f_c.h != h0_ || f_c.w != w0_ || f_c.c != c0_)
        throw DimensionError("decoder input sequence does not match the configured geometry");

    Output out;
    MultiTaskSequence f = f_c;
    const std::vector<AttentionState>* prev = nullptr;
    for (std::int64_t s = 0; s < cfg_.stages; ++s) {
        const auto plan = StagePlan::make(tasks_, h0_, w0_, c0_, s);
        const TensorPtr tap = s < static_cast<std::int64_t>(taps.size()) ? taps[s] : nullptr;
        auto res = stages_[s].forward(f, prev, tap, cfg_, plan, training, update_running);
        f = res.next;
        out.stage_out.push_back(res.next);
        out.messages.push_back(std::move(res.message));
        prev = &out.messages.back();
    }

    // Multi-scale output fusion: align every stage output to the (4H0,4W0)
    // grid, project to C_out, sum, then one shared Conv-BN-ReLU per task.
    const std::int64_t oh = 4 * h0_, ow = 4 * w0_;
    for (std::int64_t t = 0; t < tasks_; ++t) {
        TensorPtr acc;
        for (std::int64_t s = 0; s < cfg_.stages; ++s) {
            const auto& seq = out.stage_out[s];
            auto slice = seq.task_slices()[t];
            auto m = tokens_to_map(slice, seq.h, seq.w);
            auto proj = out_proj_[s].forward(bilinear_resize(m, oh, ow));
            acc = acc ? add(acc, proj) : proj;
        }
        out.refined.push_back(out_fuse_.forward(acc, training, update_running));
    }
    return out;
}

}  // namespace invpt
