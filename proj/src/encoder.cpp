#include "invpt/encoder.hpp"

#include <cmath>

namespace invpt {

void EncoderConfig::validate() const {
    if (patch < 1) throw ConfigError("encoder patch must be >= 1");
    if (image_h % patch != 0 || image_w % patch != 0)
        throw ConfigError("patch size " + std::to_string(patch) +
                          " must divide image extents " + std::to_string(image_h) + "x" +
                          std::to_string(image_w));
    if (depth < 4 || depth % 4 != 0)
        throw ConfigError("encoder depth must be a positive multiple of 4, got " +
                          std::to_string(depth));
    if (width < 1 || heads < 1 || width % heads != 0)
        throw ConfigError("encoder heads must divide width");
}

void EncoderBlock::init(ParamStore& ps, const std::string& name, std::int64_t width,
                        std::int64_t heads_, Rng& rng) {
    heads = heads_;
    ln1.init(ps, name + ".ln1", width);
    wq.init(ps, name + ".wq", width, width, true, rng);
    wk.init(ps, name + ".wk", width, width, true, rng);
    wv.init(ps, name + ".wv", width, width, true, rng);
    wo.init(ps, name + ".wo", width, width, true, rng);
    ln2.init(ps, name + ".ln2", width);
    fc1.init(ps, name + ".fc1", width, 2 * width, true, rng);
    fc2.init(ps, name + ".fc2", 2 * width, width, true, rng);
}

TensorPtr EncoderBlock::forward(const TensorPtr& tokens) const {
    auto h = ln1.forward(tokens);
    auto q = wq.forward(h);
    auto k = wk.forward(h);
    auto v = wv.forward(h);
    const std::int64_t dh = tokens->dim(1) / heads;
    const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<TensorPtr> head_out;
    auto qs = split_even(q, 1, heads);
    auto ks = split_even(k, 1, heads);
    auto vs = split_even(v, 1, heads);
    for (std::int64_t i = 0; i < heads; ++i) {
        auto attn = softmax_rows(scale(matmul(qs[i], transpose(ks[i])), scale_f));
        head_out.push_back(matmul(attn, vs[i]));
    }
    auto x = add(tokens, wo.forward(heads == 1 ? head_out[0] : concat(head_out, 1)));
    auto m = ln2.forward(x);
    return add(x, fc2.forward(relu(fc1.forward(m))));
}

void Encoder::init(ParamStore& ps, const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    cfg_ = cfg;
    const std::int64_t p = cfg.patch;
    patch_proj_.init(ps, "enc.patch", 3 * p * p, cfg.width, true, rng);
    pos_ = init_normal(ps, "enc.pos", {cfg.tokens(), cfg.width}, rng);
    blocks_.resize(cfg.depth);
    for (std::int64_t i = 0; i < cfg.depth; ++i)
        blocks_[i].init(ps, "enc.blk" + std::to_string(i), cfg.width, cfg.heads, rng);

    // Pixel permutation mapping (token, c*p*p + py*p + px) to the flat image
    // index, so patchify is a single differentiable gather.
    patch_index_.clear();
    patch_index_.reserve(cfg.tokens() * 3 * p * p);
    for (std::int64_t ty = 0; ty < cfg.h0(); ++ty)
        for (std::int64_t tx = 0; tx < cfg.w0(); ++tx)
            for (std::int64_t c = 0; c < 3; ++c)
                for (std::int64_t py = 0; py < p; ++py)
                    for (std::int64_t px = 0; px < p; ++px)
                        patch_index_.push_back((c * cfg.image_h + ty * p + py) * cfg.image_w +
                                               tx * p + px);
}

TensorPtr Encoder::patch_embed(const TensorPtr& image) const {
    if (image->ndim() != 3 || image->dim(0) != 3 || image->dim(1) != cfg_.image_h ||
        image->dim(2) != cfg_.image_w)
        throw DimensionError("encoder expects a (3," + std::to_string(cfg_.image_h) + "," +
                             std::to_string(cfg_.image_w) + ") image, got " +
                             shape_str(image->shape));
    const std::int64_t p = cfg_.patch;
    auto flat = reshape(image, {1, image->numel()});
    auto patches = reshape(gather_columns(flat, patch_index_), {cfg_.tokens(), 3 * p * p});
    return add(patch_proj_.forward(patches), pos_);
}

EncoderOutput Encoder::forward(const TensorPtr& image) const {
    auto tokens = patch_embed(image);
    EncoderOutput out;
    const std::int64_t quarter = cfg_.depth / 4;
    for (std::int64_t i = 0; i < cfg_.depth; ++i) {
        tokens = blocks_[i].forward(tokens);
        if (i + 1 == quarter || i + 1 == 2 * quarter || i + 1 == 3 * quarter)
            out.taps.push_back(tokens);
    }
    out.final_tokens = tokens;
    return out;
}

}  // namespace invpt
