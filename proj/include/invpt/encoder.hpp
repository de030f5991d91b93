#pragma once

#include <cstdint>
#include <vector>

#include "invpt/layers.hpp"

namespace invpt {

struct EncoderConfig {
    std::int64_t patch = 4;
    std::int64_t depth = 8;  // divisible by 4; taps at depth/4, depth/2, 3*depth/4
    std::int64_t width = 32;
    std::int64_t heads = 2;
    std::int64_t image_h = 32;
    std::int64_t image_w = 32;

    std::int64_t h0() const { return image_h / patch; }
    std::int64_t w0() const { return image_w / patch; }
    std::int64_t tokens() const { return h0() * w0(); }
    void validate() const;
};

struct EncoderOutput {
    TensorPtr final_tokens;      // (H0*W0, C_e)
    std::vector<TensorPtr> taps; // exactly 3, shallow to deep, each (H0*W0, C_e)
};

// Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)); the MLP
// hidden width is 2x the embedding width.
struct EncoderBlock {
    LayerNorm ln1, ln2;
    Linear wq, wk, wv, wo;
    Linear fc1, fc2;
    std::int64_t heads = 1;

    void init(ParamStore& ps, const std::string& name, std::int64_t width, std::int64_t heads,
              Rng& rng);
    TensorPtr forward(const TensorPtr& tokens) const;
};

// Columnar encoder: patch embedding with learned positional offsets, `depth`
// identical blocks, and feature taps at uniformly spaced depths.
class Encoder {
public:
    void init(ParamStore& ps, const EncoderConfig& cfg, Rng& rng);
    TensorPtr patch_embed(const TensorPtr& image) const;
    EncoderOutput forward(const TensorPtr& image) const;
    const EncoderConfig& config() const { return cfg_; }
    const std::vector<EncoderBlock>& blocks() const { return blocks_; }

private:
    EncoderConfig cfg_;
    Linear patch_proj_;
    TensorPtr pos_;
    std::vector<std::int64_t> patch_index_;  // pixel permutation for patchify
    std::vector<EncoderBlock> blocks_;
};

}  // namespace invpt
