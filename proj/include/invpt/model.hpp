#pragma once

#include "invpt/checkpoint.hpp"
#include "invpt/decoder.hpp"
#include "invpt/encoder.hpp"
#include "invpt/prelim.hpp"

namespace invpt {

struct ModelConfig {
    EncoderConfig encoder;
    std::vector<TaskSpec> tasks;
    std::int64_t c_p = 32;
    std::int64_t c0 = 64;
    DecoderConfig decoder;

    void validate() const;
};

// Full pipeline: shared encoder, per-task preliminary decoders, the staged
// decoder, and per-task prediction heads at image resolution. With
// decoder.stages == 0 the model degrades to the preliminary-decoders-only
// multi-task baseline and the upsampled preliminary predictions are the final
// predictions.
class MultiTaskModel {
public:
    void init(const ModelConfig& cfg, std::uint64_t seed);

    struct Output {
        std::vector<TensorPtr> prelim_pred;  // per task (out_ch, H_img, W_img)
        std::vector<TensorPtr> final_pred;   // per task (out_ch, H_img, W_img)
    };
    Output forward(const TensorPtr& image, bool training, bool update_running) const;

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const Encoder& encoder() const { return encoder_; }
    const PrelimStage& prelim() const { return prelim_; }
    const InvptDecoder& decoder() const { return decoder_; }

private:
    ModelConfig cfg_;
    ParamStore params_;
    Encoder encoder_;
    PrelimStage prelim_;
    InvptDecoder decoder_;
    std::vector<Conv2d> heads_;
};

}  // namespace invpt
