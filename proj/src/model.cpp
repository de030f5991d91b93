#include "invpt/model.hpp"

namespace invpt {

void ModelConfig::validate() const {
    encoder.validate();
    decoder.validate();
    if (tasks.size() < 2) throw ConfigError("multi-task model needs at least 2 tasks");
    for (const auto& t : tasks) t.validate();
    if (c0 % 4 != 0) throw ConfigError("C0 must be divisible by 4");
    if (encoder.h0() % 4 != 0 || encoder.w0() % 4 != 0)
        throw ConfigError("encoder grid H0 x W0 must be divisible by 4, got " +
                          std::to_string(encoder.h0()) + "x" + std::to_string(encoder.w0()));
    if ((c0 / 4) % decoder.heads != 0)
        throw ConfigError("decoder heads must divide C0/4");
    if (c_p < 1) throw ConfigError("C_p must be positive");
}

void MultiTaskModel::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    cfg_ = cfg;
    Rng rng(seed);
    encoder_.init(params_, cfg.encoder, rng);
    prelim_.init(params_, cfg.tasks, cfg.encoder.width, cfg.c_p, cfg.c0, rng);
    decoder_.init(params_, static_cast<std::int64_t>(cfg.tasks.size()), cfg.encoder.h0(),
                  cfg.encoder.w0(), cfg.c0, cfg.encoder.width, cfg.decoder, rng);
    heads_.resize(cfg.tasks.size());
    for (std::size_t t = 0; t < cfg.tasks.size(); ++t)
        heads_[t].init(params_, "head." + cfg.tasks[t].name, decoder_.c_out(),
                       cfg.tasks[t].out_channels(), 1, 1, 0, true, rng);
}

MultiTaskModel::Output MultiTaskModel::forward(const TensorPtr& image, bool training,
                                               bool update_running) const {
    const std::int64_t img_h = cfg_.encoder.image_h, img_w = cfg_.encoder.image_w;
    auto enc = encoder_.forward(image);
    auto pre = prelim_.forward(enc.final_tokens, cfg_.encoder.h0(), cfg_.encoder.w0(), training,
                               update_running);

    Output out;
    for (const auto& p : pre.predictions)
        out.prelim_pred.push_back(bilinear_resize(p, img_h, img_w));

    if (cfg_.decoder.stages == 0) {
        out.final_pred = out.prelim_pred;
        return out;
    }

    auto dec = decoder_.forward(pre.combined, enc.taps, training, update_running);
    for (std::size_t t = 0; t < cfg_.tasks.size(); ++t)
        out.final_pred.push_back(
            bilinear_resize(heads_[t].forward(dec.refined[t]), img_h, img_w));
    return out;
}

}  // namespace invpt
