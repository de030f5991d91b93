#include <doctest.h>

#include "invpt/encoder.hpp"
#include "oracles.hpp"

using namespace invpt;

namespace {

EncoderConfig micro_cfg() {
    EncoderConfig c;
    c.patch = 2;
    c.depth = 8;
    c.width = 8;
    c.heads = 2;
    c.image_h = 8;
    c.image_w = 8;
    return c;
}

TensorPtr rand_image(std::int64_t h, std::int64_t w, std::uint64_t seed) {
    Rng rng(seed);
    auto img = Tensor::zeros({3, h, w});
    for (auto& v : img->data) v = rng.uniform(0.0, 1.0);
    return img;
}

void zero_all(ParamStore& ps) {
    for (const auto& e : ps.entries())
        if (e.trainable) std::fill(e.tensor->data.begin(), e.tensor->data.end(), 0.0);
}

}  // namespace

TEST_SUITE("encoder") {
    TEST_CASE("config validation") {
        auto c = micro_cfg();
        c.patch = 3;
        CHECK_THROWS_AS(c.validate(), ConfigError);  // 3 does not divide 8
        c = micro_cfg();
        c.depth = 6;
        CHECK_THROWS_AS(c.validate(), ConfigError);  // not a multiple of 4
        c = micro_cfg();
        c.heads = 3;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }

    TEST_CASE("zero weights and zero image give zero tokens") {
        ParamStore ps;
        Rng rng(1);
        Encoder enc;
        enc.init(ps, micro_cfg(), rng);
        zero_all(ps);
        auto tokens = enc.patch_embed(Tensor::zeros({3, 8, 8}));
        for (double v : tokens->data) CHECK(v == 0.0);
    }

    TEST_CASE("patch=1 reduces to a per-pixel linear map") {
        EncoderConfig c = micro_cfg();
        c.patch = 1;  // grid 8x8
        ParamStore ps;
        Rng rng(2);
        Encoder enc;
        enc.init(ps, c, rng);
        auto img = rand_image(8, 8, 3);
        auto tokens = enc.patch_embed(img);
        auto w = ps.find("enc.patch.w");
        auto b = ps.find("enc.patch.b");
        auto pos = ps.find("enc.pos");
        // check a handful of pixels against the explicit linear map
        for (std::int64_t p : {0L, 13L, 63L}) {
            for (std::int64_t o = 0; o < c.width; ++o) {
                double want = b->data[o] + pos->data[p * c.width + o];
                for (std::int64_t ch = 0; ch < 3; ++ch)
                    want += img->data[ch * 64 + p] * w->data[ch * c.width + o];
                CHECK(tokens->data[p * c.width + o] == doctest::Approx(want).epsilon(1e-12));
            }
        }
    }

    TEST_CASE("token count and width for any valid config") {
        for (auto [patch, h, w] : {std::tuple<int, int, int>{2, 8, 16},
                                   {4, 16, 16},
                                   {2, 16, 8}}) {
            EncoderConfig c = micro_cfg();
            c.patch = patch;
            c.image_h = h;
            c.image_w = w;
            ParamStore ps;
            Rng rng(4);
            Encoder enc;
            enc.init(ps, c, rng);
            auto out = enc.forward(rand_image(h, w, 5));
            CHECK(out.final_tokens->shape == Shape{c.tokens(), c.width});
            REQUIRE(out.taps.size() == 3);
            for (const auto& t : out.taps) CHECK(t->shape == Shape{c.tokens(), c.width});
        }
    }

    TEST_CASE("zero residual branches make a block the identity") {
        ParamStore ps;
        Rng rng(6);
        Encoder enc;
        enc.init(ps, micro_cfg(), rng);
        // zero the attention output projection and the second MLP layer
        for (const auto& e : ps.entries())
            if (e.name.find("blk0.wo") != std::string::npos ||
                e.name.find("blk0.fc2") != std::string::npos)
                std::fill(e.tensor->data.begin(), e.tensor->data.end(), 0.0);
        Rng trng(7);
        auto tokens = Tensor::zeros({16, 8});
        for (auto& v : tokens->data) v = trng.uniform(-1.0, 1.0);
        auto out = enc.blocks()[0].forward(tokens);
        CHECK(out->data == tokens->data);
    }

    TEST_CASE("blocks are permutation equivariant") {
        ParamStore ps;
        Rng rng(8);
        Encoder enc;
        enc.init(ps, micro_cfg(), rng);
        Rng trng(9);
        auto tokens = Tensor::zeros({16, 8});
        for (auto& v : tokens->data) v = trng.uniform(-1.0, 1.0);
        // reverse-order permutation
        auto perm = Tensor::zeros({16, 8});
        for (std::int64_t i = 0; i < 16; ++i)
            for (std::int64_t j = 0; j < 8; ++j)
                perm->data[i * 8 + j] = tokens->data[(15 - i) * 8 + j];
        auto a = enc.blocks()[0].forward(tokens);
        auto b = enc.blocks()[0].forward(perm);
        for (std::int64_t i = 0; i < 16; ++i)
            for (std::int64_t j = 0; j < 8; ++j)
                CHECK(b->data[i * 8 + j] ==
                      doctest::Approx(a->data[(15 - i) * 8 + j]).epsilon(1e-12));
    }

    TEST_CASE("taps are captured after blocks L/4, L/2, 3L/4") {
        ParamStore ps;
        Rng rng(10);
        Encoder enc;
        enc.init(ps, micro_cfg(), rng);  // depth 8 -> taps after blocks 2, 4, 6
        auto img = rand_image(8, 8, 11);
        auto out = enc.forward(img);
        auto tokens = enc.patch_embed(img);
        for (std::int64_t i = 0; i < 8; ++i) {
            tokens = enc.blocks()[i].forward(tokens);
            if (i == 1) CHECK(tokens->data == out.taps[0]->data);
            if (i == 3) CHECK(tokens->data == out.taps[1]->data);
            if (i == 5) CHECK(tokens->data == out.taps[2]->data);
        }
        CHECK(tokens->data == out.final_tokens->data);
    }

    TEST_CASE("same seed twice gives bit-identical taps") {
        auto run = [] {
            ParamStore ps;
            Rng rng(12);
            Encoder enc;
            enc.init(ps, micro_cfg(), rng);
            return enc.forward(rand_image(8, 8, 13));
        };
        auto a = run(), b = run();
        for (int i = 0; i < 3; ++i) CHECK(a.taps[i]->data == b.taps[i]->data);
        CHECK(a.final_tokens->data == b.final_tokens->data);
    }
}
