#include "doctest.h"

#include <cmath>

#include "regiondiff/codec.hpp"
#include "regiondiff/rng.hpp"

using namespace regiondiff;

namespace {

RgbImage filled(int h, int w, float v) { return RgbImage(h, w, v); }

double block_mean(const RgbImage& img, int br, int bc, int ch) {
    double s = 0.0;
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) s += img.at(br * 8 + r, bc * 8 + c, ch);
    return s / 64.0;
}

}  // namespace

TEST_CASE("encode constant images") {
    const BlockMeanCodec codec;
    const auto white = codec.encode(filled(16, 24, 1.0f));
    CHECK(white.height == 2);
    CHECK(white.width == 3);
    CHECK(white.channels == 4);
    for (float v : white.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
    for (float v : codec.encode(filled(8, 8, 0.0f)).data) CHECK(v == 0.0f);
}

TEST_CASE("encode of a pixel checkerboard gives 0.5 blocks") {
    const BlockMeanCodec codec;
    RgbImage img(16, 16);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = static_cast<float>((r + c) % 2);
    for (float v : codec.encode(img).data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("encode rejects sizes that are not multiples of 8") {
    const BlockMeanCodec codec;
    CHECK_THROWS_AS(codec.encode(filled(12, 16, 0.0f)), ShapeError);
}

TEST_CASE("decode shape and constant latents") {
    const BlockMeanCodec codec;
    const LatentCanvas c(3, 5, 4, 0.37f);
    const auto img = codec.decode(c);
    CHECK(img.height == 24);
    CHECK(img.width == 40);
    for (float v : img.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-6));
}

TEST_CASE("decode(encode(img)) keeps every 8x8 block mean") {
    const BlockMeanCodec codec;
    RgbImage img(48, 64);
    std::vector<float> noise(img.data.size());
    fill_gaussian({5, NoisePurpose::initial_latent, 0, 0}, noise);
    for (std::size_t k = 0; k < img.data.size(); ++k) {
        img.data[k] = std::clamp(0.5f + 0.04f * noise[k], 0.3f, 0.7f);
    }
    const auto out = codec.decode(codec.encode(img));
    for (int br = 0; br < 6; ++br)
        for (int bc = 0; bc < 8; ++bc)
            for (int ch = 0; ch < 3; ++ch)
                REQUIRE(block_mean(out, br, bc, ch) == doctest::Approx(block_mean(img, br, bc, ch)).epsilon(1e-5));
}

TEST_CASE("encode(decode(x)) is the identity on channels 0-2 without clamping") {
    const BlockMeanCodec codec;
    LatentCanvas x(5, 7, 4);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 7; ++c)
            for (int ch = 0; ch < 4; ++ch) x.at(r, c, ch) = 0.4f + 0.03f * static_cast<float>((r * 3 + c + ch) % 5);
    const auto back = codec.encode(codec.decode(x));
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 7; ++c)
            for (int ch = 0; ch < 3; ++ch) REQUIRE(back.at(r, c, ch) == doctest::Approx(x.at(r, c, ch)).epsilon(1e-5));
}

TEST_CASE("decode clamps to [0,1] and is deterministic") {
    const BlockMeanCodec codec;
    LatentCanvas x(4, 4, 4);
    fill_gaussian({1, NoisePurpose::initial_latent, 0, 0}, x.data);
    const auto a = codec.decode(x);
    for (float v : a.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }
    CHECK(a == codec.decode(x));
}

TEST_CASE("codec kinds share the math and differ in latency") {
    auto standard = make_codec(CodecKind::standard);
    auto tiny = make_codec(CodecKind::tiny);
    const LatentCanvas x(2, 2, 4, 0.25f);
    CHECK(standard->decode(x) == tiny->decode(x));
    CHECK(dynamic_cast<const BlockMeanCodec&>(*tiny).decode_latency() <
          dynamic_cast<const BlockMeanCodec&>(*standard).decode_latency());
    CHECK(standard->name() == "standard");
    CHECK(tiny->name() == "tiny");
}
