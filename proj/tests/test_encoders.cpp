#include <random>

#include <gtest/gtest.h>

#include "lrclr/model.hpp"

using namespace lrclr;

namespace {

EncoderConfig tiny() {
    EncoderConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.vocab_size = 12;
    c.max_context = 6;
    return c;
}

template <typename Encoder>
Encoder initialized(const EncoderConfig& cfg, std::uint64_t seed, double std_dev = 0.3) {
    Encoder enc(cfg);
    std::mt19937_64 rng(seed);
    initialize_parameters([&](const ParamVisitor& fn) { enc.visit("enc", fn); }, rng, std_dev);
    return enc;
}

Image random_image(std::size_t side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(side);
    for (auto& p : img.pixels) p = u(rng);
    return img;
}

void expect_attention_stochastic(const AttentionStack& stack, std::size_t layers, std::size_t heads, std::size_t n) {
    ASSERT_EQ(stack.layers(), layers);
    ASSERT_EQ(stack.heads(), heads);
    ASSERT_EQ(stack.seq_len(), n);
    for (const auto& layer : stack.weights)
        for (const auto& a : layer)
            for (std::size_t r = 0; r < n; ++r) {
                double sum = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    EXPECT_GE(a(r, c), 0.0);
                    EXPECT_LE(a(r, c), 1.0);
                    sum += a(r, c);
                }
                EXPECT_NEAR(sum, 1.0, 1e-9);
            }
}

double norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s);
}

}  // namespace

TEST(Patchify, Layouts) {
    Image img(4);
    for (std::size_t i = 0; i < 16; ++i) img.pixels[i] = static_cast<double>(i) / 16.0;
    const Tensor p = patchify(img, 2);
    ASSERT_EQ(p.shape(), (Shape{4, 4}));
    EXPECT_EQ(p(0, 0), 0.0 / 16);
    EXPECT_EQ(p(0, 1), 1.0 / 16);
    EXPECT_EQ(p(0, 2), 4.0 / 16);
    EXPECT_EQ(p(0, 3), 5.0 / 16);
    EXPECT_EQ(p(1, 0), 2.0 / 16);
    EXPECT_EQ(p(3, 3), 15.0 / 16);

    Image two(2, 0.25);
    const Tensor whole = patchify(two, 2);
    EXPECT_EQ(whole.shape(), (Shape{1, 4}));

    EXPECT_EQ(patchify(Image(32), 8).rows(), 16u);
    EXPECT_THROW(patchify(Image(10), 4), ConfigError);
}

TEST(Patchify, ClampsToUnitInterval) {
    Image img(2);
    img.pixels = {-0.5, 0.5, 1.5, 1.0};
    const Tensor p = patchify(img, 2);
    EXPECT_EQ(p[0], 0.0);
    EXPECT_EQ(p[2], 1.0);
}

TEST(EncoderConfig, Validation) {
    EncoderConfig c = tiny();
    c.n_heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.max_context = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.image_size = 9;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_NO_THROW(EncoderConfig::full_scale().validate());
    EXPECT_EQ(EncoderConfig::full_scale().d_head(), 64u);
}

TEST(ImageEncoder, ContractsHold) {
    const EncoderConfig cfg = tiny();
    const auto enc = initialized<ImageEncoder>(cfg, 1);
    Tape tape(false);
    const Image img = random_image(8, 2);
    const EncodedSequence a = enc.encode(tape, cfg, img);
    const EncodedSequence b = enc.encode(tape, cfg, img);
    EXPECT_NEAR(norm(a.global_embedding), 1.0, 1e-9);
    EXPECT_EQ(a.tokens.shape(), (Shape{5, 8}));
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(a.class_embedding[j], a.tokens(0, j));
    expect_attention_stochastic(a.attention, 2, 2, 5);
    for (std::size_t i = 0; i < a.tokens.size(); ++i) EXPECT_EQ(a.tokens[i], b.tokens[i]);
    EXPECT_THROW(enc.encode(tape, cfg, Image(16)), ShapeError);
}

// Patch embeddings before positions are added depend on patch content only.
TEST(ImageEncoder, PatchEmbeddingsPermuteWithPatches) {
    const EncoderConfig cfg = tiny();
    const auto enc = initialized<ImageEncoder>(cfg, 3);
    Image img = random_image(8, 4);
    Image swapped = img;
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) std::swap(swapped.at(r, c), swapped.at(r, c + 4));
    Tape tape(false);
    const Tensor e1 = enc.patch_embed(tape, patchify(img, 4));
    const Tensor e2 = enc.patch_embed(tape, patchify(swapped, 4));
    for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_EQ(e1(0, j), e2(1, j));
        EXPECT_EQ(e1(1, j), e2(0, j));
        EXPECT_EQ(e1(2, j), e2(2, j));
    }
}

TEST(TextEncoder, ContractsHold) {
    const EncoderConfig cfg = tiny();
    const auto enc = initialized<TextEncoder>(cfg, 5);
    Tape tape(false);
    const std::vector<Token> words{3, 1, 4};
    const EncodedSequence a = enc.encode(tape, cfg, words);
    EXPECT_NEAR(norm(a.global_embedding), 1.0, 1e-9);
    EXPECT_FALSE(a.truncated);
    expect_attention_stochastic(a.attention, 2, 2, 4);
    const EncodedSequence b = enc.encode(tape, cfg, words);
    for (std::size_t i = 0; i < a.global_embedding.size(); ++i) EXPECT_EQ(a.global_embedding[i], b.global_embedding[i]);
}

TEST(TextEncoder, TruncatesAndRejects) {
    const EncoderConfig cfg = tiny();
    const auto enc = initialized<TextEncoder>(cfg, 6);
    Tape tape(false);
    const std::vector<Token> longer{1, 2, 3, 4, 5, 6, 7};
    const EncodedSequence e = enc.encode(tape, cfg, longer);
    EXPECT_TRUE(e.truncated);
    EXPECT_EQ(e.tokens.rows(), cfg.max_context);
    const std::vector<Token> first5{1, 2, 3, 4, 5};
    const EncodedSequence f = enc.encode(tape, cfg, first5);
    for (std::size_t i = 0; i < e.global_embedding.size(); ++i) EXPECT_EQ(e.global_embedding[i], f.global_embedding[i]);

    const std::vector<Token> unknown{1, 12};
    EXPECT_THROW(enc.encode(tape, cfg, unknown), InputError);
    const std::vector<Token> negative{-1};
    EXPECT_THROW(enc.encode(tape, cfg, negative), InputError);
    EXPECT_THROW(enc.encode(tape, cfg, std::vector<Token>{}), InputError);
}

TEST(Encoders, GradcheckThroughFullTowers) {
    const EncoderConfig cfg = tiny();
    auto image = initialized<ImageEncoder>(cfg, 7);
    auto text = initialized<TextEncoder>(cfg, 8);
    const Image img = random_image(8, 9);
    const std::vector<Token> words{2, 5, 7};
    const Tensor target = Tensor({1, 8}, {0.3, -0.2, 0.5, 0.1, -0.7, 0.4, 0.2, -0.1});

    std::vector<Tensor> leaves;
    image.visit("image", [&](const std::string&, Tensor& p) { leaves.push_back(p); });
    text.visit("text", [&](const std::string&, Tensor& p) { leaves.push_back(p); });
    const auto r = gradcheck(
        [&](Tape& t) {
            const Tensor v = image.encode(t, cfg, img).global_embedding;
            const Tensor w = text.encode(t, cfg, words).global_embedding;
            return t.add(t.sum(t.mul(v, w)), t.sum(t.mul(t.sub(v, w), target)));
        },
        leaves, 1e-5);
    EXPECT_LT(r.max_relative_error, 1e-4) << "leaf " << r.worst_leaf << " index " << r.worst_index;
}
