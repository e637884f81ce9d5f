#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "lrclr/cross_modal.hpp"

using namespace lrclr;

namespace {

CrossModalConfig small() {
    CrossModalConfig c;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    return c;
}

CrossModalTransformer initialized(const CrossModalConfig& cfg, std::uint64_t seed) {
    CrossModalTransformer m(cfg);
    std::mt19937_64 rng(seed);
    initialize_parameters([&](const ParamVisitor& fn) { m.visit("cross", fn); }, rng, 0.3);
    return m;
}

Tensor random_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(n * d);
    for (auto& x : v) x = g(rng);
    return Tensor({n, d}, std::move(v));
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& order) {
    std::vector<double> v;
    for (std::size_t r : order)
        for (std::size_t c = 0; c < t.cols(); ++c) v.push_back(t(r, c));
    return Tensor({order.size(), t.cols()}, std::move(v));
}

double norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s);
}

}  // namespace

TEST(CrossModal, OutputsAreUnitNormAndAttentionIsBounded) {
    const CrossModalConfig cfg = small();
    const auto m = initialized(cfg, 1);
    std::mt19937_64 rng(2);
    const CrossModalInput in(random_rows(4, 8, rng), random_rows(6, 8, rng));
    Tape tape(false);
    const LocalEmbeddings e = m.fuse(tape, cfg, in);
    EXPECT_EQ(e.v_l.shape(), (Shape{1, 8}));
    EXPECT_EQ(e.t_l.shape(), (Shape{1, 8}));
    EXPECT_NEAR(norm(e.v_l), 1.0, 1e-12);
    EXPECT_NEAR(norm(e.t_l), 1.0, 1e-12);
    EXPECT_FALSE(e.empty_regions);
    ASSERT_EQ(e.interp_attention.size(), 3u);
    double total = 0.0;
    for (double a : e.interp_attention) {
        EXPECT_GT(a, 0.0);
        total += a;
    }
    EXPECT_LT(total, 1.0);

    const std::vector<std::size_t> patches{5, 1, 9};
    const auto ranked = rank_by_score(patches, e.interp_attention);
    double renorm = 0.0;
    for (const auto& r : ranked) renorm += r.score;
    EXPECT_NEAR(renorm, 1.0, 1e-12);
}

// No positions inside the fusion: region order is irrelevant to the local
// embeddings and attention follows its region.
TEST(CrossModal, RegionPermutationEquivariance) {
    const CrossModalConfig cfg = small();
    const auto m = initialized(cfg, 3);
    std::mt19937_64 rng(4);
    const Tensor image = random_rows(5, 8, rng), text = random_rows(3, 8, rng);
    const std::vector<std::size_t> order{0, 3, 1, 4, 2};
    Tape tape(false);
    const LocalEmbeddings a = m.fuse(tape, cfg, CrossModalInput(image, text));
    const LocalEmbeddings b = m.fuse(tape, cfg, CrossModalInput(permute_rows(image, order), text));
    for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_NEAR(a.v_l[j], b.v_l[j], 1e-12);
        EXPECT_NEAR(a.t_l[j], b.t_l[j], 1e-12);
    }
    for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(b.interp_attention[r], a.interp_attention[order[r + 1] - 1], 1e-12);
}

TEST(CrossModal, EmptyRegionsAreFlagged) {
    const CrossModalConfig cfg = small();
    const auto m = initialized(cfg, 5);
    std::mt19937_64 rng(6);
    Tape tape(false);
    const LocalEmbeddings e = m.fuse(tape, cfg, CrossModalInput(random_rows(1, 8, rng), random_rows(3, 8, rng)));
    EXPECT_TRUE(e.empty_regions);
    EXPECT_TRUE(e.interp_attention.empty());
    EXPECT_NEAR(norm(e.v_l), 1.0, 1e-12);
}

TEST(CrossModal, PairsAreIndependent) {
    const CrossModalConfig cfg = small();
    const auto m = initialized(cfg, 7);
    std::mt19937_64 rng(8);
    const CrossModalInput first(random_rows(3, 8, rng), random_rows(4, 8, rng));
    const CrossModalInput second(random_rows(2, 8, rng), random_rows(5, 8, rng));
    Tape t1(false), t2(false);
    const LocalEmbeddings alone = m.fuse(t1, cfg, first);
    m.fuse(t2, cfg, second);
    const LocalEmbeddings after = m.fuse(t2, cfg, first);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(alone.v_l[j], after.v_l[j]);
    EXPECT_EQ(alone.interp_attention, after.interp_attention);
}

TEST(CrossModal, InputValidation) {
    const CrossModalConfig cfg = small();
    const auto m = initialized(cfg, 9);
    std::mt19937_64 rng(10);
    Tape tape(false);
    EXPECT_THROW(m.fuse(tape, cfg, CrossModalInput(random_rows(2, 8, rng), random_rows(2, 4, rng))), ShapeError);
    CrossModalInput bad(random_rows(2, 8, rng), random_rows(2, 8, rng));
    std::swap(bad.modality_tags[0], bad.modality_tags[3]);
    EXPECT_THROW(m.fuse(tape, cfg, bad), ContractError);
    CrossModalConfig odd = cfg;
    odd.n_heads = 3;
    EXPECT_THROW(odd.validate(), ConfigError);
}

TEST(CrossModal, GradcheckThroughFusion) {
    const CrossModalConfig cfg = small();
    auto m = initialized(cfg, 11);
    std::mt19937_64 rng(12);
    Tensor image = random_rows(3, 8, rng), text = random_rows(4, 8, rng);
    image.set_requires_grad(true);
    text.set_requires_grad(true);
    std::vector<Tensor> leaves{image, text};
    m.visit("cross", [&](const std::string&, Tensor& p) { leaves.push_back(p); });
    const auto r = gradcheck(
        [&](Tape& t) {
            const LocalEmbeddings e = m.fuse(t, cfg, CrossModalInput(image, text));
            return t.add(t.sum(t.mul(e.v_l, e.t_l)), t.sum(t.scale(e.v_l, 0.3)));
        },
        leaves, 1e-5);
    EXPECT_LT(r.max_relative_error, 1e-4) << "leaf " << r.worst_leaf << " index " << r.worst_index;
}

TEST(RankRegions, StatedExampleAndTies) {
    const std::vector<std::size_t> patches{4, 9, 2};
    const std::vector<double> scores{0.2, 0.5, 0.3};
    const auto ranked = rank_by_score(patches, scores);
    ASSERT_EQ(ranked.size(), 3u);
    EXPECT_EQ(ranked[0].patch, 9u);
    EXPECT_EQ(ranked[1].patch, 2u);
    EXPECT_EQ(ranked[2].patch, 4u);
    EXPECT_NEAR(ranked[0].score, 0.5, 1e-15);

    const std::vector<std::size_t> tied{7, 3, 5};
    const std::vector<double> equal{0.1, 0.1, 0.2};
    const auto t = rank_by_score(tied, equal);
    EXPECT_EQ(t[0].patch, 5u);
    EXPECT_EQ(t[1].patch, 3u);
    EXPECT_EQ(t[2].patch, 7u);

    const std::vector<double> wrong{0.5};
    EXPECT_THROW(rank_by_score(patches, wrong), ContractError);

    LocalEmbeddings e;
    e.interp_attention = {0.1, 0.3};
    RegionSelection sel;
    sel.selected = {6, 1};
    EXPECT_EQ(rank_regions(e, sel)[0].patch, 1u);
    sel.selected = {6};
    EXPECT_THROW(rank_regions(e, sel), ContractError);
}
