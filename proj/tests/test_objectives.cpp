#include <cmath>
#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "lrclr/objectives.hpp"

using namespace lrclr;

namespace {

Tensor unit_rows(std::size_t n, std::size_t d, std::mt19937_64& rng, bool grad = false) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(n * d);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += std::pow(v[r * d + c] = g(rng), 2);
        for (std::size_t c = 0; c < d; ++c) v[r * d + c] /= std::sqrt(s);
    }
    return Tensor({n, d}, std::move(v), grad);
}

// Direct evaluation of the image-to-text cross-entropy with plain loops.
double oracle_i2t(const Tensor& a, const Tensor& b, double tau) {
    const std::size_t n = a.rows(), d = a.cols();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(n);
        for (std::size_t k = 0; k < n; ++k) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += a(i, j) * b(k, j);
            s[k] = dot / tau;
        }
        double mx = s[0];
        for (double x : s) mx = std::max(mx, x);
        double z = 0.0;
        for (double x : s) z += std::exp(x - mx);
        total += -(s[i] - mx - std::log(z));
    }
    return total;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST(Similarity, StatedExamplesAndErrors) {
    Tape tape(false);
    const Tensor a = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor b = Tensor::matrix(2, 2, {0.6, 0.8, 1, 0});
    const Tensor s = similarity_matrix(tape, a, b, 0.5);
    EXPECT_DOUBLE_EQ(s(0, 0), 1.2);
    EXPECT_DOUBLE_EQ(s(0, 1), 2.0);
    EXPECT_DOUBLE_EQ(s(1, 0), 1.6);
    EXPECT_DOUBLE_EQ(s(1, 1), 0.0);
    EXPECT_THROW(similarity_matrix(tape, a, b, 0.0), ConfigError);
    EXPECT_THROW(similarity_matrix(tape, a, b, -1.0), ConfigError);
    EXPECT_THROW(similarity_matrix(tape, a, Tensor::matrix(1, 2, {1, 0}), 1.0), ShapeError);
}

TEST(LocalLoss, OrthonormalClosedForm) {
    Tape tape(false);
    const Tensor e = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const double got = local_contrastive(tape, e, e, 1.0)[0];
    EXPECT_NEAR(got, 2.0 * std::log(1.0 + std::exp(-1.0)), 1e-10);
}

TEST(LocalLoss, SinglePairIsExactlyZero) {
    std::mt19937_64 rng(1);
    Tape tape(false);
    const Tensor v = unit_rows(1, 6, rng), t = unit_rows(1, 6, rng);
    EXPECT_EQ(local_contrastive(tape, v, t, 0.07)[0], 0.0);
    EXPECT_EQ(global_contrastive(tape, v, t, 0.07)[0], 0.0);
}

TEST(LocalLoss, MatchesLoopOracle) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor v = unit_rows(5, 7, rng), t = unit_rows(5, 7, rng);
        Tape tape(false);
        for (double tau : {0.07, 0.5, 1.0, 3.0}) {
            EXPECT_NEAR(local_contrastive(tape, v, t, tau)[0], oracle_i2t(v, t, tau), 1e-10);
            EXPECT_NEAR(global_contrastive(tape, v, t, tau)[0], 0.5 * (oracle_i2t(v, t, tau) + oracle_i2t(t, v, tau)),
                        1e-10);
        }
    }
}

TEST(GlobalLoss, SymmetricInItsArguments) {
    std::mt19937_64 rng(3);
    const Tensor v = unit_rows(6, 5, rng), t = unit_rows(6, 5, rng);
    Tape tape(false);
    EXPECT_NEAR(global_contrastive(tape, v, t, 0.2)[0], global_contrastive(tape, t, v, 0.2)[0], 1e-12);
    // the local loss is one-directional
    EXPECT_GT(std::abs(local_contrastive(tape, v, t, 0.2)[0] - local_contrastive(tape, t, v, 0.2)[0]), 1e-6);
}

TEST(Combined, LambdaZeroIsBitwiseGlobal) {
    std::mt19937_64 rng(4);
    BatchEmbeddings b;
    b.v_g = unit_rows(8, 6, rng);
    b.t_g = unit_rows(8, 6, rng);
    b.v_l = unit_rows(8, 6, rng);
    b.t_l = unit_rows(8, 6, rng);
    b.lambda = 0.0;
    Tape tape(false);
    const LossTerms terms = combined_loss(tape, b);
    EXPECT_TRUE(same_bits(terms.total[0], terms.global[0]));
    EXPECT_TRUE(same_bits(terms.total[0], global_contrastive(tape, b.v_g, b.t_g, b.temperature_global)[0]));
}

TEST(Combined, WeightedSumExample) {
    // global = 1 and local = 2 built from constants: 1 + 0.5 * 2 = 2
    Tape tape(false);
    const Tensor g = Tensor::scalar(1.0), l = Tensor::scalar(2.0);
    const Tensor total = tape.add(g, tape.scale(l, 0.5));
    EXPECT_EQ(total[0], 2.0);

    std::mt19937_64 rng(5);
    BatchEmbeddings b;
    b.v_g = unit_rows(4, 3, rng);
    b.t_g = unit_rows(4, 3, rng);
    b.v_l = unit_rows(4, 3, rng);
    b.t_l = unit_rows(4, 3, rng);
    for (double lambda : {0.0, 0.25, 0.5, 2.0}) {
        b.lambda = lambda;
        const LossTerms terms = combined_loss(tape, b);
        EXPECT_NEAR(terms.total[0], terms.global[0] + lambda * terms.local[0], 1e-12);
    }
}

TEST(Combined, ValidatesInputs) {
    std::mt19937_64 rng(6);
    BatchEmbeddings b;
    b.v_g = unit_rows(4, 3, rng);
    b.t_g = unit_rows(4, 3, rng);
    b.v_l = unit_rows(3, 3, rng);
    b.t_l = unit_rows(4, 3, rng);
    Tape tape(false);
    EXPECT_THROW(combined_loss(tape, b), ShapeError);
    b.v_l = unit_rows(4, 3, rng);
    b.lambda = -0.1;
    EXPECT_THROW(combined_loss(tape, b), ConfigError);
    b.lambda = 0.5;
    b.temperature_local = 0.0;
    EXPECT_THROW(combined_loss(tape, b), ConfigError);
}

// dL/dv_l scales linearly with lambda, dL/dv_g does not move.
TEST(Combined, GradientIsLinearInLambda) {
    std::mt19937_64 rng(7);
    const Tensor vg = unit_rows(4, 5, rng), tg = unit_rows(4, 5, rng), vl0 = unit_rows(4, 5, rng),
                 tl = unit_rows(4, 5, rng);
    std::vector<std::vector<double>> local_grads, global_grads;
    for (double lambda : {0.5, 1.0}) {
        Tensor vl(vl0.shape(), std::vector<double>(vl0.data().begin(), vl0.data().end()), true);
        Tensor vgl(vg.shape(), std::vector<double>(vg.data().begin(), vg.data().end()), true);
        BatchEmbeddings b{vgl, tg, vl, tl};
        b.lambda = lambda;
        Tape tape;
        tape.backward(combined_loss(tape, b).total);
        local_grads.emplace_back(vl.grad().begin(), vl.grad().end());
        global_grads.emplace_back(vgl.grad().begin(), vgl.grad().end());
    }
    for (std::size_t i = 0; i < local_grads[0].size(); ++i) {
        EXPECT_NEAR(local_grads[1][i], 2.0 * local_grads[0][i], 1e-12);
        EXPECT_EQ(global_grads[1][i], global_grads[0][i]);
    }
}

// Raising the matched similarity lowers the loss.
TEST(LocalLoss, MonotoneInMatchedSimilarity) {
    Tape tape(false);
    const Tensor t = Tensor::matrix(2, 2, {1, 0, 0, 1});
    double previous = INFINITY;
    for (double angle = 1.5; angle >= 0.0; angle -= 0.1) {
        const Tensor v = Tensor::matrix(2, 2, {std::cos(angle), std::sin(angle), 0, 1});
        const double loss = local_contrastive(tape, v, t, 0.5)[0];
        EXPECT_LT(loss, previous);
        previous = loss;
    }
}

TEST(LocalLoss, StableAtSmallTemperature) {
    std::mt19937_64 rng(8);
    const Tensor v = unit_rows(16, 8, rng), t = unit_rows(16, 8, rng);
    Tape tape(false);
    for (double tau : {0.01, 0.001}) {
        const double loss = local_contrastive(tape, v, t, tau)[0];
        EXPECT_TRUE(std::isfinite(loss));
        EXPECT_NEAR(loss, oracle_i2t(v, t, tau), 1e-8 * std::max(1.0, loss));
        EXPECT_TRUE(std::isfinite(global_contrastive(tape, v, t, tau)[0]));
    }
    // perfectly aligned, well separated: loss tends to zero, not NaN
    const Tensor e = Tensor::matrix(2, 2, {1, 0, 0, 1});
    EXPECT_NEAR(local_contrastive(tape, e, e, 0.01)[0], 0.0, 1e-40);
}

TEST(Combined, Gradcheck) {
    std::mt19937_64 rng(9);
    BatchEmbeddings b;
    b.v_g = unit_rows(3, 4, rng, true);
    b.t_g = unit_rows(3, 4, rng, true);
    b.v_l = unit_rows(3, 4, rng, true);
    b.t_l = unit_rows(3, 4, rng, true);
    b.temperature_global = 0.3;
    b.temperature_local = 0.7;
    for (bool symmetric : {false, true}) {
        b.symmetric_local = symmetric;
        const auto r = gradcheck([&](Tape& t) { return combined_loss(t, b).total; }, {b.v_g, b.t_g, b.v_l, b.t_l}, 1e-5);
        EXPECT_LT(r.max_relative_error, 1e-6) << "leaf " << r.worst_leaf << " index " << r.worst_index;
    }
}
