#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "lrclr/model_gradcheck.hpp"
#include "lrclr/pipeline.hpp"

using namespace lrclr;

namespace {

RunConfig small_run() {
    RunConfig cfg = tiny_gradcheck_config();
    cfg.n_pairs = 64;
    cfg.batch_size = 4;
    cfg.steps = 4;
    cfg.init_std = 0.02;
    return cfg;
}

}  // namespace

TEST(Training, SameSeedSameLogAndParameters) {
    const RunConfig cfg = small_run();
    const auto train = split_corpus(cfg, generate_corpus(cfg)).train;
    Trainer a(cfg), b(cfg);
    std::ostringstream la, lb;
    a.run(train, &la);
    b.run(train, &lb);
    EXPECT_EQ(la.str(), lb.str());
    EXPECT_EQ(make_checkpoint(a.model(), cfg, a.step()), make_checkpoint(b.model(), cfg, b.step()));
    EXPECT_EQ(a.step(), 4u);
    std::size_t lines = 0;
    for (char c : la.str()) lines += c == '\n';
    EXPECT_EQ(lines, 4u);
}

// With lambda = 0 the fusion block receives no gradient and stays at its
// initial values; the towers still train.
TEST(Training, LambdaZeroLeavesFusionUntouched) {
    RunConfig cfg = small_run();
    cfg.lambda = 0.0;
    const auto train = split_corpus(cfg, generate_corpus(cfg)).train;
    Trainer t(cfg);
    const Checkpoint before = make_checkpoint(t.model(), cfg, 0);
    t.run(train);
    const Checkpoint after = make_checkpoint(t.model(), cfg, t.step());
    bool tower_moved = false;
    for (std::size_t i = 0; i < before.entries.size(); ++i) {
        const auto& name = before.entries[i].name;
        if (name.rfind("fusion.", 0) == 0) {
            EXPECT_EQ(before.entries[i].values, after.entries[i].values) << name;
        } else {
            tower_moved = tower_moved || before.entries[i].values != after.entries[i].values;
        }
    }
    EXPECT_TRUE(tower_moved);
    for (const auto& s : t.log()) EXPECT_EQ(s.total, s.global);
}

TEST(Training, LossFallsOverFirst200Steps) {
    std::vector<double> ratios;
    for (std::uint64_t seed : {1, 2, 3}) {
        RunConfig cfg;
        cfg.steps = 200;
        cfg.n_pairs = 1000;
        cfg.seed = seed;
        const auto train = split_corpus(cfg, generate_corpus(cfg)).train;
        Trainer t(cfg);
        t.run(train);
        double head = 0.0, tail = 0.0;
        for (std::size_t i = 0; i < 10; ++i) {
            head += t.log()[i].total;
            tail += t.log()[t.log().size() - 1 - i].total;
        }
        ratios.push_back(tail / head);
    }
    std::sort(ratios.begin(), ratios.end());
    EXPECT_LT(ratios[1], 1.0);
}

TEST(Training, NonFiniteLossRaisesAndKeepsLastGoodParameters) {
    const RunConfig cfg = small_run();
    const auto train = split_corpus(cfg, generate_corpus(cfg)).train;
    Trainer t(cfg);
    const ForwardOptions opts = ForwardOptions::from(cfg);
    std::vector<const SyntheticPair*> batch{&train[0], &train[1], &train[2], &train[3]};
    t.step_on(batch, opts);
    auto params = t.model().named_parameters();
    auto& victim = params.front().second;
    victim.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    const Checkpoint before = make_checkpoint(t.model(), cfg, t.step());
    try {
        t.step_on(batch, opts);
        FAIL() << "expected TrainingDiverged";
    } catch (const TrainingDiverged& e) {
        EXPECT_EQ(e.step(), 1u);
    }
    EXPECT_EQ(t.step(), 1u);
    const Checkpoint after = make_checkpoint(t.model(), cfg, t.step());
    ASSERT_EQ(before.entries.size(), after.entries.size());
    for (std::size_t i = 0; i < before.entries.size(); ++i) {
        const auto& x = before.entries[i].values;
        const auto& y = after.entries[i].values;
        for (std::size_t j = 0; j < x.size(); ++j) EXPECT_TRUE(x[j] == y[j] || (std::isnan(x[j]) && std::isnan(y[j])));
    }
}

TEST(Training, RejectsUndersizedTrainingSet) {
    RunConfig cfg = small_run();
    cfg.batch_size = 16;
    const auto pairs = generate_corpus(cfg);
    Trainer t(cfg);
    const std::vector<SyntheticPair> few(pairs.begin(), pairs.begin() + 3);
    EXPECT_THROW(t.run(few), ConfigError);
}

TEST(Training, FullObjectiveGradcheckOnTinyModel) {
    const ModelGradcheck r = gradcheck_model(tiny_gradcheck_config());
    EXPECT_GT(r.parameters, 1000u);
    EXPECT_LT(r.report.max_relative_error, 1e-4) << r.worst_parameter << '[' << r.report.worst_index << ']';
}
