#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mwp/corpus.hpp"
#include "mwp/tokenizer.hpp"
#include "mwp/trainer.hpp"

using namespace mwp;

namespace {

using M = Matrix<double>;

// -log softmax computed directly, without the max shift.
double brute_force_loss(const std::vector<M>& logits, const std::vector<std::vector<TokenId>>& targets) {
    long double total = 0;
    for (std::size_t b = 0; b < logits.size(); ++b) {
        long double sum = 0;
        int count = 0;
        for (std::size_t t = 0; t < logits[b].rows; ++t) {
            if (targets[b][t] == 0) continue;
            long double z = 0;
            for (std::size_t j = 0; j < logits[b].cols; ++j) z += std::exp(static_cast<long double>(logits[b](t, j)));
            const long double p = std::exp(static_cast<long double>(logits[b](t, static_cast<std::size_t>(targets[b][t])))) / z;
            sum += -std::log(p);
            ++count;
        }
        if (count) total += sum / count;
    }
    return static_cast<double>(total / logits.size());
}

ParamSet<double> scalar_param(double w) {
    ParamSet<double> p;
    p.emplace("w", M(1, 1, w));
    return p;
}

TransformerConfig small_config(std::size_t vocab) {
    TransformerConfig c;
    c.num_layers = 1;
    c.num_heads = 4;
    c.model_depth = 32;
    c.ff_depth = 64;
    c.dropout = 0.1;
    c.max_seq_len = 64;
    c.vocab_size = vocab;
    return c;
}

struct Toy {
    SubwordVocabulary vocab;
    std::vector<Example> data;
};

Toy toy_problems(std::size_t count) {
    auto records = load_dataset(MWP_TEST_DATA "/hand_corpus.jsonl");
    records.resize(count);
    const auto prepared = prepare(records, Notation::Postfix);
    std::vector<std::string> text;
    for (const auto& p : prepared) {
        text.push_back(p.source);
        text.push_back(p.target);
    }
    Toy t{SubwordVocabulary::build(text), {}};
    for (const auto& p : prepared) t.data.emplace_back(t.vocab.encode(p.source), t.vocab.encode(p.target));
    return t;
}

}  // namespace

TEST(SequenceLoss, MatchesBruteForceOnRandomLogits) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t B = 1 + rng() % 4, T = 1 + rng() % 6, V = 3 + rng() % 8;
        std::vector<M> logits;
        std::vector<std::vector<TokenId>> targets;
        for (std::size_t b = 0; b < B; ++b) {
            M l(T, V);
            for (auto& x : l.data) x = u(rng);
            logits.push_back(l);
            std::vector<TokenId> tgt(T);
            for (auto& y : tgt) y = static_cast<TokenId>(rng() % V);
            tgt[0] = 1 + static_cast<TokenId>(rng() % (V - 1));
            targets.push_back(tgt);
        }
        ASSERT_NEAR(sequence_loss(logits, targets), brute_force_loss(logits, targets), 1e-6) << trial;
    }
}

TEST(SequenceLoss, HandCases) {
    for (std::size_t V : {4u, 10u}) EXPECT_NEAR(sequence_loss<double>({M(1, V, 0.3)}, {{3}}), std::log(double(V)), 1e-6);
    M perfect(2, 5, -1000.0);
    perfect(0, 3) = 0;
    perfect(1, 1) = 0;
    EXPECT_EQ(sequence_loss<double>({perfect}, {{3, 1}}), 0.0);
    M two(2, 3);
    two.data = {1, 2, 3, 0, 0, 5};
    const double a = sequence_loss<double>({M(two)}, {{2, 0}});
    M second(1, 3);
    second.data = {0, 0, 5};
    const double b = sequence_loss<double>({second}, {{1}});
    EXPECT_NEAR(sequence_loss<double>({two}, {{2, 1}}), (a + b) / 2, 1e-12);
    // Per-example means are averaged over the batch.
    EXPECT_NEAR(sequence_loss<double>({two, second}, {{2, 1}, {1}}), ((a + b) / 2 + b) / 2, 1e-12);
}

TEST(SequenceLoss, PadPositionsAreIgnored) {
    std::mt19937_64 rng(3);
    M l(4, 6);
    for (auto& x : l.data) x = static_cast<double>(rng() % 100) / 10.0;
    const std::vector<std::vector<TokenId>> tgt = {{2, 5, 0, 0}};
    const double before = sequence_loss<double>({l}, tgt);
    for (std::size_t j = 0; j < 6; ++j) {
        l(2, j) = 50.0 * static_cast<double>(j);
        l(3, j) = -7.0;
    }
    EXPECT_EQ(sequence_loss<double>({l}, tgt), before);
    l(3, 2) = NAN;
    EXPECT_EQ(sequence_loss<double>({l}, tgt), before);
    l(1, 2) = NAN;
    EXPECT_THROW(sequence_loss<double>({l}, tgt), TrainingError);
    l(1, 2) = 0;
    l(0, 0) = INFINITY;
    EXPECT_THROW(sequence_loss<double>({l}, tgt), TrainingError);
}

TEST(Adam, HandComputedSteps) {
    auto p = scalar_param(0.0);
    auto g = scalar_param(1.0);
    OptimizerState<double> s = OptimizerState<double>::zeros(p, 0.001);
    adam_step(p, g, s);
    EXPECT_NEAR(p.at("w").data[0], -0.001 / (1.0 + 1e-9), 1e-12);
    EXPECT_NEAR(s.first_moment.at("w").data[0], 0.05, 1e-15);
    EXPECT_NEAR(s.second_moment.at("w").data[0], 0.01, 1e-15);
    EXPECT_EQ(s.step, 1);

    g.at("w").data[0] = 0.5;
    adam_step(p, g, s);
    const double m = 0.95 * 0.05 + 0.05 * 0.5;     // 0.0725
    const double v = 0.99 * 0.01 + 0.01 * 0.25;    // 0.0124
    const double mhat = m / (1 - 0.95 * 0.95);     // 0.74358974...
    const double vhat = v / (1 - 0.99 * 0.99);     // 0.62311557...
    const double expected = -0.001 / (1.0 + 1e-9) - 0.001 * mhat / (std::sqrt(vhat) + 1e-9);
    EXPECT_NEAR(p.at("w").data[0], expected, 1e-9);
}

TEST(Adam, ZeroGradientKeepsParamsAndDecaysMoments) {
    auto p = scalar_param(0.4);
    OptimizerState<double> s = OptimizerState<double>::zeros(p, 0.01);
    adam_step(p, scalar_param(2.0), s);
    const double after_first = p.at("w").data[0];
    const double m1 = s.first_moment.at("w").data[0], v1 = s.second_moment.at("w").data[0];
    auto q = p;
    OptimizerState<double> s_copy = s;
    adam_step(p, scalar_param(0.0), s);
    EXPECT_DOUBLE_EQ(s.first_moment.at("w").data[0], 0.95 * m1);
    EXPECT_DOUBLE_EQ(s.second_moment.at("w").data[0], 0.99 * v1);
    // The decayed first moment still moves the parameter; a fresh state does not.
    EXPECT_NE(p.at("w").data[0], after_first);
    auto fresh = scalar_param(0.4);
    OptimizerState<double> zero = OptimizerState<double>::zeros(fresh, 0.01);
    adam_step(fresh, scalar_param(0.0), zero);
    EXPECT_EQ(fresh.at("w").data[0], 0.4);
    // Determinism.
    adam_step(q, scalar_param(0.0), s_copy);
    EXPECT_EQ(q, p);
}

TEST(Adam, QuadraticBowlConverges) {
    auto p = scalar_param(1.0);
    OptimizerState<double> s = OptimizerState<double>::zeros(p, 0.05);
    for (int i = 0; i < 300; ++i) adam_step(p, scalar_param(p.at("w").data[0]), s);
    EXPECT_LT(std::fabs(p.at("w").data[0]), 1e-2);
}

TEST(Adam, RejectsNonFiniteGradient) {
    auto p = scalar_param(1.0);
    OptimizerState<double> s = OptimizerState<double>::zeros(p, 0.05);
    try {
        adam_step(p, scalar_param(NAN), s);
        FAIL();
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.kind(), TrainingError::Kind::NonFiniteGradient);
    }
    EXPECT_EQ(p.at("w").data[0], 1.0);
    EXPECT_EQ(s.step, 0);
}

TEST(Clipping, GlobalNorm) {
    ParamSet<double> g;
    g.emplace("a", M(1, 2));
    g.emplace("b", M(1, 1));
    g.at("a").data = {3, 0};
    g.at("b").data = {4};
    EXPECT_DOUBLE_EQ(clip_global_norm(g, 10.0), 5.0);
    EXPECT_EQ(g.at("a").data[0], 3.0);
    EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
    EXPECT_NEAR(g.at("a").data[0], 0.6, 1e-15);
    EXPECT_NEAR(g.at("b").data[0], 0.8, 1e-15);
    g.at("b").data[0] = 100;
    clip_global_norm(g, 0.0);
    EXPECT_EQ(g.at("b").data[0], 100.0);
}

TEST(Plateau, Rule) {
    const std::vector<double> improving = {5, 4, 3, 2, 1, 0.5, 0.25, 0.1, 0.05, 0.01, 0.001, 0.0001};
    EXPECT_EQ(lr_schedule(improving, 1e-3), 1e-3);
    std::vector<double> flat(11, 2.0);  // first value sets the best; ten more fail to beat it
    EXPECT_EQ(lr_schedule(flat, 1e-3), 5e-4);
    flat.pop_back();
    EXPECT_EQ(lr_schedule(flat, 1e-3), 1e-3);
    std::vector<double> tiny_gains = {2.0};
    for (int i = 1; i <= 10; ++i) tiny_gains.push_back(2.0 - 5e-5 * i / 10.0);
    EXPECT_EQ(lr_schedule(tiny_gains, 1e-3), 5e-4);
    EXPECT_EQ(lr_schedule(std::vector<double>(200, 1.0), 1e-3), 1e-6);
    EXPECT_EQ(lr_schedule(std::vector<double>(11, 1.0), 1e-6), 1e-6);
    PlateauRule quick;
    quick.patience = 2;
    quick.factor = 0.1;
    EXPECT_NEAR(lr_schedule(std::vector<double>{1, 1, 1, 1, 1}, 1.0, quick), 0.01, 1e-15);
}

TEST(Pretrain, LearnsToEmitEndOnly) {
    const auto sentences = load_pretraining_text(MWP_TEST_DATA "/pretrain_sentences.txt");
    const auto heldout = load_pretraining_text(MWP_TEST_DATA "/pretrain_heldout.txt");
    ASSERT_GE(sentences.size(), 100u);
    auto corpus = sentences;
    corpus.insert(corpus.end(), heldout.begin(), heldout.end());
    const auto vocab = SubwordVocabulary::build(corpus, 600);
    const auto c = small_config(vocab.size());
    std::vector<std::vector<TokenId>> encoded;
    for (const auto& s : sentences) encoded.push_back(vocab.encode(s));
    TrainPlan plan;
    plan.seed = 4;
    plan.batch_size = 16;

    auto unchanged = start_state(init_params<float>(c, plan.seed), plan);
    TrainPlan none = plan;
    none.pretrain_iterations = 0;
    EXPECT_TRUE(pretrain<float>(unchanged, c, encoded, none).empty());
    EXPECT_EQ(unchanged.params, init_params<float>(c, plan.seed));

    auto state = start_state(init_params<float>(c, plan.seed), plan);
    const auto curve = pretrain<float>(state, c, encoded, plan);
    ASSERT_EQ(curve.size(), 30u);
    EXPECT_LT(curve.back().loss, curve.front().loss);
    EXPECT_LT(curve.back().loss, 0.1 * curve.front().loss);
    for (const auto& s : heldout) EXPECT_TRUE(greedy_decode(state.params, c, vocab.encode(s), 20).empty()) << s;

    try {
        pretrain<float>(state, c, {}, plan);
        FAIL();
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.kind(), TrainingError::Kind::EmptyCorpus);
    }
}

TEST(Train, DeterministicAndResumable) {
    const Toy toy = toy_problems(6);
    const auto c = small_config(toy.vocab.size());
    TrainPlan plan;
    plan.seed = 21;
    plan.batch_size = 4;
    plan.iterations = 4;

    auto a = start_state(init_params<float>(c, 1), plan);
    const auto curve_a = train<float>(a, c, toy.data, plan);
    auto b = start_state(init_params<float>(c, 1), plan);
    const auto curve_b = train<float>(b, c, toy.data, plan);
    EXPECT_EQ(serialize_checkpoint(to_checkpoint(a, c)), serialize_checkpoint(to_checkpoint(b, c)));
    EXPECT_EQ(loss_curve_csv(curve_a), loss_curve_csv(curve_b));

    // Two epochs, checkpoint round trip, two more epochs == four straight.
    TrainPlan half = plan;
    half.iterations = 2;
    auto c1 = start_state(init_params<float>(c, 1), plan);
    std::vector<std::size_t> seen;
    train<float>(c1, c, toy.data, half, [&](const TrainState<float>&, const EpochRecord& r) { seen.push_back(r.epoch); });
    EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2}));
    auto resumed = from_checkpoint(deserialize_checkpoint(serialize_checkpoint(to_checkpoint(c1, c))), plan);
    EXPECT_EQ(resumed.epochs_done, 2u);
    const auto rest = train<float>(resumed, c, toy.data, plan);
    ASSERT_EQ(rest.size(), 2u);
    EXPECT_EQ(rest.front().epoch, 3u);
    EXPECT_EQ(serialize_checkpoint(to_checkpoint(resumed, c)), serialize_checkpoint(to_checkpoint(a, c)));
    EXPECT_EQ(rest.back().loss, curve_a.back().loss);

    auto other_seed = start_state(init_params<float>(c, 1), plan);
    TrainPlan different = plan;
    different.seed = 22;
    train<float>(other_seed, c, toy.data, different);
    EXPECT_NE(other_seed.params, a.params);
}

TEST(Train, LossDescends) {
    const Toy toy = toy_problems(10);
    const auto c = small_config(toy.vocab.size());
    TrainPlan plan;
    plan.seed = 2;
    plan.iterations = 40;
    auto s = start_state(init_params<float>(c, 2), plan);
    const auto curve = train<float>(s, c, toy.data, plan);
    EXPECT_LT(curve.back().loss, curve.front().loss);
    EXPECT_EQ(curve.front().lr, 1e-3);
}

TEST(Train, Errors) {
    const auto c = small_config(300);
    TrainPlan plan;
    auto s = start_state(init_params<float>(c, 2), plan);
    try {
        train<float>(s, c, {}, plan);
        FAIL();
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.kind(), TrainingError::Kind::EmptyDataset);
    }
    plan.batch_size = 0;
    EXPECT_THROW(train<float>(s, c, {{{5}, {6}}}, plan), std::invalid_argument);
}

TEST(LossCurve, CsvFormat) {
    const std::vector<EpochRecord> curve = {{1, 2.5, 0.001}, {2, 1.25, 0.0005}};
    EXPECT_EQ(loss_curve_csv(curve), "epoch,loss,lr\n1,2.5,0.001\n2,1.25,0.0005\n");
    EXPECT_EQ(loss_curve_csv(curve, false), "1,2.5,0.001\n2,1.25,0.0005\n");
}
