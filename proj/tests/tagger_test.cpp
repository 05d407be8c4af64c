#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "cfr/synthetic.hpp"
#include "cfr/tagger.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

namespace cfr {
namespace {

using Mat = nn::Matrix<double>;

Mat probs_of(std::initializer_list<std::pair<double, double>> rows) {
    Mat m(static_cast<Eigen::Index>(rows.size()), 2);
    Eigen::Index r = 0;
    for (auto [a, b] : rows) {
        m(r, 0) = a;
        m(r, 1) = b;
        ++r;
    }
    return m;
}

nn::TransformerConfig tiny_config(std::size_t vocab_size) { return {vocab_size, 8, 1, 2, 12, 64, 4, false}; }

struct Fixture {
    std::vector<StoryPair> pairs = synthetic::separable_corpus(6, 11, "fx");
    Vocab vocab = build_vocab(pairs, 1);
};

void randomize(nn::ParameterStore<double>& store, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : store)
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = rng.normal(0.0, 0.5);
}

TEST(WeightedCeLoss, SingleCausalTokenAtHalf) {
    // 0.8 * -ln 0.5
    EXPECT_NEAR(weighted_ce_loss(probs_of({{0.5, 0.5}}), {Label::causal}, 0.8), 0.5545177444479562, 1e-12);
}

TEST(WeightedCeLoss, PerfectPredictionIsZero) {
    EXPECT_EQ(weighted_ce_loss(probs_of({{1.0, 0.0}, {0.0, 1.0}}), {Label::causal, Label::background}, 0.3), 0.0);
}

TEST(WeightedCeLoss, HalfLambdaIsHalfTheNll) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(12);
        Mat probs(static_cast<Eigen::Index>(n), 2);
        LabelSeq gold;
        double nll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double p = 0.01 + 0.98 * rng.uniform();
            probs(static_cast<Eigen::Index>(i), 0) = p;
            probs(static_cast<Eigen::Index>(i), 1) = 1.0 - p;
            gold.push_back(rng.bernoulli(0.5) ? Label::causal : Label::background);
            nll -= std::log(gold.back() == Label::causal ? p : 1.0 - p);
        }
        ASSERT_NEAR(weighted_ce_loss(probs, gold, 0.5), 0.5 * nll, 1e-12);
    }
}

TEST(WeightedCeLoss, ZeroProbabilityIsClampedAndCounted) {
    const auto before = log_state().warnings;
    const double loss = weighted_ce_loss(probs_of({{0.0, 1.0}}), {Label::causal}, 0.5);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_NEAR(loss, -0.5 * std::log(1e-12), 1e-9);
    EXPECT_EQ(log_state().warnings, before + 1);
    EXPECT_THROW(weighted_ce_loss(probs_of({{0.5, 0.5}}), {}, 0.5), Error);
}

TEST(PredictLabels, ArgmaxWithCausalTies) {
    EXPECT_EQ(predict_labels(probs_of({{0.6, 0.4}, {0.4, 0.6}, {0.5, 0.5}})),
              (LabelSeq{Label::causal, Label::background, Label::causal}));
}

TEST(LabelDistribution, RowsSumToOneAndZeroHeadIsUniform) {
    Fixture fx;
    TaggerModel<double> model(tiny_config(fx.vocab.size()), 3, fx.vocab.hash());
    const auto input = format_sketch_input(fx.pairs[0], Side::original, fx.vocab, 64);
    const Mat p = label_distribution(model, input);
    ASSERT_EQ(static_cast<std::size_t>(p.rows()), input.ending_length());
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
        EXPECT_GT(p.row(r).minCoeff(), 0.0);
    }
    model.parameters()[model.head_weight()].value.setZero();
    model.parameters()[model.head_bias()].value.setZero();
    const Mat u = label_distribution(model, input);
    EXPECT_TRUE(u.isApproxToConstant(0.5, 1e-12));
    // a shared offset on both logits changes nothing
    model.parameters()[model.head_bias()].value.setConstant(3.0);
    EXPECT_TRUE(label_distribution(model, input).isApproxToConstant(0.5, 1e-12));
}

TEST(LabelDistribution, EmptyEndingSpanIsAnError) {
    Fixture fx;
    TaggerModel<double> model(tiny_config(fx.vocab.size()), 3, fx.vocab.hash());
    auto input = format_sketch_input(fx.pairs[0], Side::original, fx.vocab, 64);
    input.ids.resize(input.ending_start);
    EXPECT_THROW(label_distribution(model, input), Error);
}

TEST(TaggerGradient, MatchesFiniteDifferencesOfWeightedCe) {
    Fixture fx;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        TaggerModel<double> model({fx.vocab.size(), 8, 2, 2, 12, 64, 4, false}, seed, fx.vocab.hash());
        randomize(model.parameters(), seed + 100);
        const auto inst = make_tagger_instance(fx.pairs[seed], Side::counterfactual, fx.vocab, 64);
        const double lambda = 0.2 + 0.3 * static_cast<double>(seed);
        auto loss = [&] { return weighted_ce_loss(label_distribution(model, inst.input), inst.gold, lambda); };
        auto analytic = [&] {
            nn::Graph<double> g(model.parameters());
            g.backward(model.loss(g, inst.input, inst.gold, lambda));
        };
        const auto r = testing::check_gradients(model.parameters(), loss, analytic);
        EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed << ": " << r.worst_parameter;
        EXPECT_GT(r.checked, 1000u);
    }
}

TEST(TaggerInstances, BothSidesDoubleTheData) {
    Fixture fx;
    const auto train = tagger_training_instances(fx.pairs, fx.vocab, 300);
    ASSERT_EQ(train.size(), 2 * fx.pairs.size());
    EXPECT_EQ(train[0].side, Side::original);
    EXPECT_EQ(train[1].side, Side::counterfactual);
    // on this corpus LCS labels coincide with vocabulary membership
    for (std::size_t i = 0; i < fx.pairs.size(); ++i) {
        EXPECT_EQ(train[2 * i].gold, synthetic::membership_labels(side_ending(fx.pairs[i], Side::original)));
        EXPECT_EQ(train[2 * i + 1].gold,
                  synthetic::membership_labels(side_ending(fx.pairs[i], Side::counterfactual)));
    }
    EXPECT_THROW(train_tagger(std::vector<StoryPair>{}, {}, fx.vocab, TaggerTrainConfig{}), Error);
}

TEST(PredictSkeleton, ExtremeHeadsGiveCopyOrSingleBlank) {
    Fixture fx;
    TaggerModel<float> model(tiny_config(fx.vocab.size()), 3, fx.vocab.hash());
    auto& store = model.parameters();
    store[model.head_weight()].value.setZero();
    store[model.head_bias()].value << -10.f, 10.f;
    const auto e = side_ending(fx.pairs[0], Side::original);
    const auto all_background = predict_skeleton(model, fx.pairs[0], fx.vocab, 64);
    EXPECT_EQ(all_background.items, e.tokens);
    EXPECT_EQ(all_background.source, SkeletonSource::predicted);
    store[model.head_bias()].value << 10.f, -10.f;
    EXPECT_EQ(predict_skeleton(model, fx.pairs[0], fx.vocab, 64).items, blank_item());
    const Vocab other({"x"});
    EXPECT_THROW(predict_skeleton(model, fx.pairs[0], other, 64), Error);
}

TaggerTrainConfig small_train_config(std::uint64_t seed) {
    TaggerTrainConfig cfg;
    cfg.seed = seed;
    cfg.learning_rate = 3e-3;
    cfg.warmup_steps = 20;
    cfg.batch_size = 8;
    cfg.dim = 32;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_dim = 64;
    cfg.max_sequence_length = 96;
    return cfg;
}

TEST(TrainTagger, SameSeedSameLossCurve) {
    const auto pairs = synthetic::separable_corpus(20, 4, "det");
    const Vocab vocab = build_vocab(pairs, 1);
    auto cfg = small_train_config(9);
    cfg.epochs = 2;
    const auto a = train_tagger(pairs, {}, vocab, cfg);
    const auto b = train_tagger(pairs, {}, vocab, cfg);
    ASSERT_EQ(a.history.size(), 2u);
    for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].mean_loss, b.history[i].mean_loss);
    EXPECT_EQ(a.history[0].instances, 40u);
    EXPECT_EQ(a.best_epoch, 2u);
}

TEST(TrainTagger, InstanceLossesDoNotDependOnOrder) {
    const auto pairs = synthetic::separable_corpus(10, 4, "perm");
    const Vocab vocab = build_vocab(pairs, 1);
    auto instances = tagger_training_instances(pairs, vocab, 96);
    TaggerModel<float> model(small_train_config(1).model_config(vocab.size()), 1, vocab.hash());
    auto losses = [&](const std::vector<TaggerInstance>& xs) {
        std::map<std::pair<std::string, int>, float> out;
        for (const auto& x : xs) {
            nn::Graph<float> g(model.parameters());
            out[{x.id, static_cast<int>(x.side)}] = g.scalar(model.loss(g, x.input, x.gold, 0.8));
        }
        return out;
    };
    const auto forward = losses(instances);
    Rng rng(3);
    rng.shuffle(instances);
    EXPECT_EQ(losses(instances), forward);
}

TEST(TrainTagger, LearnsSeparableCorpus) {
    const auto train = synthetic::separable_corpus(300, 1, "train");
    const auto dev = synthetic::separable_corpus(60, 2, "dev");
    const auto test = synthetic::separable_corpus(60, 3, "test");
    const Vocab vocab = build_vocab(train, 1);
    auto cfg = small_train_config(5);
    cfg.epochs = 10;
    std::vector<double> dev_f1;
    const auto result = train_tagger(train, dev, vocab, cfg, [&](const TaggerEpoch& e) { dev_f1.push_back(e.dev->cf1); });
    ASSERT_EQ(dev_f1.size(), 10u);
    const double best = *std::max_element(dev_f1.begin(), dev_f1.end());
    EXPECT_GE(best, 0.95);
    EXPECT_EQ(result.history[result.best_epoch - 1].dev->cf1, best);

    std::size_t matches = 0;
    for (const auto& pair : test) {
        const auto predicted = predict_skeleton(result.model, pair, vocab, cfg.max_sequence_length);
        const auto gold = lcs_skeleton(side_ending(pair, Side::original), side_ending(pair, Side::counterfactual));
        matches += predicted == gold;
    }
    EXPECT_GE(static_cast<double>(matches) / static_cast<double>(test.size()), 0.9);

    // checkpoint round trip keeps predictions
    testing::TempDir dir;
    save_tagger(dir.path() / "tagger.json", result.model);
    const auto loaded = load_tagger(dir.path() / "tagger.json");
    for (const auto& pair : test)
        ASSERT_EQ(predict_skeleton(loaded, pair, vocab, cfg.max_sequence_length),
                  predict_skeleton(result.model, pair, vocab, cfg.max_sequence_length));
}

TEST(Checkpoint, RejectsWrongFormat) {
    testing::TempDir dir;
    testing::write_file(dir.path() / "bad.json", R"({"format": "cfr.generator", "version": 1})");
    EXPECT_THROW(load_tagger(dir.path() / "bad.json"), Error);
    EXPECT_THROW(load_tagger(dir.path() / "missing.json"), Error);
}

}  // namespace
}  // namespace cfr
