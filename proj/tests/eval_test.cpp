#include <cmath>
#include <fstream>
#include <regex>

#include <gtest/gtest.h>

#include "cfr/eval.hpp"
#include "cfr/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace cfr {
namespace {

std::vector<std::string> words(const std::string& text) { return tokenize(text).tokens; }

LabelSeq labels(std::initializer_list<int> xs) { return labels_from_ints(std::vector<int>(xs)); }

TEST(RougeL, HandExamples) {
    const auto same = rouge_l(words("a b c"), words("a b c"));
    EXPECT_EQ(same.precision, 1.0);
    EXPECT_EQ(same.recall, 1.0);
    EXPECT_EQ(same.f_measure, 1.0);
    const auto none = rouge_l(words("a b"), words("c d e"));
    EXPECT_EQ(none.precision, 0.0);
    EXPECT_EQ(none.f_measure, 0.0);
    const auto cat = rouge_l(words("the cat sat"), words("the cat slept"));
    EXPECT_DOUBLE_EQ(cat.precision, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(cat.recall, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(cat.f_measure, 2.0 / 3.0);
    // LCS 2 of candidate 4 / reference 2: P = 1/2, R = 1, F = 2/3
    const auto uneven = rouge_l(words("x a y b"), words("a b"));
    EXPECT_DOUBLE_EQ(uneven.precision, 0.5);
    EXPECT_DOUBLE_EQ(uneven.recall, 1.0);
    EXPECT_DOUBLE_EQ(uneven.f_measure, 2.0 / 3.0);
    EXPECT_EQ(rouge_l(std::vector<std::string>{}, words("a")).f_measure, 0.0);
}

TEST(RougeL, SwapExchangesPrecisionAndRecall) {
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> a, b;
        for (std::size_t i = rng.uniform_index(12); i > 0; --i) a.push_back(std::string(1, char('a' + rng.uniform_index(5))));
        for (std::size_t i = rng.uniform_index(12); i > 0; --i) b.push_back(std::string(1, char('a' + rng.uniform_index(5))));
        const auto ab = rouge_l(a, b);
        const auto ba = rouge_l(b, a);
        ASSERT_EQ(ab.precision, ba.recall);
        ASSERT_EQ(ab.recall, ba.precision);
        ASSERT_DOUBLE_EQ(ab.f_measure, ba.f_measure);
        ASSERT_GE(ab.f_measure, std::min(ab.precision, ab.recall) - 1e-15);
        ASSERT_LE(ab.f_measure, std::max(ab.precision, ab.recall) + 1e-15);
        ASSERT_EQ(ab.f_measure == 0.0, oracle::brute_force_lcs_length(a, b) == 0 || a.empty() || b.empty());
    }
}

TEST(LabelMetrics, HandConfusionMatrix) {
    // causal TP=2, FP=3, FN=1, background TP=4
    const auto m = label_metrics({labels({0, 0, 0, 0, 0, 1, 1, 1, 1, 1})}, {labels({0, 0, 1, 1, 1, 0, 1, 1, 1, 1})});
    EXPECT_EQ(m.counts.causal_tp, 2u);
    EXPECT_EQ(m.counts.causal_fp, 3u);
    EXPECT_EQ(m.counts.causal_fn, 1u);
    EXPECT_EQ(m.counts.background_tp, 4u);
    EXPECT_DOUBLE_EQ(m.cp, 0.4);
    EXPECT_DOUBLE_EQ(m.cr, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.cf1, 0.5);
    EXPECT_DOUBLE_EQ(m.bp, 0.8);
    EXPECT_DOUBLE_EQ(m.br, 4.0 / 7.0);
    EXPECT_DOUBLE_EQ(m.bf1, 2.0 / 3.0);
}

TEST(LabelMetrics, PerfectAndDegenerate) {
    const auto perfect = label_metrics({labels({0, 1, 1}), labels({1, 0})}, {labels({0, 1, 1}), labels({1, 0})});
    for (double v : {perfect.cp, perfect.cr, perfect.cf1, perfect.bp, perfect.br, perfect.bf1}) EXPECT_EQ(v, 1.0);
    const auto no_causal = label_metrics({labels({1, 1})}, {labels({1, 1})});
    EXPECT_EQ(no_causal.cf1, 0.0);
    EXPECT_EQ(no_causal.bf1, 1.0);
    EXPECT_THROW(label_metrics({labels({0})}, {labels({0, 1})}), Error);
    EXPECT_THROW(label_metrics({labels({0})}, {}), Error);
}

TEST(LabelMetrics, CountsAgreeWithGold) {
    Rng rng(8);
    std::vector<LabelSeq> pred, gold;
    std::size_t gold_causal = 0;
    for (int i = 0; i < 50; ++i) {
        LabelSeq p, g;
        for (std::size_t j = rng.uniform_index(15); j > 0; --j) {
            p.push_back(rng.bernoulli(0.3) ? Label::causal : Label::background);
            g.push_back(rng.bernoulli(0.2) ? Label::causal : Label::background);
            gold_causal += g.back() == Label::causal;
        }
        pred.push_back(p);
        gold.push_back(g);
    }
    const auto m = label_metrics(pred, gold);
    EXPECT_EQ(m.counts.causal_tp + m.counts.causal_fn, gold_causal);
    EXPECT_DOUBLE_EQ(m.cf1, harmonic_mean(m.cp, m.cr));
    EXPECT_DOUBLE_EQ(m.bf1, harmonic_mean(m.bp, m.br));
}

TEST(SkeletonCoverage, Examples) {
    const Skeleton k{{"a", "b", "[BLANK]", "c"}, SkeletonSource::lcs};
    EXPECT_DOUBLE_EQ(skeleton_coverage(TokenSeq{words("a x c")}, Skeleton{{"a", "b", "c"}}), 2.0 / 3.0);
    EXPECT_EQ(skeleton_coverage(TokenSeq{words("q a r b s t c u")}, k), 1.0);
    EXPECT_EQ(skeleton_coverage(TokenSeq{words("c b a")}, k), 1.0 / 3.0);
    EXPECT_EQ(skeleton_coverage(TokenSeq{}, Skeleton{blank_item()}), 1.0);
}

TEST(PairedTTest, MatchesReferenceFixtures) {
    std::ifstream in(testing::data_path("ttest_fixtures.json"));
    const auto doc = nlohmann::json::parse(in);
    ASSERT_EQ(doc["cases"].size(), 100u);
    for (const auto& c : doc["cases"]) {
        const auto a = c["a"].get<std::vector<double>>();
        const auto b = c["b"].get<std::vector<double>>();
        const auto r = paired_t_test(a, b);
        EXPECT_NEAR(r.t, c["t"].get<double>(), 1e-9);
        EXPECT_NEAR(r.p, c["p"].get<double>(), 1e-9);
        EXPECT_NEAR(r.t, oracle::paired_t_statistic(a, b), 1e-9);
        EXPECT_EQ(r.df, a.size() - 1);
    }
}

TEST(PairedTTest, DegenerateCases) {
    const auto same = paired_t_test({1, 2, 3}, {1, 2, 3});
    EXPECT_EQ(same.p, 1.0);
    EXPECT_TRUE(same.zero_variance);
    const auto shifted = paired_t_test({1, 2, 3, 4, 5}, {2, 3, 4, 5, 6});
    EXPECT_EQ(shifted.p, 0.0);
    EXPECT_TRUE(shifted.zero_variance);
    EXPECT_LT(shifted.t, 0.0);
    EXPECT_THROW(paired_t_test({1, 2}, {1}), Error);
    EXPECT_THROW(paired_t_test({1}, {1}), Error);
}

// ---------------------------------------------------------------------------

struct RunFixture {
    std::vector<StoryPair> pairs = synthetic::templated_corpus(8, 2, "s");

    std::vector<GenerationRecord> records(bool use_reference) const {
        std::vector<GenerationRecord> out;
        for (const auto& p : pairs) {
            GenerationRecord r;
            r.story_id = p.id;
            const auto e = side_ending(p, Side::original);
            const auto e2 = side_ending(p, Side::counterfactual);
            r.skeleton = lcs_skeleton(e, e2);
            r.ending = use_reference ? e2 : e;
            r.predicted_labels = derive_labels(e, e2).first;
            out.push_back(r);
        }
        return out;
    }

    RunEndings endings() const {
        RunEndings runs;
        for (const auto& p : pairs) {
            runs["copy"][p.id] = join(p.story.ending);
            runs["gold"][p.id] = join(p.reference_endings[0]);
            runs["lcs"][p.id] = join(lcs_skeleton(side_ending(p, Side::original), side_ending(p, Side::counterfactual)).items);
        }
        return runs;
    }
};

TEST(ScoreRun, SelfComparisonsAreOne) {
    RunFixture fx;
    const auto gold = score_run("gold", fx.pairs, fx.records(true));
    EXPECT_DOUBLE_EQ(gold.vs_references.f_measure, 1.0);
    EXPECT_DOUBLE_EQ(gold.coverage, 1.0);
    ASSERT_TRUE(gold.labels.has_value());
    EXPECT_EQ(gold.labels->cf1, 1.0);
    const auto copy = score_run("copy", fx.pairs, fx.records(false));
    EXPECT_DOUBLE_EQ(copy.vs_original.f_measure, 1.0);
    EXPECT_LT(copy.vs_references.f_measure, 1.0);
    const auto table = rouge_table({gold, copy});
    EXPECT_NE(table.find("RL-orig-F"), std::string::npos);
    EXPECT_NE(table.find("gold"), std::string::npos);
}

TEST(ScoreRun, SplitMismatchIsReported) {
    RunFixture fx;
    auto recs = fx.records(true);
    recs.pop_back();
    EXPECT_THROW(score_run("r", fx.pairs, recs), Error);
    recs = fx.records(true);
    recs[0].story_id = "elsewhere";
    EXPECT_THROW(score_run("r", fx.pairs, recs), Error);
}

TEST(ScoreRun, RecordJsonRoundTrip) {
    RunFixture fx;
    for (const auto& r : fx.records(true)) {
        const auto back = GenerationRecord::from_json(r.to_json({{"k", 1}}));
        EXPECT_EQ(back.story_id, r.story_id);
        EXPECT_EQ(back.skeleton, r.skeleton);
        EXPECT_EQ(back.ending, r.ending);
        EXPECT_EQ(back.predicted_labels, r.predicted_labels);
    }
}

TEST(Tables, AlignedColumns) {
    LabelMetrics m;
    m.cp = 0.41;
    m.cr = 0.68;
    m.cf1 = 0.51;
    m.bp = 0.87;
    m.br = 0.69;
    m.bf1 = 0.77;
    const auto text = label_table({{"0.8", m}});
    EXPECT_EQ(text,
              "lambda    CP    CR   CF1    BP    BR   BF1\n"
              "------------------------------------------\n"
              "0.8     0.41  0.68  0.51  0.87  0.69  0.77\n");
}

// ---------------------------------------------------------------------------

/// Fills every blank score cell of a sheet with `score(method, item, aspect)`.
template <class F>
void fill_sheet(const std::filesystem::path& path, const nlohmann::json& mapping, const std::string& who, F score) {
    std::ifstream in(path);
    std::ostringstream out;
    std::vector<std::string> header;
    for (std::string line; std::getline(in, line);) {
        if (line.empty() || line[0] == '#') {
            out << line << '\n';
            continue;
        }
        auto fields = detail::parse_csv_line(line, "sheet");
        if (header.empty()) {
            header = fields;
        } else {
            const auto& slots = mapping["annotators"][who]["slots"][fields[0]];
            for (std::size_t c = 0; c < header.size(); ++c) {
                const auto us = header[c].find('_');
                if (us == std::string::npos) continue;
                const auto slot = header[c].substr(0, us);
                const auto aspect = header[c].substr(us + 1);
                if (aspect != "PRE" && aspect != "CF" && aspect != "PLOT") continue;
                fields[c] = std::to_string(score(slots[slot].get<std::string>(), fields[0], aspect));
            }
        }
        out << detail::csv_line(fields) << '\n';
    }
    testing::write_file(path, out.str());
}

TEST(Sheets, SampledBlindedAndInvertible) {
    RunFixture fx;
    testing::TempDir dir;
    const auto mapping = make_annotation_sheets(fx.pairs, fx.endings(), 5, 42, 2, dir.path());
    const auto sheet = testing::read_file(dir / "annotator-1.csv");
    std::size_t rows = 0, comments = 0;
    std::istringstream lines(sheet);
    for (std::string line; std::getline(lines, line);) (line[0] == '#' ? comments : rows)++;
    EXPECT_EQ(rows, 6u);  // header + 5 items
    EXPECT_EQ(comments, 4u);
    EXPECT_NE(sheet.find("PLOT (original plot)"), std::string::npos);
    EXPECT_EQ(sheet.find("copy"), std::string::npos);  // method names never appear
    EXPECT_EQ(sheet.find("gold"), std::string::npos);

    // same seed, same files
    testing::TempDir again;
    make_annotation_sheets(fx.pairs, fx.endings(), 5, 42, 2, again.path());
    EXPECT_EQ(testing::read_file(again / "annotator-1.csv"), sheet);
    EXPECT_EQ(testing::read_file(again / "mapping.json"), testing::read_file(dir / "mapping.json"));

    // the mapping recovers which ending each slot holds
    const auto endings = fx.endings();
    std::istringstream in(sheet);
    std::vector<std::string> header;
    for (std::string line; std::getline(in, line);) {
        if (line[0] == '#') continue;
        const auto fields = detail::parse_csv_line(line, "sheet");
        if (header.empty()) {
            header = fields;
            continue;
        }
        for (const auto& [slot, method] : mapping["annotators"]["annotator-1"]["slots"][fields[0]].items()) {
            const auto col = std::find(header.begin(), header.end(), slot + "_ending") - header.begin();
            EXPECT_EQ(fields[static_cast<std::size_t>(col)], endings.at(method.get<std::string>()).at(fields[0]));
        }
    }
    EXPECT_THROW(make_annotation_sheets(fx.pairs, fx.endings(), 9, 42, 2, dir.path()), Error);
}

TEST(Sheets, IngestAndAggregate) {
    RunFixture fx;
    testing::TempDir dir;
    const auto mapping = make_annotation_sheets(fx.pairs, fx.endings(), 4, 7, 2, dir.path());
    // annotator 1 gives 3 everywhere; annotator 2 gives gold 1 on CF
    fill_sheet(dir / "annotator-1.csv", mapping, "annotator-1", [](auto&&, auto&&, auto&&) { return 3; });
    fill_sheet(dir / "annotator-2.csv", mapping, "annotator-2",
               [](const std::string& m, auto&&, const std::string& a) { return m == "gold" && a == "CF" ? 1 : 3; });
    auto scores = ingest_filled_sheet(dir / "annotator-1.csv", mapping, "annotator-1");
    const auto second = ingest_filled_sheet(dir / "annotator-2.csv", mapping, "annotator-2");
    EXPECT_EQ(scores.size(), 12u);
    scores.insert(scores.end(), second.begin(), second.end());
    std::vector<std::string> items;
    for (const auto& [id, _] : mapping["annotators"]["annotator-1"]["slots"].items()) items.push_back(id);
    const auto means = aggregate_human(scores, items, mapping["methods"].get<std::vector<std::string>>());
    EXPECT_EQ(means.at("copy").pre, 3.0);
    EXPECT_EQ(means.at("copy").avg, 3.0);
    EXPECT_EQ(means.at("gold").cf, 2.0);
    EXPECT_DOUBLE_EQ(means.at("gold").avg, 8.0 / 3.0);
    const auto table = human_table(means, "copy");
    EXPECT_NE(table.find("2.000v"), std::string::npos);  // constant difference: p = 0

    EXPECT_THROW(aggregate_human(second, items, {"copy", "gold", "lcs", "absent"}), Error);
    EXPECT_THROW(ingest_filled_sheet(dir / "annotator-1.csv", mapping, "annotator-9"), Error);
}

TEST(Sheets, BadScoresAreRejected) {
    RunFixture fx;
    testing::TempDir dir;
    const auto mapping = make_annotation_sheets(fx.pairs, fx.endings(), 2, 7, 1, dir.path());
    fill_sheet(dir / "annotator-1.csv", mapping, "annotator-1", [](auto&&, auto&&, auto&&) { return 4; });
    EXPECT_THROW(ingest_filled_sheet(dir / "annotator-1.csv", mapping, "annotator-1"), Error);
    // unfilled sheet: nothing scored
    make_annotation_sheets(fx.pairs, fx.endings(), 2, 7, 1, dir.path());
    EXPECT_TRUE(ingest_filled_sheet(dir / "annotator-1.csv", mapping, "annotator-1").empty());
}

TEST(AggregateHuman, AverageOfAspectMeans) {
    // per-aspect means as in the paper's human table row for the 0.8 model
    std::vector<HumanScore> scores;
    const std::array<std::array<int, 3>, 4> rows = {{{3, 2, 2}, {3, 2, 3}, {2, 3, 2}, {2, 2, 1}}};
    for (std::size_t i = 0; i < rows.size(); ++i) scores.push_back({"a1", "m", "i" + std::to_string(i), rows[i]});
    const auto means = aggregate_human(scores, {"i0", "i1", "i2", "i3"}, {"m"});
    EXPECT_DOUBLE_EQ(means.at("m").pre, 2.5);
    EXPECT_DOUBLE_EQ(means.at("m").cf, 2.25);
    EXPECT_DOUBLE_EQ(means.at("m").plot, 2.0);
    EXPECT_DOUBLE_EQ(means.at("m").avg, (2.5 + 2.25 + 2.0) / 3.0);
    // (2.590 + 2.130 + 2.120) / 3 = 2.280
    HumanMeans paper{2.590, 2.130, 2.120, 0.0, 1, {}};
    EXPECT_EQ(fixed((paper.pre + paper.cf + paper.plot) / 3.0), "2.280");
    const auto single = aggregate_human({{"a", "m", "x", {1, 3, 2}}}, {"x"}, {"m"});
    EXPECT_EQ(single.at("m").pre, 1.0);
    EXPECT_EQ(single.at("m").cf, 3.0);
    EXPECT_EQ(single.at("m").plot, 2.0);
}

}  // namespace
}  // namespace cfr
