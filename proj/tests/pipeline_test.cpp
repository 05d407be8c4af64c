#include <gtest/gtest.h>

#include "cfr/pipeline.hpp"
#include "cfr/synthetic.hpp"
#include "test_util.hpp"

namespace cfr {
namespace {

namespace fs = std::filesystem;

/// Toy splits on disk plus a config with very small models.
struct ToyRun {
    testing::TempDir dir;
    PipelineConfig cfg;

    explicit ToyRun(std::size_t train = 10, std::size_t test = 6) {
        save_dataset(dir / "train.jsonl", synthetic::templated_corpus(train, 1, "train"), Split::train);
        save_dataset(dir / "dev.jsonl", synthetic::templated_corpus(4, 2, "dev"), Split::dev);
        save_dataset(dir / "test.jsonl", synthetic::templated_corpus(test, 3, "test"), Split::test);
        cfg.train_path = (dir / "train.jsonl").string();
        cfg.dev_path = (dir / "dev.jsonl").string();
        cfg.test_path = (dir / "test.jsonl").string();
        cfg.output_dir = (dir / "runs").string();
        cfg.seed = 7;
        for (auto* c : {&cfg.tagger.dim, &cfg.generator.dim}) *c = 8;
        for (auto* c : {&cfg.tagger.ffn_dim, &cfg.generator.ffn_dim}) *c = 16;
        cfg.tagger.layers = cfg.generator.layers = 1;
        cfg.tagger.heads = cfg.generator.heads = 2;
        cfg.tagger.epochs = cfg.generator.epochs = 1;
        cfg.tagger.max_sequence_length = cfg.generator.max_sequence_length = 96;
        cfg.sampler.k = 1;
        cfg.sampler.max_ending_length = 12;
    }

    RunPaths paths() const { return run_paths(cfg); }

    void train_all() {
        cmd_prepare(cfg);
        cmd_train_sketch(cfg);
        cmd_train_customize(cfg);
    }
};

std::size_t line_count(const fs::path& p) {
    const auto text = testing::read_file(p);
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

TEST(PipelineConfig, DefaultsFollowThePublishedSetup) {
    const PipelineConfig c;
    EXPECT_EQ(c.tagger.learning_rate, 5e-5);
    EXPECT_EQ(c.generator.learning_rate, 1.5e-4);
    EXPECT_EQ(c.tagger.epochs, 5u);
    EXPECT_EQ(c.generator.epochs, 10u);
    EXPECT_EQ(c.sampler.k, 40u);
    EXPECT_EQ(c.replace_ratio, 0.2);
    EXPECT_EQ(c.tagger.max_sequence_length, 300u);
}

TEST(PipelineConfig, JsonRoundTripAndOverrides) {
    ToyRun toy;
    const auto back = PipelineConfig::from_json(toy.cfg.to_json());
    EXPECT_EQ(back.to_json(), toy.cfg.to_json());
    EXPECT_EQ(back.hash(), toy.cfg.hash());

    testing::write_file(toy.dir / "c.json", toy.cfg.to_json().dump());
    const auto c = load_config(toy.dir / "c.json", {"tagger.lambda=0.5", "tagger.lambda=0.3", "data.test=\"x\""});
    EXPECT_EQ(c.tagger.lambda, 0.3);
    EXPECT_EQ(c.test_path, "x");
    EXPECT_EQ(c.tagger.dim, 8u);  // untouched fields come from the file
    EXPECT_THROW(load_config({}, {"tagger.lamda=0.5"}), Error);
    EXPECT_THROW(load_config({}, {"tagger.lambda=1.5"}), Error);
    EXPECT_THROW(load_config({}, {"sampler.k=0"}), Error);
    EXPECT_THROW(load_config({}, {"novalue"}), Error);
    EXPECT_THROW(load_config({}, {"tagger.seed=3"}), Error);  // seeds follow the global seed
}

TEST(PipelineConfig, HashIgnoresSamplerAndOutputDir) {
    PipelineConfig a;
    auto b = a;
    b.sampler.k = 1;
    b.output_dir = "elsewhere";
    EXPECT_EQ(a.hash(), b.hash());
    b.tagger.lambda = 0.5;
    EXPECT_NE(a.hash(), b.hash());
    auto c = a;
    c.seed = 1;
    EXPECT_NE(a.hash(), c.hash());
}

TEST(Prepare, ToyCountsAndRecords) {
    ToyRun toy;
    const auto stats = cmd_prepare(toy.cfg);
    const auto p = toy.paths();
    EXPECT_EQ(line_count(p.skeletons(Split::train)), 1u + 10u);
    EXPECT_EQ(line_count(p.augmented()), 1u + 30u);
    EXPECT_EQ(stats["splits"]["train"]["pairs"], 10);
    EXPECT_EQ(stats["splits"]["test"]["pairs"], 6);

    const auto prepared = load_prepared(toy.cfg, Split::train);
    const auto pairs = load_dataset(toy.cfg.train_path, Split::train);
    std::size_t causal = 0, background = 0;
    for (const auto& pair : pairs) {
        const auto& rec = prepared.at(pair.id);
        const auto e = side_ending(pair, Side::original);
        EXPECT_EQ(rec.skeleton, build_skeleton(e, rec.original_labels));
        EXPECT_EQ(rec.skeleton, lcs_skeleton(e, side_ending(pair, Side::counterfactual)));
        for (const auto* l : {&rec.original_labels, &rec.counterfactual_labels}) {
            causal += count_label(*l, Label::causal);
            background += count_label(*l, Label::background);
        }
    }
    EXPECT_EQ(stats["splits"]["train"]["causal_tokens"], causal);
    EXPECT_EQ(stats["splits"]["train"]["background_tokens"], background);
    EXPECT_EQ(stats["config_hash"], toy.cfg.hash());

    for (const auto& row : read_artifact(p.augmented(), "cfr.augmented", &toy.cfg))
        EXPECT_TRUE(is_well_formed(parse_skeleton(row.at("skeleton").get<std::string>())));
}

TEST(Prepare, NoAugmentationWritesNoAugmentedFile) {
    ToyRun toy;
    toy.cfg.augmentation = false;
    cmd_prepare(toy.cfg);
    EXPECT_FALSE(fs::exists(toy.paths().augmented()));
    EXPECT_EQ(line_count(toy.paths().skeletons(Split::train)), 11u);
}

TEST(Prepare, RerunIsByteIdentical) {
    ToyRun toy;
    cmd_prepare(toy.cfg);
    std::map<std::string, std::string> first;
    for (const auto& f : fs::directory_iterator(toy.paths().root)) first[f.path().filename()] = testing::read_file(f);
    cmd_prepare(toy.cfg);
    for (const auto& [name, text] : first) EXPECT_EQ(testing::read_file(toy.paths().root / name), text) << name;
}

TEST(Prepare, MissingDataIsAnIoError) {
    ToyRun toy;
    toy.cfg.train_path = (toy.dir / "nope.jsonl").string();
    try {
        cmd_prepare(toy.cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
}

TEST(Artifacts, ForeignConfigHashIsRejected) {
    ToyRun toy;
    cmd_prepare(toy.cfg);
    auto rows = read_jsonl(toy.paths().skeletons(Split::train));
    rows[0]["config_hash"] = "0000000000000000";
    write_jsonl(toy.paths().skeletons(Split::train), rows);
    try {
        cmd_train_sketch(toy.cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::mismatch);
    }
}

TEST(Artifacts, TrainingNeedsPrepare) {
    ToyRun toy;
    EXPECT_THROW(cmd_train_sketch(toy.cfg), Error);
    EXPECT_THROW(cmd_infer(toy.cfg), Error);
}

TEST(Infer, GreedyRerunAndRecordShape) {
    ToyRun toy;
    toy.train_all();
    const auto out = cmd_infer(toy.cfg);
    EXPECT_EQ(out.filename(), "generations-predicted-k1.jsonl");
    const auto first = testing::read_file(out);
    cmd_infer(toy.cfg);
    EXPECT_EQ(testing::read_file(out), first);

    nlohmann::json header;
    const auto rows = read_artifact(out, "cfr.generations", &toy.cfg, &header);
    EXPECT_EQ(rows.size(), 6u);
    EXPECT_EQ(header["skeleton_source"], "predicted");
    EXPECT_EQ(header["sampler"]["k"], 1);
    for (const auto& row : rows) {
        const auto rec = GenerationRecord::from_json(row);
        EXPECT_TRUE(is_well_formed(rec.skeleton));
        ASSERT_TRUE(rec.predicted_labels.has_value());
        EXPECT_EQ(row["sampler_config"], header["sampler"]);
    }
    for (auto source : {SkeletonSource::lcs, SkeletonSource::random}) {
        const auto f = cmd_infer(toy.cfg, {source, ""});
        EXPECT_EQ(read_artifact(f, "cfr.generations", &toy.cfg).size(), 6u);
    }
    EXPECT_THROW(cmd_infer(toy.cfg, {SkeletonSource::augmented, ""}), Error);
}

TEST(Infer, CheckpointProblemsAreReported) {
    ToyRun toy;
    toy.train_all();
    fs::remove(toy.paths().generator());
    try {
        cmd_infer(toy.cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io);
    }
    cmd_train_customize(toy.cfg);
    // a checkpoint for another vocabulary
    Vocab other({"zzz"});
    GeneratorModel<float> foreign(toy.cfg.generator_config().model_config(other.size()), 1, other.hash());
    save_generator(toy.paths().generator(), foreign, provenance(toy.cfg));
    try {
        cmd_infer(toy.cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::mismatch);
    }
}

TEST(Report, BaselinesAndRunRows) {
    ToyRun toy;
    toy.train_all();
    cmd_infer(toy.cfg);
    const auto report = cmd_report(toy.cfg, {{}, true});
    ASSERT_EQ(report["runs"].size(), 3u);
    EXPECT_EQ(report["runs"][0]["run"], "predicted-k1");
    EXPECT_FALSE(report["runs"][0]["label_metrics"].is_null());
    EXPECT_EQ(report["runs"][1]["run"], "copy-original");
    EXPECT_EQ(report["runs"][1]["rouge_l_vs_original"]["f"], 1.0);
    EXPECT_EQ(report["runs"][2]["run"], "gold-reference");
    EXPECT_EQ(report["runs"][2]["rouge_l_vs_references"]["f"], 1.0);
    const auto text = testing::read_file(toy.paths().report_text());
    EXPECT_NE(text.find("copy-original"), std::string::npos);

    // generations for a different test set are refused
    save_dataset(toy.dir / "test2.jsonl", synthetic::templated_corpus(6, 99, "test"), Split::test);
    auto other = toy.cfg;
    other.test_path = (toy.dir / "test2.jsonl").string();
    try {
        cmd_report(other, {{toy.paths().generations("predicted-k1")}, false});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::mismatch);
    }
}

TEST(Eval, LabelTableWithComparison) {
    ToyRun toy;
    toy.train_all();
    const auto first = cmd_eval(toy.cfg);
    EXPECT_EQ(first["table_split"], "test");
    EXPECT_TRUE(first.contains("dev"));
    const auto text = testing::read_file(toy.paths().eval_text());
    EXPECT_EQ(text.rfind("lambda", 0), 0u);
    EXPECT_NE(text.find("0.80"), std::string::npos);

    auto other = toy.cfg;
    other.tagger.lambda = 0.5;
    ASSERT_NE(run_paths(other).root, toy.paths().root);
    cmd_prepare(other);
    cmd_train_sketch(other);
    cmd_eval(other, {toy.paths().root});
    const auto both = testing::read_file(run_paths(other).eval_text());
    const auto row50 = both.find("\n0.50"), row80 = both.find("\n0.80");
    ASSERT_NE(row50, std::string::npos);
    ASSERT_NE(row80, std::string::npos);
    EXPECT_LT(row50, row80);
}

TEST(Sheets, MakeFromGenerationFiles) {
    ToyRun toy;
    toy.train_all();
    const auto a = cmd_infer(toy.cfg);
    const auto b = cmd_infer(toy.cfg, {SkeletonSource::random, ""});
    const auto mapping = cmd_sheets_make(toy.cfg, {{"sc", a}, {"random", b}}, 4, 2);
    EXPECT_EQ(mapping["items"], 4);
    EXPECT_TRUE(fs::exists(toy.paths().sheets() / "annotator-2.csv"));
    EXPECT_THROW(cmd_sheets_make(toy.cfg, {{"sc", a}}, 7, 1), Error);
    // blank sheets have no scores, so aggregation reports the missing cells
    EXPECT_THROW(cmd_sheets_aggregate(toy.paths().sheets() / "mapping.json"), Error);
}

}  // namespace
}  // namespace cfr
