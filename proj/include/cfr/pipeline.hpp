#pragma once

// Pipeline commands behind the `cfr` tool. One JSON config drives every
// command; artifacts live in <output_dir>/run-<config hash>/ and every
// artifact carries the hash and seed of the config that produced it.
//
// Run directory layout:
//   config.json                resolved config
//   vocab.json
//   stats.json                 dataset statistics from prepare
//   skeletons-<split>.jsonl    LCS labels (both sides) and skeleton per pair
//   augmented-train.jsonl      augmented skeletons, three per train pair
//   tagger.json, tagger-epochs.jsonl
//   generator.json, generator-epochs.jsonl
//   generations-<name>.jsonl   inference output
//   eval.json, eval.txt        sketch-stage label metrics
//   report.json, report.txt    ROUGE-L / coverage comparison of runs

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfr/augment.hpp"
#include "cfr/corpus.hpp"
#include "cfr/eval.hpp"
#include "cfr/generator.hpp"
#include "cfr/io.hpp"
#include "cfr/tagger.hpp"

namespace cfr {

inline constexpr int kArtifactVersion = 1;

// ---------------------------------------------------------------------------
// Config

struct PipelineConfig {
    std::string train_path;
    std::string dev_path;
    std::string test_path;
    std::string vocab_path;  // empty: build the vocabulary from the train split
    std::string tokenizer = "basic";
    std::size_t vocab_min_count = 1;
    std::string output_dir = "runs";
    std::uint64_t seed = 0;
    bool augmentation = true;
    double replace_ratio = 0.2;
    TaggerTrainConfig tagger;
    GeneratorTrainConfig generator;
    SamplerConfig sampler;

    /// Component seeds are not configured separately; they follow `seed`.
    TaggerTrainConfig tagger_config() const {
        auto c = tagger;
        c.seed = derive_seed(seed, "tagger", "");
        return c;
    }
    GeneratorTrainConfig generator_config() const {
        auto c = generator;
        c.seed = derive_seed(seed, "generator", "");
        return c;
    }
    SamplerConfig sampler_config() const {
        auto c = sampler;
        c.seed = derive_seed(seed, "sampler", "");
        return c;
    }

    nlohmann::json to_json() const {
        auto strip_seed = [](nlohmann::json j) {
            j.erase("seed");
            return j;
        };
        return {{"data", {{"train", train_path}, {"dev", dev_path}, {"test", test_path}}},
                {"vocab", vocab_path},
                {"tokenizer", tokenizer},
                {"vocab_min_count", vocab_min_count},
                {"output_dir", output_dir},
                {"seed", seed},
                {"augmentation", {{"enabled", augmentation}, {"replace_ratio", replace_ratio}}},
                {"tagger", strip_seed(tagger.to_json())},
                {"generator", strip_seed(generator.to_json())},
                {"sampler", strip_seed(sampler.to_json())}};
    }

    /// Keys missing from `j` keep their defaults; unknown keys are errors.
    static PipelineConfig from_json(const nlohmann::json& j) {
        const PipelineConfig defaults;
        check_keys(j, defaults.to_json(), "");
        PipelineConfig c;
        try {
            if (j.contains("data")) {
                const auto& d = j["data"];
                c.train_path = d.value("train", c.train_path);
                c.dev_path = d.value("dev", c.dev_path);
                c.test_path = d.value("test", c.test_path);
            }
            c.vocab_path = j.value("vocab", c.vocab_path);
            c.tokenizer = j.value("tokenizer", c.tokenizer);
            c.vocab_min_count = j.value("vocab_min_count", c.vocab_min_count);
            c.output_dir = j.value("output_dir", c.output_dir);
            c.seed = j.value("seed", c.seed);
            if (j.contains("augmentation")) {
                c.augmentation = j["augmentation"].value("enabled", c.augmentation);
                c.replace_ratio = j["augmentation"].value("replace_ratio", c.replace_ratio);
            }
            if (j.contains("tagger")) c.tagger = TaggerTrainConfig::from_json(j["tagger"]);
            if (j.contains("generator")) c.generator = GeneratorTrainConfig::from_json(j["generator"]);
            if (j.contains("sampler")) c.sampler = SamplerConfig::from_json(j["sampler"]);
        } catch (const nlohmann::json::type_error& e) {
            fail(ErrorKind::parse, std::string("config: ") + e.what());
        }
        c.validate();
        return c;
    }

    void validate() const {
        make_tokenizer(tokenizer);
        require(vocab_min_count >= 1, "config: vocab_min_count must be at least 1");
        require(replace_ratio >= 0.0 && replace_ratio <= 1.0, "config: augmentation.replace_ratio must be in [0, 1]");
        tagger.validate();
        generator.validate();
        sampler.validate();
    }

    /// Hash of everything that shapes the trained artifacts. The output
    /// directory and the sampler (an inference-time choice recorded in each
    /// generations file) are excluded.
    std::string hash() const {
        auto j = to_json();
        j.erase("output_dir");
        j.erase("sampler");
        return hex64(fnv1a(j.dump()));
    }

    std::filesystem::path run_dir() const { return std::filesystem::path(output_dir) / ("run-" + hash()); }

private:
    static void check_keys(const nlohmann::json& j, const nlohmann::json& known, const std::string& prefix) {
        if (!j.is_object()) fail(ErrorKind::parse, "config: " + (prefix.empty() ? "top level" : prefix) + " must be an object");
        for (const auto& [key, value] : j.items()) {
            const std::string path = prefix.empty() ? key : prefix + "." + key;
            if (!known.contains(key)) fail(ErrorKind::validation, "config: unknown key '" + path + "'");
            if (known[key].is_object()) check_keys(value, known[key], path);
        }
    }
};

/// Applies "a.b.c=value" to a config document. The value is parsed as JSON
/// when possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        fail(ErrorKind::validation, "override '" + assignment + "' is not of the form key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        value = text;
    }
    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) fail(ErrorKind::validation, "override key '" + key + "' has an empty component");
        if (!node->is_object()) *node = nlohmann::json::object();
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

/// Config file (optional) plus overrides, applied in order.
inline PipelineConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    nlohmann::json doc = nlohmann::json::object();
    if (!file.empty()) doc = read_json_file(file, "config");
    for (const auto& o : overrides) apply_override(doc, o);
    return PipelineConfig::from_json(doc);
}

// ---------------------------------------------------------------------------
// Artifact plumbing

struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path vocab() const { return root / "vocab.json"; }
    std::filesystem::path stats() const { return root / "stats.json"; }
    std::filesystem::path skeletons(Split split) const {
        return root / ("skeletons-" + std::string(to_string(split)) + ".jsonl");
    }
    std::filesystem::path augmented() const { return root / "augmented-train.jsonl"; }
    std::filesystem::path tagger() const { return root / "tagger.json"; }
    std::filesystem::path tagger_epochs() const { return root / "tagger-epochs.jsonl"; }
    std::filesystem::path generator() const { return root / "generator.json"; }
    std::filesystem::path generator_epochs() const { return root / "generator-epochs.jsonl"; }
    std::filesystem::path generations(const std::string& name) const { return root / ("generations-" + name + ".jsonl"); }
    std::filesystem::path eval_json() const { return root / "eval.json"; }
    std::filesystem::path eval_text() const { return root / "eval.txt"; }
    std::filesystem::path report_json() const { return root / "report.json"; }
    std::filesystem::path report_text() const { return root / "report.txt"; }
    std::filesystem::path sheets() const { return root / "sheets"; }
};

inline RunPaths run_paths(const PipelineConfig& cfg) { return {cfg.run_dir()}; }

inline nlohmann::json provenance(const PipelineConfig& cfg) {
    return {{"config_hash", cfg.hash()}, {"seed", cfg.seed}};
}

inline nlohmann::json artifact_header(std::string_view format, const PipelineConfig& cfg) {
    auto h = provenance(cfg);
    h["format"] = format;
    h["version"] = kArtifactVersion;
    return h;
}

/// Throws unless the artifact was produced under `cfg`.
inline void check_provenance(const nlohmann::json& meta, const PipelineConfig& cfg,
                             const std::filesystem::path& path) {
    if (meta.value("config_hash", "") != cfg.hash())
        fail(ErrorKind::mismatch, path.string() + " was produced by config " + meta.value("config_hash", "?") +
                                      ", current config is " + cfg.hash());
}

/// Header-first JSONL artifact: returns the rows after a checked header.
inline std::vector<nlohmann::json> read_artifact(const std::filesystem::path& path, std::string_view format,
                                                 const PipelineConfig* cfg, nlohmann::json* header = nullptr) {
    auto rows = read_jsonl(path);
    if (rows.empty()) fail(ErrorKind::parse, path.string() + ": missing header line");
    check_format(rows.front(), format, kArtifactVersion, path);
    if (cfg) check_provenance(rows.front(), *cfg, path);
    if (header) *header = rows.front();
    rows.erase(rows.begin());
    return rows;
}

inline void write_artifact(const std::filesystem::path& path, const nlohmann::json& header,
                           std::vector<nlohmann::json> rows) {
    rows.insert(rows.begin(), header);
    write_jsonl(path, rows);
}

/// Content fingerprint of a list of pairs, used to catch reports that mix
/// generations from different test sets.
inline std::string dataset_hash(const std::vector<StoryPair>& pairs) {
    std::uint64_t h = fnv1a("cfr-dataset-v1");
    for (const auto& p : pairs) {
        h = fnv1a(story_record(p, Split::test).dump(), h);
        h = fnv1a("\n", h);
    }
    return hex64(h);
}

inline std::vector<StoryPair> load_split(const PipelineConfig& cfg, Split split) {
    const std::string& path = split == Split::train ? cfg.train_path : split == Split::dev ? cfg.dev_path : cfg.test_path;
    if (path.empty()) fail(ErrorKind::validation, "config: data." + std::string(to_string(split)) + " is not set");
    if (!std::filesystem::exists(path)) fail(ErrorKind::io, std::string(to_string(split)) + " data not found: " + path);
    return load_dataset(path, split);
}

inline std::vector<StoryPair> with_reference(std::vector<StoryPair> pairs) {
    std::erase_if(pairs, [](const StoryPair& p) { return !p.has_reference(); });
    return pairs;
}

/// The run's vocabulary, after checking that prepare ran under this config.
inline Vocab load_run_vocab(const PipelineConfig& cfg) {
    const auto paths = run_paths(cfg);
    if (!std::filesystem::exists(paths.config()))
        fail(ErrorKind::io, "no prepared run at " + paths.root.string() +
                                " (run prepare with the same config and flags first)");
    check_provenance(read_json_file(paths.config(), "run config"), cfg, paths.config());
    return Vocab::load(paths.vocab());
}

struct PreparedPair {
    LabelSeq original_labels;
    LabelSeq counterfactual_labels;
    Skeleton skeleton;
};

inline std::map<std::string, PreparedPair> load_prepared(const PipelineConfig& cfg, Split split) {
    const auto path = run_paths(cfg).skeletons(split);
    std::map<std::string, PreparedPair> out;
    for (const auto& row : read_artifact(path, "cfr.skeletons", &cfg)) {
        PreparedPair p;
        p.original_labels = labels_from_ints(row.at("original_labels").get<std::vector<int>>());
        p.counterfactual_labels = labels_from_ints(row.at("counterfactual_labels").get<std::vector<int>>());
        p.skeleton = parse_skeleton(row.at("skeleton").get<std::string>(), SkeletonSource::lcs);
        out.emplace(row.at("story_id").get<std::string>(), std::move(p));
    }
    return out;
}

inline const PreparedPair& prepared_for(const std::map<std::string, PreparedPair>& prepared, const StoryPair& pair) {
    const auto it = prepared.find(pair.id);
    if (it == prepared.end()) fail(ErrorKind::mismatch, "story " + pair.id + " has no prepared skeleton record");
    return it->second;
}

// ---------------------------------------------------------------------------
// prepare

namespace detail {

inline nlohmann::json split_stats(const std::vector<StoryPair>& pairs, std::size_t usable,
                                  std::size_t causal, std::size_t background) {
    const std::size_t total = causal + background;
    return {{"pairs", pairs.size()},
            {"pairs_with_reference", usable},
            {"causal_tokens", causal},
            {"background_tokens", background},
            {"causal_fraction", total ? static_cast<double>(causal) / static_cast<double>(total) : 0.0},
            {"background_per_causal", causal ? static_cast<double>(background) / static_cast<double>(causal) : 0.0}};
}

}  // namespace detail

/// LCS labels and skeletons for every split with a path, augmented train
/// skeletons when enabled, the vocabulary and dataset statistics. Returns
/// the statistics.
inline nlohmann::json cmd_prepare(const PipelineConfig& cfg) {
    const auto paths = run_paths(cfg);
    const auto train = load_split(cfg, Split::train);
    const Vocab vocab = cfg.vocab_path.empty() ? build_vocab(train, cfg.vocab_min_count) : Vocab::load(cfg.vocab_path);
    write_json_file(paths.config(), {{"format", "cfr.config"},
                                     {"version", kArtifactVersion},
                                     {"config_hash", cfg.hash()},
                                     {"seed", cfg.seed},
                                     {"config", cfg.to_json()}});
    vocab.save(paths.vocab());

    nlohmann::json stats = artifact_header("cfr.stats", cfg);
    stats["vocab_size"] = vocab.size();
    stats["vocab_hash"] = vocab.hash();
    for (Split split : {Split::train, Split::dev, Split::test}) {
        if (split != Split::train && (split == Split::dev ? cfg.dev_path : cfg.test_path).empty()) continue;
        const auto pairs = split == Split::train ? train : load_split(cfg, split);
        std::vector<nlohmann::json> rows, augmented;
        std::size_t causal = 0, background = 0;
        for (const auto& pair : pairs) {
            if (!pair.has_reference()) continue;
            const auto e = side_ending(pair, Side::original);
            const auto e_prime = side_ending(pair, Side::counterfactual);
            const auto [lo, lc] = derive_labels(e, e_prime);
            const Skeleton k = build_skeleton(e, lo, SkeletonSource::lcs);
            for (const auto* labels : {&lo, &lc}) {
                const auto c = count_label(*labels, Label::causal);
                causal += c;
                background += labels->size() - c;
            }
            rows.push_back({{"story_id", pair.id},
                            {"original_ending", join(e.tokens)},
                            {"counterfactual_ending", join(e_prime.tokens)},
                            {"original_labels", labels_to_ints(lo)},
                            {"counterfactual_labels", labels_to_ints(lc)},
                            {"skeleton", join(k.items)}});
            if (split == Split::train && cfg.augmentation)
                for (const auto& [variant, ak] : augment_all(k, pair.id, cfg.seed, cfg.replace_ratio, vocab))
                    augmented.push_back(
                        {{"story_id", pair.id}, {"variant", to_string(variant)}, {"skeleton", join(ak.items)}});
        }
        if (rows.size() < pairs.size())
            log_warn(std::string(to_string(split)) + ": " + std::to_string(pairs.size() - rows.size()) +
                     " pairs without a reference ending were skipped");
        auto header = artifact_header("cfr.skeletons", cfg);
        header["split"] = to_string(split);
        const auto count = rows.size();
        write_artifact(paths.skeletons(split), header, std::move(rows));
        if (split == Split::train) {
            if (cfg.augmentation) {
                auto ah = artifact_header("cfr.augmented", cfg);
                ah["replace_ratio"] = cfg.replace_ratio;
                write_artifact(paths.augmented(), ah, std::move(augmented));
            } else {
                std::filesystem::remove(paths.augmented());
            }
        }
        stats["splits"][std::string(to_string(split))] = detail::split_stats(pairs, count, causal, background);
    }
    write_json_file(paths.stats(), stats);
    return stats;
}

// ---------------------------------------------------------------------------
// train-sketch

namespace detail {

/// Tagger instances whose gold labels come from the prepared records.
inline std::vector<TaggerInstance> prepared_tagger_instances(const std::vector<StoryPair>& pairs,
                                                             const std::map<std::string, PreparedPair>& prepared,
                                                             const Vocab& vocab, std::size_t max_length,
                                                             bool both_sides) {
    std::vector<TaggerInstance> out;
    for (const auto& pair : pairs) {
        const auto& p = prepared_for(prepared, pair);
        for (Side side : {Side::original, Side::counterfactual}) {
            if (side == Side::counterfactual && !both_sides) break;
            TaggerInstance inst;
            inst.id = pair.id;
            inst.side = side;
            inst.input = format_sketch_input(pair, side, vocab, max_length);
            inst.gold = side == Side::original ? p.original_labels : p.counterfactual_labels;
            inst.gold.resize(inst.input.ending_length());
            out.push_back(std::move(inst));
        }
    }
    return out;
}

}  // namespace detail

inline TaggerTrainResult<float> cmd_train_sketch(const PipelineConfig& cfg,
                                                 const std::function<void(const TaggerEpoch&)>& on_epoch = {}) {
    const auto paths = run_paths(cfg);
    const Vocab vocab = load_run_vocab(cfg);
    const auto tc = cfg.tagger_config();
    const auto train = with_reference(load_split(cfg, Split::train));
    const auto train_set = detail::prepared_tagger_instances(train, load_prepared(cfg, Split::train), vocab,
                                                             tc.max_sequence_length, true);
    std::vector<TaggerInstance> dev_set;
    if (!cfg.dev_path.empty())
        dev_set = detail::prepared_tagger_instances(with_reference(load_split(cfg, Split::dev)),
                                                    load_prepared(cfg, Split::dev), vocab, tc.max_sequence_length,
                                                    false);
    auto result = train_tagger<float>(train_set, dev_set, vocab.size(), vocab.hash(), tc, on_epoch);
    std::vector<nlohmann::json> rows;
    for (const auto& e : result.history) rows.push_back(e.to_json());
    write_artifact(paths.tagger_epochs(), artifact_header("cfr.tagger-epochs", cfg), rows);
    auto prov = provenance(cfg);
    prov["best_epoch"] = result.best_epoch;
    prov["lambda"] = tc.lambda;
    save_tagger(paths.tagger(), result.model, prov);
    return result;
}

// ---------------------------------------------------------------------------
// train-customize

inline GeneratorTrainResult<float> cmd_train_customize(const PipelineConfig& cfg,
                                                       const std::function<void(const GeneratorEpoch&)>& on_epoch = {}) {
    const auto paths = run_paths(cfg);
    const Vocab vocab = load_run_vocab(cfg);
    const auto train = with_reference(load_split(cfg, Split::train));
    const auto prepared = load_prepared(cfg, Split::train);
    std::map<std::string, std::vector<std::pair<AugmentVariant, Skeleton>>> augmented;
    if (cfg.augmentation)
        for (const auto& row : read_artifact(paths.augmented(), "cfr.augmented", &cfg))
            augmented[row.at("story_id").get<std::string>()].emplace_back(
                parse_augment_variant(row.at("variant").get<std::string>()),
                parse_skeleton(row.at("skeleton").get<std::string>(), SkeletonSource::augmented));
    std::vector<PairSkeletons> skeletons;
    for (const auto& pair : train) {
        PairSkeletons s{prepared_for(prepared, pair).skeleton, {}};
        if (cfg.augmentation) {
            const auto it = augmented.find(pair.id);
            if (it == augmented.end()) fail(ErrorKind::mismatch, "story " + pair.id + " has no augmented skeletons");
            s.augmented = it->second;
        }
        skeletons.push_back(std::move(s));
    }
    const auto gc = cfg.generator_config();
    auto result = train_generator<float>(train, skeletons, vocab, gc, on_epoch);
    std::vector<nlohmann::json> rows;
    for (const auto& e : result.history) rows.push_back(e.to_json());
    write_artifact(paths.generator_epochs(), artifact_header("cfr.generator-epochs", cfg), rows);
    save_generator(paths.generator(), result.model, provenance(cfg));
    return result;
}

// ---------------------------------------------------------------------------
// infer

inline TaggerModel<float> load_run_tagger(const PipelineConfig& cfg, const Vocab& vocab) {
    const auto path = run_paths(cfg).tagger();
    if (!std::filesystem::exists(path)) fail(ErrorKind::io, "missing tagger checkpoint " + path.string());
    nlohmann::json prov;
    auto model = load_tagger<float>(path, &prov);
    check_provenance(prov, cfg, path);
    if (model.vocab_hash() != vocab.hash()) fail(ErrorKind::mismatch, path.string() + ": vocab hash mismatch");
    return model;
}

inline GeneratorModel<float> load_run_generator(const PipelineConfig& cfg, const Vocab& vocab) {
    const auto path = run_paths(cfg).generator();
    if (!std::filesystem::exists(path)) fail(ErrorKind::io, "missing generator checkpoint " + path.string());
    nlohmann::json prov;
    auto model = load_generator<float>(path, &prov);
    check_provenance(prov, cfg, path);
    if (model.vocab_hash() != vocab.hash()) fail(ErrorKind::mismatch, path.string() + ": vocab hash mismatch");
    return model;
}

struct InferOptions {
    SkeletonSource source = SkeletonSource::predicted;
    std::string name;  // empty: "<source>-k<k>"
};

inline std::string default_run_name(const PipelineConfig& cfg, SkeletonSource source) {
    return std::string(to_string(source)) + "-k" + std::to_string(cfg.sampler.k);
}

/// One counterfactual ending per test pair. The skeleton comes from the
/// tagger (predicted), from the pair's reference ending (lcs), or from
/// blanking random tokens (random; same blank budget as the LCS skeleton,
/// or the augmentation ratio when the pair has no reference).
inline std::filesystem::path cmd_infer(const PipelineConfig& cfg, const InferOptions& opts = {}) {
    require(opts.source != SkeletonSource::augmented, "infer: skeleton source must be predicted, lcs or random");
    const auto paths = run_paths(cfg);
    const Vocab vocab = load_run_vocab(cfg);
    const auto test = load_split(cfg, Split::test);
    const auto generator = load_run_generator(cfg, vocab);
    std::optional<TaggerModel<float>> tagger;
    if (opts.source == SkeletonSource::predicted) tagger = load_run_tagger(cfg, vocab);
    const auto sampler = cfg.sampler_config();

    std::vector<nlohmann::json> rows;
    for (const auto& pair : test) {
        GenerationRecord rec;
        rec.story_id = pair.id;
        const auto e = side_ending(pair, Side::original);
        switch (opts.source) {
            case SkeletonSource::predicted:
                rec.predicted_labels = predict_ending_labels(*tagger, pair, vocab, tagger->config().max_length);
                rec.skeleton = build_skeleton(e, *rec.predicted_labels, SkeletonSource::predicted);
                break;
            case SkeletonSource::lcs:
                if (!pair.has_reference())
                    fail(ErrorKind::validation, "infer: lcs skeletons need a reference ending (story " + pair.id + ")");
                rec.skeleton = lcs_skeleton(e, side_ending(pair, Side::counterfactual));
                break;
            default: {
                const std::size_t budget =
                    pair.has_reference()
                        ? count_label(derive_labels(e, side_ending(pair, Side::counterfactual)).first, Label::causal)
                        : augment_count(cfg.replace_ratio, e.size());
                Rng rng(derive_seed(cfg.seed, pair.id, "random-skeleton"));
                rec.skeleton = random_skeleton(e, budget, rng);
            }
        }
        rec.ending = generate_ending(generator, pair, rec.skeleton, vocab, sampler);
        rows.push_back(rec.to_json(sampler.to_json()));
    }
    auto header = artifact_header("cfr.generations", cfg);
    header["split"] = "test";
    header["test_data_hash"] = dataset_hash(test);
    header["skeleton_source"] = to_string(opts.source);
    header["sampler"] = sampler.to_json();
    const auto out = paths.generations(opts.name.empty() ? default_run_name(cfg, opts.source) : opts.name);
    write_artifact(out, header, std::move(rows));
    return out;
}

// ---------------------------------------------------------------------------
// eval (sketch-stage label metrics)

/// Tagger label metrics on the original side of the dev and test splits,
/// written to eval.json / eval.txt. Rows from other runs' eval.json files
/// are appended to the text table for side-by-side comparison.
inline nlohmann::json cmd_eval(const PipelineConfig& cfg, const std::vector<std::filesystem::path>& compare = {}) {
    const auto paths = run_paths(cfg);
    const Vocab vocab = load_run_vocab(cfg);
    const auto tagger = load_run_tagger(cfg, vocab);
    auto result = artifact_header("cfr.label-eval", cfg);
    result["lambda"] = cfg.tagger.lambda;
    for (Split split : {Split::dev, Split::test}) {
        if ((split == Split::dev ? cfg.dev_path : cfg.test_path).empty()) continue;
        const auto pairs = with_reference(load_split(cfg, split));
        const auto instances = detail::prepared_tagger_instances(pairs, load_prepared(cfg, split), vocab,
                                                                 tagger.config().max_length, false);
        result[std::string(to_string(split))] = evaluate_tagger(tagger, instances).to_json();
    }
    const std::string headline = result.contains("test") ? "test" : "dev";
    if (!result.contains(headline)) fail(ErrorKind::validation, "eval: neither dev nor test data is configured");
    std::vector<std::pair<std::string, LabelMetrics>> rows = {
        {fixed(cfg.tagger.lambda, 2), LabelMetrics::from_json(result[headline])}};
    for (const auto& other : compare) {
        const auto file = std::filesystem::is_directory(other) ? other / "eval.json" : other;
        const auto j = read_json_file(file, "eval result");
        check_format(j, "cfr.label-eval", kArtifactVersion, file);
        if (!j.contains(headline)) fail(ErrorKind::mismatch, file.string() + " has no " + headline + " metrics");
        rows.emplace_back(fixed(j.at("lambda").get<double>(), 2), LabelMetrics::from_json(j[headline]));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    result["table_split"] = headline;
    write_json_file(paths.eval_json(), result);
    write_text_file(paths.eval_text(), label_table(rows));
    return result;
}

// ---------------------------------------------------------------------------
// report (generation metrics)

struct ReportOptions {
    std::vector<std::filesystem::path> runs;  // empty: every generations-*.jsonl in the run directory
    bool baselines = false;                   // add copy-original and gold-reference rows
};

inline std::string run_name_of(const std::filesystem::path& file) {
    std::string stem = file.stem().string();
    if (stem.rfind("generations-", 0) == 0) stem = stem.substr(12);
    return stem;
}

inline std::vector<std::filesystem::path> generation_files(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::is_directory(dir)) return out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("generations-", 0) == 0 && entry.path().extension() == ".jsonl") out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Reads a generations file, checking that it was produced on `test`.
inline std::vector<GenerationRecord> load_generations(const std::filesystem::path& file,
                                                      const std::vector<StoryPair>& test) {
    nlohmann::json header;
    const auto rows = read_artifact(file, "cfr.generations", nullptr, &header);
    if (header.value("test_data_hash", "") != dataset_hash(test))
        fail(ErrorKind::mismatch, file.string() + " was generated for a different test set");
    std::vector<GenerationRecord> out;
    for (const auto& row : rows) out.push_back(GenerationRecord::from_json(row));
    return out;
}

inline nlohmann::json cmd_report(const PipelineConfig& cfg, const ReportOptions& opts = {}) {
    const auto paths = run_paths(cfg);
    const auto test = load_split(cfg, Split::test);
    auto files = opts.runs.empty() ? generation_files(paths.root) : opts.runs;
    std::vector<RunScores> runs;
    for (const auto& f : files) runs.push_back(score_run(run_name_of(f), test, load_generations(f, test)));
    if (opts.baselines) {
        std::vector<GenerationRecord> copy, gold;
        for (const auto& pair : test) {
            if (!pair.has_reference()) fail(ErrorKind::validation, "report: baselines need reference endings");
            const auto e = side_ending(pair, Side::original);
            const auto e_prime = side_ending(pair, Side::counterfactual);
            const auto k = lcs_skeleton(e, e_prime);
            copy.push_back({pair.id, k, e, std::nullopt});
            gold.push_back({pair.id, k, e_prime, std::nullopt});
        }
        runs.push_back(score_run("copy-original", test, copy));
        runs.push_back(score_run("gold-reference", test, gold));
    }
    if (runs.empty()) fail(ErrorKind::validation, "report: no generation files in " + paths.root.string());
    auto result = artifact_header("cfr.report", cfg);
    result["test_data_hash"] = dataset_hash(test);
    result["runs"] = nlohmann::json::array();
    for (const auto& r : runs) result["runs"].push_back(r.to_json());
    write_json_file(paths.report_json(), result);
    write_text_file(paths.report_text(), rouge_table(runs));
    return result;
}

// ---------------------------------------------------------------------------
// sheets

/// Blind annotation sheets for the named generation files.
inline nlohmann::json cmd_sheets_make(const PipelineConfig& cfg, const std::map<std::string, std::filesystem::path>& runs,
                                      std::size_t n, std::size_t annotators, std::filesystem::path out_dir = {}) {
    const auto test = load_split(cfg, Split::test);
    if (out_dir.empty()) out_dir = run_paths(cfg).sheets();
    RunEndings endings;
    for (const auto& [method, file] : runs)
        for (const auto& rec : load_generations(file, test)) endings[method][rec.story_id] = join(rec.ending.tokens);
    return make_annotation_sheets(test, endings, n, derive_seed(cfg.seed, "sheets", ""), annotators, out_dir);
}

/// Ingests every annotator sheet next to `mapping_path` and writes
/// human.json / human.txt beside it. With a baseline method, each other
/// method gets a paired t-test per aspect over the per-item means.
inline nlohmann::json cmd_sheets_aggregate(const std::filesystem::path& mapping_path, const std::string& baseline = "",
                                           double alpha = 0.01) {
    const auto mapping = read_json_file(mapping_path, "sheet mapping");
    check_format(mapping, "cfr.sheet-mapping", kSheetMappingVersion, mapping_path);
    const auto dir = mapping_path.parent_path();
    const auto methods = mapping.at("methods").get<std::vector<std::string>>();
    if (!baseline.empty() && std::find(methods.begin(), methods.end(), baseline) == methods.end())
        fail(ErrorKind::validation, "sheets: baseline " + baseline + " is not one of the sheet methods");
    std::vector<HumanScore> scores;
    std::vector<std::string> items;
    for (const auto& [who, entry] : mapping.at("annotators").items()) {
        const auto file = dir / entry.at("file").get<std::string>();
        if (!std::filesystem::exists(file)) {
            log_warn("sheets: " + file.string() + " not found, skipping " + who);
            continue;
        }
        const auto s = ingest_filled_sheet(file, mapping, who);
        scores.insert(scores.end(), s.begin(), s.end());
        if (items.empty())
            for (const auto& [item, _] : entry.at("slots").items()) items.push_back(item);
    }
    if (items.empty()) fail(ErrorKind::io, "sheets: no annotator files found next to " + mapping_path.string());
    const auto means = aggregate_human(scores, items, methods);
    nlohmann::json result = {{"format", "cfr.human-scores"}, {"version", kArtifactVersion},
                             {"items", items.size()},      {"baseline", baseline},
                             {"alpha", alpha},             {"methods", nlohmann::json::object()}};
    for (const auto& [method, h] : means) {
        nlohmann::json m = {{"PRE", h.pre}, {"CF", h.cf}, {"PLOT", h.plot}, {"Avg", h.avg}};
        if (!baseline.empty() && method != baseline && items.size() >= 2)
            for (std::size_t a = 0; a < 3; ++a) {
                const auto t = paired_t_test(h.per_item[a], means.at(baseline).per_item[a]);
                m["t_test"][std::string(to_string(kAspects[a]))] = {
                    {"t", std::isfinite(t.t) ? nlohmann::json(t.t) : nlohmann::json(t.t > 0 ? "inf" : "-inf")},
                    {"p", t.p},
                    {"df", t.df},
                    {"zero_variance", t.zero_variance}};
            }
        result["methods"][method] = m;
    }
    write_json_file(dir / "human.json", result);
    write_text_file(dir / "human.txt", human_table(means, baseline, alpha));
    return result;
}

}  // namespace cfr
