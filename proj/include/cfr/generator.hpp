#pragma once

// Customize stage: a causal transformer language model over the customize
// layout, trained with teacher forcing on the ending span, and top-k
// temperature sampling for decoding.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfr/augment.hpp"
#include "cfr/format.hpp"
#include "cfr/io.hpp"
#include "cfr/tagger.hpp"
#include "cfr/transformer.hpp"

namespace cfr {

// ---------------------------------------------------------------------------
// Sampling

struct SamplerConfig {
    std::size_t k = 40;
    double temperature = 0.7;
    std::uint64_t seed = 0;
    std::size_t max_ending_length = 60;

    void validate() const {
        require(k >= 1, "sampler: k must be at least 1");
        require(temperature > 0.0 && std::isfinite(temperature), "sampler: temperature must be positive");
        require(max_ending_length >= 1, "sampler: max_ending_length must be positive");
    }

    nlohmann::json to_json() const {
        return {{"k", k}, {"temperature", temperature}, {"seed", seed}, {"max_ending_length", max_ending_length}};
    }

    static SamplerConfig from_json(const nlohmann::json& j) {
        SamplerConfig c;
        c.k = j.value("k", c.k);
        c.temperature = j.value("temperature", c.temperature);
        c.seed = j.value("seed", c.seed);
        c.max_ending_length = j.value("max_ending_length", c.max_ending_length);
        return c;
    }
};

/// Indices of the k largest entries, larger first, lower index on ties.
inline std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    k = std::min(k, idx.size());
    auto better = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    idx.resize(k);
    return idx;
}

/// Sampling distribution from logits: divide by the temperature, keep the
/// top k, renormalize. Entries outside the top k are exactly 0.
inline std::vector<double> top_k_distribution_from_logits(const std::vector<double>& logits, std::size_t k,
                                                          double temperature) {
    require(!logits.empty(), "sampler: empty distribution");
    require(k >= 1 && temperature > 0.0, "sampler: bad k or temperature");
    const auto keep = top_k_indices(logits, k);
    std::vector<double> out(logits.size(), 0.0);
    const double top = logits[keep.front()] / temperature;
    require(std::isfinite(top), "sampler: no finite logit");
    double total = 0.0;
    for (auto i : keep) {
        const double w = std::exp(logits[i] / temperature - top);  // exp(-inf) = 0
        out[i] = w;
        total += w;
    }
    for (auto i : keep) out[i] /= total;
    return out;
}

/// Same, starting from probabilities (logits = log p; zero stays zero).
inline std::vector<double> top_k_distribution(const std::vector<double>& probs, std::size_t k, double temperature) {
    std::vector<double> logits(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        require(probs[i] >= 0.0 && std::isfinite(probs[i]), "sampler: invalid probability");
        logits[i] = probs[i] > 0.0 ? std::log(probs[i]) : -std::numeric_limits<double>::infinity();
    }
    return top_k_distribution_from_logits(logits, k, temperature);
}

/// Draws one id from the top-k renormalized, temperature-scaled distribution.
/// k = 1 is an argmax and consumes no randomness.
inline std::size_t sample_from_logits(const std::vector<double>& logits, std::size_t k, double temperature, Rng& rng) {
    if (k == 1) return top_k_indices(logits, 1).front();
    const auto dist = top_k_distribution_from_logits(logits, k, temperature);
    const auto keep = top_k_indices(logits, k);
    double u = rng.uniform();
    for (auto i : keep) {
        u -= dist[i];
        if (u < 0.0) return i;
    }
    // Rounding left a sliver of mass: fall back to the last kept id with
    // nonzero probability.
    for (auto it = keep.rbegin(); it != keep.rend(); ++it)
        if (dist[*it] > 0.0) return *it;
    return keep.front();
}

inline std::size_t sample_top_k(const std::vector<double>& probs, const SamplerConfig& cfg, Rng& rng) {
    std::vector<double> logits(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        require(probs[i] >= 0.0 && std::isfinite(probs[i]), "sampler: invalid probability");
        logits[i] = probs[i] > 0.0 ? std::log(probs[i]) : -std::numeric_limits<double>::infinity();
    }
    return sample_from_logits(logits, cfg.k, cfg.temperature, rng);
}

// ---------------------------------------------------------------------------
// Model

template <class Scalar>
class GeneratorModel {
public:
    GeneratorModel(nn::TransformerConfig config, std::uint64_t seed, std::string vocab_hash)
        : vocab_hash_(std::move(vocab_hash)) {
        config.causal = true;
        Rng rng(derive_seed(seed, "generator", "init"));
        decoder_ = nn::Transformer<Scalar>(config, store_, rng);
        out_weight_ = store_.add_normal("output.weight", static_cast<Eigen::Index>(config.dim),
                                        static_cast<Eigen::Index>(config.vocab_size), 0.02, rng);
        out_bias_ = store_.add_constant("output.bias", 1, static_cast<Eigen::Index>(config.vocab_size), Scalar(0));
    }

    const nn::TransformerConfig& config() const { return decoder_.config(); }
    const std::string& vocab_hash() const { return vocab_hash_; }
    nn::ParameterStore<Scalar>& parameters() { return store_; }
    const nn::ParameterStore<Scalar>& parameters() const { return store_; }
    nn::ParamId output_weight() const { return out_weight_; }
    nn::ParamId output_bias() const { return out_bias_; }

    /// Next-token logits for positions [from, size): row r predicts token r + 1.
    nn::Var logits(nn::Graph<Scalar>& g, const FormattedInput& input, std::size_t from) const {
        require(input.size() <= config().max_length, "generator: input longer than the model's max_length");
        require(from < input.size(), "generator: no positions to score");
        nn::Var hidden = decoder_.encode(g, std::vector<int>(input.ids.begin(), input.ids.end()), input.segment_ids());
        nn::Var rows = from == 0 ? hidden
                                 : g.rows(hidden, static_cast<Eigen::Index>(from),
                                          static_cast<Eigen::Index>(input.size() - from));
        return g.add_row(g.matmul(rows, g.param(out_weight_)), g.param(out_bias_));
    }

    /// Summed NLL of the ending span (target plus [EOE]) under teacher forcing.
    nn::Var loss(nn::Graph<Scalar>& g, const FormattedInput& full) const {
        if (full.ending_length() == 0 || full.ending_start == 0)
            fail(ErrorKind::validation, "generator: input has no target span");
        if (full.ids.back() != id_of(Special::eoe))
            fail(ErrorKind::validation, "generator: target must end with [EOE]");
        std::vector<int> targets(full.ids.begin() + static_cast<std::ptrdiff_t>(full.ending_start), full.ids.end());
        nn::Var all = logits(g, full, full.ending_start - 1);
        // the last row would predict past [EOE]
        nn::Var scored = g.rows(all, 0, static_cast<Eigen::Index>(targets.size()));
        return g.weighted_nll(scored, targets, std::vector<Scalar>(targets.size(), Scalar(1)));
    }

    nn::Graph<Scalar> inference_graph() const {
        return nn::Graph<Scalar>(const_cast<nn::ParameterStore<Scalar>&>(store_));
    }

private:
    nn::ParameterStore<Scalar> store_;
    nn::Transformer<Scalar> decoder_;
    nn::ParamId out_weight_ = 0;
    nn::ParamId out_bias_ = 0;
    std::string vocab_hash_;
};

template <class Scalar>
double generation_loss(const GeneratorModel<Scalar>& model, const FormattedInput& full) {
    auto g = model.inference_graph();
    return static_cast<double>(g.scalar(model.loss(g, full)));
}

/// Logits for the token following the whole of `prefix`.
template <class Scalar>
std::vector<double> next_token_logits(const GeneratorModel<Scalar>& model, const FormattedInput& prefix) {
    auto g = model.inference_graph();
    const auto& row = g.value(model.logits(g, prefix, prefix.size() - 1));
    std::vector<double> out(static_cast<std::size_t>(row.cols()));
    for (Eigen::Index i = 0; i < row.cols(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(row(0, i));
    return out;
}

template <class Scalar>
std::vector<double> next_token_distribution(const GeneratorModel<Scalar>& model, const FormattedInput& prefix) {
    auto logits = next_token_logits(model, prefix);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (auto& v : logits) total += (v = std::exp(v - mx));
    for (auto& v : logits) v /= total;
    return logits;
}

/// Decodes after [END] until [EOE], max_ending_length tokens, or the model's
/// length limit. Reserved tokens other than [EOE] are never emitted.
template <class Scalar>
TokenSeq generate_from_prompt(const GeneratorModel<Scalar>& model, FormattedInput prompt, const Vocab& vocab,
                              const SamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    require(prompt.ending_length() == 0, "generate: prompt already has an ending");
    TokenSeq out;
    out.role = Role::ending;
    const auto eoe = static_cast<std::size_t>(id_of(Special::eoe));
    for (std::size_t step = 0; step < cfg.max_ending_length && prompt.size() < model.config().max_length; ++step) {
        auto logits = next_token_logits(model, prompt);
        for (std::size_t i = 0; i < Vocab::reserved_count() && i < logits.size(); ++i)
            if (i != eoe) logits[i] = -std::numeric_limits<double>::infinity();
        const std::size_t next = sample_from_logits(logits, cfg.k, cfg.temperature, rng);
        if (next == eoe) break;
        prompt.ids.push_back(static_cast<TokenId>(next));
        out.tokens.push_back(vocab.token(static_cast<TokenId>(next)));
    }
    return out;
}

/// Counterfactual ending for `pair` filled in around `skeleton`; the random
/// stream is derived from (seed, story id).
template <class Scalar>
TokenSeq generate_ending(const GeneratorModel<Scalar>& model, const StoryPair& pair, const Skeleton& skeleton,
                         const Vocab& vocab, const SamplerConfig& cfg, Side side = Side::counterfactual) {
    if (vocab.hash() != model.vocab_hash()) fail(ErrorKind::mismatch, "generator was trained with a different vocabulary");
    Rng rng(derive_seed(cfg.seed, pair.id, "sample"));
    const auto prompt = format_customize_input(pair, side, skeleton, vocab, model.config().max_length);
    return generate_from_prompt(model, prompt, vocab, cfg, rng);
}

/// Two-stage rewrite: predicted skeleton of the original ending, then
/// generation under the counterfactual condition.
template <class TS, class GS>
TokenSeq rewrite(const TaggerModel<TS>& tagger, const GeneratorModel<GS>& generator, const StoryPair& pair,
                 const Vocab& vocab, const SamplerConfig& cfg, Skeleton* skeleton_out = nullptr) {
    if (tagger.vocab_hash() != generator.vocab_hash())
        fail(ErrorKind::mismatch, "tagger and generator were trained with different vocabularies");
    const Skeleton k = predict_skeleton(tagger, pair, vocab, tagger.config().max_length);
    if (skeleton_out) *skeleton_out = k;
    return generate_ending(generator, pair, k, vocab, cfg);
}

// ---------------------------------------------------------------------------
// Training

struct GeneratorTrainConfig {
    double learning_rate = 1.5e-4;
    std::size_t warmup_steps = 2000;
    std::size_t batch_size = 8;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    std::size_t max_sequence_length = kDefaultMaxSequenceLength;
    double clip_norm = 1.0;
    std::size_t dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_dim = 256;

    void validate() const {
        require(learning_rate > 0.0, "generator: learning_rate must be positive");
        require(batch_size > 0, "generator: batch_size must be positive");
        require(max_sequence_length > 6, "generator: max_sequence_length too small");
    }

    nn::TransformerConfig model_config(std::size_t vocab_size) const {
        return {vocab_size, dim, layers, heads, ffn_dim, max_sequence_length, 4, true};
    }

    nlohmann::json to_json() const {
        return {{"learning_rate", learning_rate}, {"warmup_steps", warmup_steps},
                {"batch_size", batch_size},       {"epochs", epochs},
                {"seed", seed},                   {"max_sequence_length", max_sequence_length},
                {"clip_norm", clip_norm},         {"dim", dim},
                {"layers", layers},               {"heads", heads},
                {"ffn_dim", ffn_dim}};
    }

    static GeneratorTrainConfig from_json(const nlohmann::json& j) {
        GeneratorTrainConfig c;
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.seed = j.value("seed", c.seed);
        c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.dim = j.value("dim", c.dim);
        c.layers = j.value("layers", c.layers);
        c.heads = j.value("heads", c.heads);
        c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
        return c;
    }
};

struct GeneratorInstance {
    std::string id;
    Side side = Side::original;
    std::string skeleton_kind;  // "lcs" or an augmentation variant
    FormattedInput input;
};

/// Skeletons attached to one pair: the LCS skeleton first, then any
/// augmented variants.
struct PairSkeletons {
    Skeleton lcs;
    std::vector<std::pair<AugmentVariant, Skeleton>> augmented;
};

/// The LCS skeleton of the original ending and, if requested, its three
/// augmented variants.
inline PairSkeletons skeletons_for(const StoryPair& pair, bool augmentation, double replace_ratio,
                                   std::uint64_t seed, const Vocab& vocab) {
    PairSkeletons out;
    out.lcs = lcs_skeleton(side_ending(pair, Side::original), side_ending(pair, Side::counterfactual));
    if (augmentation) out.augmented = augment_all(out.lcs, pair.id, seed, replace_ratio, vocab);
    return out;
}

/// For every skeleton of every pair, the ([CON] c -> e) and ([CON] c' -> e')
/// instances.
inline std::vector<GeneratorInstance> generator_training_instances(const std::vector<StoryPair>& pairs,
                                                                   const std::vector<PairSkeletons>& skeletons,
                                                                   const Vocab& vocab, std::size_t max_length) {
    if (pairs.size() != skeletons.size())
        fail(ErrorKind::mismatch, "generator: " + std::to_string(skeletons.size()) + " skeleton sets for " +
                                      std::to_string(pairs.size()) + " pairs");
    std::vector<GeneratorInstance> out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::vector<std::pair<std::string, const Skeleton*>> kinds = {{"lcs", &skeletons[i].lcs}};
        for (const auto& [variant, k] : skeletons[i].augmented) kinds.emplace_back(std::string(to_string(variant)), &k);
        for (const auto& [kind, k] : kinds)
            for (Side side : {Side::original, Side::counterfactual}) {
                GeneratorInstance inst;
                inst.id = pairs[i].id;
                inst.side = side;
                inst.skeleton_kind = kind;
                inst.input = append_target(format_customize_input(pairs[i], side, *k, vocab, max_length),
                                           side_ending(pairs[i], side), vocab, max_length);
                out.push_back(std::move(inst));
            }
    }
    return out;
}

struct GeneratorEpoch {
    std::size_t epoch = 0;
    std::size_t instances = 0;
    std::size_t steps = 0;
    double mean_loss = 0.0;
    double mean_token_loss = 0.0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch},
                {"instances", instances},
                {"steps", steps},
                {"mean_loss", mean_loss},
                {"mean_token_loss", mean_token_loss}};
    }
};

template <class Scalar>
struct GeneratorTrainResult {
    GeneratorModel<Scalar> model;
    std::vector<GeneratorEpoch> history;
};

template <class Scalar = float>
GeneratorTrainResult<Scalar> train_generator(const std::vector<GeneratorInstance>& train, std::size_t vocab_size,
                                             const std::string& vocab_hash, const GeneratorTrainConfig& cfg,
                                             const std::function<void(const GeneratorEpoch&)>& on_epoch = {}) {
    cfg.validate();
    if (train.empty()) fail(ErrorKind::validation, "train_generator: empty training set");
    GeneratorModel<Scalar> model(cfg.model_config(vocab_size), cfg.seed, vocab_hash);
    auto& store = model.parameters();
    nn::Adam<Scalar> opt(store, {cfg.learning_rate, cfg.warmup_steps, 0.9, 0.999, 1e-8, cfg.clip_norm});
    GeneratorTrainResult<Scalar> result{model, {}};
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, "generator-epoch", std::to_string(epoch)));
        rng.shuffle(order);
        double total = 0.0;
        std::size_t tokens = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            for (std::size_t b = start; b < end; ++b) {
                const auto& inst = train[order[b]];
                nn::Graph<Scalar> g(store);
                const nn::Var loss = model.loss(g, inst.input);
                total += static_cast<double>(g.scalar(loss));
                tokens += inst.input.ending_length();
                g.backward(loss);
            }
            opt.step(store, static_cast<double>(end - start));
        }
        if (!store.all_finite()) fail(ErrorKind::validation, "train_generator: parameters diverged");
        GeneratorEpoch record{epoch, train.size(), opt.steps(), total / static_cast<double>(train.size()),
                              total / static_cast<double>(tokens)};
        if (on_epoch) on_epoch(record);
        result.history.push_back(record);
    }
    result.model = model;
    return result;
}

/// Convenience overload building the instances from pairs and skeleton sets.
template <class Scalar = float>
GeneratorTrainResult<Scalar> train_generator(const std::vector<StoryPair>& pairs,
                                             const std::vector<PairSkeletons>& skeletons, const Vocab& vocab,
                                             const GeneratorTrainConfig& cfg,
                                             const std::function<void(const GeneratorEpoch&)>& on_epoch = {}) {
    return train_generator<Scalar>(generator_training_instances(pairs, skeletons, vocab, cfg.max_sequence_length),
                                   vocab.size(), vocab.hash(), cfg, on_epoch);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kGeneratorFormatVersion = 1;

template <class Scalar>
void save_generator(const std::filesystem::path& path, const GeneratorModel<Scalar>& model,
                    const nlohmann::json& provenance = {}) {
    write_json_file(path,
                    {{"format", "cfr.generator"},
                     {"version", kGeneratorFormatVersion},
                     {"config", model.config().to_json()},
                     {"vocab_hash", model.vocab_hash()},
                     {"provenance", provenance},
                     {"parameters", model.parameters().to_json()}},
                    -1);
}

template <class Scalar = float>
GeneratorModel<Scalar> load_generator(const std::filesystem::path& path, nlohmann::json* provenance = nullptr) {
    const auto obj = read_json_file(path, "generator checkpoint");
    check_format(obj, "cfr.generator", kGeneratorFormatVersion, path);
    GeneratorModel<Scalar> model(nn::TransformerConfig::from_json(obj.at("config")), 0,
                                 obj.at("vocab_hash").get<std::string>());
    model.parameters().load_json(obj.at("parameters"));
    if (!model.parameters().all_finite()) fail(ErrorKind::parse, path.string() + ": non-finite parameters");
    if (provenance) *provenance = obj.value("provenance", nlohmann::json::object());
    return model;
}

}  // namespace cfr
