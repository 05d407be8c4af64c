#pragma once

// Sketch stage: a bidirectional transformer over the sketch layout with a
// 2-way head on every ending position (0 = causal, 1 = background).

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfr/format.hpp"
#include "cfr/io.hpp"
#include "cfr/metrics.hpp"
#include "cfr/transformer.hpp"

namespace cfr {

struct TaggerTrainConfig {
    double lambda = 0.8;
    double learning_rate = 5e-5;
    std::size_t warmup_steps = 2000;
    std::size_t batch_size = 8;
    std::size_t epochs = 5;
    std::uint64_t seed = 0;
    std::size_t max_sequence_length = kDefaultMaxSequenceLength;
    double clip_norm = 1.0;
    std::size_t dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_dim = 256;

    void validate() const {
        require(lambda > 0.0 && lambda < 1.0, "tagger: lambda must be in (0, 1)");
        require(learning_rate > 0.0, "tagger: learning_rate must be positive");
        require(batch_size > 0, "tagger: batch_size must be positive");
        require(max_sequence_length > 4, "tagger: max_sequence_length too small");
    }

    nn::TransformerConfig model_config(std::size_t vocab_size) const {
        return {vocab_size, dim, layers, heads, ffn_dim, max_sequence_length, 4, false};
    }

    nlohmann::json to_json() const {
        return {{"lambda", lambda},       {"learning_rate", learning_rate},
                {"warmup_steps", warmup_steps}, {"batch_size", batch_size},
                {"epochs", epochs},       {"seed", seed},
                {"max_sequence_length", max_sequence_length}, {"clip_norm", clip_norm},
                {"dim", dim},             {"layers", layers},
                {"heads", heads},         {"ffn_dim", ffn_dim}};
    }

    static TaggerTrainConfig from_json(const nlohmann::json& j) {
        TaggerTrainConfig c;
        c.lambda = j.value("lambda", c.lambda);
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

template <class Scalar>
class TaggerModel {
public:
    using Mat = nn::Matrix<Scalar>;

    TaggerModel(const nn::TransformerConfig& config, std::uint64_t seed, std::string vocab_hash)
        : vocab_hash_(std::move(vocab_hash)) {
        require(!config.causal, "tagger: encoder must be bidirectional");
        Rng rng(derive_seed(seed, "tagger", "init"));
        encoder_ = nn::Transformer<Scalar>(config, store_, rng);
        head_weight_ = store_.add_normal("head.weight", static_cast<Eigen::Index>(config.dim), 2, 0.02, rng);
        head_bias_ = store_.add_constant("head.bias", 1, 2, Scalar(0));
    }

    const nn::TransformerConfig& config() const { return encoder_.config(); }
    const std::string& vocab_hash() const { return vocab_hash_; }
    nn::ParameterStore<Scalar>& parameters() { return store_; }
    const nn::ParameterStore<Scalar>& parameters() const { return store_; }
    nn::ParamId head_weight() const { return head_weight_; }
    nn::ParamId head_bias() const { return head_bias_; }

    /// Head logits for the ending span only (N_r - N_e rows, 2 columns).
    nn::Var logits(nn::Graph<Scalar>& g, const FormattedInput& input) const {
        if (input.ending_length() == 0) fail(ErrorKind::validation, "tagger: empty ending span");
        require(input.size() <= config().max_length, "tagger: input longer than the model's max_length");
        const auto& ids = input.ids;
        nn::Var hidden = encoder_.encode(g, std::vector<int>(ids.begin(), ids.end()), input.segment_ids());
        nn::Var ending = g.rows(hidden, static_cast<Eigen::Index>(input.ending_start),
                                static_cast<Eigen::Index>(input.ending_length()));
        return g.add_row(g.matmul(ending, g.param(head_weight_)), g.param(head_bias_));
    }

    /// Weighted NLL of the gold labels: lambda on causal tokens, 1 - lambda
    /// on background tokens.
    nn::Var loss(nn::Graph<Scalar>& g, const FormattedInput& input, const LabelSeq& gold, double lambda) const {
        if (gold.size() != input.ending_length())
            fail(ErrorKind::mismatch, "tagger: " + std::to_string(gold.size()) + " labels for an ending of " +
                                          std::to_string(input.ending_length()) + " tokens");
        std::vector<int> targets;
        std::vector<Scalar> weights;
        for (Label l : gold) {
            targets.push_back(static_cast<int>(l));
            weights.push_back(static_cast<Scalar>(l == Label::causal ? lambda : 1.0 - lambda));
        }
        return g.weighted_nll(logits(g, input), targets, weights);
    }

    /// Forward-only graph; the store is read, never written.
    nn::Graph<Scalar> inference_graph() const {
        return nn::Graph<Scalar>(const_cast<nn::ParameterStore<Scalar>&>(store_));
    }

private:
    nn::ParameterStore<Scalar> store_;
    nn::Transformer<Scalar> encoder_;
    nn::ParamId head_weight_ = 0;
    nn::ParamId head_bias_ = 0;
    std::string vocab_hash_;
};

/// Row-wise softmax of head logits.
inline nn::Matrix<double> softmax_rows(const nn::Matrix<double>& logits) {
    nn::Matrix<double> out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        out.row(r) = (logits.row(r).array() - mx).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

/// Per-token (p causal, p background) over the ending span.
template <class Scalar>
nn::Matrix<double> label_distribution(const TaggerModel<Scalar>& model, const FormattedInput& input) {
    auto g = model.inference_graph();
    return softmax_rows(g.value(model.logits(g, input)).template cast<double>());
}

/// -sum_i [lambda 1{gold=0} log p0 + (1 - lambda) 1{gold=1} log p1];
/// probabilities below 1e-12 are clamped and reported.
inline double weighted_ce_loss(const nn::Matrix<double>& probs, const LabelSeq& gold, double lambda) {
    if (static_cast<std::size_t>(probs.rows()) != gold.size() || probs.cols() != 2)
        fail(ErrorKind::mismatch, "weighted_ce_loss: probabilities and labels differ in length");
    constexpr double kFloor = 1e-12;
    double loss = 0.0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const int c = static_cast<int>(gold[i]);
        double p = probs(static_cast<Eigen::Index>(i), c);
        if (p < kFloor) {
            log_warn("weighted_ce_loss: gold label probability " + std::to_string(p) + " clamped at position " +
                     std::to_string(i));
            p = kFloor;
        }
        loss -= (gold[i] == Label::causal ? lambda : 1.0 - lambda) * std::log(p);
    }
    return loss;
}

/// Argmax per row; exact ties go to causal.
inline LabelSeq predict_labels(const nn::Matrix<double>& probs) {
    LabelSeq out;
    out.reserve(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index r = 0; r < probs.rows(); ++r)
        out.push_back(probs(r, 0) >= probs(r, 1) ? Label::causal : Label::background);
    return out;
}

template <class Scalar>
LabelSeq predict_labels(const TaggerModel<Scalar>& model, const FormattedInput& input) {
    return predict_labels(label_distribution(model, input));
}

/// Predicted labels over the whole original ending. Tokens lost to
/// truncation are kept as background.
template <class Scalar>
LabelSeq predict_ending_labels(const TaggerModel<Scalar>& model, const StoryPair& pair, const Vocab& vocab,
                               std::size_t max_length = kDefaultMaxSequenceLength) {
    if (vocab.hash() != model.vocab_hash())
        fail(ErrorKind::mismatch, "tagger was trained with a different vocabulary");
    const auto input = format_sketch_input(pair, Side::original, vocab, max_length);
    LabelSeq labels = predict_labels(model, input);
    labels.resize(side_ending(pair, Side::original).size(), Label::background);
    return labels;
}

template <class Scalar>
Skeleton predict_skeleton(const TaggerModel<Scalar>& model, const StoryPair& pair, const Vocab& vocab,
                          std::size_t max_length = kDefaultMaxSequenceLength) {
    return build_skeleton(side_ending(pair, Side::original), predict_ending_labels(model, pair, vocab, max_length),
                          SkeletonSource::predicted);
}

// ---------------------------------------------------------------------------
// Training

struct TaggerInstance {
    std::string id;
    Side side = Side::original;
    FormattedInput input;
    LabelSeq gold;
};

/// Gold labels come from the LCS against the first reference ending.
inline TaggerInstance make_tagger_instance(const StoryPair& pair, Side side, const Vocab& vocab,
                                           std::size_t max_length) {
    TaggerInstance inst;
    inst.id = pair.id;
    inst.side = side;
    inst.input = format_sketch_input(pair, side, vocab, max_length);
    const auto [original, counterfactual] =
        derive_labels(side_ending(pair, Side::original), side_ending(pair, Side::counterfactual));
    inst.gold = side == Side::original ? original : counterfactual;
    inst.gold.resize(inst.input.ending_length());
    return inst;
}

/// Both sides of every pair: 2N instances.
inline std::vector<TaggerInstance> tagger_training_instances(const std::vector<StoryPair>& pairs,
                                                             const Vocab& vocab, std::size_t max_length) {
    std::vector<TaggerInstance> out;
    out.reserve(2 * pairs.size());
    for (const auto& pair : pairs)
        for (Side side : {Side::original, Side::counterfactual})
            out.push_back(make_tagger_instance(pair, side, vocab, max_length));
    return out;
}

/// Original side only, the side labeled at inference time.
inline std::vector<TaggerInstance> tagger_eval_instances(const std::vector<StoryPair>& pairs, const Vocab& vocab,
                                                         std::size_t max_length) {
    std::vector<TaggerInstance> out;
    out.reserve(pairs.size());
    for (const auto& pair : pairs) out.push_back(make_tagger_instance(pair, Side::original, vocab, max_length));
    return out;
}

template <class Scalar>
LabelMetrics evaluate_tagger(const TaggerModel<Scalar>& model, const std::vector<TaggerInstance>& instances) {
    Confusion c;
    for (const auto& inst : instances) c.add(predict_labels(model, inst.input), inst.gold);
    return label_metrics(c);
}

struct TaggerEpoch {
    std::size_t epoch = 0;
    std::size_t instances = 0;
    std::size_t steps = 0;
    double mean_loss = 0.0;
    std::optional<LabelMetrics> dev;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"epoch", epoch}, {"instances", instances}, {"steps", steps}, {"mean_loss", mean_loss}};
        j["dev"] = dev ? dev->to_json() : nlohmann::json(nullptr);
        return j;
    }
};

template <class Scalar>
struct TaggerTrainResult {
    TaggerModel<Scalar> model;
    std::vector<TaggerEpoch> history;
    std::size_t best_epoch = 0;
};

/// Mini-batch Adam over per-instance summed losses. Instance order is
/// reshuffled every epoch from the seed. With a dev set the returned model
/// is the epoch with the highest dev causal F1 (earliest on ties); without
/// one it is the last epoch.
template <class Scalar = float>
TaggerTrainResult<Scalar> train_tagger(const std::vector<TaggerInstance>& train, const std::vector<TaggerInstance>& dev,
                                       std::size_t vocab_size, const std::string& vocab_hash,
                                       const TaggerTrainConfig& cfg,
                                       const std::function<void(const TaggerEpoch&)>& on_epoch = {}) {
    cfg.validate();
    if (train.empty()) fail(ErrorKind::validation, "train_tagger: empty training set");
    TaggerModel<Scalar> model(cfg.model_config(vocab_size), cfg.seed, vocab_hash);
    auto& store = model.parameters();
    nn::Adam<Scalar> opt(store, {cfg.learning_rate, cfg.warmup_steps, 0.9, 0.999, 1e-8, cfg.clip_norm});
    TaggerTrainResult<Scalar> result{model, {}, 0};
    double best_f1 = -1.0;
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, "tagger-epoch", std::to_string(epoch)));
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            for (std::size_t b = start; b < end; ++b) {
                const auto& inst = train[order[b]];
                nn::Graph<Scalar> g(store);
                const nn::Var loss = model.loss(g, inst.input, inst.gold, cfg.lambda);
                total += static_cast<double>(g.scalar(loss));
                g.backward(loss);
            }
            opt.step(store, static_cast<double>(end - start));
        }
        if (!store.all_finite()) fail(ErrorKind::validation, "train_tagger: parameters diverged");
        TaggerEpoch record;
        record.epoch = epoch;
        record.instances = train.size();
        record.steps = opt.steps();
        record.mean_loss = total / static_cast<double>(train.size());
        if (!dev.empty()) record.dev = evaluate_tagger(model, dev);
        const double f1 = record.dev ? record.dev->cf1 : static_cast<double>(epoch);
        if (f1 > best_f1) {
            best_f1 = f1;
            result.model = model;
            result.best_epoch = epoch;
        }
        if (on_epoch) on_epoch(record);
        result.history.push_back(std::move(record));
    }
    if (cfg.epochs == 0) result.model = model;
    return result;
}

/// Convenience overload: both sides of the training pairs, original side of
/// the dev pairs.
template <class Scalar = float>
TaggerTrainResult<Scalar> train_tagger(const std::vector<StoryPair>& train_pairs, const std::vector<StoryPair>& dev_pairs,
                                       const Vocab& vocab, const TaggerTrainConfig& cfg,
                                       const std::function<void(const TaggerEpoch&)>& on_epoch = {}) {
    if (train_pairs.empty()) fail(ErrorKind::validation, "train_tagger: empty training set");
    return train_tagger<Scalar>(tagger_training_instances(train_pairs, vocab, cfg.max_sequence_length),
                                tagger_eval_instances(dev_pairs, vocab, cfg.max_sequence_length), vocab.size(),
                                vocab.hash(), cfg, on_epoch);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kTaggerFormatVersion = 1;

template <class Scalar>
nlohmann::json tagger_checkpoint(const TaggerModel<Scalar>& model, const nlohmann::json& provenance = {}) {
    return {{"format", "cfr.tagger"},
            {"version", kTaggerFormatVersion},
            {"config", model.config().to_json()},
            {"vocab_hash", model.vocab_hash()},
            {"provenance", provenance},
            {"parameters", model.parameters().to_json()}};
}

template <class Scalar>
void save_tagger(const std::filesystem::path& path, const TaggerModel<Scalar>& model,
                 const nlohmann::json& provenance = {}) {
    write_json_file(path, tagger_checkpoint(model, provenance), -1);
}

template <class Scalar = float>
TaggerModel<Scalar> load_tagger(const std::filesystem::path& path, nlohmann::json* provenance = nullptr) {
    const auto obj = read_json_file(path, "tagger checkpoint");
    check_format(obj, "cfr.tagger", kTaggerFormatVersion, path);
    TaggerModel<Scalar> model(nn::TransformerConfig::from_json(obj.at("config")), 0,
                              obj.at("vocab_hash").get<std::string>());
    model.parameters().load_json(obj.at("parameters"));
    if (!model.parameters().all_finite()) fail(ErrorKind::parse, path.string() + ": non-finite parameters");
    if (provenance) *provenance = obj.value("provenance", nlohmann::json::object());
    return model;
}

}  // namespace cfr
