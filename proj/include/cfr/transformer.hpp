#pragma once

// Small pre-norm transformer stack shared by the tagger (bidirectional) and
// the generator (causal).

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfr/nn.hpp"

namespace cfr::nn {

struct TransformerConfig {
    std::size_t vocab_size = 0;
    std::size_t dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_dim = 256;
    std::size_t max_length = 300;
    std::size_t segments = 4;
    bool causal = false;

    void validate() const {
        require(vocab_size > 0, "transformer: vocab_size must be positive");
        require(dim > 0 && heads > 0 && dim % heads == 0, "transformer: dim must be divisible by heads");
        require(layers > 0, "transformer: needs at least one layer");
        require(ffn_dim > 0 && max_length > 0 && segments > 0, "transformer: bad sizes");
    }

    nlohmann::json to_json() const {
        return {{"vocab_size", vocab_size}, {"dim", dim},         {"layers", layers},
                {"heads", heads},           {"ffn_dim", ffn_dim}, {"max_length", max_length},
                {"segments", segments},     {"causal", causal}};
    }

    static TransformerConfig from_json(const nlohmann::json& j) {
        TransformerConfig c;
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.dim = j.at("dim").get<std::size_t>();
        c.layers = j.at("layers").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
        c.max_length = j.at("max_length").get<std::size_t>();
        c.segments = j.at("segments").get<std::size_t>();
        c.causal = j.at("causal").get<bool>();
        return c;
    }
};

/// Token + position + segment embeddings followed by `layers` blocks of
/// self-attention and a GELU feed-forward, each with a residual, and a
/// final layer norm. Parameters live in the caller's store.
template <class Scalar>
class Transformer {
public:
    Transformer() = default;

    Transformer(const TransformerConfig& config, ParameterStore<Scalar>& store, Rng& rng)
        : config_(config) {
        config.validate();
        const auto E = static_cast<Eigen::Index>(config.dim);
        const auto F = static_cast<Eigen::Index>(config.ffn_dim);
        constexpr double init = 0.02;
        // Residual projections are scaled down with depth, as in GPT-2.
        const double residual_init = init / std::sqrt(2.0 * static_cast<double>(config.layers));
        token_embedding_ = store.add_normal("token_embedding", static_cast<Eigen::Index>(config.vocab_size), E, init, rng);
        position_embedding_ = store.add_normal("position_embedding", static_cast<Eigen::Index>(config.max_length), E, init, rng);
        segment_embedding_ = store.add_normal("segment_embedding", static_cast<Eigen::Index>(config.segments), E, init, rng);
        for (std::size_t l = 0; l < config.layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            Block b;
            b.ln1_gain = store.add_constant(p + "ln1.gain", 1, E, Scalar(1));
            b.ln1_bias = store.add_constant(p + "ln1.bias", 1, E, Scalar(0));
            b.qkv = store.add_normal(p + "attn.qkv", E, 3 * E, init, rng);
            b.qkv_bias = store.add_constant(p + "attn.qkv_bias", 1, 3 * E, Scalar(0));
            b.out = store.add_normal(p + "attn.out", E, E, residual_init, rng);
            b.out_bias = store.add_constant(p + "attn.out_bias", 1, E, Scalar(0));
            b.ln2_gain = store.add_constant(p + "ln2.gain", 1, E, Scalar(1));
            b.ln2_bias = store.add_constant(p + "ln2.bias", 1, E, Scalar(0));
            b.ffn_in = store.add_normal(p + "ffn.in", E, F, init, rng);
            b.ffn_in_bias = store.add_constant(p + "ffn.in_bias", 1, F, Scalar(0));
            b.ffn_out = store.add_normal(p + "ffn.out", F, E, residual_init, rng);
            b.ffn_out_bias = store.add_constant(p + "ffn.out_bias", 1, E, Scalar(0));
            blocks_.push_back(b);
        }
        final_gain_ = store.add_constant("final_ln.gain", 1, E, Scalar(1));
        final_bias_ = store.add_constant("final_ln.bias", 1, E, Scalar(0));
    }

    const TransformerConfig& config() const { return config_; }

    /// Contextual representations, one row per input position.
    Var encode(Graph<Scalar>& g, const std::vector<int>& ids, const std::vector<int>& segments) const {
        require(!ids.empty(), "transformer: empty input");
        require(ids.size() == segments.size(), "transformer: ids/segments length mismatch");
        require(ids.size() <= config_.max_length, "transformer: input longer than max_length");
        std::vector<int> positions(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
        Var x = g.add(g.add(g.embed(token_embedding_, ids), g.embed(position_embedding_, positions)),
                      g.embed(segment_embedding_, segments));
        const auto E = static_cast<Eigen::Index>(config_.dim);
        const auto H = static_cast<Eigen::Index>(config_.heads);
        const Eigen::Index head_dim = E / H;
        const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
        for (const auto& b : blocks_) {
            Var h = g.layer_norm(x, g.param(b.ln1_gain), g.param(b.ln1_bias));
            Var qkv = g.add_row(g.matmul(h, g.param(b.qkv)), g.param(b.qkv_bias));
            std::vector<Var> heads;
            heads.reserve(static_cast<std::size_t>(H));
            for (Eigen::Index head = 0; head < H; ++head) {
                Var q = g.cols(qkv, head * head_dim, head_dim);
                Var k = g.cols(qkv, E + head * head_dim, head_dim);
                Var v = g.cols(qkv, 2 * E + head * head_dim, head_dim);
                Var attn = g.softmax_rows(g.matmul_nt(q, k), scale, config_.causal);
                heads.push_back(g.matmul(attn, v));
            }
            Var merged = H == 1 ? heads[0] : g.concat_cols(heads);
            x = g.add(x, g.add_row(g.matmul(merged, g.param(b.out)), g.param(b.out_bias)));
            Var h2 = g.layer_norm(x, g.param(b.ln2_gain), g.param(b.ln2_bias));
            Var inner = g.gelu(g.add_row(g.matmul(h2, g.param(b.ffn_in)), g.param(b.ffn_in_bias)));
            x = g.add(x, g.add_row(g.matmul(inner, g.param(b.ffn_out)), g.param(b.ffn_out_bias)));
        }
        return g.layer_norm(x, g.param(final_gain_), g.param(final_bias_));
    }

private:
    struct Block {
        ParamId ln1_gain, ln1_bias, qkv, qkv_bias, out, out_bias;
        ParamId ln2_gain, ln2_bias, ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
    };

    TransformerConfig config_;
    ParamId token_embedding_ = 0;
    ParamId position_embedding_ = 0;
    ParamId segment_embedding_ = 0;
    std::vector<Block> blocks_;
    ParamId final_gain_ = 0;
    ParamId final_bias_ = 0;
};

}  // namespace cfr::nn
