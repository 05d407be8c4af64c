#pragma once

// Token-level scores: ROUGE-L, causal/background labeling P/R/F1 and
// skeleton coverage.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfr/skeleton.hpp"

namespace cfr {

struct RougeL {
    double precision = 0.0;
    double recall = 0.0;
    double f_measure = 0.0;
};

inline double harmonic_mean(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

/// LCS-based overlap with beta = 1.
inline RougeL rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
    if (candidate.empty() || reference.empty()) return {};
    const double l = static_cast<double>(lcs_length(candidate, reference));
    RougeL r;
    r.precision = l / static_cast<double>(candidate.size());
    r.recall = l / static_cast<double>(reference.size());
    r.f_measure = harmonic_mean(r.precision, r.recall);
    return r;
}

inline RougeL rouge_l(const TokenSeq& candidate, const TokenSeq& reference) {
    return rouge_l(candidate.tokens, reference.tokens);
}

struct Confusion {
    std::size_t causal_tp = 0;  // gold causal, predicted causal
    std::size_t causal_fp = 0;  // gold background, predicted causal
    std::size_t causal_fn = 0;  // gold causal, predicted background
    std::size_t background_tp = 0;

    void add(const LabelSeq& predicted, const LabelSeq& gold) {
        if (predicted.size() != gold.size())
            fail(ErrorKind::mismatch, "label_metrics: predicted and gold lengths differ (" +
                                          std::to_string(predicted.size()) + " vs " + std::to_string(gold.size()) + ")");
        for (std::size_t i = 0; i < gold.size(); ++i) {
            const bool p = predicted[i] == Label::causal;
            const bool g = gold[i] == Label::causal;
            if (p && g) ++causal_tp;
            else if (p) ++causal_fp;
            else if (g) ++causal_fn;
            else ++background_tp;
        }
    }
};

struct LabelMetrics {
    double cp = 0, cr = 0, cf1 = 0;
    double bp = 0, br = 0, bf1 = 0;
    Confusion counts;

    nlohmann::json to_json() const {
        return {{"CP", cp}, {"CR", cr}, {"CF1", cf1}, {"BP", bp}, {"BR", br}, {"BF1", bf1},
                {"counts",
                 {{"causal_tp", counts.causal_tp},
                  {"causal_fp", counts.causal_fp},
                  {"causal_fn", counts.causal_fn},
                  {"background_tp", counts.background_tp}}}};
    }

    static LabelMetrics from_json(const nlohmann::json& j) {
        LabelMetrics m;
        m.cp = j.at("CP").get<double>();
        m.cr = j.at("CR").get<double>();
        m.cf1 = j.at("CF1").get<double>();
        m.bp = j.at("BP").get<double>();
        m.br = j.at("BR").get<double>();
        m.bf1 = j.at("BF1").get<double>();
        if (j.contains("counts")) {
            const auto& c = j["counts"];
            m.counts.causal_tp = c.value("causal_tp", std::size_t{0});
            m.counts.causal_fp = c.value("causal_fp", std::size_t{0});
            m.counts.causal_fn = c.value("causal_fn", std::size_t{0});
            m.counts.background_tp = c.value("background_tp", std::size_t{0});
        }
        return m;
    }
};

inline double safe_ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline LabelMetrics label_metrics(const Confusion& c) {
    LabelMetrics m;
    m.counts = c;
    m.cp = safe_ratio(c.causal_tp, c.causal_tp + c.causal_fp);
    m.cr = safe_ratio(c.causal_tp, c.causal_tp + c.causal_fn);
    m.cf1 = harmonic_mean(m.cp, m.cr);
    // For the background class the roles of fp and fn swap.
    m.bp = safe_ratio(c.background_tp, c.background_tp + c.causal_fn);
    m.br = safe_ratio(c.background_tp, c.background_tp + c.causal_fp);
    m.bf1 = harmonic_mean(m.bp, m.br);
    return m;
}

/// Micro-averaged over every token of every sequence.
inline LabelMetrics label_metrics(const std::vector<LabelSeq>& predicted, const std::vector<LabelSeq>& gold) {
    if (predicted.size() != gold.size())
        fail(ErrorKind::mismatch, "label_metrics: " + std::to_string(predicted.size()) + " predictions for " +
                                      std::to_string(gold.size()) + " gold sequences");
    Confusion c;
    for (std::size_t i = 0; i < gold.size(); ++i) c.add(predicted[i], gold[i]);
    return label_metrics(c);
}

/// Fraction of the skeleton's background tokens found in order in the
/// generation; 1 when there is no background.
inline double skeleton_coverage(const TokenSeq& generated, const Skeleton& skeleton) {
    const auto background = skeleton.background();
    if (background.empty()) return 1.0;
    return static_cast<double>(lcs_length(background, generated.tokens)) / static_cast<double>(background.size());
}

}  // namespace cfr
