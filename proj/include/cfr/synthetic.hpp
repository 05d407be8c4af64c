#pragma once

// Generated corpora for smoke tests and the scaled-down experiments.
//
// separable_corpus: endings are background words with a few words from a
//   disjoint "causal" vocabulary inserted; the counterfactual ending swaps
//   those for different causal words, so LCS labels coincide with vocabulary
//   membership.
// templated_corpus: the condition names an item and one slot of the ending
//   is a fill word determined by that item; everything else in the ending is
//   set by the premise and a template choice.

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

#include "cfr/corpus.hpp"
#include "cfr/tagger.hpp"

namespace cfr::synthetic {

// ---------------------------------------------------------------------------
// Separable corpus

/// Causal words are "c<group><n>", background words "b<group><n>"; group 's'
/// is strong, 'w' is weak (only noise injection treats them differently).
struct SeparableSpec {
    std::size_t strong_causal = 12;
    std::size_t weak_causal = 8;
    std::size_t strong_background = 30;
    std::size_t weak_background = 20;
    std::size_t sentence_min = 4;   // background words per sentence
    std::size_t sentence_max = 6;
};

inline bool is_causal_word(const std::string& w) { return w.size() > 2 && w[0] == 'c' && (w[1] == 's' || w[1] == 'w'); }
inline bool is_weak_word(const std::string& w) { return w.size() > 2 && (w[0] == 'c' || w[0] == 'b') && w[1] == 'w'; }

namespace detail {

inline std::vector<std::string> word_list(const std::string& prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

template <class T>
const T& pick(const std::vector<T>& items, Rng& rng) {
    return items[rng.uniform_index(items.size())];
}

}  // namespace detail

inline std::vector<StoryPair> separable_corpus(std::size_t n, std::uint64_t seed, const std::string& id_prefix,
                                               const SeparableSpec& spec = {}) {
    std::vector<std::string> causal = detail::word_list("cs", spec.strong_causal);
    for (auto& w : detail::word_list("cw", spec.weak_causal)) causal.push_back(w);
    std::vector<std::string> background = detail::word_list("bs", spec.strong_background);
    for (auto& w : detail::word_list("bw", spec.weak_background)) background.push_back(w);
    const auto subjects = detail::word_list("subject", 6);
    const auto events = detail::word_list("event", 6);

    std::vector<StoryPair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        StoryPair pair;
        pair.id = id_prefix + "-" + std::to_string(i);
        Rng rng(derive_seed(seed, pair.id, "separable"));
        const auto& subject = detail::pick(subjects, rng);
        pair.story.premise = subject + " started the day .";
        const auto& e1 = detail::pick(events, rng);
        auto e2 = detail::pick(events, rng);
        while (e2 == e1) e2 = detail::pick(events, rng);
        pair.story.condition = subject + " saw " + e1 + " .";
        pair.counterfactual_condition = subject + " saw " + e2 + " .";
        std::vector<std::string> original, counterfactual;
        for (int s = 0; s < 3; ++s) {
            const std::size_t len = spec.sentence_min + rng.uniform_index(spec.sentence_max - spec.sentence_min + 1);
            std::vector<std::string> words;
            for (std::size_t k = 0; k < len; ++k) words.push_back(detail::pick(background, rng));
            // one causal word per sentence, sometimes two
            const std::size_t slots = rng.bernoulli(0.3) ? 2 : 1;
            std::vector<std::string> a = words, b = words;
            for (std::size_t k = 0; k < slots; ++k) {
                const std::size_t at = rng.uniform_index(a.size() + 1);
                const auto& ca = detail::pick(causal, rng);
                const std::string* cb = &detail::pick(causal, rng);
                while (*cb == ca) cb = &detail::pick(causal, rng);
                a.insert(a.begin() + static_cast<std::ptrdiff_t>(at), ca);
                b.insert(b.begin() + static_cast<std::ptrdiff_t>(at), *cb);
            }
            original.push_back(join(a) + " .");
            counterfactual.push_back(join(b) + " .");
        }
        // Causal words of the two endings must not coincide anywhere, or the
        // LCS could align them.
        const auto ta = tokenize_ending(original);
        const auto tb = tokenize_ending(counterfactual);
        bool clash = false;
        for (const auto& w : ta.tokens)
            if (is_causal_word(w) && std::find(tb.tokens.begin(), tb.tokens.end(), w) != tb.tokens.end()) clash = true;
        if (clash) {
            ++n;  // regenerate under a fresh id
            continue;
        }
        pair.story.ending = original;
        pair.reference_endings.push_back(counterfactual);
        out.push_back(std::move(pair));
    }
    return out;
}

/// Gold labels by vocabulary membership (equal to the LCS labels on this corpus).
inline LabelSeq membership_labels(const TokenSeq& ending) {
    LabelSeq out;
    for (const auto& w : ending.tokens) out.push_back(is_causal_word(w) ? Label::causal : Label::background);
    return out;
}

/// Flips weak-group labels with probability `flip` (causal -> background for
/// weak causal words, background -> causal for weak background words), so
/// the best decision for a weak word depends on lambda.
inline void inject_label_noise(std::vector<TaggerInstance>& instances, const Vocab& vocab, double flip,
                               std::uint64_t seed) {
    for (auto& inst : instances) {
        Rng rng(derive_seed(seed, inst.id, std::string("noise-") + std::string(to_string(inst.side))));
        for (std::size_t i = 0; i < inst.gold.size(); ++i) {
            const auto& w = vocab.token(inst.input.ids[inst.input.ending_start + i]);
            if (is_weak_word(w) && rng.bernoulli(flip))
                inst.gold[i] = inst.gold[i] == Label::causal ? Label::background : Label::causal;
        }
    }
}

/// Share of ending labels that differ from the clean ones.
inline double label_noise_rate(const std::vector<TaggerInstance>& noisy, const std::vector<TaggerInstance>& clean) {
    std::size_t flipped = 0, total = 0;
    for (std::size_t i = 0; i < noisy.size(); ++i)
        for (std::size_t j = 0; j < noisy[i].gold.size(); ++j) {
            flipped += noisy[i].gold[j] != clean[i].gold[j];
            ++total;
        }
    return total ? static_cast<double>(flipped) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Templated corpus

struct ItemFill {
    const char* item;
    const char* fill;
};

inline const std::vector<ItemFill>& item_fills() {
    static const std::vector<ItemFill> table = {
        {"apples", "pie"},   {"wood", "table"},    {"paint", "mural"},  {"flour", "bread"},
        {"seeds", "garden"}, {"yarn", "scarf"},    {"clay", "vase"},    {"fabric", "dress"},
        {"paper", "kite"},   {"milk", "cheese"},   {"grapes", "juice"}, {"beads", "necklace"},
    };
    return table;
}

inline const std::vector<std::string>& template_names() {
    static const std::vector<std::string> names = {"amy", "ben", "cara", "dan",  "eva", "finn",
                                                   "gina", "hal", "iris", "jack", "kim", "leo"};
    return names;
}

inline const std::vector<std::string>& template_places() {
    static const std::vector<std::string> places = {"market", "mall",  "farm", "shop",  "fair",
                                                    "town",   "store", "city", "beach", "village"};
    return places;
}

/// Three-sentence endings; {n} name, {p} place, {f} fill word.
inline const std::vector<std::array<const char*, 3>>& ending_templates() {
    static const std::vector<std::array<const char*, 3>> t = {
        {"{n} came home from the {p} .", "{n} made a {f} all afternoon .", "it was the best day ever ."},
        {"{n} made a lovely {f} .", "the neighbors from the {p} came to see it .", "{n} felt very proud ."},
        {"at home {n} started working .", "soon the {f} was finished .", "{n} took it back to the {p} ."},
        {"{n} called a friend .", "together they made a {f} .", "they showed it off at the {p} ."},
        {"{n} worked late into the night .", "by morning there was a new {f} .", "everyone at the {p} loved it ."},
        {"{n} hurried back from the {p} .", "the new {f} took all day .", "{n} smiled at the result ."},
    };
    return t;
}

namespace detail {

inline std::string fill_template(std::string text, const std::string& name, const std::string& place,
                                 const std::string& fill) {
    auto replace = [&](const std::string& key, const std::string& value) {
        for (std::size_t at = text.find(key); at != std::string::npos; at = text.find(key, at + value.size()))
            text.replace(at, key.size(), value);
    };
    replace("{n}", name);
    replace("{p}", place);
    replace("{f}", fill);
    return text;
}

}  // namespace detail

inline std::vector<StoryPair> templated_corpus(std::size_t n, std::uint64_t seed, const std::string& id_prefix) {
    const auto& table = item_fills();
    std::vector<StoryPair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        StoryPair pair;
        pair.id = id_prefix + "-" + std::to_string(i);
        Rng rng(derive_seed(seed, pair.id, "templated"));
        const auto& name = detail::pick(template_names(), rng);
        const auto& place = detail::pick(template_places(), rng);
        const std::size_t a = rng.uniform_index(table.size());
        std::size_t b = rng.uniform_index(table.size() - 1);
        if (b >= a) ++b;
        const auto& tmpl = detail::pick(ending_templates(), rng);
        pair.story.premise = name + " went to the " + place + " .";
        pair.story.condition = name + " bought some " + table[a].item + " .";
        pair.counterfactual_condition = name + " bought some " + table[b].item + " .";
        std::vector<std::string> e, e_prime;
        for (const char* sentence : tmpl) {
            e.push_back(detail::fill_template(sentence, name, place, table[a].fill));
            e_prime.push_back(detail::fill_template(sentence, name, place, table[b].fill));
        }
        pair.story.ending = e;
        pair.reference_endings.push_back(e_prime);
        out.push_back(std::move(pair));
    }
    return out;
}

/// Fill word implied by a condition sentence, or "" if it names no item.
inline std::string expected_fill(const std::string& condition) {
    const auto tokens = tokenize(condition).tokens;
    for (const auto& entry : item_fills())
        if (std::find(tokens.begin(), tokens.end(), entry.item) != tokens.end()) return entry.fill;
    return "";
}

/// The generation uses the fill word of its condition and no other fill word.
inline bool condition_consistent(const TokenSeq& generated, const std::string& condition) {
    const std::string want = expected_fill(condition);
    if (want.empty()) return false;
    bool found = false;
    for (const auto& w : generated.tokens) {
        if (w == want) found = true;
        else
            for (const auto& entry : item_fills())
                if (w == entry.fill) return false;
    }
    return found;
}

}  // namespace cfr::synthetic
