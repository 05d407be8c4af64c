#pragma once

// Longest common subsequence alignment, causal/background labels derived
// from it, and the skeleton representation handed from the sketch stage to
// the customize stage.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfr/corpus.hpp"

namespace cfr {

// ---------------------------------------------------------------------------
// LCS

/// Matched index pairs, strictly increasing in both coordinates.
struct Alignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
    bool operator==(const Alignment&) const = default;
};

/// LCS length in O(min) extra space.
template <class T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
    if (a.size() < b.size()) std::swap(a, b);
    std::vector<std::size_t> row(b.size() + 1, 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        std::size_t diag = 0;
        for (std::size_t j = 0; j < b.size(); ++j) {
            const std::size_t up = row[j + 1];
            row[j + 1] = a[i] == b[j] ? diag + 1 : std::max(row[j], up);
            diag = up;
        }
    }
    return row[b.size()];
}

template <class T>
std::size_t lcs_length(const std::vector<T>& a, const std::vector<T>& b) {
    return lcs_length(std::span<const T>(a), std::span<const T>(b));
}

namespace detail {

// Canonical (lexicographically smallest) LCS in O(m log n) space.
//
// Rows of `a` are visited in order and each row is matched at the earliest
// feasible column of `b`, which is exactly the lexicographically smallest
// alignment. Feasibility of matching row i at column j needs the suffix DP
// value S[i+1][j+1]. Instead of storing the whole table, the rows are split
// in half recursively (as in Hirschberg's algorithm): the suffix row at the
// midpoint is recomputed from the row below the current block, the top half
// is solved first, then the bottom half. Only one boundary row per recursion
// level is alive at a time.
template <class T>
class CanonicalLcs {
public:
    CanonicalLcs(std::span<const T> a, std::span<const T> b)
        : a_(a), b_(b), best_(lcs_length(a, b)) {}

    Alignment run() {
        Alignment out;
        if (best_ > 0) {
            std::vector<std::size_t> bottom(b_.size() + 1, 0);  // S[n][*]
            solve(0, a_.size(), bottom, out);
        }
        return out;
    }

private:
    // `below` holds S[a1][*]; decides rows [a0, a1).
    void solve(std::size_t a0, std::size_t a1, const std::vector<std::size_t>& below,
               Alignment& out) {
        if (out.size() == best_) return;
        if (a1 - a0 == 1) {
            decide(a0, below, out);
            return;
        }
        const std::size_t mid = a0 + (a1 - a0) / 2;
        solve(a0, mid, sweep(mid, a1, below), out);
        solve(mid, a1, below, out);
    }

    // S[r0][*] from S[r1][*].
    std::vector<std::size_t> sweep(std::size_t r0, std::size_t r1,
                                   const std::vector<std::size_t>& below) const {
        const std::size_t m = b_.size();
        std::vector<std::size_t> next = below;
        std::vector<std::size_t> row(m + 1, 0);
        for (std::size_t i = r1; i-- > r0;) {
            row[m] = 0;
            for (std::size_t j = m; j-- > 0;)
                row[j] = a_[i] == b_[j] ? next[j + 1] + 1 : std::max(next[j], row[j + 1]);
            std::swap(row, next);
        }
        return next;
    }

    void decide(std::size_t i, const std::vector<std::size_t>& below, Alignment& out) {
        const std::size_t remaining = best_ - out.size();
        for (std::size_t j = next_column_; j < b_.size(); ++j) {
            if (a_[i] == b_[j]) {
                // The earliest occurrence is the most permissive one.
                if (below[j + 1] + 1 == remaining) {
                    out.pairs.emplace_back(i, j);
                    next_column_ = j + 1;
                }
                return;
            }
        }
    }

    std::span<const T> a_;
    std::span<const T> b_;
    std::size_t best_;
    std::size_t next_column_ = 0;
};

}  // namespace detail

/// One longest common subsequence as index pairs. O(|a| |b| log |a|) time,
/// O(|b| log |a|) space; ties are broken toward the lexicographically
/// smallest pair sequence (earliest matches in `a`).
template <class T>
Alignment lcs(std::span<const T> a, std::span<const T> b) {
    return detail::CanonicalLcs<T>(a, b).run();
}

template <class T>
Alignment lcs(const std::vector<T>& a, const std::vector<T>& b) {
    return lcs(std::span<const T>(a), std::span<const T>(b));
}

inline Alignment lcs(const TokenSeq& a, const TokenSeq& b) { return lcs(a.tokens, b.tokens); }

// ---------------------------------------------------------------------------
// Labels

enum class Label : std::uint8_t { causal = 0, background = 1 };

using LabelSeq = std::vector<Label>;

inline std::size_t count_label(const LabelSeq& labels, Label which) {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), which));
}

/// Number of maximal runs of consecutive causal labels.
inline std::size_t causal_runs(const LabelSeq& labels) {
    std::size_t runs = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == Label::causal && (i == 0 || labels[i - 1] != Label::causal)) ++runs;
    return runs;
}

inline std::vector<int> labels_to_ints(const LabelSeq& labels) {
    std::vector<int> out;
    out.reserve(labels.size());
    for (auto l : labels) out.push_back(static_cast<int>(l));
    return out;
}

inline LabelSeq labels_from_ints(const std::vector<int>& values) {
    LabelSeq out;
    out.reserve(values.size());
    for (int v : values) {
        require(v == 0 || v == 1, "labels must be 0 or 1");
        out.push_back(static_cast<Label>(v));
    }
    return out;
}

/// Tokens on the LCS of (e, e') are background in their own sequence; every
/// other token is causal. Returns labels for e and e' in that order.
inline std::pair<LabelSeq, LabelSeq> derive_labels(const TokenSeq& e, const TokenSeq& e_prime) {
    LabelSeq labels_e(e.size(), Label::causal);
    LabelSeq labels_e_prime(e_prime.size(), Label::causal);
    for (auto [i, j] : lcs(e, e_prime).pairs) {
        labels_e[i] = Label::background;
        labels_e_prime[j] = Label::background;
    }
    return {std::move(labels_e), std::move(labels_e_prime)};
}

// ---------------------------------------------------------------------------
// Skeleton

enum class SkeletonSource { lcs, predicted, augmented, random };

inline std::string_view to_string(SkeletonSource s) {
    switch (s) {
        case SkeletonSource::lcs: return "lcs";
        case SkeletonSource::predicted: return "predicted";
        case SkeletonSource::augmented: return "augmented";
        case SkeletonSource::random: return "random";
    }
    return "?";
}

inline SkeletonSource parse_skeleton_source(std::string_view name) {
    if (name == "lcs") return SkeletonSource::lcs;
    if (name == "predicted") return SkeletonSource::predicted;
    if (name == "augmented") return SkeletonSource::augmented;
    if (name == "random") return SkeletonSource::random;
    fail(ErrorKind::validation, "unknown skeleton source '" + std::string(name) + "'");
}

/// Background tokens interleaved with blank markers. Blanks are stored as the
/// reserved "[BLANK]" string, which the tokenizer can never produce.
struct Skeleton {
    std::vector<std::string> items;
    SkeletonSource source = SkeletonSource::lcs;

    static bool is_blank(const std::string& item) { return item == kBlankToken; }

    std::size_t size() const { return items.size(); }

    std::size_t blank_count() const {
        return static_cast<std::size_t>(std::count_if(items.begin(), items.end(), is_blank));
    }

    std::size_t background_count() const { return items.size() - blank_count(); }

    std::vector<std::string> background() const {
        std::vector<std::string> out;
        for (const auto& item : items)
            if (!is_blank(item)) out.push_back(item);
        return out;
    }

    /// Same items; the source tag is provenance, not identity.
    bool operator==(const Skeleton& other) const { return items == other.items; }
};

inline std::vector<std::string> blank_item() { return {std::string(kBlankToken)}; }

/// Collapses every run of blanks into one blank; an empty result becomes a
/// single blank.
inline std::vector<std::string> merge_blanks(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    out.reserve(items.size());
    for (const auto& item : items) {
        if (Skeleton::is_blank(item) && !out.empty() && Skeleton::is_blank(out.back())) continue;
        out.push_back(item);
    }
    if (out.empty()) out = blank_item();
    return out;
}

inline bool is_merged(const Skeleton& k) {
    if (k.items.empty()) return false;
    for (std::size_t i = 1; i < k.items.size(); ++i)
        if (Skeleton::is_blank(k.items[i]) && Skeleton::is_blank(k.items[i - 1])) return false;
    return true;
}

/// Merged form, every item a non-empty whitespace-free token or a blank.
inline bool is_well_formed(const Skeleton& k) {
    if (!is_merged(k)) return false;
    for (const auto& item : k.items) {
        if (item.empty()) return false;
        if (std::any_of(item.begin(), item.end(),
                        [](unsigned char c) { return std::isspace(c); }))
            return false;
    }
    return true;
}

/// Causal tokens become blanks, then consecutive blanks merge.
inline Skeleton build_skeleton(const TokenSeq& e, const LabelSeq& labels,
                               SkeletonSource source = SkeletonSource::lcs) {
    if (labels.size() != e.size())
        fail(ErrorKind::validation, "label count " + std::to_string(labels.size()) +
                                        " does not match ending length " +
                                        std::to_string(e.size()));
    std::vector<std::string> items;
    items.reserve(e.size());
    for (std::size_t i = 0; i < e.size(); ++i)
        items.push_back(labels[i] == Label::causal ? std::string(kBlankToken) : e[i]);
    return Skeleton{merge_blanks(items), source};
}

/// Skeleton of the original ending against its reference counterfactual.
inline Skeleton lcs_skeleton(const TokenSeq& e, const TokenSeq& e_prime) {
    return build_skeleton(e, derive_labels(e, e_prime).first, SkeletonSource::lcs);
}

inline TokenSeq render_skeleton(const Skeleton& k) {
    return TokenSeq{k.items, Role::skeleton};
}

/// Inverse of render_skeleton. Rejects sequences that are not merged-form.
inline Skeleton parse_skeleton(const TokenSeq& seq, SkeletonSource source = SkeletonSource::lcs) {
    Skeleton k{seq.tokens, source};
    if (!is_well_formed(k))
        fail(ErrorKind::parse, "malformed skeleton: '" + join(seq.tokens) + "'");
    return k;
}

inline Skeleton parse_skeleton(std::string_view text,
                               SkeletonSource source = SkeletonSource::lcs) {
    // Split on whitespace only: rendered skeletons are already tokenized.
    std::vector<std::string> items;
    std::string current;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) items.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty()) items.push_back(std::move(current));
    return parse_skeleton(TokenSeq{items, Role::skeleton}, source);
}

/// Random&C-style baseline: blanks out `count` uniformly chosen tokens of e.
inline Skeleton random_skeleton(const TokenSeq& e, std::size_t count, Rng& rng) {
    LabelSeq labels(e.size(), Label::background);
    for (auto i : rng.sample_without_replacement(e.size(), count)) labels[i] = Label::causal;
    return build_skeleton(e, labels, SkeletonSource::random);
}

}  // namespace cfr
