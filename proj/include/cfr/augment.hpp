#pragma once

// Noisy skeleton variants for training the customize stage: background
// words blanked, replaced by random vocabulary words, or shuffled.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "cfr/skeleton.hpp"

namespace cfr {

struct AugmentConfig {
    double replace_ratio = 0.2;
    std::uint64_t seed = 0;
    const Vocab* vocab = nullptr;  // only needed by augment_replace
};

enum class AugmentVariant { blank, replace, shuffle };

inline constexpr std::array<AugmentVariant, 3> kAugmentVariants = {
    AugmentVariant::blank, AugmentVariant::replace, AugmentVariant::shuffle};

inline std::string_view to_string(AugmentVariant v) {
    switch (v) {
        case AugmentVariant::blank: return "blank";
        case AugmentVariant::replace: return "replace";
        case AugmentVariant::shuffle: return "shuffle";
    }
    return "?";
}

inline AugmentVariant parse_augment_variant(std::string_view name) {
    if (name == "blank") return AugmentVariant::blank;
    if (name == "replace") return AugmentVariant::replace;
    if (name == "shuffle") return AugmentVariant::shuffle;
    fail(ErrorKind::parse, "unknown augmentation variant '" + std::string(name) + "'");
}

/// round-half-up(ratio * background). The small epsilon keeps products like
/// 0.15 * 10 from landing just under the .5 boundary.
inline std::size_t augment_count(double ratio, std::size_t background) {
    require(ratio >= 0.0 && ratio <= 1.0, "replace_ratio must lie in [0, 1]");
    return static_cast<std::size_t>(
        std::floor(ratio * static_cast<double>(background) + 0.5 + 1e-9));
}

namespace detail {

inline std::vector<std::size_t> background_positions(const Skeleton& k) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k.items.size(); ++i)
        if (!Skeleton::is_blank(k.items[i])) out.push_back(i);
    return out;
}

}  // namespace detail

/// Blanks round(ratio * B) background tokens chosen uniformly without
/// replacement, then re-merges.
inline Skeleton augment_blank(const Skeleton& k, const AugmentConfig& cfg) {
    const auto positions = detail::background_positions(k);
    const std::size_t count = augment_count(cfg.replace_ratio, positions.size());
    Rng rng(cfg.seed);
    auto items = k.items;
    for (auto idx : rng.sample_without_replacement(positions.size(), count))
        items[positions[idx]] = std::string(kBlankToken);
    return Skeleton{merge_blanks(items), SkeletonSource::augmented};
}

/// Replaces round(ratio * B) background tokens with different words drawn
/// uniformly from the non-reserved vocabulary. Blank structure is untouched.
inline Skeleton augment_replace(const Skeleton& k, const AugmentConfig& cfg) {
    if (cfg.vocab == nullptr || cfg.vocab->size() == Vocab::reserved_count())
        fail(ErrorKind::validation, "augment_replace needs a vocab with regular tokens");
    const auto positions = detail::background_positions(k);
    const std::size_t count = augment_count(cfg.replace_ratio, positions.size());
    const std::size_t pool = cfg.vocab->size() - Vocab::reserved_count();
    Rng rng(cfg.seed);
    auto items = k.items;
    for (auto idx : rng.sample_without_replacement(positions.size(), count)) {
        auto& item = items[positions[idx]];
        std::string word;
        do {
            word = cfg.vocab->token(
                static_cast<TokenId>(Vocab::reserved_count() + rng.uniform_index(pool)));
        } while (word == item && pool > 1);
        item = std::move(word);
    }
    return Skeleton{std::move(items), SkeletonSource::augmented};
}

/// Permutes the background tokens (Fisher-Yates). Blanks stay anchored to
/// the same background ordinal slots, so the blank count never changes.
inline Skeleton augment_shuffle(const Skeleton& k, const AugmentConfig& cfg) {
    const auto positions = detail::background_positions(k);
    std::vector<std::string> words;
    words.reserve(positions.size());
    for (auto p : positions) words.push_back(k.items[p]);
    Rng rng(cfg.seed);
    rng.shuffle(words);
    auto items = k.items;
    for (std::size_t i = 0; i < positions.size(); ++i) items[positions[i]] = words[i];
    return Skeleton{merge_blanks(items), SkeletonSource::augmented};
}

inline Skeleton augment(const Skeleton& k, AugmentVariant variant, const AugmentConfig& cfg) {
    switch (variant) {
        case AugmentVariant::blank: return augment_blank(k, cfg);
        case AugmentVariant::replace: return augment_replace(k, cfg);
        case AugmentVariant::shuffle: return augment_shuffle(k, cfg);
    }
    return k;
}

/// The three variants of one item's skeleton, each seeded from
/// (global_seed, item_id, variant) so results do not depend on processing
/// order.
inline std::vector<std::pair<AugmentVariant, Skeleton>> augment_all(const Skeleton& k,
                                                                    std::string_view item_id,
                                                                    std::uint64_t global_seed,
                                                                    double ratio,
                                                                    const Vocab& vocab) {
    std::vector<std::pair<AugmentVariant, Skeleton>> out;
    for (auto variant : kAugmentVariants) {
        AugmentConfig cfg{ratio, derive_seed(global_seed, item_id, to_string(variant)), &vocab};
        out.emplace_back(variant, augment(k, variant, cfg));
    }
    return out;
}

}  // namespace cfr
