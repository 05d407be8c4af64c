#pragma once

// Special-token input layouts for the two stages:
//
//   sketch:     [PRE] p [CON1] c [CON2] c' [END] e
//   customize:  [PRE] p [CON] c' [SKE] k [END] (target [EOE])

#include <string>
#include <vector>

#include "cfr/corpus.hpp"
#include "cfr/skeleton.hpp"

namespace cfr {

inline constexpr std::size_t kDefaultMaxSequenceLength = 300;

/// Which condition/ending a formatted input is built around.
enum class Side { original, counterfactual };

inline std::string_view to_string(Side side) {
    return side == Side::original ? "original" : "counterfactual";
}

struct FormattedInput {
    std::vector<TokenId> ids;
    /// Index of each section's marker token, in layout order.
    std::vector<std::size_t> section_starts;
    /// First position after [END] (N_e). The ending span is [ending_start, size()).
    std::size_t ending_start = 0;
    /// Ending tokens dropped to respect the length limit.
    std::size_t truncated = 0;

    std::size_t size() const { return ids.size(); }
    std::size_t ending_length() const { return ids.size() - ending_start; }

    /// Section index for every position (0..3).
    std::vector<int> segment_ids() const {
        std::vector<int> out(ids.size(), 0);
        for (std::size_t s = 0; s < section_starts.size(); ++s) {
            const std::size_t end = s + 1 < section_starts.size() ? section_starts[s + 1] : ids.size();
            for (std::size_t i = section_starts[s]; i < end; ++i) out[i] = static_cast<int>(s);
        }
        return out;
    }
};

namespace detail {

inline void append_section(FormattedInput& input, Special marker, const std::vector<TokenId>& body) {
    input.section_starts.push_back(input.ids.size());
    input.ids.push_back(id_of(marker));
    input.ids.insert(input.ids.end(), body.begin(), body.end());
}

}  // namespace detail

/// Ending tokens for one side of a pair (the first reference for the
/// counterfactual side).
inline TokenSeq side_ending(const StoryPair& pair, Side side) {
    if (side == Side::original) return tokenize_ending(pair.story.ending, Role::ending);
    if (!pair.has_reference())
        fail(ErrorKind::validation,
             "pair " + pair.id + " has no reference ending for the counterfactual side");
    return tokenize_ending(pair.reference_endings.front(), Role::cf_ending);
}

inline const std::string& side_condition(const StoryPair& pair, Side side) {
    return side == Side::original ? pair.story.condition : pair.counterfactual_condition;
}

/// Sketch-stage input. The counterfactual side swaps the two conditions and
/// uses the reference ending, so each pair yields two labeled instances.
/// Over-long inputs lose tokens from the end of the ending only.
inline FormattedInput format_sketch_input(const StoryPair& pair, Side side, const Vocab& vocab,
                                          std::size_t max_length = kDefaultMaxSequenceLength) {
    const Side other = side == Side::original ? Side::counterfactual : Side::original;
    FormattedInput input;
    detail::append_section(input, Special::pre, vocab.encode(tokenize(pair.story.premise)));
    detail::append_section(input, Special::con1,
                           vocab.encode(tokenize(side_condition(pair, side))));
    detail::append_section(input, Special::con2,
                           vocab.encode(tokenize(side_condition(pair, other))));
    auto ending = vocab.encode(side_ending(pair, side));
    detail::append_section(input, Special::end, {});
    input.ending_start = input.ids.size();
    if (input.ending_start >= max_length)
        fail(ErrorKind::validation, "pair " + pair.id + ": premise and conditions alone exceed " +
                                        std::to_string(max_length) + " tokens");
    const std::size_t room = max_length - input.ending_start;
    if (ending.size() > room) {
        input.truncated = ending.size() - room;
        ending.resize(room);
        log_warn("pair " + pair.id + ": sketch input truncated by " +
                 std::to_string(input.truncated) + " ending token(s)");
    }
    if (ending.empty()) fail(ErrorKind::validation, "pair " + pair.id + ": empty ending");
    input.ids.insert(input.ids.end(), ending.begin(), ending.end());
    return input;
}

/// Customize-stage prompt ending in [END]. The single [CON] marker holds
/// whichever condition `side` selects. Its ending span is empty until a
/// target is appended with append_target.
inline FormattedInput format_customize_input(const StoryPair& pair, Side side, const Skeleton& k,
                                             const Vocab& vocab,
                                             std::size_t max_length = kDefaultMaxSequenceLength) {
    require(is_well_formed(k), "pair " + pair.id + ": malformed skeleton");
    FormattedInput input;
    detail::append_section(input, Special::pre, vocab.encode(tokenize(pair.story.premise)));
    detail::append_section(input, Special::con,
                           vocab.encode(tokenize(side_condition(pair, side))));
    auto skeleton_ids = vocab.encode(render_skeleton(k));
    const std::size_t fixed = input.ids.size() + 2;  // [SKE] and [END]
    // Leave at least one slot for the generated ending.
    if (fixed + 1 > max_length)
        fail(ErrorKind::validation, "pair " + pair.id + ": premise and condition alone exceed " +
                                        std::to_string(max_length) + " tokens");
    const std::size_t room = max_length - fixed - 1;
    if (skeleton_ids.size() > room) {
        input.truncated = skeleton_ids.size() - room;
        skeleton_ids.resize(room);
        log_warn("pair " + pair.id + ": skeleton truncated by " +
                 std::to_string(input.truncated) + " token(s)");
    }
    detail::append_section(input, Special::ske, skeleton_ids);
    detail::append_section(input, Special::end, {});
    input.ending_start = input.ids.size();
    return input;
}

/// Appends a generation target plus [EOE]. If the limit is hit the target's
/// tail is dropped; [EOE] is always kept.
inline FormattedInput append_target(FormattedInput prompt, const TokenSeq& target,
                                    const Vocab& vocab,
                                    std::size_t max_length = kDefaultMaxSequenceLength) {
    require(prompt.ending_length() == 0, "prompt already carries a target");
    auto ids = vocab.encode(target);
    require(prompt.size() < max_length, "prompt leaves no room for a target");
    const std::size_t room = max_length - prompt.size() - 1;
    if (ids.size() > room) {
        prompt.truncated += ids.size() - room;
        ids.resize(room);
        log_warn("generation target truncated by " + std::to_string(prompt.truncated) +
                 " token(s)");
    }
    prompt.ids.insert(prompt.ids.end(), ids.begin(), ids.end());
    prompt.ids.push_back(id_of(Special::eoe));
    return prompt;
}

}  // namespace cfr
