#pragma once

// Story data model, TimeTravel-style JSONL ingestion, word tokenization and
// the vocabulary shared by both stages.

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfr/error.hpp"
#include "cfr/util.hpp"

namespace cfr {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Story types

inline constexpr std::size_t kEndingSentences = 3;

struct Story {
    std::string premise;
    std::string condition;
    std::vector<std::string> ending;  // exactly kEndingSentences entries
};

enum class Split { train, dev, test };

inline Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "dev") return Split::dev;
    if (name == "test") return Split::test;
    fail(ErrorKind::validation, "unknown split '" + std::string(name) + "'");
}

inline std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "?";
}

struct StoryPair {
    std::string id;
    Story story;
    std::string counterfactual_condition;
    std::vector<std::vector<std::string>> reference_endings;

    bool has_reference() const { return !reference_endings.empty(); }
};

enum class Role { premise, condition, cf_condition, ending, cf_ending, skeleton };

/// A tokenized text span. Tokens never contain whitespace and are never empty.
struct TokenSeq {
    std::vector<std::string> tokens;
    Role role = Role::ending;

    std::size_t size() const { return tokens.size(); }
    bool empty() const { return tokens.empty(); }
    const std::string& operator[](std::size_t i) const { return tokens[i]; }
    bool operator==(const TokenSeq& other) const { return tokens == other.tokens; }
};

// ---------------------------------------------------------------------------
// Tokenization

/// Pluggable tokenizer boundary. Everything downstream (LCS labels, skeletons,
/// vocab) operates on whatever word units this produces.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<std::string> split(std::string_view text) const = 0;
    virtual std::string name() const = 0;
};

/// Lowercases ASCII letters, splits on whitespace and emits every ASCII
/// punctuation character as its own token. Bytes >= 0x80 are kept as word
/// characters.
class BasicTokenizer final : public Tokenizer {
public:
    static bool is_punct(unsigned char c) {
        return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
               (c >= 123 && c <= 126);
    }

    std::vector<std::string> split(std::string_view text) const override {
        std::vector<std::string> out;
        std::string current;
        auto flush = [&] {
            if (!current.empty()) out.push_back(std::move(current));
            current.clear();
        };
        for (unsigned char c : text) {
            if (std::isspace(c)) {
                flush();
            } else if (is_punct(c)) {
                flush();
                out.emplace_back(1, static_cast<char>(c));
            } else {
                current.push_back(static_cast<char>(std::tolower(c)));
            }
        }
        flush();
        return out;
    }

    std::string name() const override { return "basic"; }
};

inline std::unique_ptr<Tokenizer> make_tokenizer(std::string_view name) {
    if (name == "basic") return std::make_unique<BasicTokenizer>();
    fail(ErrorKind::validation, "unknown tokenizer '" + std::string(name) + "'");
}

inline TokenSeq tokenize(std::string_view text, Role role = Role::ending) {
    static const BasicTokenizer tokenizer;
    return TokenSeq{tokenizer.split(text), role};
}

/// Lossy inverse of tokenize: tokens joined by single spaces.
inline std::string detokenize(const TokenSeq& seq) { return join(seq.tokens, " "); }

/// The ending's sentences tokenized and concatenated into one sequence.
inline TokenSeq tokenize_ending(const std::vector<std::string>& sentences,
                                Role role = Role::ending) {
    TokenSeq out{{}, role};
    for (const auto& sentence : sentences) {
        auto part = tokenize(sentence, role);
        out.tokens.insert(out.tokens.end(), part.tokens.begin(), part.tokens.end());
    }
    return out;
}

/// Naive sentence splitter: breaks after '.', '!' or '?' when followed by
/// whitespace. Anything beyond the third sentence is folded into the third.
inline std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        current.push_back(c);
        const bool terminal = c == '.' || c == '!' || c == '?';
        const bool at_break =
            terminal && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])));
        if (at_break) {
            out.push_back(current);
            current.clear();
        }
    }
    out.push_back(current);
    // trim and drop empties
    std::vector<std::string> trimmed;
    for (auto& s : out) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) continue;
        const auto e = s.find_last_not_of(" \t\r\n");
        trimmed.push_back(s.substr(b, e - b + 1));
    }
    while (trimmed.size() > kEndingSentences) {
        trimmed[trimmed.size() - 2] += " " + trimmed.back();
        trimmed.pop_back();
    }
    return trimmed;
}

// ---------------------------------------------------------------------------
// Dataset ingestion

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string where(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line);
}

inline std::string require_text(const json& obj, const char* field,
                                const std::filesystem::path& path, std::size_t line) {
    if (!obj.contains(field))
        fail(ErrorKind::parse, where(path, line) + ": missing required field '" + field + "'");
    if (!obj[field].is_string())
        fail(ErrorKind::parse, where(path, line) + ": field '" + field + "' must be a string");
    auto value = trim(obj[field].get<std::string>());
    if (value.empty())
        fail(ErrorKind::validation, where(path, line) + ": field '" + field + "' is empty");
    return value;
}

/// Accepts either one string (split into sentences) or an array of sentence
/// strings; always returns exactly three non-empty sentences.
inline std::vector<std::string> normalize_ending(const json& value, const char* field,
                                                 const std::filesystem::path& path,
                                                 std::size_t line) {
    std::string text;
    if (value.is_string()) {
        text = value.get<std::string>();
    } else if (value.is_array()) {
        for (const auto& part : value) {
            if (!part.is_string())
                fail(ErrorKind::parse,
                     where(path, line) + ": field '" + field + "' must hold strings");
            if (!text.empty()) text += ' ';
            text += trim(part.get<std::string>());
        }
    } else {
        fail(ErrorKind::parse, where(path, line) + ": field '" + field + "' has the wrong type");
    }
    auto sentences = split_sentences(text);
    if (sentences.size() != kEndingSentences)
        fail(ErrorKind::validation, where(path, line) + ": field '" + field + "' has " +
                                        std::to_string(sentences.size()) +
                                        " sentences, expected 3");
    return sentences;
}

}  // namespace detail

/// Parses one JSONL record. `line` is 1-based and only used in messages.
inline StoryPair parse_story_record(const json& obj, Split split,
                                    const std::filesystem::path& path, std::size_t line) {
    if (!obj.is_object())
        fail(ErrorKind::parse, detail::where(path, line) + ": expected a JSON object");
    StoryPair pair;
    pair.story.premise = detail::require_text(obj, "premise", path, line);
    pair.story.condition = detail::require_text(obj, "initial", path, line);
    pair.counterfactual_condition = detail::require_text(obj, "counterfactual", path, line);
    if (!obj.contains("original_ending"))
        fail(ErrorKind::parse,
             detail::where(path, line) + ": missing required field 'original_ending'");
    pair.story.ending =
        detail::normalize_ending(obj["original_ending"], "original_ending", path, line);

    if (obj.contains("edited_endings")) {
        const auto& list = obj["edited_endings"];
        if (!list.is_array())
            fail(ErrorKind::parse, detail::where(path, line) + ": 'edited_endings' must be an array");
        for (const auto& ending : list)
            pair.reference_endings.push_back(
                detail::normalize_ending(ending, "edited_endings", path, line));
    } else if (obj.contains("edited_ending")) {
        pair.reference_endings.push_back(
            detail::normalize_ending(obj["edited_ending"], "edited_ending", path, line));
    }

    if (split == Split::train && pair.reference_endings.size() > 1)
        pair.reference_endings.resize(1);
    if (split != Split::train && pair.reference_endings.empty())
        fail(ErrorKind::parse, detail::where(path, line) + ": missing required field 'edited_endings'");

    if (obj.contains("story_id") && obj["story_id"].is_string())
        pair.id = obj["story_id"].get<std::string>();
    else
        pair.id = std::string(to_string(split)) + "-" + std::to_string(line);
    return pair;
}

/// Reads a JSONL dataset. Pairs come back in file order; blank lines are
/// ignored, any malformed line aborts the load with its line number.
inline std::vector<StoryPair> load_dataset(const std::filesystem::path& path, Split split) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open dataset " + path.string());
    std::vector<StoryPair> pairs;
    std::unordered_map<std::string, std::size_t> seen_ids;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (detail::trim(raw).empty()) continue;
        json obj;
        try {
            obj = json::parse(raw);
        } catch (const json::parse_error& e) {
            fail(ErrorKind::parse, detail::where(path, line) + ": malformed JSON (" + e.what() + ")");
        }
        auto pair = parse_story_record(obj, split, path, line);
        // Ids are used as seeds and sheet keys, so they must be unique.
        auto& count = seen_ids[pair.id];
        if (count++ > 0) pair.id += "#" + std::to_string(count - 1);
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

/// Inverse of parse_story_record for one pair (endings written as arrays).
inline json story_record(const StoryPair& pair, Split split) {
    json obj;
    obj["story_id"] = pair.id;
    obj["premise"] = pair.story.premise;
    obj["initial"] = pair.story.condition;
    obj["counterfactual"] = pair.counterfactual_condition;
    obj["original_ending"] = join(pair.story.ending, " ");
    if (split == Split::train) {
        if (pair.has_reference()) obj["edited_ending"] = pair.reference_endings.front();
    } else {
        obj["edited_endings"] = pair.reference_endings;
    }
    return obj;
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<StoryPair>& pairs,
                         Split split) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::io, "cannot write dataset " + path.string());
    for (const auto& pair : pairs) out << story_record(pair, split).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Vocabulary

using TokenId = std::int32_t;

/// Reserved entries, in id order. Their ids never change.
enum class Special : TokenId {
    pad = 0,
    unk,
    pre,
    con1,
    con2,
    con,
    ske,
    end,
    blank,
    eoe,
};

inline constexpr std::array<std::string_view, 10> kSpecialTokens = {
    "[PAD]", "[UNK]", "[PRE]", "[CON1]", "[CON2]", "[CON]", "[SKE]", "[END]", "[BLANK]", "[EOE]"};

inline constexpr TokenId id_of(Special s) { return static_cast<TokenId>(s); }
inline constexpr std::string_view kBlankToken = "[BLANK]";

class Vocab {
public:
    static constexpr int kFormatVersion = 1;

    Vocab() {
        for (auto token : kSpecialTokens) add(std::string(token));
    }

    /// Non-reserved tokens are appended in the given order.
    explicit Vocab(const std::vector<std::string>& tokens) : Vocab() {
        for (const auto& t : tokens) {
            if (index_.count(t))
                fail(ErrorKind::validation, "duplicate vocab entry '" + t + "'");
            add(t);
        }
    }

    std::size_t size() const { return tokens_.size(); }
    static constexpr std::size_t reserved_count() { return kSpecialTokens.size(); }
    bool is_reserved(TokenId id) const {
        return id >= 0 && static_cast<std::size_t>(id) < reserved_count();
    }

    TokenId id(std::string_view token) const {
        auto it = index_.find(std::string(token));
        return it == index_.end() ? id_of(Special::unk) : it->second;
    }
    bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }
    const std::string& token(TokenId id) const {
        require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(),
                "token id out of range: " + std::to_string(id));
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::vector<TokenId> encode(const TokenSeq& seq) const {
        std::vector<TokenId> out;
        out.reserve(seq.size());
        for (const auto& t : seq.tokens) out.push_back(id(t));
        return out;
    }

    std::vector<std::string> decode(const std::vector<TokenId>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (auto i : ids) out.push_back(token(i));
        return out;
    }

    /// Non-reserved entries in id order.
    std::vector<std::string> regular_tokens() const {
        return {tokens_.begin() + static_cast<std::ptrdiff_t>(reserved_count()), tokens_.end()};
    }

    /// Content fingerprint; models record it so mismatched artifacts are caught.
    std::string hash() const {
        std::uint64_t h = fnv1a("cfr-vocab-v1");
        for (const auto& t : tokens_) {
            h = fnv1a(t, h);
            h = fnv1a(std::string_view("\n", 1), h);
        }
        return hex64(h);
    }

    json to_json() const {
        json obj;
        obj["format"] = "cfr.vocab";
        obj["version"] = kFormatVersion;
        obj["reserved"] = std::vector<std::string>(kSpecialTokens.begin(), kSpecialTokens.end());
        obj["tokens"] = regular_tokens();
        obj["hash"] = hash();
        return obj;
    }

    static Vocab from_json(const json& obj) {
        if (!obj.is_object() || obj.value("format", "") != "cfr.vocab")
            fail(ErrorKind::parse, "not a vocab file");
        if (obj.value("version", 0) != kFormatVersion)
            fail(ErrorKind::parse, "unsupported vocab version");
        const auto reserved = obj.at("reserved").get<std::vector<std::string>>();
        if (reserved != std::vector<std::string>(kSpecialTokens.begin(), kSpecialTokens.end()))
            fail(ErrorKind::mismatch, "vocab reserved tokens differ from this build");
        Vocab vocab(obj.at("tokens").get<std::vector<std::string>>());
        if (obj.contains("hash") && obj["hash"].get<std::string>() != vocab.hash())
            fail(ErrorKind::parse, "vocab hash does not match its contents");
        return vocab;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) fail(ErrorKind::io, "cannot write vocab " + path.string());
        out << to_json().dump(1) << '\n';
    }

    static Vocab load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) fail(ErrorKind::io, "cannot open vocab " + path.string());
        json obj;
        try {
            obj = json::parse(in);
        } catch (const json::parse_error& e) {
            fail(ErrorKind::parse, path.string() + ": " + e.what());
        }
        return from_json(obj);
    }

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

private:
    void add(std::string token) {
        index_.emplace(token, static_cast<TokenId>(tokens_.size()));
        tokens_.push_back(std::move(token));
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

/// Every text field of every pair, tokenized.
inline std::vector<TokenSeq> corpus_texts(const std::vector<StoryPair>& pairs) {
    std::vector<TokenSeq> out;
    for (const auto& pair : pairs) {
        out.push_back(tokenize(pair.story.premise, Role::premise));
        out.push_back(tokenize(pair.story.condition, Role::condition));
        out.push_back(tokenize(pair.counterfactual_condition, Role::cf_condition));
        out.push_back(tokenize_ending(pair.story.ending, Role::ending));
        for (const auto& ref : pair.reference_endings)
            out.push_back(tokenize_ending(ref, Role::cf_ending));
    }
    return out;
}

/// Tokens with frequency >= min_count, ordered by frequency (desc) then
/// lexicographically, after the reserved block.
inline Vocab build_vocab(const std::vector<TokenSeq>& texts, std::size_t min_count) {
    require(min_count >= 1, "min_count must be at least 1");
    std::map<std::string, std::size_t> counts;
    for (const auto& seq : texts)
        for (const auto& t : seq.tokens) ++counts[t];
    if (counts.empty()) fail(ErrorKind::validation, "cannot build a vocab from an empty corpus");
    std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(), counts.end());
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens;
    for (auto& [token, count] : entries)
        if (count >= min_count) tokens.push_back(token);
    return Vocab(tokens);
}

inline Vocab build_vocab(const std::vector<StoryPair>& pairs, std::size_t min_count) {
    if (pairs.empty()) fail(ErrorKind::validation, "cannot build a vocab from an empty corpus");
    return build_vocab(corpus_texts(pairs), min_count);
}

}  // namespace cfr
