#pragma once

// Corpus-level evaluation: run scoring and report tables, the paired t-test,
// and blinded human-annotation sheets (make, ingest, aggregate).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "cfr/format.hpp"
#include "cfr/io.hpp"
#include "cfr/metrics.hpp"

namespace cfr {

// ---------------------------------------------------------------------------
// Significance

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    std::size_t df = 0;
    bool zero_variance = false;
};

/// Two-sided paired t-test on a - b. All-zero differences give p = 1; zero
/// variance with a nonzero mean gives p = 0, t = +-inf and the flag set.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        fail(ErrorKind::mismatch, "paired_t_test: samples differ in length (" + std::to_string(a.size()) + " vs " +
                                      std::to_string(b.size()) + ")");
    require(a.size() >= 2, "paired_t_test: need at least two pairs");
    const double n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
    TTestResult r;
    r.df = a.size() - 1;
    if (ss == 0.0) {
        r.zero_variance = true;
        if (mean == 0.0) return r;
        r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        return r;
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    r.t = mean / (sd / std::sqrt(n));
    const boost::math::students_t dist(static_cast<double>(r.df));
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    return r;
}

// ---------------------------------------------------------------------------
// Run scoring

/// One row of an inference output file.
struct GenerationRecord {
    std::string story_id;
    Skeleton skeleton;
    TokenSeq ending;
    std::optional<LabelSeq> predicted_labels;

    nlohmann::json to_json(const nlohmann::json& sampler_config) const {
        nlohmann::json j = {{"story_id", story_id},
                            {"skeleton", join(skeleton.items)},
                            {"skeleton_source", to_string(skeleton.source)},
                            {"generated_ending", join(ending.tokens)}};
        j["predicted_labels"] = predicted_labels ? nlohmann::json(labels_to_ints(*predicted_labels)) : nlohmann::json();
        j["sampler_config"] = sampler_config;
        return j;
    }

    static GenerationRecord from_json(const nlohmann::json& j) {
        GenerationRecord r;
        r.story_id = j.at("story_id").get<std::string>();
        r.skeleton = parse_skeleton(j.at("skeleton").get<std::string>(),
                                    parse_skeleton_source(j.value("skeleton_source", "predicted")));
        r.ending = TokenSeq{tokenize_whitespace(j.at("generated_ending").get<std::string>()), Role::ending};
        if (j.contains("predicted_labels") && !j["predicted_labels"].is_null())
            r.predicted_labels = labels_from_ints(j["predicted_labels"].get<std::vector<int>>());
        return r;
    }

    /// Generated endings are stored already tokenized and space-joined.
    static std::vector<std::string> tokenize_whitespace(const std::string& text) {
        std::vector<std::string> out;
        std::istringstream in(text);
        for (std::string t; in >> t;) out.push_back(t);
        return out;
    }
};

struct RougeSummary {
    double precision = 0, recall = 0, f_measure = 0;

    void add(const RougeL& r) {
        precision += r.precision;
        recall += r.recall;
        f_measure += r.f_measure;
    }
    void divide(double n) {
        precision /= n;
        recall /= n;
        f_measure /= n;
    }
    nlohmann::json to_json() const { return {{"precision", precision}, {"recall", recall}, {"f", f_measure}}; }
};

struct RunScores {
    std::string name;
    std::size_t items = 0;
    RougeSummary vs_original;
    RougeSummary vs_references;  // best reference per item, by F
    double coverage = 0.0;
    std::optional<LabelMetrics> labels;
    std::vector<double> per_item_rouge_original;  // F, in pair order

    nlohmann::json to_json() const {
        nlohmann::json j = {{"run", name},
                            {"items", items},
                            {"rouge_l_vs_original", vs_original.to_json()},
                            {"rouge_l_vs_references", vs_references.to_json()},
                            {"skeleton_coverage", coverage}};
        j["label_metrics"] = labels ? labels->to_json() : nlohmann::json();
        return j;
    }
};

/// Scores one run against the pairs it was generated for. Every pair must
/// have exactly one record and every record must belong to a pair.
inline RunScores score_run(const std::string& name, const std::vector<StoryPair>& pairs,
                           const std::vector<GenerationRecord>& records) {
    std::map<std::string, const GenerationRecord*> by_id;
    for (const auto& r : records)
        if (!by_id.emplace(r.story_id, &r).second)
            fail(ErrorKind::mismatch, "run " + name + ": duplicate story id " + r.story_id);
    if (records.size() != pairs.size())
        fail(ErrorKind::mismatch, "run " + name + " has " + std::to_string(records.size()) + " rows for " +
                                      std::to_string(pairs.size()) + " test pairs");
    RunScores s;
    s.name = name;
    s.items = pairs.size();
    Confusion confusion;
    bool all_labeled = !pairs.empty();
    for (const auto& pair : pairs) {
        const auto it = by_id.find(pair.id);
        if (it == by_id.end()) fail(ErrorKind::mismatch, "run " + name + " has no row for story " + pair.id);
        const auto& rec = *it->second;
        const auto e = side_ending(pair, Side::original);
        const auto r = rouge_l(rec.ending, e);
        s.vs_original.add(r);
        s.per_item_rouge_original.push_back(r.f_measure);
        RougeL best;
        for (const auto& ref : pair.reference_endings) {
            const auto rr = rouge_l(rec.ending, tokenize_ending(ref));
            if (rr.f_measure > best.f_measure) best = rr;
        }
        s.vs_references.add(best);
        s.coverage += skeleton_coverage(rec.ending, rec.skeleton);
        if (rec.predicted_labels && rec.predicted_labels->size() == e.size() && !pair.reference_endings.empty())
            confusion.add(*rec.predicted_labels, derive_labels(e, side_ending(pair, Side::counterfactual)).first);
        else
            all_labeled = false;
    }
    if (!pairs.empty()) {
        const double n = static_cast<double>(pairs.size());
        s.vs_original.divide(n);
        s.vs_references.divide(n);
        s.coverage /= n;
    }
    if (all_labeled) s.labels = label_metrics(confusion);
    return s;
}

// ---------------------------------------------------------------------------
// Text tables

/// Left-aligned first column, right-aligned others, two-space gaps.
inline std::string format_table(const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size(), 0);
    auto measure = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
    };
    measure(header);
    for (const auto& r : rows) measure(r);
    std::ostringstream out;
    auto emit = [&](const std::vector<std::string>& row) {
        std::string line;
        for (std::size_t c = 0; c < width.size(); ++c) {
            const std::string cell = c < row.size() ? row[c] : "";
            const std::string pad(width[c] - cell.size(), ' ');
            if (c > 0) line += "  ";
            line += c == 0 ? cell + pad : pad + cell;
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out << line << '\n';
    };
    emit(header);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (const auto& r : rows) emit(r);
    return out.str();
}

inline std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

/// Sketch-stage scores, one row per labeled setting (e.g. per lambda).
inline std::string label_table(const std::vector<std::pair<std::string, LabelMetrics>>& rows,
                               const std::string& first_column = "lambda") {
    std::vector<std::vector<std::string>> cells;
    for (const auto& [name, m] : rows)
        cells.push_back({name, fixed(m.cp, 2), fixed(m.cr, 2), fixed(m.cf1, 2), fixed(m.bp, 2), fixed(m.br, 2),
                         fixed(m.bf1, 2)});
    return format_table({first_column, "CP", "CR", "CF1", "BP", "BR", "BF1"}, cells);
}

/// Columns: run, ROUGE-L F vs original, P, R, ROUGE-L F vs references,
/// skeleton coverage, CF1 (or "-").
inline std::string rouge_table(const std::vector<RunScores>& runs) {
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : runs)
        cells.push_back({r.name, fixed(r.vs_original.f_measure), fixed(r.vs_original.precision),
                         fixed(r.vs_original.recall), fixed(r.vs_references.f_measure), fixed(r.coverage),
                         r.labels ? fixed(r.labels->cf1) : "-"});
    return format_table({"run", "RL-orig-F", "RL-orig-P", "RL-orig-R", "RL-ref-F", "coverage", "CF1"}, cells);
}

// ---------------------------------------------------------------------------
// Human evaluation sheets

enum class Aspect { pre, cf, plot };
inline constexpr std::array<Aspect, 3> kAspects = {Aspect::pre, Aspect::cf, Aspect::plot};

inline std::string_view to_string(Aspect a) {
    switch (a) {
        case Aspect::pre: return "PRE";
        case Aspect::cf: return "CF";
        case Aspect::plot: return "PLOT";
    }
    return "?";
}

inline const char* rubric_text(Aspect a) {
    switch (a) {
        case Aspect::pre:
            return "PRE (premise): 3 = keeps the premise's details and never contradicts it; 2 = related to the "
                   "premise with a few minor conflicts; 1 = ignores or violates the premise.";
        case Aspect::cf:
            return "CF (counterfactual condition): 3 = premise, counterfactual condition and ending form one "
                   "consistent story; 2 = broadly consistent with minor conflicts; 1 = strong conflicts with the "
                   "counterfactual condition.";
        case Aspect::plot:
            return "PLOT (original plot): 3 = the main body of the original ending is kept; 2 = generally related "
                   "to the original plot; 1 = unrelated to the original ending.";
    }
    return "";
}

struct HumanScore {
    std::string annotator;
    std::string method;
    std::string item;
    std::array<int, 3> scores{};  // PRE, CF, PLOT

    void validate() const {
        for (std::size_t a = 0; a < 3; ++a)
            if (scores[a] < 1 || scores[a] > 3)
                fail(ErrorKind::validation, "score " + std::string(to_string(kAspects[a])) + " for item " + item +
                                                " must be 1, 2 or 3");
    }
};

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string csv_line(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += csv_field(fields[i]);
    }
    return out;
}

/// Splits one CSV record (quoted fields with doubled quotes; no embedded
/// newlines).
inline std::vector<std::string> parse_csv_line(const std::string& line, const std::string& where) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"' && field.empty()) {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    if (quoted) fail(ErrorKind::parse, where + ": unterminated quoted field");
    out.push_back(std::move(field));
    return out;
}

inline std::string slot_name(std::size_t i) {
    std::string s;
    do {
        s.insert(s.begin(), static_cast<char>('A' + i % 26));
        i /= 26;
    } while (i-- > 0);
    return s;
}

}  // namespace detail

/// Method id -> (story id -> generated ending text).
using RunEndings = std::map<std::string, std::map<std::string, std::string>>;

inline constexpr int kSheetMappingVersion = 1;

/// Writes annotator-<i>.csv for each annotator and mapping.json into
/// `out_dir`. Items are sampled once and shared; row order and the
/// method-to-slot assignment are shuffled per annotator and per row.
/// Returns the mapping document.
inline nlohmann::json make_annotation_sheets(const std::vector<StoryPair>& pairs, const RunEndings& runs,
                                             std::size_t n, std::uint64_t seed, std::size_t annotators,
                                             const std::filesystem::path& out_dir) {
    if (runs.empty()) fail(ErrorKind::validation, "sheets: no runs given");
    if (n > pairs.size())
        fail(ErrorKind::validation, "sheets: asked for " + std::to_string(n) + " items but the test set has " +
                                        std::to_string(pairs.size()));
    require(annotators >= 1, "sheets: need at least one annotator");
    for (const auto& [method, endings] : runs)
        for (const auto& pair : pairs)
            if (!endings.count(pair.id))
                fail(ErrorKind::mismatch, "sheets: run " + method + " has no ending for story " + pair.id);
    Rng sampler(derive_seed(seed, "sheets", "items"));
    auto chosen = sampler.sample_without_replacement(pairs.size(), n);
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::string> methods;
    for (const auto& [method, _] : runs) methods.push_back(method);

    nlohmann::json mapping = {{"format", "cfr.sheet-mapping"},
                              {"version", kSheetMappingVersion},
                              {"seed", seed},
                              {"items", n},
                              {"methods", methods}};
    std::vector<std::string> header = {"item", "premise", "original_condition", "counterfactual_condition",
                                       "original_ending"};
    for (std::size_t s = 0; s < methods.size(); ++s)
        for (const char* col : {"ending", "PRE", "CF", "PLOT"}) header.push_back(detail::slot_name(s) + "_" + col);

    for (std::size_t a = 1; a <= annotators; ++a) {
        const std::string who = "annotator-" + std::to_string(a);
        Rng rng(derive_seed(seed, who, "sheet"));
        auto rows = chosen;
        rng.shuffle(rows);
        std::ostringstream csv;
        csv << "# Blind evaluation sheet for " << who << ". Score every ending 1-3 on each aspect.\n";
        for (Aspect asp : kAspects) csv << "# " << rubric_text(asp) << '\n';
        csv << detail::csv_line(header) << '\n';
        nlohmann::json slots = nlohmann::json::object();
        for (auto idx : rows) {
            const auto& pair = pairs[idx];
            auto order = methods;
            rng.shuffle(order);
            std::vector<std::string> fields = {pair.id, pair.story.premise, pair.story.condition,
                                               pair.counterfactual_condition, join(pair.story.ending)};
            nlohmann::json assignment = nlohmann::json::object();
            for (std::size_t s = 0; s < order.size(); ++s) {
                fields.push_back(runs.at(order[s]).at(pair.id));
                fields.insert(fields.end(), {"", "", ""});
                assignment[detail::slot_name(s)] = order[s];
            }
            slots[pair.id] = assignment;
            csv << detail::csv_line(fields) << '\n';
        }
        write_text_file(out_dir / (who + ".csv"), csv.str());
        mapping["annotators"][who] = {{"file", who + ".csv"}, {"slots", slots}};
    }
    write_json_file(out_dir / "mapping.json", mapping);
    return mapping;
}

/// Reads a filled sheet and un-blinds it. Rows with all scores blank are
/// skipped; partially filled or out-of-range scores are errors.
inline std::vector<HumanScore> ingest_filled_sheet(const std::filesystem::path& path, const nlohmann::json& mapping,
                                                   const std::string& annotator) {
    if (!mapping.contains("annotators") || !mapping["annotators"].contains(annotator))
        fail(ErrorKind::mismatch, "sheets: mapping has no annotator " + annotator);
    const auto& slots = mapping["annotators"][annotator]["slots"];
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open sheet " + path.string());
    std::vector<HumanScore> out;
    std::vector<std::string> header;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string where = path.string() + ":" + std::to_string(number);
        if (line.empty() || line[0] == '#') continue;
        const auto fields = detail::parse_csv_line(line, where);
        if (header.empty()) {
            header = fields;
            continue;
        }
        if (fields.size() != header.size()) fail(ErrorKind::parse, where + ": expected " + std::to_string(header.size()) + " fields");
        const std::string& item = fields[0];
        if (!slots.contains(item)) fail(ErrorKind::mismatch, where + ": item " + item + " is not in the mapping");
        for (const auto& [slot, method] : slots[item].items()) {
            HumanScore score{annotator, method.get<std::string>(), item, {}};
            std::size_t blanks = 0;
            for (std::size_t a = 0; a < 3; ++a) {
                const std::string col = slot + "_" + std::string(to_string(kAspects[a]));
                const auto pos = std::find(header.begin(), header.end(), col);
                if (pos == header.end()) fail(ErrorKind::parse, where + ": missing column " + col);
                const std::string cell = detail::trim(fields[static_cast<std::size_t>(pos - header.begin())]);
                if (cell.empty()) {
                    ++blanks;
                    continue;
                }
                if (cell.size() != 1 || cell[0] < '1' || cell[0] > '3')
                    fail(ErrorKind::validation, where + ": " + col + " must be 1, 2 or 3, got '" + cell + "'");
                score.scores[a] = cell[0] - '0';
            }
            if (blanks == 3) continue;
            if (blanks) fail(ErrorKind::validation, where + ": slot " + slot + " is only partly scored");
            out.push_back(std::move(score));
        }
    }
    return out;
}

struct HumanMeans {
    double pre = 0, cf = 0, plot = 0, avg = 0;
    std::size_t items = 0;
    /// Per-item means (over annotators), aligned with the item list passed
    /// to aggregate_human; used for significance tests.
    std::array<std::vector<double>, 3> per_item;
};

/// Means over annotators, then over items; Avg is the mean of the three
/// aspect means. Every (item, method) needs at least one score.
inline std::map<std::string, HumanMeans> aggregate_human(const std::vector<HumanScore>& scores,
                                                         const std::vector<std::string>& items,
                                                         const std::vector<std::string>& methods) {
    std::map<std::pair<std::string, std::string>, std::pair<std::array<double, 3>, std::size_t>> cell;
    for (const auto& s : scores) {
        s.validate();
        auto& [sum, count] = cell[{s.method, s.item}];
        for (std::size_t a = 0; a < 3; ++a) sum[a] += s.scores[a];
        ++count;
    }
    std::vector<std::string> missing;
    for (const auto& m : methods)
        for (const auto& i : items)
            if (!cell.count({m, i})) missing.push_back(m + "/" + i);
    if (!missing.empty()) {
        std::string list;
        for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
        if (missing.size() > 20) list += ", ...";
        fail(ErrorKind::validation, std::to_string(missing.size()) + " (method/item) cells have no score: " + list);
    }
    std::map<std::string, HumanMeans> out;
    for (const auto& m : methods) {
        HumanMeans h;
        h.items = items.size();
        std::array<double, 3> total{};
        for (const auto& i : items) {
            const auto& [sum, count] = cell.at({m, i});
            for (std::size_t a = 0; a < 3; ++a) {
                const double mean = sum[a] / static_cast<double>(count);
                h.per_item[a].push_back(mean);
                total[a] += mean;
            }
        }
        const double n = static_cast<double>(items.size());
        h.pre = total[0] / n;
        h.cf = total[1] / n;
        h.plot = total[2] / n;
        h.avg = (h.pre + h.cf + h.plot) / 3.0;
        out[m] = std::move(h);
    }
    return out;
}

/// Human-score table; with a baseline, cells significantly lower (higher)
/// than the baseline at p < alpha get a "v" ("^") marker.
inline std::string human_table(const std::map<std::string, HumanMeans>& means, const std::string& baseline = "",
                               double alpha = 0.01) {
    std::vector<std::vector<std::string>> cells;
    for (const auto& [method, h] : means) {
        std::vector<std::string> row = {method};
        const std::array<double, 3> values = {h.pre, h.cf, h.plot};
        for (std::size_t a = 0; a < 3; ++a) {
            std::string cell = fixed(values[a]);
            if (!baseline.empty() && method != baseline && means.count(baseline) && h.items >= 2) {
                const auto t = paired_t_test(h.per_item[a], means.at(baseline).per_item[a]);
                if (t.p < alpha) cell += t.t < 0 ? "v" : "^";
            }
            row.push_back(cell);
        }
        row.push_back(fixed(h.avg));
        cells.push_back(row);
    }
    return format_table({"method", "PRE", "CF", "PLOT", "Avg"}, cells);
}

}  // namespace cfr
