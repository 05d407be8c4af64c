// cfr: command-line front end for the sketch-and-customize pipeline.
//
// Settings are resolved in this order, later ones winning:
//   built-in defaults < --config file < --set key=value (in order) < dedicated flags
// Everything except the sampler feeds the run-directory hash, so the same
// config and flags must be given to every command of one run.

#include <chrono>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfr/pipeline.hpp"

namespace {

using cfr::PipelineConfig;

struct CommonOptions {
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string output_dir, train, dev, test;
    std::optional<double> lambda;
    std::optional<bool> augment;
    bool quiet = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("-c,--config", config_file, "JSON config file")->check(CLI::ExistingFile);
        cmd->add_option("--set", sets, "Override a config field, e.g. --set tagger.lambda=0.5 (repeatable)");
        cmd->add_option("--seed", seed, "Global seed");
        cmd->add_option("--output-dir", output_dir, "Directory holding run directories");
        cmd->add_option("--train", train, "Train split (JSONL)");
        cmd->add_option("--dev", dev, "Dev split (JSONL)");
        cmd->add_option("--test", test, "Test split (JSONL)");
        cmd->add_option("--lambda", lambda, "Tagger loss weight on causal tokens, in (0, 1)");
        cmd->add_flag("--augment,!--no-augment", augment, "Skeleton augmentation for the generator (default on)");
        cmd->add_flag("-q,--quiet", quiet, "Only print warnings and errors");
    }
};

/// Extra key=value overrides contributed by a subcommand's own flags.
using Extra = std::vector<std::string>;

std::string string_override(const std::string& key, const std::string& value) {
    return key + "=" + nlohmann::json(value).dump();
}

PipelineConfig resolve(const CommonOptions& o, const Extra& extra) {
    if (o.quiet) cfr::log_state().level = cfr::LogLevel::warn;
    auto overrides = o.sets;
    if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
    if (!o.output_dir.empty()) overrides.push_back(string_override("output_dir", o.output_dir));
    if (!o.train.empty()) overrides.push_back(string_override("data.train", o.train));
    if (!o.dev.empty()) overrides.push_back(string_override("data.dev", o.dev));
    if (!o.test.empty()) overrides.push_back(string_override("data.test", o.test));
    if (o.lambda) overrides.push_back("tagger.lambda=" + nlohmann::json(*o.lambda).dump());
    if (o.augment) overrides.push_back(std::string("augmentation.enabled=") + (*o.augment ? "true" : "false"));
    overrides.insert(overrides.end(), extra.begin(), extra.end());
    return cfr::load_config(o.config_file, overrides);
}

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int digits = 4) { return cfr::fixed(v, digits); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual story rewriting: sketch a causal skeleton, then customize it."};
    app.require_subcommand(1);
    app.set_version_flag("--version", "cfr 1.0");

    // prepare
    CommonOptions prepare_opts;
    auto* prepare = app.add_subcommand("prepare", "LCS labels, skeletons, augmented skeletons, vocab and statistics");
    prepare_opts.attach(prepare);

    // train-sketch
    CommonOptions sketch_opts;
    auto* sketch = app.add_subcommand("train-sketch", "Train the skeleton tagger");
    sketch_opts.attach(sketch);

    // train-customize
    CommonOptions custom_opts;
    auto* custom = app.add_subcommand("train-customize", "Train the skeleton-filling generator");
    custom_opts.attach(custom);

    // infer
    CommonOptions infer_opts;
    std::string source = "predicted", run_name;
    std::optional<std::size_t> top_k;
    std::optional<double> temperature;
    auto* infer = app.add_subcommand("infer", "Generate counterfactual endings for the test split");
    infer_opts.attach(infer);
    infer->add_option("--skeleton-source", source, "Where skeletons come from")
        ->check(CLI::IsMember({"predicted", "lcs", "random"}));
    infer->add_option("--name", run_name, "Output name (generations-<name>.jsonl); default <source>-k<k>");
    infer->add_option("-k,--top-k", top_k, "Top-k sampling cutoff (1 = greedy)");
    infer->add_option("-t,--temperature", temperature, "Sampling temperature");

    // eval
    CommonOptions eval_opts;
    std::vector<std::string> compare;
    auto* eval = app.add_subcommand("eval", "Label metrics of the sketch stage");
    eval_opts.attach(eval);
    eval->add_option("--compare", compare, "Other run directories (or eval.json files) to tabulate alongside");

    // report
    CommonOptions report_opts;
    std::vector<std::string> report_runs;
    bool baselines = false;
    auto* report = app.add_subcommand("report", "ROUGE-L and skeleton coverage of generation runs");
    report_opts.attach(report);
    report->add_option("--run", report_runs, "Generations file (repeatable); default: all in the run directory");
    report->add_flag("--baselines", baselines, "Add copy-original and gold-reference rows");

    // sheets
    auto* sheets = app.add_subcommand("sheets", "Human evaluation sheets");
    sheets->require_subcommand(1);
    CommonOptions make_opts;
    std::vector<std::string> sheet_runs;
    std::size_t sheet_items = 100, annotators = 3;
    std::string sheet_out;
    auto* make = sheets->add_subcommand("make", "Write blind annotation sheets and the un-blinding mapping");
    make_opts.attach(make);
    make->add_option("--run", sheet_runs, "method=generations.jsonl (repeatable)")->required();
    make->add_option("-n,--items", sheet_items, "Items sampled from the test split");
    make->add_option("--annotators", annotators, "Number of annotator sheets");
    make->add_option("--out", sheet_out, "Output directory (default <run>/sheets)");
    std::string mapping_path, baseline;
    double alpha = 0.01;
    auto* aggregate = sheets->add_subcommand("aggregate", "Ingest filled sheets, average and test significance");
    aggregate->add_option("--mapping", mapping_path, "mapping.json written by 'sheets make'")->required()->check(
        CLI::ExistingFile);
    aggregate->add_option("--baseline", baseline, "Method every other method is t-tested against");
    aggregate->add_option("--alpha", alpha, "Significance level for table markers");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        Timer timer;
        if (prepare->parsed()) {
            const auto cfg = resolve(prepare_opts, {});
            const auto stats = cfr::cmd_prepare(cfg);
            std::cout << "run directory: " << cfg.run_dir().string() << '\n'
                      << "vocab size: " << stats["vocab_size"] << '\n';
            for (const auto& [split, s] : stats["splits"].items()) {
                std::cout << split << ": " << s["pairs"] << " pairs, " << s["pairs_with_reference"]
                          << " with reference, causal:background = 1:"
                          << fmt(s["background_per_causal"].get<double>(), 2) << '\n';
            }
        } else if (sketch->parsed()) {
            const auto cfg = resolve(sketch_opts, {});
            const auto result = cfr::cmd_train_sketch(cfg, [&](const cfr::TaggerEpoch& e) {
                std::string line = "tagger epoch " + std::to_string(e.epoch) + ": loss " + fmt(e.mean_loss);
                if (e.dev) line += ", dev CF1 " + fmt(e.dev->cf1);
                cfr::log_info(line + " (" + fmt(timer.seconds(), 1) + " s)");
            });
            std::cout << "tagger: " << cfr::run_paths(cfg).tagger().string() << " (best epoch " << result.best_epoch
                      << ")\n";
        } else if (custom->parsed()) {
            const auto cfg = resolve(custom_opts, {});
            cfr::cmd_train_customize(cfg, [&](const cfr::GeneratorEpoch& e) {
                cfr::log_info("generator epoch " + std::to_string(e.epoch) + ": token loss " +
                              fmt(e.mean_token_loss) + " (" + fmt(timer.seconds(), 1) + " s)");
            });
            std::cout << "generator: " << cfr::run_paths(cfg).generator().string() << '\n';
        } else if (infer->parsed()) {
            Extra extra;
            if (top_k) extra.push_back("sampler.k=" + std::to_string(*top_k));
            if (temperature) extra.push_back("sampler.temperature=" + nlohmann::json(*temperature).dump());
            const auto cfg = resolve(infer_opts, extra);
            const auto out = cfr::cmd_infer(cfg, {cfr::parse_skeleton_source(source), run_name});
            std::cout << "generations: " << out.string() << '\n';
        } else if (eval->parsed()) {
            const auto cfg = resolve(eval_opts, {});
            std::vector<std::filesystem::path> others(compare.begin(), compare.end());
            cfr::cmd_eval(cfg, others);
            std::cout << cfr::read_json_file(cfr::run_paths(cfg).eval_json(), "eval")["table_split"].get<std::string>()
                      << " split\n";
            std::ifstream table(cfr::run_paths(cfg).eval_text());
            std::cout << table.rdbuf();
        } else if (report->parsed()) {
            const auto cfg = resolve(report_opts, {});
            cfr::ReportOptions opts;
            opts.runs.assign(report_runs.begin(), report_runs.end());
            opts.baselines = baselines;
            cfr::cmd_report(cfg, opts);
            std::ifstream table(cfr::run_paths(cfg).report_text());
            std::cout << table.rdbuf();
        } else if (make->parsed()) {
            const auto cfg = resolve(make_opts, {});
            std::map<std::string, std::filesystem::path> runs;
            for (const auto& spec : sheet_runs) {
                const auto eq = spec.find('=');
                if (eq == std::string::npos || eq == 0)
                    cfr::fail(cfr::ErrorKind::validation, "--run expects method=file, got '" + spec + "'");
                if (!runs.emplace(spec.substr(0, eq), spec.substr(eq + 1)).second)
                    cfr::fail(cfr::ErrorKind::validation, "method " + spec.substr(0, eq) + " given twice");
            }
            const auto out = sheet_out.empty() ? cfr::run_paths(cfg).sheets() : std::filesystem::path(sheet_out);
            cfr::cmd_sheets_make(cfg, runs, sheet_items, annotators, out);
            std::cout << "sheets: " << out.string() << '\n';
        } else if (aggregate->parsed()) {
            cfr::cmd_sheets_aggregate(mapping_path, baseline, alpha);
            std::ifstream table(std::filesystem::path(mapping_path).parent_path() / "human.txt");
            std::cout << table.rdbuf();
        }
        cfr::log_info("done in " + fmt(timer.seconds(), 1) + " s");
    } catch (const cfr::Error& e) {
        std::cerr << "error (" << cfr::to_string(e.kind()) << "): " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error (parse): " << e.what() << '\n';
        return static_cast<int>(cfr::ErrorKind::parse);
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error (io): " << e.what() << '\n';
        return static_cast<int>(cfr::ErrorKind::io);
    } catch (const std::exception& e) {
        std::cerr << "error (internal): " << e.what() << '\n';
        return 1;
    }
    return 0;
}
