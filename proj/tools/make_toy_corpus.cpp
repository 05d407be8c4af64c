// Writes a generated corpus as train/dev/test JSONL files plus a matching
// config, ready for `cfr prepare --config <out>/config.json`.

#include <iostream>

#include <CLI11.hpp>

#include "cfr/io.hpp"
#include "cfr/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate a toy story corpus."};
    std::string kind = "templated", out = "toy";
    std::size_t train = 1600, dev = 200, test = 200;
    std::uint64_t seed = 1;
    app.add_option("--kind", kind, "templated or separable")->check(CLI::IsMember({"templated", "separable"}));
    app.add_option("--out", out, "Output directory");
    app.add_option("--train", train, "Train pairs");
    app.add_option("--dev", dev, "Dev pairs");
    app.add_option("--test", test, "Test pairs");
    app.add_option("--seed", seed, "Corpus seed");
    CLI11_PARSE(app, argc, argv);

    try {
        const std::filesystem::path dir(out);
        std::filesystem::create_directories(dir);
        auto make = [&](std::size_t n, std::uint64_t s, const std::string& prefix) {
            return kind == "templated" ? cfr::synthetic::templated_corpus(n, s, prefix)
                                       : cfr::synthetic::separable_corpus(n, s, prefix);
        };
        cfr::save_dataset(dir / "train.jsonl", make(train, seed, "train"), cfr::Split::train);
        cfr::save_dataset(dir / "dev.jsonl", make(dev, seed + 1, "dev"), cfr::Split::dev);
        cfr::save_dataset(dir / "test.jsonl", make(test, seed + 2, "test"), cfr::Split::test);
        // Small models and short schedules sized for the toy data.
        const nlohmann::json config = {
            {"data", {{"train", (dir / "train.jsonl").string()},
                      {"dev", (dir / "dev.jsonl").string()},
                      {"test", (dir / "test.jsonl").string()}}},
            {"output_dir", (dir / "runs").string()},
            {"seed", seed},
            {"tagger", {{"learning_rate", 3e-3}, {"warmup_steps", 50}, {"epochs", 2}, {"dim", 32}, {"layers", 1},
                        {"heads", 2}, {"ffn_dim", 64}, {"max_sequence_length", 96}}},
            {"generator", {{"learning_rate", 2e-3}, {"warmup_steps", 100}, {"epochs", 3}, {"dim", 48},
                           {"layers", 2}, {"heads", 2}, {"ffn_dim", 96}, {"max_sequence_length", 96}}},
            {"sampler", {{"k", 1}}}};
        cfr::write_json_file(dir / "config.json", config);
        std::cout << "wrote " << train << "/" << dev << "/" << test << " pairs and config.json to " << dir.string()
                  << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
