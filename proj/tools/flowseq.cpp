// flowseq command-line front end.
//
//   flowseq ingest|seq|features|judge|evaluate|run [options]
//   flowseq synth --out-dir DIR [--essays N] [--seed S]

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "flowseq/pipeline.hpp"
#include "flowseq/synthetic.hpp"

namespace {

using namespace flowseq;

struct Overrides {
    std::string config;
    std::string dataset;
    std::string schema;
    std::vector<std::string> traits;
    std::string backend_url;
    std::string judge_url;
    std::string feature_sets;
    std::optional<std::size_t> k;
    std::optional<std::uint64_t> seed;
    std::string cache_dir;
    std::string out_dir;
    bool stratify = false;
    bool dry_run = false;
};

pipeline::RunConfig resolve_config(const Overrides& o) {
    pipeline::RunConfig c = o.config.empty() ? pipeline::RunConfig{} : pipeline::load_config(o.config);
    pipeline::apply_environment(c);
    if (!o.dataset.empty()) c.dataset_path = o.dataset;
    if (!o.schema.empty()) c.schema_path = o.schema;
    if (!o.traits.empty()) c.traits = o.traits;
    if (!o.backend_url.empty()) c.lm.url = o.backend_url;
    if (!o.judge_url.empty()) c.judge.url = o.judge_url;
    if (!o.feature_sets.empty()) {
        c.feature_sets.clear();
        for (const auto& s : parse_feature_sets(o.feature_sets)) c.feature_sets.push_back(s.name);
    }
    if (o.k) c.k = *o.k;
    if (o.seed) c.seed = *o.seed;
    if (o.stratify) c.stratify = true;
    if (!o.cache_dir.empty()) c.cache_dir = o.cache_dir;
    if (!o.out_dir.empty()) c.out_dir = o.out_dir;
    return c;
}

void report(const pipeline::StageOutcome& s) {
    if (s.skipped) {
        std::printf("%-9s up to date, skipped\n", s.stage.c_str());
        return;
    }
    std::printf("%-9s %s\n", s.stage.c_str(), s.summary.c_str());
}

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "Run configuration (JSON)");
    cmd->add_option("--dataset", o.dataset, "Essay file (CSV/TSV)");
    cmd->add_option("--schema", o.schema, "Schema mapping for the essay file");
    cmd->add_option("--trait", o.traits, "Trait to evaluate (repeatable)");
    cmd->add_option("--backend-url", o.backend_url, "Scoring LM: mock://SEED, mock-synth://SEED or http(s) URL");
    cmd->add_option("--judge-url", o.judge_url, "Judge endpoint: mock://hashed or http(s) URL");
    cmd->add_option("--feature-sets", o.feature_sets, "Comma-separated feature sets");
    cmd->add_option("--k", o.k, "Cross-validation folds");
    cmd->add_option("--seed", o.seed, "Fold seed");
    cmd->add_flag("--stratify", o.stratify, "Stratify folds by label");
    cmd->add_option("--cache-dir", o.cache_dir, "Response cache directory");
    cmd->add_option("--out-dir", o.out_dir, "Output directory");
    cmd->add_flag("--dry-run", o.dry_run, "Print the resolved plan and exit");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowseq: narrative-flow sequentiality for essay scoring"};
    app.require_subcommand(1);
    Overrides o;

    struct Stage {
        const char* name;
        const char* help;
    };
    const Stage stages[] = {{"ingest", "Load and validate the essay file into dataset.json"},
                            {"seq", "Score topic and context NLL per sentence"},
                            {"features", "Extract linguistic features"},
                            {"judge", "Score essays with the zero-shot judge"},
                            {"evaluate", "Fit variants and write AIC / QWK reports"},
                            {"run", "Run every stage the configured feature sets need"}};
    std::vector<CLI::App*> cmds;
    for (const auto& s : stages) {
        auto* cmd = app.add_subcommand(s.name, s.help);
        add_common(cmd, o);
        cmds.push_back(cmd);
    }

    synth::CorpusOptions synth_opts;
    std::string synth_dir;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus sampled from the mock model");
    synth_cmd->add_option("--out-dir", synth_dir, "Directory for essays.csv, prompts.csv, schema.json")->required();
    synth_cmd->add_option("--essays", synth_opts.essays, "Number of essays");
    synth_cmd->add_option("--seed", synth_opts.seed, "Sampling seed (also the mock-synth:// seed)");
    synth_cmd->add_option("--levels", synth_opts.levels, "Number of score levels");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth_cmd->parsed()) {
            const auto model = synth::synthetic_model(synth_opts.seed);
            const auto d = synth::synthetic_dataset(model, synth_opts);
            synth::write_corpus_files(d, synth_dir);
            std::printf("wrote %zu essays to %s (score with --backend-url mock-synth://%llu)\n", d.essays.size(),
                        synth_dir.c_str(), static_cast<unsigned long long>(synth_opts.seed));
            return 0;
        }
        const auto config = resolve_config(o);
        for (auto* cmd : cmds) {
            if (!cmd->parsed()) continue;
            const std::string name = cmd->get_name();
            const auto which = name == "run" ? pipeline::stages_for(config) : std::vector<std::string>{name};
            if (o.dry_run) {
                std::cout << pipeline::plan(config, which);
                return 0;
            }
            if (name == "ingest") report(pipeline::cmd_ingest(config));
            else if (name == "seq") report(pipeline::cmd_seq(config));
            else if (name == "features") report(pipeline::cmd_features(config));
            else if (name == "judge") report(pipeline::cmd_judge(config));
            else if (name == "evaluate") report(pipeline::cmd_evaluate(config));
            else
                for (const auto& s : pipeline::run_all(config)) report(s);
        }
    } catch (const pipeline::StageFailure& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const SchemaError& e) {
        std::fprintf(stderr, "schema error (column '%s'): %s\n", e.column().c_str(), e.what());
        return 1;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        for (std::size_t i = 0; i < e.essay_ids().size() && i < 20; ++i)
            std::fprintf(stderr, "  %s\n", e.essay_ids()[i].c_str());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
    return 0;
}
