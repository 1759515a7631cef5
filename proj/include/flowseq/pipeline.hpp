#pragma once

// File-mediated pipeline: ingest -> seq -> features -> judge -> evaluate.
// Every stage reads and writes declared files under out_dir and records a
// manifest keyed by the hash of its inputs; a stage whose inputs and outputs
// are unchanged is skipped.

#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowseq/corpus.hpp"
#include "flowseq/errors.hpp"
#include "flowseq/evaluation.hpp"
#include "flowseq/ling_features.hpp"
#include "flowseq/llm_judge.hpp"
#include "flowseq/lm_scoring.hpp"
#include "flowseq/parallel.hpp"
#include "flowseq/sequentiality.hpp"
#include "flowseq/synthetic.hpp"
#include "flowseq/text.hpp"
#include "flowseq/wordlists/dale_chall.hpp"
#include "flowseq/wordlists/stopwords.hpp"

namespace flowseq::pipeline {

namespace fs = std::filesystem;

// Raised when a stage finished but its result is not acceptable (too many
// failed essays). Outputs are still written.
struct StageFailure : Error {
    using Error::Error;
};

struct LmSettings {
    std::string url;  // mock://<seed>, mock-synth://<seed>, or http(s)://host[:port][/path]
    std::string model;
    std::size_t max_context_tokens = 8192;
    std::size_t max_inflight = 4;
    std::size_t essay_parallelism = 4;
    std::size_t retries = 2;
    double timeout_seconds = 120;
    std::string api_key;
};

struct JudgeSettings {
    std::string url;  // mock://hashed, mock://silent, or http(s)://...
    std::string model;
    std::map<std::string, std::string> templates;  // trait -> template id
    std::map<std::string, std::string> rubric_paths;  // trait -> rubric file
    double temperature = 0.0001;
    std::size_t max_new_tokens = 256;
    std::size_t retries = 2;
    std::size_t max_inflight = 4;
    double timeout_seconds = 120;
    std::string api_key;
};

struct RunConfig {
    std::string dataset_path;
    std::string schema_path;
    std::vector<std::string> traits;
    LmSettings lm;
    JudgeSettings judge;
    std::vector<std::string> feature_sets = {"seq",  "topic",    "context",    "both",
                                             "ling", "ling+seq", "ling+topic", "ling+context"};
    std::size_t k = 5;
    std::uint64_t seed = 42;
    bool stratify = false;
    std::string cache_dir = ".flowseq-cache";
    std::string out_dir = "flowseq-out";
    double seq_failure_threshold = 0.0;  // tolerated fraction of failed essays
    std::size_t eval_parallelism = 4;

    void validate() const {
        if (dataset_path.empty()) throw ConfigError("no dataset path configured");
        if (schema_path.empty()) throw ConfigError("no schema path configured");
        if (!fs::exists(dataset_path)) throw ConfigError("dataset file not found: " + dataset_path);
        if (!fs::exists(schema_path)) throw ConfigError("schema file not found: " + schema_path);
        for (const auto& f : feature_sets) feature_set(f);
        if (k < 2) throw ConfigError("k must be at least 2");
        if (!(seq_failure_threshold >= 0 && seq_failure_threshold <= 1))
            throw ConfigError("seq_failure_threshold must lie in [0, 1]");
    }
};

namespace detail {

inline std::string resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    return (path.is_relative() && !base.empty() ? base / path : path).lexically_normal().string();
}

inline std::chrono::milliseconds millis(double seconds) {
    return std::chrono::milliseconds(static_cast<long long>(seconds * 1000.0));
}

}  // namespace detail

// Relative paths resolve against `base_dir` (the config file's directory).
inline RunConfig config_from_json(const json& j, const fs::path& base_dir = {}) {
    RunConfig c;
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        if (d.is_string()) {
            c.dataset_path = detail::resolve(base_dir, d.get<std::string>());
        } else {
            c.dataset_path = detail::resolve(base_dir, d.value("path", ""));
            c.schema_path = detail::resolve(base_dir, d.value("schema", ""));
        }
    }
    if (j.contains("schema")) c.schema_path = detail::resolve(base_dir, j.at("schema").get<std::string>());
    if (j.contains("trait")) c.traits = {j.at("trait").get<std::string>()};
    if (j.contains("traits")) c.traits = j.at("traits").get<std::vector<std::string>>();
    if (j.contains("lm")) {
        const auto& l = j.at("lm");
        c.lm.url = l.value("url", c.lm.url);
        c.lm.model = l.value("model", c.lm.model);
        c.lm.max_context_tokens = l.value("max_context_tokens", c.lm.max_context_tokens);
        c.lm.max_inflight = l.value("max_inflight", c.lm.max_inflight);
        c.lm.essay_parallelism = l.value("essay_parallelism", c.lm.essay_parallelism);
        c.lm.retries = l.value("retries", c.lm.retries);
        c.lm.timeout_seconds = l.value("timeout_seconds", c.lm.timeout_seconds);
        c.lm.api_key = l.value("api_key", c.lm.api_key);
    }
    if (j.contains("judge")) {
        const auto& l = j.at("judge");
        c.judge.url = l.value("url", c.judge.url);
        c.judge.model = l.value("model", c.judge.model);
        if (l.contains("templates")) c.judge.templates = l.at("templates").get<std::map<std::string, std::string>>();
        if (l.contains("rubrics"))
            for (auto& [t, p] : l.at("rubrics").items())
                c.judge.rubric_paths[t] = detail::resolve(base_dir, p.get<std::string>());
        c.judge.temperature = l.value("temperature", c.judge.temperature);
        c.judge.max_new_tokens = l.value("max_new_tokens", c.judge.max_new_tokens);
        c.judge.retries = l.value("retries", c.judge.retries);
        c.judge.max_inflight = l.value("max_inflight", c.judge.max_inflight);
        c.judge.timeout_seconds = l.value("timeout_seconds", c.judge.timeout_seconds);
        c.judge.api_key = l.value("api_key", c.judge.api_key);
    }
    if (j.contains("feature_sets")) c.feature_sets = j.at("feature_sets").get<std::vector<std::string>>();
    c.k = j.value("k", c.k);
    c.seed = j.value("seed", c.seed);
    c.stratify = j.value("stratify", c.stratify);
    c.cache_dir = detail::resolve(base_dir, j.value("cache_dir", c.cache_dir));
    c.out_dir = detail::resolve(base_dir, j.value("out_dir", c.out_dir));
    c.seq_failure_threshold = j.value("seq_failure_threshold", c.seq_failure_threshold);
    c.eval_parallelism = j.value("eval_parallelism", c.eval_parallelism);
    return c;
}

inline RunConfig load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(text::read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return config_from_json(j, fs::path(path).parent_path());
}

// Endpoint URLs and credentials from the environment take precedence.
inline void apply_environment(RunConfig& c) {
    if (const char* v = std::getenv("FLOWSEQ_LM_URL"); v && *v) c.lm.url = v;
    if (const char* v = std::getenv("FLOWSEQ_JUDGE_URL"); v && *v) c.judge.url = v;
    if (const char* v = std::getenv("FLOWSEQ_API_KEY"); v && *v) c.lm.api_key = c.judge.api_key = v;
    if (const char* v = std::getenv("FLOWSEQ_LM_API_KEY"); v && *v) c.lm.api_key = v;
    if (const char* v = std::getenv("FLOWSEQ_JUDGE_API_KEY"); v && *v) c.judge.api_key = v;
}

// ---------------------------------------------------------------------------
// Backends

struct ParsedUrl {
    std::string scheme;
    std::string authority;  // scheme://host[:port] for http, the remainder for mock
    std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
    const auto sep = url.find("://");
    if (sep == std::string::npos) throw ConfigError("endpoint URL lacks a scheme: " + url);
    ParsedUrl u;
    u.scheme = url.substr(0, sep);
    const auto rest = url.substr(sep + 3);
    if (u.scheme == "http" || u.scheme == "https") {
        const auto slash = rest.find('/');
        u.authority = u.scheme + "://" + rest.substr(0, slash);
        if (slash != std::string::npos) u.path = rest.substr(slash);
    } else {
        u.authority = rest;
    }
    return u;
}

inline std::uint64_t parse_seed(const std::string& s, const std::string& url) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("mock endpoint needs a numeric seed: " + url);
}

inline std::unique_ptr<ScoringBackend> make_scoring_backend(const LmSettings& s, const Dataset& dataset) {
    if (s.url.empty()) throw ConfigError("no LM backend configured (--backend-url or FLOWSEQ_LM_URL)");
    const auto u = parse_url(s.url);
    MockOptions opts;
    opts.max_context_tokens = s.max_context_tokens;
    if (u.scheme == "mock") {
        std::vector<std::string_view> texts;
        for (const auto& p : dataset.prompts) texts.push_back(p.topic_text);
        for (const auto& e : dataset.essays) texts.push_back(e.text);
        return std::make_unique<MockBigramModel>(
            MockBigramModel::seeded(parse_seed(u.authority, s.url), vocabulary_from_texts(texts), opts));
    }
    if (u.scheme == "mock-synth")
        return std::make_unique<MockBigramModel>(synth::synthetic_model(parse_seed(u.authority, s.url), {}, opts));
    if (u.scheme == "http" || u.scheme == "https") {
        LmEndpointConfig c;
        c.base_url = u.authority;
        if (!u.path.empty()) c.path = u.path;
        c.model_name = s.model;
        c.max_context_tokens = s.max_context_tokens;
        c.max_inflight = s.max_inflight;
        c.retries = s.retries;
        c.request_timeout = detail::millis(s.timeout_seconds);
        c.api_key = s.api_key;
        return std::make_unique<HttpScoringBackend>(c);
    }
    throw ConfigError("unsupported LM endpoint scheme: " + u.scheme);
}

inline std::unique_ptr<GenerationBackend> make_generation_backend(const JudgeSettings& s, const TraitScale& scale) {
    if (s.url.empty()) throw ConfigError("no judge backend configured (judge.url or FLOWSEQ_JUDGE_URL)");
    const auto u = parse_url(s.url);
    if (u.scheme == "mock") {
        if (u.authority == "hashed") return std::make_unique<MockGenerationBackend>(MockGenerationBackend::hashed(scale));
        if (u.authority == "silent")
            return std::make_unique<MockGenerationBackend>(
                [](const std::string&, std::size_t) { return std::string("I cannot decide on this essay."); },
                "mock-judge/silent");
        throw ConfigError("unknown mock judge: " + s.url);
    }
    if (u.scheme == "http" || u.scheme == "https") {
        ChatEndpointConfig c;
        c.base_url = u.authority;
        if (!u.path.empty()) c.path = u.path;
        c.model_name = s.model;
        c.retries = s.retries;
        c.request_timeout = detail::millis(s.timeout_seconds);
        c.api_key = s.api_key;
        return std::make_unique<HttpChatBackend>(c);
    }
    throw ConfigError("unsupported judge endpoint scheme: " + u.scheme);
}

// ---------------------------------------------------------------------------
// Stage bookkeeping

inline constexpr const char* kDatasetFile = "dataset.json";
inline constexpr const char* kLoadReportFile = "load_report.json";
inline constexpr const char* kSeqFile = "sequentiality.jsonl";
inline constexpr const char* kSentencesFile = "sentences.jsonl";
inline constexpr const char* kSeqFailuresFile = "seq_failures.json";
inline constexpr const char* kFeaturesFile = "features.csv";
inline constexpr const char* kJudgeFile = "judge.csv";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kTableFile = "report_table.txt";
inline constexpr const char* kQwkFile = "qwk.csv";

struct StageOutcome {
    std::string stage;
    bool skipped = false;
    std::vector<std::string> outputs;
    std::string summary;
};

inline fs::path out_path(const RunConfig& c, const std::string& name) { return fs::path(c.out_dir) / name; }

inline std::string file_sha(const fs::path& p) { return text::sha256_hex(text::read_file(p.string())); }

inline fs::path manifest_path(const RunConfig& c, const std::string& stage) {
    return fs::path(c.out_dir) / ".manifest" / (stage + ".json");
}

inline bool up_to_date(const RunConfig& c, const std::string& stage, const std::string& inputs_sha) {
    const auto mp = manifest_path(c, stage);
    if (!fs::exists(mp)) return false;
    try {
        const auto m = json::parse(text::read_file(mp.string()));
        if (m.at("inputs_sha256").get<std::string>() != inputs_sha) return false;
        for (auto& [name, sha] : m.at("outputs").items()) {
            const auto p = out_path(c, name);
            if (!fs::exists(p) || file_sha(p) != sha.get<std::string>()) return false;
        }
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

inline void write_manifest(const RunConfig& c, const std::string& stage, const std::string& inputs_sha,
                           const std::vector<std::string>& outputs) {
    json m{{"stage", stage}, {"inputs_sha256", inputs_sha}, {"outputs", json::object()}};
    for (const auto& o : outputs) m["outputs"][o] = file_sha(out_path(c, o));
    fs::create_directories(manifest_path(c, stage).parent_path());
    text::write_file(manifest_path(c, stage).string(), m.dump(1) + "\n");
}

inline const fs::path& require_upstream(const fs::path& p, const std::string& stage) {
    if (!fs::exists(p))
        throw ConfigError(p.string() + " not found; run `flowseq " + stage + "` first");
    return p;
}

inline std::string hash_parts(const json& parts) { return text::sha256_hex(parts.dump()); }

inline Dataset load_ingested(const RunConfig& c) {
    return load_canonical(require_upstream(out_path(c, kDatasetFile), "ingest").string());
}

// Traits to process: configured ones, else every trait the dataset declares.
inline std::vector<std::string> resolve_traits(const RunConfig& c, const Dataset& d) {
    if (!c.traits.empty()) return c.traits;
    std::set<std::string> all;
    for (const auto& p : d.prompts)
        for (const auto& [t, s] : p.trait_scales) all.insert(t);
    return {all.begin(), all.end()};
}

// ---------------------------------------------------------------------------
// Stages

inline std::string ingest_inputs_sha(const RunConfig& c, const SchemaConfig& schema) {
    json parts{{"stage", "ingest"}, {"dataset", file_sha(c.dataset_path)}, {"schema", file_sha(c.schema_path)}};
    if (schema.prompts_path) parts["prompts"] = file_sha(*schema.prompts_path);
    return hash_parts(parts);
}

inline StageOutcome cmd_ingest(const RunConfig& c) {
    c.validate();
    const auto schema = load_schema(c.schema_path);
    const auto sha = ingest_inputs_sha(c, schema);
    StageOutcome o{"ingest", false, {kDatasetFile, kLoadReportFile}, {}};
    if (up_to_date(c, o.stage, sha)) {
        o.skipped = true;
        return o;
    }
    const auto result = load_dataset(c.dataset_path, schema);
    fs::create_directories(c.out_dir);
    text::write_file(out_path(c, kDatasetFile).string(), serialize(result.dataset));
    text::write_file(out_path(c, kLoadReportFile).string(), result.report.to_json().dump(1) + "\n");
    write_manifest(c, o.stage, sha, o.outputs);
    o.summary = std::to_string(result.dataset.essays.size()) + " essays, " + std::to_string(result.report.dropped) +
                " dropped for missing scores, " + std::to_string(result.report.dropped_empty_text) +
                " dropped for empty text";
    return o;
}

inline std::string seq_inputs_sha(const RunConfig& c, const ScoringBackend& backend) {
    return hash_parts({{"stage", "seq"},
                       {"dataset", file_sha(out_path(c, kDatasetFile))},
                       {"backend", backend.id()},
                       {"max_context_tokens", backend.max_context_tokens()}});
}

// `backend` overrides the configured endpoint (tests inject wrappers here).
inline StageOutcome cmd_seq(const RunConfig& c, const ScoringBackend* backend = nullptr) {
    const auto dataset = load_ingested(c);
    std::unique_ptr<ScoringBackend> owned;
    if (!backend) {
        owned = make_scoring_backend(c.lm, dataset);
        backend = owned.get();
    }
    const auto sha = seq_inputs_sha(c, *backend);
    StageOutcome o{"seq", false, {kSeqFile, kSentencesFile, kSeqFailuresFile}, {}};
    if (up_to_date(c, o.stage, sha)) {
        o.skipped = true;
        return o;
    }
    fs::create_directories(c.cache_dir);
    ResponseCache cache((fs::path(c.cache_dir) / "lm_responses.jsonl").string());
    const ScoringContext ctx{*backend, &cache, std::max<std::size_t>(1, c.lm.max_inflight)};
    const auto run = run_sequentiality(dataset, ctx, std::max<std::size_t>(1, c.lm.essay_parallelism));
    text::write_file(out_path(c, kSeqFile).string(), essays_jsonl(run));
    text::write_file(out_path(c, kSentencesFile).string(), sentences_jsonl(run));
    json failures = json::array();
    for (const auto& f : run.failures)
        failures.push_back({{"essay_id", f.essay_id}, {"sentence_index", f.sentence_index}, {"error", f.message}});
    text::write_file(out_path(c, kSeqFailuresFile).string(), failures.dump(1) + "\n");
    std::size_t truncated = 0;
    for (const auto& e : run.essays) truncated += e.truncated ? 1 : 0;
    o.summary = std::to_string(run.essays.size()) + " essays scored, " + std::to_string(run.failures.size()) +
                " failed, " + std::to_string(truncated) + " truncated, " + std::to_string(cache.hits()) +
                " cache hits";
    const double rate = dataset.essays.empty()
                            ? 0.0
                            : static_cast<double>(run.failures.size()) / static_cast<double>(dataset.essays.size());
    if (rate > c.seq_failure_threshold) {
        std::string ids;
        for (std::size_t i = 0; i < run.failures.size() && i < 10; ++i) ids += (i ? ", " : "") + run.failures[i].essay_id;
        throw StageFailure("seq: " + std::to_string(run.failures.size()) + " essays failed (" + ids +
                           (run.failures.size() > 10 ? ", ..." : "") + "); see " + out_path(c, kSeqFailuresFile).string());
    }
    write_manifest(c, o.stage, sha, o.outputs);
    return o;
}

inline std::string features_inputs_sha(const RunConfig& c) {
    return hash_parts({{"stage", "features"},
                       {"dataset", file_sha(out_path(c, kDatasetFile))},
                       {"stopwords", wordlists::kStopwordsVersion},
                       {"dale_chall", text::sha256_hex(wordlists::kDaleChall)},
                       {"long_word_min_letters", FeatureConfig{}.long_word_min_letters}});
}

inline StageOutcome cmd_features(const RunConfig& c) {
    const auto dataset = load_ingested(c);
    const auto sha = features_inputs_sha(c);
    StageOutcome o{"features", false, {kFeaturesFile}, {}};
    if (up_to_date(c, o.stage, sha)) {
        o.skipped = true;
        return o;
    }
    std::vector<FeatureVector> rows(dataset.essays.size());
    parallel_for(rows.size(), hardware_threads(), [&](std::size_t i) { rows[i] = extract_features(dataset.essays[i].text); });
    std::string csv = features_csv_header();
    for (std::size_t i = 0; i < rows.size(); ++i) csv += features_csv_row(dataset.essays[i].essay_id, rows[i]);
    text::write_file(out_path(c, kFeaturesFile).string(), csv);
    write_manifest(c, o.stage, sha, o.outputs);
    o.summary = std::to_string(rows.size()) + " feature rows";
    return o;
}

inline std::string template_for(const JudgeSettings& s, const std::string& trait) {
    if (auto it = s.templates.find(trait); it != s.templates.end()) return it->second;
    const auto lower = text::to_lower(trait);
    if (lower == "cohesion" || lower == "organization") return lower;
    throw ConfigError("no judge template configured for trait " + trait + " (judge.templates)");
}

inline std::optional<std::string> rubric_for(const JudgeSettings& s, const std::string& trait) {
    if (auto it = s.rubric_paths.find(trait); it != s.rubric_paths.end()) return text::read_file(it->second);
    return std::nullopt;
}

inline StageOutcome cmd_judge(const RunConfig& c, const GenerationBackend* backend = nullptr) {
    const auto dataset = load_ingested(c);
    const auto traits = resolve_traits(c, dataset);
    json parts{{"stage", "judge"},
               {"dataset", file_sha(out_path(c, kDatasetFile))},
               {"temperature", c.judge.temperature},
               {"max_new_tokens", c.judge.max_new_tokens},
               {"retries", c.judge.retries}};
    struct Plan {
        std::string trait, tpl;
        std::optional<std::string> rubric;
        std::unique_ptr<GenerationBackend> owned;
        const GenerationBackend* backend;
    };
    std::vector<Plan> plans;
    for (const auto& t : traits) {
        Plan p{t, template_for(c.judge, t), rubric_for(c.judge, t), nullptr, backend};
        if (!backend) {
            const PromptSpec* spec = nullptr;
            for (const auto& pr : dataset.prompts)
                if (pr.trait_scales.contains(t)) spec = &pr;
            if (!spec) throw ConfigError("no prompt declares trait " + t);
            p.owned = make_generation_backend(c.judge, spec->scale(t));
            p.backend = p.owned.get();
        }
        parts["traits"].push_back({{"trait", t},
                                   {"template", p.tpl},
                                   {"rubric", p.rubric ? text::sha256_hex(*p.rubric) : "builtin"},
                                   {"backend", p.backend->id()}});
        plans.push_back(std::move(p));
    }
    const auto sha = hash_parts(parts);
    StageOutcome o{"judge", false, {kJudgeFile}, {}};
    if (up_to_date(c, o.stage, sha)) {
        o.skipped = true;
        return o;
    }
    fs::create_directories(c.cache_dir);
    GenerationCache cache((fs::path(c.cache_dir) / "judge_generations.jsonl").string());
    std::vector<JudgeResult> all;
    std::size_t unjudged = 0;
    for (const auto& p : plans) {
        JudgeConfig cfg;
        cfg.temperature = c.judge.temperature;
        cfg.max_new_tokens = c.judge.max_new_tokens;
        cfg.retries = c.judge.retries;
        auto results = judge_dataset(dataset, p.trait, p.tpl, cfg, *p.backend, &cache, c.judge.max_inflight,
                                     p.rubric ? std::optional<std::string_view>(*p.rubric) : std::nullopt);
        for (auto& r : results) {
            unjudged += r.judged_score ? 0 : 1;
            all.push_back(std::move(r));
        }
    }
    text::write_file(out_path(c, kJudgeFile).string(), judge_csv(all));
    write_manifest(c, o.stage, sha, o.outputs);
    o.summary = std::to_string(all.size()) + " judgements, " + std::to_string(unjudged) + " unjudged, " +
                std::to_string(cache.hits()) + " cache hits";
    return o;
}

struct EvalNeeds {
    bool seq = false, features = false, judge = false;
};

inline EvalNeeds eval_needs(const std::vector<std::string>& feature_sets) {
    EvalNeeds n;
    for (const auto& name : feature_sets)
        for (const auto& col : feature_set(name).columns) {
            if (col == kNllTopic || col == kNllContext || col == kDelta) n.seq = true;
            else if (col == kLlmScore) n.judge = true;
            else n.features = true;
        }
    return n;
}

// Judge rows for one trait.
inline std::map<std::string, std::optional<double>> judged_for_trait(const std::string& path, const std::string& trait) {
    const auto rows = text::parse_delimited(text::read_file(path), ',');
    std::map<std::string, std::optional<double>> out;
    if (rows.empty()) return out;
    const auto& h = rows.front();
    auto col = [&](const char* name) {
        auto it = std::find(h.begin(), h.end(), name);
        if (it == h.end()) throw SchemaError(name, "judge file lacks column " + std::string(name));
        return static_cast<std::size_t>(it - h.begin());
    };
    const auto id = col("essay_id"), tr = col("trait"), sc = col("judged_score");
    for (std::size_t r = 1; r < rows.size(); ++r)
        if (rows[r].at(tr) == trait) out[rows[r].at(id)] = rows[r].at(sc).empty() ? std::nullopt : parse_number(rows[r].at(sc));
    return out;
}

inline StageOutcome cmd_evaluate(const RunConfig& c) {
    for (const auto& f : c.feature_sets) feature_set(f);
    const auto dataset = load_ingested(c);
    const auto needs = eval_needs(c.feature_sets);
    json parts{{"stage", "evaluate"},
               {"dataset", file_sha(out_path(c, kDatasetFile))},
               {"feature_sets", c.feature_sets},
               {"k", c.k},
               {"seed", c.seed},
               {"stratify", c.stratify},
               {"traits", c.traits}};
    if (needs.seq) parts["seq"] = file_sha(require_upstream(out_path(c, kSeqFile), "seq"));
    if (needs.features) parts["features"] = file_sha(require_upstream(out_path(c, kFeaturesFile), "features"));
    if (needs.judge) parts["judge"] = file_sha(require_upstream(out_path(c, kJudgeFile), "judge"));
    const auto sha = hash_parts(parts);
    StageOutcome o{"evaluate", false, {kReportFile, kTableFile, kQwkFile}, {}};
    if (up_to_date(c, o.stage, sha)) {
        o.skipped = true;
        return o;
    }
    std::optional<std::vector<EssaySequentiality>> seq;
    if (needs.seq) seq = read_essay_sequentiality(out_path(c, kSeqFile).string());
    std::optional<std::vector<std::pair<std::string, FeatureVector>>> feats;
    if (needs.features) feats = read_features_csv(out_path(c, kFeaturesFile).string());

    std::vector<FeatureSetSpec> specs;
    for (const auto& f : c.feature_sets) specs.push_back(feature_set(f));
    EvalConfig cfg;
    cfg.cv.k = c.k;
    cfg.cv.seed = c.seed;
    cfg.cv.stratify = c.stratify;
    cfg.variant_parallelism = std::max<std::size_t>(1, c.eval_parallelism);

    std::vector<EvalReport> reports;
    for (const auto& trait : resolve_traits(c, dataset)) {
        std::optional<std::map<std::string, std::optional<double>>> judged;
        if (needs.judge) judged = judged_for_trait(out_path(c, kJudgeFile).string(), trait);
        const auto table = build_feature_table(dataset, trait, seq ? &*seq : nullptr, feats ? &*feats : nullptr,
                                               judged ? &*judged : nullptr);
        reports.push_back(compare_variants(table, specs, cfg));
    }
    json all{{"reports", json::array()}};
    for (const auto& r : reports) all["reports"].push_back(to_json(r));
    text::write_file(out_path(c, kReportFile).string(), all.dump(1) + "\n");
    text::write_file(out_path(c, kTableFile).string(), render_aic_table(reports));
    text::write_file(out_path(c, kQwkFile).string(), qwk_csv(reports));
    write_manifest(c, o.stage, sha, o.outputs);
    std::size_t failed = 0;
    for (const auto& r : reports)
        for (const auto& v : r.variants) failed += v.ok ? 0 : 1;
    o.summary = std::to_string(reports.size()) + " trait reports, " + std::to_string(failed) + " failed variants";
    return o;
}

// ---------------------------------------------------------------------------
// Dry run

// Describes what each stage would read and write without touching anything.
// The dataset header is checked against the schema so a wrong column mapping
// surfaces before any scoring.
inline std::string plan(const RunConfig& c, const std::vector<std::string>& stages) {
    std::ostringstream out;
    out << "config\n";
    out << "  dataset: " << c.dataset_path << "\n  schema: " << c.schema_path << "\n";
    out << "  lm: " << (c.lm.url.empty() ? "(unset)" : c.lm.url) << "\n";
    out << "  judge: " << (c.judge.url.empty() ? "(unset)" : c.judge.url) << "\n";
    out << "  k: " << c.k << "  seed: " << c.seed << "  stratified: " << (c.stratify ? "yes" : "no") << "\n";
    out << "  out_dir: " << c.out_dir << "\n  cache_dir: " << c.cache_dir << "\n";
    c.validate();
    const auto schema = load_schema(c.schema_path);
    const auto data = text::read_file(c.dataset_path);
    const auto header_end = data.find('\n');
    const auto header_rows =
        text::parse_delimited(data.substr(0, header_end), schema.delimiter.value_or(text::sniff_delimiter(data)));
    if (header_rows.empty()) throw SchemaError(schema.text_column, "dataset file is empty: " + c.dataset_path);
    const auto& header = header_rows.front();
    auto need = [&](const std::string& col) {
        if (std::find(header.begin(), header.end(), col) == header.end())
            throw SchemaError(col, "dataset " + c.dataset_path + " lacks mapped column '" + col + "'");
    };
    need(schema.essay_id_column);
    need(schema.prompt_id_column);
    need(schema.text_column);
    for (const auto& [t, col] : schema.trait_columns) need(col);
    std::vector<std::string> traits = c.traits;
    if (traits.empty())
        for (const auto& [t, col] : schema.trait_columns) traits.push_back(t);
    for (const auto& t : traits)
        if (!schema.trait_columns.contains(t)) throw ConfigError("trait " + t + " is not mapped by the schema");
    out << "  schema check: ok (" << header.size() << " columns)\n";

    const auto needs = eval_needs(c.feature_sets);
    auto status = [&](const std::string& stage, const std::vector<std::string>& outputs) {
        bool all = true;
        for (const auto& o : outputs) all = all && fs::exists(out_path(c, o));
        return all && fs::exists(manifest_path(c, stage)) ? "outputs present (rerun skips if inputs unchanged)"
                                                         : "will run";
    };
    for (const auto& s : stages) {
        out << "stage " << s << ": ";
        if (s == "ingest") {
            out << status(s, {kDatasetFile, kLoadReportFile}) << "\n    writes " << kDatasetFile << ", "
                << kLoadReportFile << "\n";
        } else if (s == "seq") {
            out << status(s, {kSeqFile, kSentencesFile}) << "\n    reads " << kDatasetFile << "; backend "
                << c.lm.url << "; cache " << (fs::path(c.cache_dir) / "lm_responses.jsonl").string() << "\n    writes "
                << kSeqFile << ", " << kSentencesFile << ", " << kSeqFailuresFile << "\n";
        } else if (s == "features") {
            out << status(s, {kFeaturesFile}) << "\n    reads " << kDatasetFile << "\n    writes " << kFeaturesFile << "\n";
        } else if (s == "judge") {
            out << status(s, {kJudgeFile}) << "\n    reads " << kDatasetFile << "; backend " << c.judge.url << "\n";
            for (const auto& t : traits) out << "    trait " << t << ": template " << template_for(c.judge, t) << "\n";
            out << "    writes " << kJudgeFile << "\n";
        } else if (s == "evaluate") {
            out << status(s, {kReportFile, kTableFile, kQwkFile}) << "\n    reads " << kDatasetFile
                << (needs.seq ? std::string(", ") + kSeqFile : "") << (needs.features ? std::string(", ") + kFeaturesFile : "")
                << (needs.judge ? std::string(", ") + kJudgeFile : "") << "\n    feature sets:";
            for (const auto& f : c.feature_sets) out << " " << f;
            out << "\n    writes " << kReportFile << ", " << kTableFile << " (rows Seq, Topic, Context, Both; columns";
            for (const auto& t : traits) out << " " << t;
            out << "), " << kQwkFile << " (one row per trait and feature set)\n";
        } else {
            throw ConfigError("unknown stage: " + s);
        }
    }
    return out.str();
}

inline const std::vector<std::string>& all_stages() {
    static const std::vector<std::string> s = {"ingest", "seq", "features", "judge", "evaluate"};
    return s;
}

// Stages needed for the configured feature sets, in order.
inline std::vector<std::string> stages_for(const RunConfig& c) {
    const auto n = eval_needs(c.feature_sets);
    std::vector<std::string> s{"ingest"};
    if (n.seq) s.push_back("seq");
    if (n.features) s.push_back("features");
    if (n.judge) s.push_back("judge");
    s.push_back("evaluate");
    return s;
}

inline std::vector<StageOutcome> run_all(const RunConfig& c) {
    std::vector<StageOutcome> out;
    for (const auto& s : stages_for(c)) {
        if (s == "ingest") out.push_back(cmd_ingest(c));
        else if (s == "seq") out.push_back(cmd_seq(c));
        else if (s == "features") out.push_back(cmd_features(c));
        else if (s == "judge") out.push_back(cmd_judge(c));
        else out.push_back(cmd_evaluate(c));
    }
    return out;
}

}  // namespace flowseq::pipeline
