#pragma once

// Zero-shot trait scoring: render a rubric prompt, ask a chat endpoint for a
// generation, and parse an ordinal score out of it.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "flowseq/corpus.hpp"
#include "flowseq/data/prompt_templates.hpp"
#include "flowseq/errors.hpp"
#include "flowseq/lm_scoring.hpp"
#include "flowseq/parallel.hpp"
#include "flowseq/text.hpp"

namespace flowseq {

// ---------------------------------------------------------------------------
// Prompts

struct RubricPrompt {
    std::string template_id;
    std::string rubric_text;
    std::string topic_text;
    std::string essay_text;
    std::string rendered;
};

inline std::string_view prompt_template(const std::string& template_id) {
    if (template_id == "cohesion") return prompts::kCohesionTemplate;
    if (template_id == "organization") return prompts::kOrganizationTemplate;
    throw ConfigError("unknown prompt template: " + template_id);
}

inline std::string_view builtin_rubric(const std::string& template_id) {
    if (template_id == "cohesion") return prompts::kCohesionRubric;
    if (template_id == "organization") return prompts::kOrganizationRubric;
    throw ConfigError("no bundled rubric for template: " + template_id);
}

// Single left-to-right pass, so placeholder-like text inside the substituted
// values is never expanded again.
inline RubricPrompt render_prompt(const std::string& template_id, std::string_view rubric, std::string_view topic,
                                  std::string_view essay) {
    const auto tpl = prompt_template(template_id);
    if (text::is_blank(rubric)) throw PreconditionError("rubric is empty");
    if (text::is_blank(topic)) throw PreconditionError("topic is empty");
    if (text::is_blank(essay)) throw PreconditionError("essay is empty");
    RubricPrompt p{template_id, std::string(rubric), std::string(topic), std::string(essay), {}};
    const std::pair<std::string_view, std::string_view> slots[] = {
        {"{rubric}", rubric}, {"{topic}", topic}, {"{essay}", essay}};
    std::size_t i = 0;
    while (i < tpl.size()) {
        bool replaced = false;
        if (tpl[i] == '{')
            for (const auto& [name, value] : slots)
                if (tpl.substr(i, name.size()) == name) {
                    p.rendered += value;
                    i += name.size();
                    replaced = true;
                    break;
                }
        if (!replaced) p.rendered += tpl[i++];
    }
    return p;
}

// ---------------------------------------------------------------------------
// Score parsing

namespace detail {

struct NumberMatch {
    double value;
    std::size_t pos;
};

// Standalone decimal numbers: not glued to letters, digits or a leading '.'.
inline std::vector<NumberMatch> standalone_numbers(std::string_view s) {
    std::vector<NumberMatch> out;
    auto word_char = [](char c) { return text::is_ascii_alpha(c) || text::is_ascii_digit(c) || c == '_'; };
    std::size_t i = 0;
    while (i < s.size()) {
        if (!text::is_ascii_digit(s[i]) || (i > 0 && (word_char(s[i - 1]) || s[i - 1] == '.'))) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < s.size() && text::is_ascii_digit(s[j])) ++j;
        if (j + 1 < s.size() && s[j] == '.' && text::is_ascii_digit(s[j + 1])) {
            ++j;
            while (j < s.size() && text::is_ascii_digit(s[j])) ++j;
        }
        if (j < s.size() && (word_char(s[j]) || (s[j] == '.' && j + 1 < s.size() && text::is_ascii_digit(s[j + 1])))) {
            i = j;
            continue;
        }
        if (auto v = parse_number(s.substr(i, j - i))) out.push_back({*v, i});
        i = j;
    }
    return out;
}

inline bool follows_score_word(std::string_view s, std::size_t pos) {
    constexpr std::size_t kWindow = 20;
    const std::size_t start = pos > kWindow ? pos - kWindow : 0;
    const auto window = text::to_lower(s.substr(start, pos - start));
    return window.find("score") != std::string::npos;
}

}  // namespace detail

// First in-scale standalone number (integer or half point), preferring one
// that closely follows the word "score".
inline double parse_score(std::string_view generation, const TraitScale& scale) {
    std::optional<double> first;
    for (const auto& m : detail::standalone_numbers(generation)) {
        if (std::abs(m.value * 2.0 - std::round(m.value * 2.0)) > 1e-9) continue;
        const auto idx = scale.index_of(m.value);
        if (!idx) continue;
        const double level = scale.levels[*idx];
        if (detail::follows_score_word(generation, m.pos)) return level;
        if (!first) first = level;
    }
    if (first) return *first;
    throw ParseError("no in-scale score in generation");
}

// ---------------------------------------------------------------------------
// Generation backends

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;
    virtual std::string id() const = 0;
    virtual std::string generate(const std::string& prompt, double temperature, std::size_t max_new_tokens) const = 0;
};

// Answers from a caller-supplied function of (prompt, call number).
class MockGenerationBackend final : public GenerationBackend {
public:
    using Fn = std::function<std::string(const std::string& prompt, std::size_t call)>;

    explicit MockGenerationBackend(Fn fn, std::string id = "mock-judge") : fn_(std::move(fn)), id_(std::move(id)) {}
    MockGenerationBackend(MockGenerationBackend&& o) noexcept
        : fn_(std::move(o.fn_)), id_(std::move(o.id_)), calls_(o.calls_.load()) {}

    // Replies with `responses` in order, repeating the last one.
    static MockGenerationBackend scripted(std::vector<std::string> responses) {
        if (responses.empty()) throw PreconditionError("scripted mock needs at least one response");
        return MockGenerationBackend([r = std::move(responses)](const std::string&, std::size_t call) {
            return r[std::min(call, r.size() - 1)];
        });
    }

    // Deterministic stand-in for a judge: the reply depends only on a hash of
    // the prompt, so reruns and caching are reproducible.
    static MockGenerationBackend hashed(const TraitScale& scale) {
        return MockGenerationBackend(
            [scale](const std::string& prompt, std::size_t) {
                const auto h = text::sha256_hex(prompt);
                const auto k = std::stoull(h.substr(0, 8), nullptr, 16) % scale.levels.size();
                char buf[64];
                std::snprintf(buf, sizeof buf, "Score: %g", scale.levels[k]);
                return std::string(buf);
            },
            "mock-judge/hashed");
    }

    std::string id() const override { return id_; }

    std::string generate(const std::string& prompt, double, std::size_t) const override {
        return fn_(prompt, calls_++);
    }

    std::size_t calls() const noexcept { return calls_.load(); }

private:
    Fn fn_;
    std::string id_;
    mutable std::atomic<std::size_t> calls_{0};
};

struct ChatEndpointConfig {
    std::string base_url;
    std::string path = "/v1/chat/completions";
    std::string model_name;
    std::chrono::milliseconds request_timeout{120000};
    std::size_t retries = 2;  // transport-level retries per request
    std::string api_key;

    void validate() const {
        if (base_url.empty()) throw ConfigError("judge endpoint base_url is empty");
    }
};

inline std::string parse_chat_response(const json& body) {
    if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty())
        throw ProtocolError("chat response has no choices");
    const auto& c = body["choices"][0];
    if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string())
        return c["message"]["content"].get<std::string>();
    if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
    throw ProtocolError("chat response choice has no text");
}

// One user message carrying the rendered template; no system message.
class HttpChatBackend final : public GenerationBackend {
public:
    explicit HttpChatBackend(ChatEndpointConfig config) : config_(std::move(config)) { config_.validate(); }

    std::string id() const override { return "http:" + config_.base_url + config_.path + "#" + config_.model_name; }

    std::string generate(const std::string& prompt, double temperature, std::size_t max_new_tokens) const override {
        const json request{{"model", config_.model_name},
                           {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                           {"temperature", temperature},
                           {"max_tokens", max_new_tokens}};
        const auto body = request.dump();
        for (std::size_t attempt = 0;; ++attempt) {
            try {
                return parse_chat_response(detail::post_json(config_.base_url, config_.path, config_.api_key,
                                                             config_.request_timeout, body, "judge endpoint"));
            } catch (const TransportError&) {
                if (attempt >= config_.retries) throw;
                std::this_thread::sleep_for(std::chrono::milliseconds(200) * (1 << attempt));
            }
        }
    }

private:
    ChatEndpointConfig config_;
};

// JSONL cache of generations keyed by (backend id, sha256(prompt), temperature).
class GenerationCache {
public:
    GenerationCache() = default;

    explicit GenerationCache(std::string path) : path_(std::move(path)) {
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            if (text::is_blank(line)) continue;
            try {
                const auto j = json::parse(line);
                entries_[key(j.at("backend").get<std::string>(), j.at("prompt_sha256").get<std::string>(),
                             j.at("temperature").get<double>())] = j.at("generation").get<std::string>();
            } catch (const json::exception&) {
                continue;  // torn final line
            }
        }
    }

    std::optional<std::string> find(const std::string& backend, const std::string& prompt, double temperature) const {
        std::lock_guard lock(mu_);
        auto it = entries_.find(key(backend, text::sha256_hex(prompt), temperature));
        if (it == entries_.end()) return std::nullopt;
        ++hits_;
        return it->second;
    }

    void store(const std::string& backend, const std::string& prompt, double temperature, const std::string& gen) {
        const auto h = text::sha256_hex(prompt);
        std::lock_guard lock(mu_);
        if (!entries_.emplace(key(backend, h, temperature), gen).second || path_.empty()) return;
        std::ofstream out(path_, std::ios::app);
        out << json{{"backend", backend}, {"prompt_sha256", h}, {"temperature", temperature}, {"generation", gen}}
                   .dump()
            << '\n';
    }

    std::size_t hits() const {
        std::lock_guard lock(mu_);
        return hits_;
    }

private:
    static std::string key(const std::string& b, const std::string& h, double t) {
        return b + '\x1f' + h + '\x1f' + json(t).dump();
    }

    std::string path_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, std::string> entries_;
    mutable std::size_t hits_ = 0;
};

// ---------------------------------------------------------------------------
// Judging

inline constexpr std::string_view kClarification = "\n\nRespond with only the numeric score.";

struct JudgeConfig {
    double temperature = 0.0001;
    std::size_t max_new_tokens = 256;
    std::size_t retries = 2;  // extra attempts after a parse failure
    TraitScale scale;

    void validate() const {
        if (!(temperature > 0)) throw ConfigError("judge temperature must be positive");
        scale.validate();
    }
};

struct JudgeResult {
    std::string essay_id;
    std::string trait;
    std::optional<double> judged_score;  // empty when unjudged
    std::size_t attempts = 0;
    std::string raw_generation;  // last generation received
    std::string error;
};

inline JudgeResult judge_essay(const EssayRecord& essay, const PromptSpec& prompt, const std::string& template_id,
                               const JudgeConfig& config, const GenerationBackend& backend,
                               GenerationCache* cache = nullptr, std::optional<std::string_view> rubric = {}) {
    config.validate();
    JudgeResult r{essay.essay_id, config.scale.trait, std::nullopt, 0, {}, {}};
    const auto base = render_prompt(template_id, rubric ? *rubric : builtin_rubric(template_id), prompt.topic_text,
                                    essay.text)
                          .rendered;
    const auto backend_id = backend.id();
    for (std::size_t attempt = 0; attempt <= config.retries; ++attempt) {
        const std::string text = attempt == 0 ? base : base + std::string(kClarification);
        ++r.attempts;
        try {
            std::optional<std::string> gen;
            if (cache) gen = cache->find(backend_id, text, config.temperature);
            if (!gen) {
                gen = backend.generate(text, config.temperature, config.max_new_tokens);
                if (cache) cache->store(backend_id, text, config.temperature, *gen);
            }
            r.raw_generation = *gen;
            r.judged_score = parse_score(*gen, config.scale);
            r.error.clear();
            return r;
        } catch (const ParseError& e) {
            r.error = e.what();
        } catch (const TransportError& e) {
            r.error = e.what();
        } catch (const ProtocolError& e) {
            r.error = e.what();
        }
    }
    return r;
}

inline std::vector<JudgeResult> judge_dataset(const Dataset& dataset, const std::string& trait,
                                              const std::string& template_id, const JudgeConfig& base_config,
                                              const GenerationBackend& backend, GenerationCache* cache = nullptr,
                                              std::size_t max_inflight = 1,
                                              std::optional<std::string_view> rubric = {}) {
    std::vector<const EssayRecord*> essays;
    for (const auto& e : dataset.essays)
        if (dataset.prompt(e.prompt_id).trait_scales.contains(trait)) essays.push_back(&e);
    std::vector<JudgeResult> out(essays.size());
    parallel_for(essays.size(), max_inflight, [&](std::size_t i) {
        const auto& p = dataset.prompt(essays[i]->prompt_id);
        JudgeConfig cfg = base_config;
        cfg.scale = p.scale(trait);
        out[i] = judge_essay(*essays[i], p, template_id, cfg, backend, cache, rubric);
    });
    return out;
}

inline std::string judge_csv(const std::vector<JudgeResult>& results) {
    std::string out = text::csv_row({"essay_id", "trait", "judged_score", "attempts", "raw_generation_sha256"});
    for (const auto& r : results) {
        std::string score;
        if (r.judged_score) score = json(*r.judged_score).dump();
        out += text::csv_row({r.essay_id, r.trait, score, std::to_string(r.attempts),
                              r.raw_generation.empty() ? "" : text::sha256_hex(r.raw_generation)});
    }
    return out;
}

// essay_id -> judged score (empty when unjudged).
inline std::map<std::string, std::optional<double>> read_judge_csv(const std::string& path) {
    const auto rows = text::parse_delimited(text::read_file(path), ',');
    if (rows.empty()) throw SchemaError("essay_id", "judge file is empty: " + path);
    const auto& h = rows.front();
    auto col = [&](const std::string& name) {
        auto it = std::find(h.begin(), h.end(), name);
        if (it == h.end()) throw SchemaError(name, "judge file lacks column " + name);
        return static_cast<std::size_t>(it - h.begin());
    };
    const auto id = col("essay_id");
    const auto sc = col("judged_score");
    std::map<std::string, std::optional<double>> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& v = rows[r].at(sc);
        out[rows[r].at(id)] = v.empty() ? std::nullopt : parse_number(v);
    }
    return out;
}

}  // namespace flowseq
