#pragma once

// Per-sentence topic-conditioned and context-conditioned NLL, their
// difference (sequentiality), and essay-level means.
//
//   NLL_T(s_i) = NLL(s_i | topic)
//   NLL_C(s_i) = NLL(s_i | topic, s_0 .. s_{i-1})
//   delta(s_i) = NLL_T(s_i) - NLL_C(s_i)
//
// Sentence 0 has no preceding context, so its two conditionings coincide and
// delta is exactly zero.

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowseq/corpus.hpp"
#include "flowseq/errors.hpp"
#include "flowseq/lm_scoring.hpp"
#include "flowseq/parallel.hpp"

namespace flowseq {

struct SentenceSequentiality {
    std::string essay_id;
    std::size_t sentence_index = 0;
    double nll_topic = 0.0;
    double nll_context = 0.0;
    double delta = 0.0;
    std::size_t token_count = 0;
    // Oldest preceding sentences dropped to fit the backend's context window.
    std::size_t truncated_sentences = 0;

    bool operator==(const SentenceSequentiality&) const = default;
};

struct EssaySequentiality {
    std::string essay_id;
    double mean_nll_topic = 0.0;
    double mean_nll_context = 0.0;
    double mean_delta = 0.0;
    std::size_t sentence_count = 0;
    bool truncated = false;

    bool operator==(const EssaySequentiality&) const = default;
};

struct ScoringContext {
    const ScoringBackend& backend;
    ResponseCache* cache = nullptr;
    // Concurrent requests allowed within one essay.
    std::size_t max_inflight = 1;
};

// Topic followed by sentences first..i-1 of the essay, as they appear in the text.
inline std::string context_conditioning(const EssayRecord& essay, std::size_t i, std::string_view topic,
                                        std::size_t first = 0) {
    if (i == 0 || first >= i) return std::string(topic);
    const std::size_t b = essay.sentences[first].start;
    const std::size_t e = essay.sentences[i - 1].end;
    return join_for_scoring(topic, std::string_view(essay.text).substr(b, e - b)).text;
}

namespace detail {

inline void check_index(const EssayRecord& essay, std::size_t i) {
    if (i >= essay.sentences.size())
        throw PreconditionError("sentence index " + std::to_string(i) + " out of range for essay " +
                                essay.essay_id);
}

struct ContextScore {
    ScoredText scored;
    std::size_t truncated = 0;
};

// Scores s_i under the full history, dropping the oldest sentences (never the
// topic) while the request overflows the context window.
inline ContextScore score_with_history(const EssayRecord& essay, std::size_t i, std::string_view topic,
                                       const ScoringContext& ctx) {
    for (std::size_t first = 0;; ++first) {
        try {
            return {score_target(context_conditioning(essay, i, topic, first), essay.sentence(i),
                                 ctx.backend, ctx.cache),
                    std::min(first, i)};
        } catch (const ContextOverflowError&) {
            if (first >= i) throw;
        }
    }
}

}  // namespace detail

inline double sentence_nll_topic(const EssayRecord& essay, std::size_t i, std::string_view topic,
                                 const ScoringContext& ctx) {
    detail::check_index(essay, i);
    try {
        return score_target(topic, essay.sentence(i), ctx.backend, ctx.cache).nll;
    } catch (const Error& e) {
        throw SentenceScoringError(essay.essay_id, i, e.what());
    }
}

inline double sentence_nll_context(const EssayRecord& essay, std::size_t i, std::string_view topic,
                                   const ScoringContext& ctx) {
    detail::check_index(essay, i);
    try {
        return detail::score_with_history(essay, i, topic, ctx).scored.nll;
    } catch (const Error& e) {
        throw SentenceScoringError(essay.essay_id, i, e.what());
    }
}

inline SentenceSequentiality score_sentence(const EssayRecord& essay, std::size_t i, std::string_view topic,
                                            const ScoringContext& ctx) {
    detail::check_index(essay, i);
    try {
        const auto t = score_target(topic, essay.sentence(i), ctx.backend, ctx.cache);
        const auto c = detail::score_with_history(essay, i, topic, ctx);
        SentenceSequentiality s;
        s.essay_id = essay.essay_id;
        s.sentence_index = i;
        s.nll_topic = t.nll;
        s.nll_context = c.scored.nll;
        s.delta = s.nll_topic - s.nll_context;
        s.token_count = c.scored.tokens.size();
        s.truncated_sentences = c.truncated;
        return s;
    } catch (const Error& e) {
        throw SentenceScoringError(essay.essay_id, i, e.what());
    }
}

inline EssaySequentiality aggregate(const std::string& essay_id,
                                    const std::vector<SentenceSequentiality>& sentences) {
    if (sentences.empty()) throw PreconditionError("essay " + essay_id + " has no sentences");
    EssaySequentiality agg;
    agg.essay_id = essay_id;
    double t = 0, c = 0, d = 0;
    for (const auto& s : sentences) {
        t += s.nll_topic;
        c += s.nll_context;
        d += s.delta;
        agg.truncated = agg.truncated || s.truncated_sentences > 0;
    }
    const double n = static_cast<double>(sentences.size());
    agg.mean_nll_topic = t / n;
    agg.mean_nll_context = c / n;
    agg.mean_delta = d / n;
    agg.sentence_count = sentences.size();
    return agg;
}

// Any failing sentence fails the whole essay (SentenceScoringError with the
// lowest failing index); no partial aggregate is produced.
inline std::pair<std::vector<SentenceSequentiality>, EssaySequentiality> essay_sequentiality(
    const EssayRecord& essay, std::string_view topic, const ScoringContext& ctx) {
    if (essay.sentences.empty())
        throw PreconditionError("essay " + essay.essay_id + " has no sentences");
    std::vector<SentenceSequentiality> out(essay.sentences.size());
    parallel_for(out.size(), ctx.max_inflight,
                 [&](std::size_t i) { out[i] = score_sentence(essay, i, topic, ctx); });
    auto agg = aggregate(essay.essay_id, out);
    return {std::move(out), std::move(agg)};
}

// ---------------------------------------------------------------------------
// Corpus runs

struct FailedEssay {
    std::string essay_id;
    std::size_t sentence_index = 0;
    std::string message;
};

struct SequentialityRun {
    std::string backend_id;
    std::vector<EssaySequentiality> essays;
    std::vector<SentenceSequentiality> sentences;
    std::vector<FailedEssay> failures;
};

// Scores every essay; essays are processed concurrently (up to
// `essay_parallelism`) and joined back in dataset order.
inline SequentialityRun run_sequentiality(const Dataset& dataset, const ScoringContext& ctx,
                                          std::size_t essay_parallelism = 1) {
    struct Slot {
        std::vector<SentenceSequentiality> sentences;
        std::optional<EssaySequentiality> aggregate;
        std::optional<FailedEssay> failure;
    };
    std::vector<Slot> slots(dataset.essays.size());
    const ScoringContext inner{ctx.backend, ctx.cache, 1};
    parallel_for(slots.size(), essay_parallelism, [&](std::size_t k) {
        const auto& e = dataset.essays[k];
        try {
            auto [sents, agg] = essay_sequentiality(e, dataset.prompt(e.prompt_id).topic_text,
                                                    essay_parallelism > 1 ? inner : ctx);
            slots[k].sentences = std::move(sents);
            slots[k].aggregate = std::move(agg);
        } catch (const SentenceScoringError& err) {
            slots[k].failure = FailedEssay{err.essay_id(), err.sentence_index(), err.what()};
        }
    });
    SequentialityRun run;
    run.backend_id = ctx.backend.id();
    for (auto& s : slots) {
        if (s.failure) {
            run.failures.push_back(std::move(*s.failure));
            continue;
        }
        run.essays.push_back(std::move(*s.aggregate));
        for (auto& x : s.sentences) run.sentences.push_back(std::move(x));
    }
    return run;
}

// ---------------------------------------------------------------------------
// JSONL forms

inline json to_json(const EssaySequentiality& e, const std::string& backend_id) {
    return json{{"essay_id", e.essay_id},         {"mean_nll_topic", e.mean_nll_topic},
                {"mean_nll_context", e.mean_nll_context}, {"mean_delta", e.mean_delta},
                {"sentence_count", e.sentence_count},     {"truncated", e.truncated},
                {"backend", backend_id}};
}

inline json to_json(const SentenceSequentiality& s, const std::string& backend_id) {
    return json{{"essay_id", s.essay_id},       {"sentence_index", s.sentence_index},
                {"nll_topic", s.nll_topic},     {"nll_context", s.nll_context},
                {"delta", s.delta},             {"token_count", s.token_count},
                {"truncated_sentences", s.truncated_sentences}, {"backend", backend_id}};
}

inline EssaySequentiality essay_sequentiality_from_json(const json& j) {
    EssaySequentiality e;
    e.essay_id = j.at("essay_id").get<std::string>();
    e.mean_nll_topic = j.at("mean_nll_topic").get<double>();
    e.mean_nll_context = j.at("mean_nll_context").get<double>();
    e.mean_delta = j.at("mean_delta").get<double>();
    e.sentence_count = j.at("sentence_count").get<std::size_t>();
    e.truncated = j.value("truncated", false);
    return e;
}

inline SentenceSequentiality sentence_sequentiality_from_json(const json& j) {
    SentenceSequentiality s;
    s.essay_id = j.at("essay_id").get<std::string>();
    s.sentence_index = j.at("sentence_index").get<std::size_t>();
    s.nll_topic = j.at("nll_topic").get<double>();
    s.nll_context = j.at("nll_context").get<double>();
    s.delta = j.at("delta").get<double>();
    s.token_count = j.at("token_count").get<std::size_t>();
    s.truncated_sentences = j.value("truncated_sentences", std::size_t{0});
    return s;
}

inline std::string essays_jsonl(const SequentialityRun& run) {
    std::string out;
    for (const auto& e : run.essays) (out += to_json(e, run.backend_id).dump()) += '\n';
    return out;
}

inline std::string sentences_jsonl(const SequentialityRun& run) {
    std::string out;
    for (const auto& s : run.sentences) (out += to_json(s, run.backend_id).dump()) += '\n';
    return out;
}

inline std::vector<EssaySequentiality> read_essay_sequentiality(const std::string& path) {
    std::vector<EssaySequentiality> out;
    std::istringstream in(text::read_file(path));
    std::string line;
    while (std::getline(in, line))
        if (!text::is_blank(line)) out.push_back(essay_sequentiality_from_json(json::parse(line)));
    return out;
}

}  // namespace flowseq
