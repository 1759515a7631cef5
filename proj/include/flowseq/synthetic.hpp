#pragma once

// Synthetic corpora sampled from the seeded mock model. Words are "W###"
// symbols; "Z###." symbols end a sentence, so sentence boundaries are part of
// the chain and the first word of a sentence depends on the previous one.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "flowseq/corpus.hpp"
#include "flowseq/lm_scoring.hpp"
#include "flowseq/random.hpp"
#include "flowseq/text.hpp"

namespace flowseq::synth {

struct VocabularyShape {
    std::size_t words = 200;
    std::size_t enders = 20;
};

inline std::vector<std::string> symbol_vocabulary(const VocabularyShape& shape = {}) {
    std::vector<std::string> v;
    char buf[16];
    for (std::size_t i = 0; i < shape.words; ++i) {
        std::snprintf(buf, sizeof buf, "W%03zu", i);
        v.emplace_back(buf);
    }
    for (std::size_t i = 0; i < shape.enders; ++i) {
        std::snprintf(buf, sizeof buf, "Z%03zu.", i);
        v.emplace_back(buf);
    }
    return v;
}

inline MockBigramModel synthetic_model(std::uint64_t seed, const VocabularyShape& shape = {},
                                       MockOptions options = {}) {
    return MockBigramModel::seeded(seed, symbol_vocabulary(shape), options);
}

inline bool is_ender(const std::string& sym) { return !sym.empty() && sym.back() == '.'; }

enum class JumpScope {
    anywhere,        // any step may jump
    sentence_start,  // only the first word of a sentence may jump
};

// Walks the chain until `sentences` sentences are complete. With probability
// `jump_rate` a step ignores the chain and picks a uniform symbol instead,
// which makes the text less predictable from its own history.
inline std::string generate_text(const MockBigramModel& m, rng::Engine& g, std::size_t sentences,
                                 double jump_rate = 0.0, JumpScope scope = JumpScope::anywhere) {
    if (sentences == 0) throw PreconditionError("need at least one sentence");
    std::string out;
    std::optional<std::size_t> prev;
    std::size_t done = 0;
    std::size_t in_sentence = 0;
    while (done < sentences) {
        const bool may_jump = jump_rate > 0 && (scope == JumpScope::anywhere || (in_sentence == 0 && prev));
        std::size_t next = (may_jump && rng::uniform01(g) < jump_rate)
                               ? static_cast<std::size_t>(rng::uniform_index(g, m.vocabulary_size()))
                               : m.sample_next(prev, g);
        // Keep sentences at least two words long.
        if (is_ender(m.symbol(next)) && in_sentence == 0) continue;
        if (!out.empty()) out += ' ';
        out += m.symbol(next);
        prev = next;
        if (is_ender(m.symbol(next))) {
            ++done;
            in_sentence = 0;
        } else {
            ++in_sentence;
        }
    }
    return out;
}

// Keeps the first sentence and applies a non-identity permutation to the
// rest. Needs at least three sentences.
inline std::string shuffle_sentences(std::string_view text, rng::Engine& g) {
    const auto spans = segment_sentences(text);
    if (spans.size() < 3) throw PreconditionError("shuffling needs at least three sentences");
    std::vector<std::size_t> order(spans.size() - 1);
    std::iota(order.begin(), order.end(), std::size_t{1});
    const auto identity = order;
    do rng::shuffle(std::span<std::size_t>(order), g);
    while (order == identity);
    std::string out(text.substr(spans[0].start, spans[0].size()));
    for (auto i : order) (out += ' ') += text.substr(spans[i].start, spans[i].size());
    return out;
}

struct CorpusOptions {
    std::string name = "synthetic";
    std::string trait = "Flow";
    std::size_t essays = 100;
    std::size_t min_sentences = 4;
    std::size_t max_sentences = 10;
    double max_jump_rate = 0.6;
    // Jumps at sentence starts break the link between a sentence and what
    // precedes it while leaving each sentence internally fluent.
    JumpScope jump_scope = JumpScope::sentence_start;
    double label_noise = 0.5;  // logistic scale of the label noise
    std::size_t levels = 5;
    std::uint64_t seed = 1;
};

// One prompt, `essays` essays. Each essay draws a jump rate uniformly from
// [0, max_jump_rate]; its label is a quantile bin of (-jump_rate + noise), so
// more coherent essays score higher and every level is populated.
inline Dataset synthetic_dataset(const MockBigramModel& m, const CorpusOptions& o) {
    if (o.essays < o.levels) throw PreconditionError("need at least one essay per level");
    if (o.min_sentences < 1 || o.max_sentences < o.min_sentences) throw PreconditionError("bad sentence range");
    rng::Engine g(rng::splitmix64(o.seed));
    Dataset d;
    d.name = o.name;
    PromptSpec p;
    p.prompt_id = "P1";
    p.topic_text = generate_text(m, g, 1);
    p.trait_scales.emplace(o.trait, TraitScale::range(o.trait, 1, static_cast<double>(o.levels), 1));
    std::vector<double> latent;
    char id[32];
    for (std::size_t i = 0; i < o.essays; ++i) {
        const double jump = o.max_jump_rate * rng::uniform01(g);
        const auto n = o.min_sentences + rng::uniform_index(g, o.max_sentences - o.min_sentences + 1);
        EssayRecord e;
        std::snprintf(id, sizeof id, "e%05zu", i);
        e.essay_id = id;
        e.prompt_id = p.prompt_id;
        e.text = generate_text(m, g, n, jump, o.jump_scope);
        e.sentences = segment_sentences(e.text);
        d.essays.push_back(std::move(e));
        latent.push_back(-jump / std::max(o.max_jump_rate, 1e-12) + o.label_noise * rng::logistic(g));
    }
    std::vector<double> sorted = latent;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < d.essays.size(); ++i) {
        const auto rank = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), latent[i]) - sorted.begin());
        d.essays[i].scores[o.trait] = static_cast<double>(1 + rank * o.levels / sorted.size());
    }
    d.prompts.push_back(std::move(p));
    d.validate();
    return d;
}

// Writes essays.csv, prompts.csv and schema.json under `dir` so the corpus
// can go through the regular ingest path.
inline void write_corpus_files(const Dataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> traits;
    for (const auto& [t, s] : d.prompts.front().trait_scales) traits.push_back(t);
    std::vector<std::string> header{"essay_id", "prompt_id", "text"};
    header.insert(header.end(), traits.begin(), traits.end());
    std::string essays = text::csv_row(header);
    for (const auto& e : d.essays) {
        std::vector<std::string> row{e.essay_id, e.prompt_id, e.text};
        for (const auto& t : traits) row.push_back(json(e.scores.at(t)).dump());
        essays += text::csv_row(row);
    }
    text::write_file((dir / "essays.csv").string(), essays);
    std::string prompts = text::csv_row({"prompt_id", "topic_text"});
    for (const auto& p : d.prompts) prompts += text::csv_row({p.prompt_id, p.topic_text});
    text::write_file((dir / "prompts.csv").string(), prompts);
    json schema{{"name", d.name},
                {"columns", {{"essay_id", "essay_id"}, {"prompt_id", "prompt_id"}, {"text", "text"}}},
                {"prompts", "prompts.csv"}};
    for (const auto& t : traits) {
        const auto& s = d.prompts.front().scale(t);
        schema["traits"][t] = t;
        schema["trait_scales"][t] = s.levels;
    }
    text::write_file((dir / "schema.json").string(), schema.dump(2) + "\n");
}

}  // namespace flowseq::synth
