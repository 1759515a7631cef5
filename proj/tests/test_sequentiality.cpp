#include <gtest/gtest.h>

#include <cmath>

#include "flowseq/sequentiality.hpp"
#include "flowseq/synthetic.hpp"
#include "test_util.hpp"

using namespace flowseq;

namespace {

EssayRecord make_essay(std::string id, std::string text) {
    EssayRecord e;
    e.essay_id = std::move(id);
    e.prompt_id = "P1";
    e.text = std::move(text);
    e.sentences = segment_sentences(e.text);
    return e;
}

// Three symbols with an explicit table; "Ef." closes a sentence.
const std::vector<std::vector<double>> kTable = {{0.1, 0.6, 0.3}, {0.2, 0.2, 0.6}, {0.7, 0.2, 0.1}};
enum { Ab = 0, Cd = 1, Ef = 2 };

MockBigramModel table_model(std::size_t max_ctx = std::numeric_limits<std::size_t>::max()) {
    return MockBigramModel::from_table({"Ab", "Cd", "Ef."}, {0.5, 0.25, 0.25}, kTable, max_ctx);
}

double hand_nll(std::initializer_list<std::pair<int, int>> transitions) {
    double s = 0;
    for (auto [a, b] : transitions) s += std::log(kTable[a][b]);
    return -s / static_cast<double>(transitions.size());
}

// Wraps a backend and fails any request whose text contains `poison`.
struct PoisonBackend final : ScoringBackend {
    const ScoringBackend& inner;
    std::string poison;
    PoisonBackend(const ScoringBackend& b, std::string p) : inner(b), poison(std::move(p)) {}
    std::string id() const override { return "poison/" + inner.id(); }
    std::size_t max_context_tokens() const override { return inner.max_context_tokens(); }
    std::vector<TokenLogprob> score_text(std::string_view t) const override {
        if (t.find(poison) != std::string_view::npos) throw ProtocolError("poisoned request");
        return inner.score_text(t);
    }
};

Dataset mock_corpus(const MockBigramModel& m, std::size_t n, std::uint64_t seed) {
    synth::CorpusOptions o;
    o.essays = n;
    o.seed = seed;
    return synth::synthetic_dataset(m, o);
}

}  // namespace

TEST(Sequentiality, HandSummedTableValues) {
    const auto m = table_model();
    const auto e = make_essay("e1", "Ab Cd Ef. Ab Ab Ef. Cd Cd Ef.");
    ASSERT_EQ(e.sentences.size(), 3u);
    const ScoringContext ctx{m};
    const std::string topic = "Cd";
    EXPECT_NEAR(sentence_nll_topic(e, 0, topic, ctx), hand_nll({{Cd, Ab}, {Ab, Cd}, {Cd, Ef}}), 1e-12);
    EXPECT_EQ(sentence_nll_context(e, 0, topic, ctx), sentence_nll_topic(e, 0, topic, ctx));
    // Sentence 2 after the full two-sentence history ends in "Ef."
    EXPECT_NEAR(sentence_nll_context(e, 2, topic, ctx), hand_nll({{Ef, Cd}, {Cd, Cd}, {Cd, Ef}}), 1e-12);
    EXPECT_NEAR(sentence_nll_topic(e, 2, topic, ctx), hand_nll({{Cd, Cd}, {Cd, Cd}, {Cd, Ef}}), 1e-12);
    EXPECT_THROW(sentence_nll_topic(e, 3, topic, ctx), PreconditionError);
}

TEST(Sequentiality, ContextConditioningIsTopicThenHistory) {
    const auto e = make_essay("e", "Ab Cd Ef.  Cd Ef. Ab Ef.");
    EXPECT_EQ(context_conditioning(e, 0, "T"), "T");
    EXPECT_EQ(context_conditioning(e, 2, "T"), "T Ab Cd Ef.  Cd Ef.");
    EXPECT_EQ(context_conditioning(e, 2, "T", 1), "T Cd Ef.");
}

TEST(Sequentiality, UniformModelGivesLogVEverywhere) {
    const auto m = MockBigramModel::uniform({"Ab", "Cd", "Ef."});
    const auto [sents, agg] = essay_sequentiality(make_essay("e", "Ab Cd Ef. Cd Ef."), "Ab", {m});
    for (const auto& s : sents) {
        EXPECT_NEAR(s.nll_topic, std::log(3.0), 1e-12);
        EXPECT_NEAR(s.nll_context, std::log(3.0), 1e-12);
    }
    EXPECT_NEAR(agg.mean_delta, 0.0, 1e-12);
}

TEST(Sequentiality, OneSentenceEssayHasZeroDelta) {
    const auto m = table_model();
    const auto [sents, agg] = essay_sequentiality(make_essay("e", "Cd Ab Ef."), "Ab Ab", {m});
    ASSERT_EQ(sents.size(), 1u);
    EXPECT_EQ(agg.mean_delta, 0.0);
}

TEST(Sequentiality, IdentityAndAggregationOnMockCorpus) {
    const auto m = synth::synthetic_model(17);
    const auto d = mock_corpus(m, 40, 3);
    const auto run = run_sequentiality(d, {m});
    ASSERT_TRUE(run.failures.empty());
    ASSERT_EQ(run.essays.size(), d.essays.size());
    std::size_t k = 0;
    for (const auto& agg : run.essays) {
        double t = 0, c = 0, dl = 0;
        for (std::size_t i = 0; i < agg.sentence_count; ++i, ++k) {
            const auto& s = run.sentences[k];
            ASSERT_EQ(s.essay_id, agg.essay_id);
            ASSERT_EQ(s.sentence_index, i);
            EXPECT_EQ(s.delta, s.nll_topic - s.nll_context);
            if (i == 0) {
                EXPECT_EQ(s.delta, 0.0);
            }
            EXPECT_GE(s.nll_topic, 0.0);
            EXPECT_GT(s.token_count, 0u);
            t += s.nll_topic;
            c += s.nll_context;
            dl += s.delta;
        }
        const double n = static_cast<double>(agg.sentence_count);
        EXPECT_NEAR(agg.mean_delta, dl / n, 1e-12);
        EXPECT_NEAR(agg.mean_delta, agg.mean_nll_topic - agg.mean_nll_context, 1e-12);
        EXPECT_NEAR(agg.mean_nll_topic, t / n, 1e-12);
        EXPECT_NEAR(agg.mean_nll_context, c / n, 1e-12);
    }
    EXPECT_EQ(k, run.sentences.size());
}

TEST(Sequentiality, CoherentEssaysGainFromContext) {
    const auto m = synth::synthetic_model(2);
    rng::Engine g(8);
    const std::string topic = synth::generate_text(m, g, 1);
    int helped = 0, ordered_better = 0;
    for (int i = 0; i < 100; ++i) {
        const auto text = synth::generate_text(m, g, 4);
        const auto a = essay_sequentiality(make_essay("o", text), topic, {m}).second;
        const auto b = essay_sequentiality(make_essay("s", synth::shuffle_sentences(text, g)), topic, {m}).second;
        helped += a.mean_delta > 0;
        ordered_better += a.mean_nll_context < b.mean_nll_context;
    }
    EXPECT_GE(helped, 95);
    EXPECT_GE(ordered_better, 95);
}

TEST(Sequentiality, TruncatesOldestSentencesOnOverflow) {
    const auto m = table_model(8);
    const auto e = make_essay("long", "Ab Cd Ef. Cd Cd Ef. Ab Ab Ef. Cd Ab Ef.");
    const auto [sents, agg] = essay_sequentiality(e, "Ab", {m});
    ASSERT_EQ(sents.size(), 4u);
    EXPECT_EQ(sents[0].truncated_sentences, 0u);
    EXPECT_EQ(sents[1].truncated_sentences, 0u);  // 1 + 3 + 3 tokens fit
    EXPECT_EQ(sents[2].truncated_sentences, 1u);
    EXPECT_EQ(sents[3].truncated_sentences, 2u);
    EXPECT_TRUE(agg.truncated);
    // The topic survives truncation.
    EXPECT_NEAR(sents[3].nll_context,
                score_target(context_conditioning(e, 3, "Ab", 2), e.sentence(3), m).nll, 0);
}

TEST(Sequentiality, OverflowWithoutHistoryFailsTheEssay) {
    const auto m = table_model(3);
    const Dataset d{"d", {PromptSpec{"P1", "Ab Ab", {}}}, {make_essay("x", "Ab Cd Ef.")}};
    const auto run = run_sequentiality(d, {m});
    ASSERT_EQ(run.failures.size(), 1u);
    EXPECT_EQ(run.failures[0].sentence_index, 0u);
}

TEST(Sequentiality, FailingSentenceFailsOnlyItsEssay) {
    const auto m = synth::synthetic_model(5);
    const auto d = mock_corpus(m, 12, 9);
    // Poison a sentence that occurs in exactly one essay.
    std::size_t victim = d.essays.size();
    std::string poison;
    for (std::size_t e = 0; e < d.essays.size() && victim == d.essays.size(); ++e) {
        if (d.essays[e].sentences.size() < 3) continue;
        poison = std::string(d.essays[e].sentence(2));
        std::size_t holders = 0;
        for (const auto& other : d.essays) holders += other.text.find(poison) != std::string::npos;
        if (holders == 1) victim = e;
    }
    ASSERT_LT(victim, d.essays.size());
    const auto& id = d.essays[victim].essay_id;
    const PoisonBackend backend(m, poison);
    const auto run = run_sequentiality(d, {backend}, 4);
    ASSERT_EQ(run.failures.size(), 1u);
    EXPECT_EQ(run.failures[0].essay_id, id);
    EXPECT_EQ(run.failures[0].sentence_index, 2u);
    EXPECT_EQ(run.essays.size(), 11u);
    for (const auto& e : run.essays) EXPECT_NE(e.essay_id, id);
    for (const auto& s : run.sentences) EXPECT_NE(s.essay_id, id);
}

TEST(Sequentiality, ParallelMatchesSerial) {
    const auto m = synth::synthetic_model(6);
    const auto d = mock_corpus(m, 30, 1);
    const auto serial = run_sequentiality(d, {m, nullptr, 1}, 1);
    const auto par = run_sequentiality(d, {m, nullptr, 4}, 8);
    const auto inner = run_sequentiality(d, {m, nullptr, 6}, 1);
    EXPECT_EQ(essays_jsonl(serial), essays_jsonl(par));
    EXPECT_EQ(sentences_jsonl(serial), sentences_jsonl(par));
    EXPECT_EQ(sentences_jsonl(serial), sentences_jsonl(inner));
}

TEST(Sequentiality, CachedRerunIsIdenticalAndHitsCache) {
    TempDir dir;
    const auto m = synth::synthetic_model(6);
    const auto d = mock_corpus(m, 10, 2);
    ResponseCache cache(dir.file("c.jsonl"));
    const auto first = run_sequentiality(d, {m, &cache}, 3);
    ResponseCache reloaded(dir.file("c.jsonl"));
    const auto second = run_sequentiality(d, {m, &reloaded}, 3);
    EXPECT_EQ(sentences_jsonl(first), sentences_jsonl(second));
    EXPECT_GT(reloaded.hits(), 0u);
    EXPECT_EQ(reloaded.size(), cache.size());
}

TEST(Sequentiality, JsonlRoundTrip) {
    TempDir dir;
    const auto m = synth::synthetic_model(6);
    const auto run = run_sequentiality(mock_corpus(m, 8, 4), {m});
    text::write_file(dir.file("s.jsonl"), essays_jsonl(run));
    EXPECT_EQ(read_essay_sequentiality(dir.file("s.jsonl")), run.essays);
    const auto line = json::parse(sentences_jsonl(run).substr(0, sentences_jsonl(run).find('\n')));
    EXPECT_EQ(sentence_sequentiality_from_json(line), run.sentences.front());
    EXPECT_EQ(line.at("backend"), m.id());
}
