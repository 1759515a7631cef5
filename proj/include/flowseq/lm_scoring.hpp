#pragma once

// Per-token log-probabilities of a target string under a conditioning string,
// from a pluggable backend (HTTP endpoint or the in-repo bigram mock), and the
// mean per-token negative log-likelihood of the target region.

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "flowseq/corpus.hpp"
#include "flowseq/errors.hpp"
#include "flowseq/random.hpp"
#include "flowseq/text.hpp"

namespace flowseq {

struct TokenLogprob {
    std::string token_text;
    std::size_t char_start = 0;  // byte offset into the scored string
    double logprob = 0.0;        // natural log

    bool operator==(const TokenLogprob&) const = default;
};

struct ScoredText {
    std::string conditioning;
    std::string target;
    std::size_t target_start = 0;  // offset of the target inside the joined string
    std::vector<TokenLogprob> tokens;
    double nll = 0.0;

    bool operator==(const ScoredText&) const = default;
};

class ScoringBackend {
public:
    virtual ~ScoringBackend() = default;
    // Stable identifier; part of every cache key.
    virtual std::string id() const = 0;
    // Tokens covering all of `text`, each with the log-probability of that
    // token given everything before it.
    virtual std::vector<TokenLogprob> score_text(std::string_view text) const = 0;
    virtual std::size_t max_context_tokens() const = 0;
};

struct JoinedText {
    std::string text;
    std::size_t target_start = 0;
};

// Conditioning and target are separated by one space unless the conditioning
// is empty or already ends in whitespace.
inline JoinedText join_for_scoring(std::string_view conditioning, std::string_view target) {
    JoinedText j;
    j.text.reserve(conditioning.size() + target.size() + 1);
    j.text.append(conditioning);
    if (!conditioning.empty() && !text::is_space(conditioning.back())) j.text.push_back(' ');
    j.target_start = j.text.size();
    j.text.append(target);
    return j;
}

inline double mean_nll(const std::vector<TokenLogprob>& tokens) {
    if (tokens.empty()) throw AlignmentError("no tokens to average");
    double sum = 0.0;
    for (const auto& t : tokens) sum += t.logprob;
    return -sum / static_cast<double>(tokens.size());
}

// Tokens whose start lies inside `span`, plus a token straddling the span's
// start when at least half of its characters fall inside (a one-character
// token carrying a leading space counts as inside).
inline std::vector<TokenLogprob> assign_tokens_to_span(const std::vector<TokenLogprob>& all_tokens,
                                                       Span span) {
    if (all_tokens.empty()) throw RangeError("no tokens to align");
    const auto& last = all_tokens.back();
    const std::size_t string_end = last.char_start + last.token_text.size();
    if (span.start > span.end || span.end > string_end)
        throw RangeError("span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                         ") outside scored string of length " + std::to_string(string_end));
    std::vector<TokenLogprob> out;
    for (std::size_t k = 0; k < all_tokens.size(); ++k) {
        const auto& t = all_tokens[k];
        const std::size_t tstart = t.char_start;
        const std::size_t tend =
            k + 1 < all_tokens.size() ? all_tokens[k + 1].char_start : tstart + t.token_text.size();
        if (tstart >= span.start && tstart < span.end) {
            out.push_back(t);
        } else if (tstart < span.start && tend > span.start) {
            const std::size_t inside = std::min(tend, span.end) - span.start;
            if (2 * inside >= tend - tstart) out.push_back(t);
        }
    }
    if (out.empty())
        throw AlignmentError("no tokens assigned to span [" + std::to_string(span.start) + ", " +
                             std::to_string(span.end) + ")");
    return out;
}

inline ScoredText score_target(std::string_view conditioning, std::string_view target,
                               const ScoringBackend& backend) {
    if (text::is_blank(target)) throw PreconditionError("score_target: empty target");
    auto joined = join_for_scoring(conditioning, target);
    const auto all = backend.score_text(joined.text);
    ScoredText st;
    st.conditioning = std::string(conditioning);
    st.target = std::string(target);
    st.target_start = joined.target_start;
    st.tokens = assign_tokens_to_span(all, {joined.target_start, joined.text.size()});
    for (const auto& t : st.tokens)
        if (!std::isfinite(t.logprob))
            throw ProtocolError("backend returned a non-finite logprob inside the target");
    st.nll = mean_nll(st.tokens);
    return st;
}

// ---------------------------------------------------------------------------
// JSON forms

inline json to_json(const ScoredText& s) {
    json toks = json::array();
    for (const auto& t : s.tokens) toks.push_back({t.token_text, t.char_start, t.logprob});
    return json{{"conditioning", s.conditioning}, {"target", s.target},
                {"target_start", s.target_start}, {"tokens", toks}, {"nll", s.nll}};
}

inline ScoredText scored_text_from_json(const json& j) {
    ScoredText s;
    s.conditioning = j.at("conditioning").get<std::string>();
    s.target = j.at("target").get<std::string>();
    s.target_start = j.at("target_start").get<std::size_t>();
    for (const auto& t : j.at("tokens"))
        s.tokens.push_back({t.at(0).get<std::string>(), t.at(1).get<std::size_t>(), t.at(2).get<double>()});
    s.nll = j.at("nll").get<double>();
    return s;
}

// ---------------------------------------------------------------------------
// Response cache: JSONL, one ScoredText per line, keyed by
// (backend id, sha256(conditioning), sha256(target)).

class ResponseCache {
public:
    ResponseCache() = default;

    // Loads existing entries from `path` (if present) and appends new ones to it.
    explicit ResponseCache(std::string path) : path_(std::move(path)) {
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            if (text::is_blank(line)) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error&) {
                continue;  // torn final line from an interrupted run
            }
            entries_[key(j.at("backend").get<std::string>(), j.at("conditioning_sha256").get<std::string>(),
                         j.at("target_sha256").get<std::string>())] =
                scored_text_from_json(j.at("scored"));
        }
    }

    std::optional<ScoredText> find(const std::string& backend_id, std::string_view conditioning,
                                   std::string_view target) const {
        const auto k = key(backend_id, text::sha256_hex(conditioning), text::sha256_hex(target));
        std::lock_guard lock(mu_);
        auto it = entries_.find(k);
        if (it == entries_.end()) return std::nullopt;
        ++hits_;
        return it->second;
    }

    void store(const std::string& backend_id, const ScoredText& s) {
        const auto ch = text::sha256_hex(s.conditioning);
        const auto th = text::sha256_hex(s.target);
        std::lock_guard lock(mu_);
        if (!entries_.emplace(key(backend_id, ch, th), s).second) return;
        if (path_.empty()) return;
        std::ofstream out(path_, std::ios::app);
        out << json{{"backend", backend_id}, {"conditioning_sha256", ch}, {"target_sha256", th},
                    {"scored", to_json(s)}}
                   .dump()
            << '\n';
        out.flush();
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }
    std::size_t hits() const {
        std::lock_guard lock(mu_);
        return hits_;
    }

private:
    static std::string key(const std::string& id, const std::string& ch, const std::string& th) {
        return id + '\x1f' + ch + '\x1f' + th;
    }

    std::string path_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, ScoredText> entries_;
    mutable std::size_t hits_ = 0;
};

inline ScoredText score_target(std::string_view conditioning, std::string_view target,
                               const ScoringBackend& backend, ResponseCache* cache) {
    if (!cache) return score_target(conditioning, target, backend);
    const auto id = backend.id();
    if (auto hit = cache->find(id, conditioning, target)) return *hit;
    auto st = score_target(conditioning, target, backend);
    cache->store(id, st);
    return st;
}

// ---------------------------------------------------------------------------
// Bigram mock

struct MockOptions {
    // Probability of each symbol's designated successor. Must exceed 0.5 so the
    // successor dominates every other entry of its row.
    double successor_mass = 0.95;
    std::size_t max_context_tokens = std::numeric_limits<std::size_t>::max();
};

// Deterministic bigram model over a symbol vocabulary. Text is tokenized by
// greedy longest match at each non-whitespace position; whitespace attaches
// to the following token (trailing whitespace to the last). The first token
// of a text is scored under the initial distribution (uniform).
//
// Two table forms exist: an explicit dense table, and the seeded form used
// for corpora, where every symbol has a successor on a single random cycle
// with probability `successor_mass` and the rest of the row follows fixed
// random background weights. In the seeded form the context ending in a
// symbol's predecessor gives that symbol its highest probability.
class MockBigramModel final : public ScoringBackend {
public:
    static MockBigramModel seeded(std::uint64_t seed, std::vector<std::string> vocabulary,
                                  MockOptions options = {}) {
        MockBigramModel m(std::move(vocabulary), options.max_context_tokens);
        const std::size_t V = m.vocab_.size();
        if (!(options.successor_mass > 0.5 && options.successor_mass < 1.0))
            throw ConfigError("successor_mass must lie in (0.5, 1)");
        m.seed_ = seed;
        m.successor_mass_ = options.successor_mass;
        rng::Engine g(seed);
        std::vector<double> weight(V);
        for (auto& w : weight) w = 0.05 + rng::uniform01(g);
        std::vector<std::size_t> order(V);
        for (std::size_t i = 0; i < V; ++i) order[i] = i;
        rng::shuffle(std::span(order), g);
        m.successor_.resize(V);
        for (std::size_t i = 0; i < V; ++i) m.successor_[order[i]] = order[(i + 1) % V];
        double total = 0.0;
        for (double w : weight) total += w;
        m.log_weight_.resize(V);
        m.row_log_norm_.resize(V);
        for (std::size_t j = 0; j < V; ++j) m.log_weight_[j] = std::log(weight[j]);
        for (std::size_t i = 0; i < V; ++i)
            m.row_log_norm_[i] = V == 1 ? 0.0
                                        : std::log1p(-options.successor_mass) -
                                              std::log(total - weight[m.successor_[i]]);
        m.log_initial_.assign(V, -std::log(static_cast<double>(V)));
        m.id_ = "mock-bigram/seed=" + std::to_string(seed) + "/mass=" +
                json(options.successor_mass).dump() + "/vocab=" + m.vocab_hash();
        return m;
    }

    // Explicit table: initial[j] = P(first = j), transition[i][j] = P(j | i).
    static MockBigramModel from_table(std::vector<std::string> vocabulary, std::vector<double> initial,
                                      std::vector<std::vector<double>> transition,
                                      std::size_t max_context_tokens = std::numeric_limits<std::size_t>::max()) {
        MockBigramModel m(std::move(vocabulary), max_context_tokens);
        const std::size_t V = m.vocab_.size();
        if (initial.size() != V || transition.size() != V)
            throw ConfigError("mock table shape does not match vocabulary");
        m.log_initial_.resize(V);
        for (std::size_t j = 0; j < V; ++j) m.log_initial_[j] = std::log(initial[j]);
        m.dense_.resize(V * V);
        std::string bytes;
        for (std::size_t i = 0; i < V; ++i) {
            if (transition[i].size() != V) throw ConfigError("mock table row has wrong width");
            for (std::size_t j = 0; j < V; ++j) m.dense_[i * V + j] = std::log(transition[i][j]);
        }
        bytes += json(initial).dump();
        bytes += json(transition).dump();
        m.id_ = "mock-table/" + text::sha256_hex(bytes).substr(0, 16) + "/vocab=" + m.vocab_hash();
        return m;
    }

    static MockBigramModel uniform(std::vector<std::string> vocabulary) {
        const std::size_t V = vocabulary.size();
        if (V == 0) throw ConfigError("mock vocabulary must be non-empty");
        const double p = 1.0 / static_cast<double>(V);
        return from_table(std::move(vocabulary), std::vector<double>(V, p),
                          std::vector<std::vector<double>>(V, std::vector<double>(V, p)));
    }

    std::string id() const override { return id_; }
    std::size_t max_context_tokens() const override { return max_context_tokens_; }

    std::size_t vocabulary_size() const noexcept { return vocab_.size(); }
    const std::vector<std::string>& vocabulary() const noexcept { return vocab_; }
    const std::string& symbol(std::size_t i) const { return vocab_.at(i); }

    std::optional<std::size_t> index_of(std::string_view sym) const {
        auto it = index_.find(std::string(sym));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    double initial_logprob(std::size_t next) const { return log_initial_.at(next); }

    double transition_logprob(std::size_t prev, std::size_t next) const {
        const std::size_t V = vocab_.size();
        if (prev >= V || next >= V) throw RangeError("symbol index out of range");
        if (!dense_.empty()) return dense_[prev * V + next];
        if (V == 1) return 0.0;
        if (next == successor_[prev]) return std::log(successor_mass_);
        return log_weight_[next] + row_log_norm_[prev];
    }

    // Only defined for the seeded form.
    std::size_t successor(std::size_t i) const { return successor_.at(i); }
    bool is_seeded() const noexcept { return dense_.empty(); }

    // Full V x V probability table (row = previous symbol).
    std::vector<std::vector<double>> transition_table() const {
        const std::size_t V = vocab_.size();
        std::vector<std::vector<double>> t(V, std::vector<double>(V));
        for (std::size_t i = 0; i < V; ++i)
            for (std::size_t j = 0; j < V; ++j) t[i][j] = std::exp(transition_logprob(i, j));
        return t;
    }

    struct Piece {
        std::size_t start;     // token start, including leading whitespace
        std::size_t end;
        std::size_t symbol;
    };

    std::vector<Piece> tokenize(std::string_view s) const {
        std::vector<Piece> out;
        std::size_t pos = 0;
        while (pos < s.size()) {
            const std::size_t ws = pos;
            while (pos < s.size() && text::is_space(s[pos])) ++pos;
            if (pos == s.size()) {
                if (out.empty()) throw PreconditionError("mock cannot score whitespace-only text");
                out.back().end = s.size();
                break;
            }
            std::size_t word_end = pos;
            while (word_end < s.size() && !text::is_space(s[word_end])) ++word_end;
            const std::size_t limit = std::min(word_end - pos, max_symbol_len_);
            bool matched = false;
            for (std::size_t len = limit; len > 0; --len) {
                auto it = index_.find(std::string(s.substr(pos, len)));
                if (it == index_.end()) continue;
                out.push_back({ws, pos + len, it->second});
                pos += len;
                matched = true;
                break;
            }
            if (!matched)
                throw PreconditionError("mock vocabulary does not cover text at offset " +
                                        std::to_string(pos));
        }
        return out;
    }

    std::vector<TokenLogprob> score_text(std::string_view s) const override {
        const auto pieces = tokenize(s);
        if (pieces.size() > max_context_tokens_)
            throw ContextOverflowError(pieces.size(), max_context_tokens_);
        std::vector<TokenLogprob> out;
        out.reserve(pieces.size());
        for (std::size_t k = 0; k < pieces.size(); ++k) {
            const auto& p = pieces[k];
            const double lp = k == 0 ? initial_logprob(p.symbol)
                                     : transition_logprob(pieces[k - 1].symbol, p.symbol);
            out.push_back({std::string(s.substr(p.start, p.end - p.start)), p.start, lp});
        }
        return out;
    }

    // Draws the next symbol from the row of `prev` (or the initial distribution).
    std::size_t sample_next(std::optional<std::size_t> prev, rng::Engine& g) const {
        const double u = rng::uniform01(g);
        double acc = 0.0;
        const std::size_t V = vocab_.size();
        for (std::size_t j = 0; j < V; ++j) {
            acc += std::exp(prev ? transition_logprob(*prev, j) : initial_logprob(j));
            if (u < acc) return j;
        }
        return V - 1;
    }

private:
    MockBigramModel(std::vector<std::string> vocabulary, std::size_t max_context_tokens)
        : vocab_(std::move(vocabulary)), max_context_tokens_(max_context_tokens) {
        if (vocab_.empty()) throw ConfigError("mock vocabulary must be non-empty");
        if (max_context_tokens_ == 0) throw ConfigError("max_context_tokens must be positive");
        for (std::size_t i = 0; i < vocab_.size(); ++i) {
            const auto& v = vocab_[i];
            if (v.empty()) throw ConfigError("mock vocabulary symbols must be non-empty");
            for (char c : v)
                if (text::is_space(c)) throw ConfigError("mock vocabulary symbols cannot contain whitespace");
            if (!index_.emplace(v, i).second) throw ConfigError("duplicate mock symbol: " + v);
            max_symbol_len_ = std::max(max_symbol_len_, v.size());
        }
    }

    std::string vocab_hash() const {
        std::string all;
        for (const auto& v : vocab_) (all += v) += '\n';
        return text::sha256_hex(all).substr(0, 16);
    }

    std::vector<std::string> vocab_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t max_symbol_len_ = 0;
    std::size_t max_context_tokens_;
    std::string id_;
    std::vector<double> log_initial_;
    std::vector<double> dense_;
    std::uint64_t seed_ = 0;
    double successor_mass_ = 0.0;
    std::vector<std::size_t> successor_;
    std::vector<double> log_weight_;
    std::vector<double> row_log_norm_;
};

inline MockBigramModel mock_model(std::uint64_t seed, std::vector<std::string> vocabulary,
                                  MockOptions options = {}) {
    return MockBigramModel::seeded(seed, std::move(vocabulary), options);
}

// Distinct whitespace-delimited words of the given texts, sorted.
inline std::vector<std::string> vocabulary_from_texts(const std::vector<std::string_view>& texts) {
    std::set<std::string> words;
    for (auto t : texts) {
        std::size_t i = 0;
        while (i < t.size()) {
            while (i < t.size() && text::is_space(t[i])) ++i;
            std::size_t j = i;
            while (j < t.size() && !text::is_space(t[j])) ++j;
            if (j > i) words.emplace(t.substr(i, j - i));
            i = j;
        }
    }
    return {words.begin(), words.end()};
}

// ---------------------------------------------------------------------------
// HTTP backend

struct LmEndpointConfig {
    std::string base_url;
    std::string path = "/v1/completions";
    std::string model_name;
    std::size_t max_context_tokens = 8192;
    std::chrono::milliseconds request_timeout{120000};
    std::size_t max_inflight = 4;
    std::size_t retries = 2;
    std::string api_key;

    void validate() const {
        if (base_url.empty()) throw ConfigError("LM endpoint base_url is empty");
        if (max_inflight < 1) throw ConfigError("max_inflight must be >= 1");
        if (max_context_tokens < 1) throw ConfigError("max_context_tokens must be positive");
    }
};

// Accepts either a flat {tokens, token_logprobs, text_offset} object or the
// completions-style {choices: [{logprobs: {...}}]} envelope. Offsets are byte
// offsets into `text`; a null logprob (first token) becomes NaN.
inline std::vector<TokenLogprob> parse_logprob_response(const json& body, std::string_view text) {
    const json* lp = &body;
    if (body.contains("choices")) {
        const auto& choices = body.at("choices");
        if (!choices.is_array() || choices.empty()) throw ProtocolError("response has no choices");
        if (!choices[0].contains("logprobs") || choices[0]["logprobs"].is_null())
            throw ProtocolError("response choice carries no logprobs");
        lp = &choices[0]["logprobs"];
    } else if (body.contains("logprobs") && body["logprobs"].is_object()) {
        lp = &body["logprobs"];
    }
    if (!lp->contains("tokens") || !lp->contains("token_logprobs"))
        throw ProtocolError("response lacks tokens or token_logprobs");
    if (!lp->contains("text_offset") || (*lp)["text_offset"].is_null())
        throw ProtocolError("response tokens carry no character offsets");
    const auto& toks = (*lp)["tokens"];
    const auto& lps = (*lp)["token_logprobs"];
    const auto& offs = (*lp)["text_offset"];
    if (toks.size() != lps.size() || toks.size() != offs.size())
        throw ProtocolError("tokens, logprobs and offsets differ in length");
    std::vector<TokenLogprob> out;
    out.reserve(toks.size());
    for (std::size_t k = 0; k < toks.size(); ++k) {
        TokenLogprob t;
        t.token_text = toks[k].get<std::string>();
        t.char_start = offs[k].get<std::size_t>();
        t.logprob = lps[k].is_null() ? std::numeric_limits<double>::quiet_NaN() : lps[k].get<double>();
        if (t.char_start > text.size()) throw ProtocolError("token offset beyond text");
        if (!out.empty() && t.char_start <= out.back().char_start)
            throw ProtocolError("token offsets are not strictly increasing");
        out.push_back(std::move(t));
    }
    if (out.empty()) throw ProtocolError("response has no tokens");
    return out;
}

namespace detail {

// POSTs a JSON body. Connection failures, 5xx and 429 are TransportError
// (retryable); any other non-200 status or a non-JSON body is ProtocolError.
inline json post_json(const std::string& base_url, const std::string& path, const std::string& api_key,
                      std::chrono::milliseconds timeout, const std::string& body, const std::string& label) {
    httplib::Client cli(base_url);
    const auto secs = std::max<std::chrono::seconds>(std::chrono::seconds(1),
                                                     std::chrono::duration_cast<std::chrono::seconds>(timeout));
    cli.set_connection_timeout(secs);
    cli.set_read_timeout(secs);
    cli.set_write_timeout(secs);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = cli.Post(path, headers, body, "application/json");
    if (!res) throw TransportError(label + " " + base_url + ": " + httplib::to_string(res.error()));
    if (res->status >= 500 || res->status == 429)
        throw TransportError(label + " returned HTTP " + std::to_string(res->status));
    if (res->status != 200)
        throw ProtocolError(label + " returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    try {
        return json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw ProtocolError(label + " returned invalid JSON: " + e.what());
    }
}

}  // namespace detail

class HttpScoringBackend final : public ScoringBackend {
public:
    explicit HttpScoringBackend(LmEndpointConfig config) : config_(std::move(config)) {
        config_.validate();
    }

    std::string id() const override {
        return "http:" + config_.base_url + config_.path + "#" + config_.model_name;
    }
    std::size_t max_context_tokens() const override { return config_.max_context_tokens; }
    const LmEndpointConfig& config() const noexcept { return config_; }

    std::vector<TokenLogprob> score_text(std::string_view text) const override {
        const json request{{"model", config_.model_name}, {"text", text}, {"echo", true},
                           {"max_new_tokens", 0}, {"logprobs", true}};
        const auto body = request.dump();
        for (std::size_t attempt = 0;; ++attempt) {
            try {
                auto tokens = parse_logprob_response(post(body), text);
                if (tokens.size() > config_.max_context_tokens)
                    throw ContextOverflowError(tokens.size(), config_.max_context_tokens);
                return tokens;
            } catch (const TransportError&) {
                if (attempt >= config_.retries) throw;
                std::this_thread::sleep_for(std::chrono::milliseconds(200) * (1 << attempt));
            }
        }
    }

private:
    json post(const std::string& body) const {
        return detail::post_json(config_.base_url, config_.path, config_.api_key, config_.request_timeout, body,
                                 "LM endpoint");
    }

    LmEndpointConfig config_;
};

}  // namespace flowseq
