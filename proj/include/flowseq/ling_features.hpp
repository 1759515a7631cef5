#pragma once

// Ten surface features commonly used as an essay-scoring baseline: word,
// sentence, character, lemma, noun, stopword, long-word and Dale-Chall
// difficult-word counts.
//
// Lemmas and nouns come from a deterministic rule-based substitute for a
// statistical tagger (suffix stripping plus a bundled lexicon), so absolute
// values differ from spaCy-style pipelines but are internally consistent.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "flowseq/corpus.hpp"
#include "flowseq/errors.hpp"
#include "flowseq/text.hpp"
#include "flowseq/wordlists/dale_chall.hpp"
#include "flowseq/wordlists/lexicon.hpp"
#include "flowseq/wordlists/stopwords.hpp"

namespace flowseq {

struct WordToken {
    std::string text;  // lowercased, apostrophes normalized to '
    std::size_t start = 0;
    std::size_t end = 0;

    bool operator==(const WordToken&) const = default;
};

namespace detail {

// Non-ASCII scalars treated as punctuation or space rather than letters.
inline bool is_unicode_punct(char32_t cp) noexcept {
    switch (cp) {
        case 0x00A0: case 0x00AB: case 0x00BB: case 0x00B7: case 0x2010: case 0x2011:
        case 0x2012: case 0x2013: case 0x2014: case 0x2015: case 0x2018: case 0x2019:
        case 0x201C: case 0x201D: case 0x2026: case 0x2022: case 0x2032: case 0x2033:
        case 0x3000: case 0x3001: case 0x3002: case 0xFEFF:
            return true;
        default:
            return (cp >= 0x2000 && cp <= 0x200B) || (cp >= 0x2E00 && cp <= 0x2E7F);
    }
}

// Letters and digits; every other non-ASCII scalar outside the punctuation set
// is counted as a letter.
inline bool is_word_scalar(char32_t cp) noexcept {
    if (cp < 0x80) {
        const char c = static_cast<char>(cp);
        return text::is_ascii_alpha(c) || text::is_ascii_digit(c);
    }
    return !is_unicode_punct(cp);
}

inline bool is_apostrophe(char32_t cp) noexcept { return cp == U'\'' || cp == 0x2019; }

inline std::unordered_set<std::string> split_words(std::string_view s) {
    std::unordered_set<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && text::is_space(s[i])) ++i;
        std::size_t j = i;
        while (j < s.size() && !text::is_space(s[j])) ++j;
        if (j > i) out.insert(text::to_lower(s.substr(i, j - i)));
        i = j;
    }
    return out;
}

}  // namespace detail

// Lowercased alphanumeric word tokens; apostrophes between word characters
// stay inside the token ("don't"), all other punctuation separates tokens.
inline std::vector<WordToken> tokenize_words(std::string_view s) {
    std::vector<WordToken> out;
    std::size_t i = 0;
    std::optional<WordToken> cur;
    auto flush = [&] {
        if (cur) out.push_back(std::move(*cur));
        cur.reset();
    };
    while (i < s.size()) {
        std::size_t len = 0;
        const char32_t cp = text::decode_utf8(s, i, len);
        if (detail::is_word_scalar(cp)) {
            if (!cur) cur = WordToken{{}, i, i};
            if (cp < 0x80)
                cur->text.push_back(text::to_lower(static_cast<char>(cp)));
            else
                cur->text.append(s.substr(i, len));
            cur->end = i + len;
        } else if (detail::is_apostrophe(cp) && cur && i + len < s.size()) {
            std::size_t nlen = 0;
            const char32_t next = text::decode_utf8(s, i + len, nlen);
            if (detail::is_word_scalar(next)) {
                cur->text.push_back('\'');
                cur->end = i + len;
            } else {
                flush();
            }
        } else {
            flush();
        }
        i += len;
    }
    flush();
    return out;
}

struct WordLists {
    std::unordered_set<std::string> dale_chall;
    std::unordered_set<std::string> stopwords;
    std::unordered_set<std::string> nouns;
    std::unordered_set<std::string> non_nouns;
    std::unordered_map<std::string, std::string> irregular;

    static const WordLists& builtin() {
        static const WordLists lists = [] {
            WordLists w;
            w.dale_chall = detail::split_words(wordlists::kDaleChall);
            w.stopwords = detail::split_words(wordlists::kStopwords);
            w.nouns = detail::split_words(wordlists::kNouns);
            w.non_nouns = detail::split_words(wordlists::kNonNouns);
            std::istringstream in{std::string(wordlists::kIrregularLemmas)};
            std::string form, lemma;
            while (in >> form >> lemma) w.irregular.emplace(form, lemma);
            return w;
        }();
        return lists;
    }

    // Builtin lists with any of the given files (whitespace-separated words) swapped in.
    static WordLists with_overrides(const std::optional<std::string>& dale_chall_path,
                                    const std::optional<std::string>& stopwords_path,
                                    const std::optional<std::string>& nouns_path) {
        WordLists w = builtin();
        if (dale_chall_path) w.dale_chall = detail::split_words(text::read_file(*dale_chall_path));
        if (stopwords_path) w.stopwords = detail::split_words(text::read_file(*stopwords_path));
        if (nouns_path) w.nouns = detail::split_words(text::read_file(*nouns_path));
        return w;
    }

    bool known(const std::string& w) const {
        return dale_chall.contains(w) || nouns.contains(w) || non_nouns.contains(w);
    }
};

struct Lemma {
    std::string lemma;
    bool verb_inflection = false;  // stripped -ing / -ed
};

namespace detail {

inline bool has_digit(std::string_view w) {
    for (char c : w)
        if (text::is_ascii_digit(c)) return true;
    return false;
}

inline bool has_letter(std::string_view w) {
    for (std::size_t i = 0; i < w.size(); ++i) {
        const char c = w[i];
        if (text::is_ascii_alpha(c) || static_cast<unsigned char>(c) >= 0x80) return true;
    }
    return false;
}

inline bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

// Resolves a stripped stem: undo consonant doubling ("runn" -> "run"),
// restore a dropped 'e' ("mak" -> "make") when that yields a known word.
inline std::string resolve_stem(const std::string& stem, const WordLists& lists) {
    if (lists.known(stem)) return stem;
    const auto n = stem.size();
    if (n >= 3 && stem[n - 1] == stem[n - 2] && !is_vowel(stem[n - 1])) {
        auto undoubled = stem.substr(0, n - 1);
        if (lists.known(undoubled) || (stem[n - 1] != 'l' && stem[n - 1] != 's' && stem[n - 1] != 'z'))
            return undoubled;
    }
    if (lists.known(stem + "e")) return stem + "e";
    return stem;
}

}  // namespace detail

inline Lemma lemmatize(const std::string& w, const WordLists& lists = WordLists::builtin()) {
    if (auto it = lists.irregular.find(w); it != lists.irregular.end()) return {it->second, false};
    if (detail::has_digit(w)) return {w, false};
    const auto n = w.size();
    if (n > 2 && w.ends_with("'s")) return lemmatize(w.substr(0, n - 2), lists);
    if (w.find('\'') != std::string::npos) return {w, false};
    if (lists.stopwords.contains(w)) return {w, false};

    if (n > 4 && w.ends_with("ies")) return {w.substr(0, n - 3) + "y", false};
    if (n > 4 && (w.ends_with("sses") || w.ends_with("ches") || w.ends_with("shes") ||
                  w.ends_with("xes") || w.ends_with("zes")))
        return {w.substr(0, n - 2), false};
    if (n > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is"))
        return {w.substr(0, n - 1), false};
    if (n > 5 && w.ends_with("ing")) {
        if (lists.known(w) && lists.nouns.contains(w)) return {w, false};
        return {detail::resolve_stem(w.substr(0, n - 3), lists), true};
    }
    if (n > 4 && w.ends_with("ied")) return {w.substr(0, n - 3) + "y", true};
    if (n > 4 && w.ends_with("ed")) return {detail::resolve_stem(w.substr(0, n - 2), lists), true};
    return {w, false};
}

inline bool is_noun(const std::string& w, const Lemma& lemma, const WordLists& lists) {
    if (!detail::has_letter(w)) return false;
    if (w.find('\'') != std::string::npos && !w.ends_with("'s")) return false;
    if (lists.stopwords.contains(w)) return false;
    if (lists.nouns.contains(lemma.lemma) || lists.nouns.contains(w)) return true;
    if (lists.non_nouns.contains(lemma.lemma) || lists.non_nouns.contains(w)) return false;
    if (lemma.verb_inflection) return false;
    static constexpr std::array<std::string_view, 10> kNonNounSuffixes = {
        "ly", "ous", "ful", "ive", "able", "ible", "ic", "al", "less", "ish"};
    for (auto suf : kNonNounSuffixes)
        if (w.size() > suf.size() + 2 && w.ends_with(suf)) return false;
    return true;
}

struct FeatureVector {
    std::size_t unique_words = 0;  // types occurring exactly once
    std::size_t total_words = 0;
    std::size_t total_sentences = 0;
    std::size_t long_words = 0;
    std::size_t chars_no_space_punct = 0;
    std::size_t chars_all = 0;
    std::size_t total_lemmas = 0;  // distinct lemmas
    std::size_t total_nouns = 0;
    std::size_t total_stopwords = 0;
    std::size_t dale_chall_difficult = 0;

    static constexpr std::array<std::string_view, 10> kNames = {
        "unique_words",  "total_words", "total_sentences", "long_words",      "chars_no_space_punct",
        "chars_all",     "total_lemmas", "total_nouns",    "total_stopwords", "dale_chall_difficult"};

    std::array<std::size_t, 10> values() const {
        return {unique_words, total_words, total_sentences, long_words, chars_no_space_punct,
                chars_all, total_lemmas, total_nouns, total_stopwords, dale_chall_difficult};
    }

    static FeatureVector from_values(const std::array<std::size_t, 10>& v) {
        return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
    }

    bool operator==(const FeatureVector&) const = default;
};

struct FeatureConfig {
    std::size_t long_word_min_letters = 7;
};

inline FeatureVector extract_features(std::string_view s, const FeatureConfig& config = {},
                                      const WordLists& lists = WordLists::builtin()) {
    if (text::is_blank(s)) throw EmptyInputError("cannot extract features from empty text");
    FeatureVector f;
    const auto tokens = tokenize_words(s);
    f.total_words = tokens.size();
    f.total_sentences = segment_sentences(s).size();

    std::unordered_map<std::string, std::size_t> freq;
    std::unordered_set<std::string> lemmas;
    for (const auto& t : tokens) {
        ++freq[t.text];
        const auto lemma = lemmatize(t.text, lists);
        lemmas.insert(lemma.lemma);

        std::size_t letters = 0;
        for (std::size_t i = 0; i < t.text.size(); i += text::utf8_length(static_cast<unsigned char>(t.text[i])))
            if (t.text[i] != '\'' && !text::is_ascii_digit(t.text[i])) ++letters;
        if (letters >= config.long_word_min_letters) ++f.long_words;

        const bool stop = lists.stopwords.contains(t.text);
        if (stop) ++f.total_stopwords;
        if (is_noun(t.text, lemma, lists)) ++f.total_nouns;
        const bool familiar = stop || lists.dale_chall.contains(t.text) ||
                              lists.dale_chall.contains(lemma.lemma);
        if (!familiar && detail::has_letter(t.text)) ++f.dale_chall_difficult;
    }
    for (const auto& [w, c] : freq)
        if (c == 1) ++f.unique_words;
    f.total_lemmas = lemmas.size();

    for (std::size_t i = 0; i < s.size();) {
        std::size_t len = 0;
        const char32_t cp = text::decode_utf8(s, i, len);
        ++f.chars_all;
        if (detail::is_word_scalar(cp)) ++f.chars_no_space_punct;
        i += len;
    }
    return f;
}

inline std::string features_csv_header() {
    std::vector<std::string> cols{"essay_id"};
    for (auto n : FeatureVector::kNames) cols.emplace_back(n);
    return text::csv_row(cols);
}

inline std::string features_csv_row(const std::string& essay_id, const FeatureVector& f) {
    std::vector<std::string> cols{essay_id};
    for (auto v : f.values()) cols.push_back(std::to_string(v));
    return text::csv_row(cols);
}

inline std::vector<std::pair<std::string, FeatureVector>> read_features_csv(const std::string& path) {
    const auto rows = text::parse_delimited(text::read_file(path), ',');
    if (rows.empty()) throw SchemaError("essay_id", "features file is empty: " + path);
    const auto& header = rows.front();
    std::array<std::size_t, 10> cols{};
    for (std::size_t k = 0; k < 10; ++k) {
        auto it = std::find(header.begin(), header.end(), std::string(FeatureVector::kNames[k]));
        if (it == header.end())
            throw SchemaError(std::string(FeatureVector::kNames[k]), "features file lacks a column");
        cols[k] = static_cast<std::size_t>(it - header.begin());
    }
    std::vector<std::pair<std::string, FeatureVector>> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        std::array<std::size_t, 10> v{};
        for (std::size_t k = 0; k < 10; ++k) v[k] = std::stoull(rows[r].at(cols[k]));
        out.emplace_back(rows[r].at(0), FeatureVector::from_values(v));
    }
    return out;
}

}  // namespace flowseq
