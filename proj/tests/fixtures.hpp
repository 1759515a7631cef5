#pragma once

// Frozen fixtures and independent oracles shared by the unit tests and the
// acceptance runner.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "flowseq/ling_features.hpp"
#include "flowseq/random.hpp"
#include "flowseq/text.hpp"

namespace fixtures {

using namespace flowseq;

using Counts = std::array<std::size_t, 10>;

struct HandCounted {
    const char* text;
    // unique, total, sentences, long, chars w/o space+punct, chars, lemmas, nouns, stopwords, difficult
    Counts expected;
};

// Counted by hand against the bundled word lists.
inline const HandCounted kFixture[] = {
    {"The cat sat. The cat ran.", {2, 6, 2, 0, 18, 25, 4, 2, 2, 0}},
    {"Hello", {1, 1, 1, 0, 5, 5, 1, 1, 0, 0}},
    {"Don't stop believing!", {3, 3, 1, 1, 17, 21, 3, 0, 1, 0}},
    {"Computers help students learn. Teachers use computers daily.", {6, 8, 2, 4, 51, 60, 7, 5, 0, 3}},
    {"My friends and I visited the museum yesterday.", {8, 8, 1, 3, 38, 46, 8, 3, 4, 1}},
    {"Running quickly, the children played outside.", {6, 6, 1, 4, 38, 45, 6, 2, 1, 0}},
    {"It costs 3 dollars.", {4, 4, 1, 1, 15, 19, 4, 1, 1, 0}},
    {"Caf\xC3\xA9 owners' opinions differ.", {4, 4, 1, 1, 24, 29, 4, 4, 0, 3}},
    {"Wow... Really? Yes!", {3, 3, 3, 0, 12, 19, 3, 2, 0, 1}},
    {"We went to the park on a warm afternoon. My sister brought her kite and some bread for the ducks. "
     "The wind was strong, so the kite flew above the branches. Later we ate lunch under an old oak. "
     "Everyone laughed when a hungry duck grabbed bread from my brother.",
     {35, 50, 5, 7, 204, 259, 40, 15, 24, 1}},
};

inline std::vector<std::string> words_of(std::string_view s) {
    std::vector<std::string> out;
    for (const auto& t : tokenize_words(s)) out.push_back(t.text);
    return out;
}

inline const std::vector<std::string> kPool = {
    "the", "a", "dog", "children", "played", "quickly", "teachers", "computers", "believe", "and",
    "homework", "museum", "running", "we", "it", "opinions", "yesterday", "park", "because", "students",
    "difficult", "they", "school", "friends", "learning", "bread", "never", "3", "don't", "environment"};

inline std::string random_text(rng::Engine& g) {
    std::string s;
    const auto sentences = 1 + rng::uniform_index(g, 4);
    for (std::size_t i = 0; i < sentences; ++i) {
        if (!s.empty()) s += ' ';
        const auto n = 2 + rng::uniform_index(g, 7);
        for (std::size_t k = 0; k < n; ++k) {
            std::string w = kPool[rng::uniform_index(g, kPool.size())];
            if (k == 0) w[0] = text::to_upper(w.substr(0, 1))[0];
            if (k) s += rng::uniform_index(g, 5) == 0 ? ", " : " ";
            s += w;
        }
        s += "?!."[rng::uniform_index(g, 3)];
    }
    return s;
}

// Confusion-matrix evaluation written out independently of the library.
inline double qwk_oracle(const std::vector<double>& a, const std::vector<double>& b, std::size_t K) {
    std::vector<std::vector<double>> O(K, std::vector<double>(K, 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) O[static_cast<std::size_t>(a[i]) - 1][static_cast<std::size_t>(b[i]) - 1] += 1;
    std::vector<double> r(K, 0), c(K, 0);
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) {
            r[i] += O[i][j];
            c[j] += O[i][j];
        }
    const double n = static_cast<double>(a.size());
    double num = 0, den = 0;
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) {
            const double w = std::pow(double(i) - double(j), 2) / std::pow(double(K) - 1, 2);
            num += w * O[i][j];
            den += w * r[i] * c[j] / n;
        }
    return 1 - num / den;
}

}  // namespace fixtures
