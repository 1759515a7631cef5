#pragma once

// Essay corpora: prompts with trait scales, essays with sentence spans and
// human scores, delimited-file ingestion and the canonical JSON form.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "flowseq/errors.hpp"
#include "flowseq/text.hpp"

namespace flowseq {

using json = nlohmann::json;

struct TraitScale {
    std::string trait;
    std::vector<double> levels;  // strictly increasing, at least two

    static constexpr double kMatchTolerance = 1e-9;

    void validate() const {
        if (levels.size() < 2)
            throw ConfigError("trait scale '" + trait + "' needs at least two levels");
        for (std::size_t i = 1; i < levels.size(); ++i)
            if (!(levels[i] > levels[i - 1]))
                throw ConfigError("trait scale '" + trait + "' levels must be strictly increasing");
    }

    std::optional<std::size_t> index_of(double value) const noexcept {
        for (std::size_t i = 0; i < levels.size(); ++i)
            if (std::abs(levels[i] - value) <= kMatchTolerance) return i;
        return std::nullopt;
    }

    bool contains(double value) const noexcept { return index_of(value).has_value(); }

    std::size_t size() const noexcept { return levels.size(); }

    // Evenly spaced levels min, min+step, ..., max (inclusive).
    static TraitScale range(std::string trait, double min, double max, double step) {
        if (!(step > 0) || !(max > min)) throw ConfigError("invalid scale range for " + trait);
        TraitScale s{std::move(trait), {}};
        const auto n = static_cast<std::size_t>(std::llround((max - min) / step));
        for (std::size_t i = 0; i <= n; ++i) s.levels.push_back(min + static_cast<double>(i) * step);
        s.validate();
        return s;
    }
};

struct PromptSpec {
    std::string prompt_id;
    std::string topic_text;
    std::map<std::string, TraitScale> trait_scales;

    const TraitScale& scale(const std::string& trait) const {
        auto it = trait_scales.find(trait);
        if (it == trait_scales.end())
            throw ValidationError("prompt " + prompt_id + " has no scale for trait " + trait);
        return it->second;
    }
};

// Half-open byte range [start, end) into an essay's text.
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - start; }
    bool operator==(const Span&) const = default;
};

struct EssayRecord {
    std::string essay_id;
    std::string prompt_id;
    std::string text;
    std::vector<Span> sentences;
    std::map<std::string, double> scores;

    std::string_view sentence(std::size_t i) const {
        if (i >= sentences.size()) throw RangeError("sentence index out of range");
        return std::string_view(text).substr(sentences[i].start, sentences[i].size());
    }

    bool operator==(const EssayRecord&) const = default;
};

inline bool operator==(const TraitScale& a, const TraitScale& b) {
    return a.trait == b.trait && a.levels == b.levels;
}

inline bool operator==(const PromptSpec& a, const PromptSpec& b) {
    return a.prompt_id == b.prompt_id && a.topic_text == b.topic_text &&
           a.trait_scales == b.trait_scales;
}

struct Dataset {
    std::string name;
    std::vector<PromptSpec> prompts;
    std::vector<EssayRecord> essays;

    const PromptSpec& prompt(const std::string& prompt_id) const {
        for (const auto& p : prompts)
            if (p.prompt_id == prompt_id) return p;
        throw ValidationError("unknown prompt_id: " + prompt_id);
    }

    const EssayRecord& essay(const std::string& essay_id) const {
        for (const auto& e : essays)
            if (e.essay_id == essay_id) return e;
        throw ValidationError("unknown essay_id: " + essay_id, {essay_id});
    }

    void validate() const;

    bool operator==(const Dataset& o) const {
        return name == o.name && prompts == o.prompts && essays == o.essays;
    }
};

// ---------------------------------------------------------------------------
// Sentence segmentation

namespace detail {

inline const std::unordered_set<std::string>& abbreviations() {
    static const std::unordered_set<std::string> set = {
        "dr.", "mr.", "mrs.", "ms.", "prof.", "sr.", "jr.", "st.", "mt.", "etc.", "e.g.", "i.e.",
        "vs.", "cf.", "a.m.", "p.m.", "u.s.", "u.k.", "no.", "fig.", "approx.", "inc.", "ltd.",
        "co.", "jan.", "feb.", "aug.", "sept.", "oct.", "nov.", "dec."};
    return set;
}

inline bool is_closer(char c) noexcept { return c == '"' || c == '\'' || c == ')' || c == ']'; }

inline bool is_opener(char c) noexcept { return c == '"' || c == '\'' || c == '(' || c == '['; }

inline bool starts_sentence(std::string_view s, std::size_t k) noexcept {
    while (k < s.size() && is_opener(s[k])) ++k;
    if (k >= s.size()) return false;
    const char c = s[k];
    return text::is_ascii_upper(c) || text::is_ascii_digit(c) || c == '@';
}

// True when the '.' at `dot` ends an abbreviation or a single-letter initial.
inline bool is_abbreviation(std::string_view s, std::size_t dot) {
    std::size_t b = dot;
    while (b > 0 && !text::is_space(s[b - 1])) --b;
    while (b < dot && is_opener(s[b])) ++b;
    const auto word = text::to_lower(s.substr(b, dot - b + 1));
    if (abbreviations().contains(word)) return true;
    return word.size() == 2 && text::is_ascii_alpha(word[0]);
}

}  // namespace detail

// Rule-based splitter: a run of . ! ? (plus closing quotes/brackets) ends a
// sentence when followed by whitespace and an uppercase letter, digit or '@'
// placeholder, unless the period closes a known abbreviation or an initial.
inline std::vector<Span> segment_sentences(std::string_view s) {
    if (text::is_blank(s)) throw EmptyInputError("cannot segment empty text");
    std::vector<Span> out;
    std::size_t start = 0;
    const std::size_t n = s.size();

    auto push = [&](std::size_t b, std::size_t e) {
        while (b < e && text::is_space(s[b])) ++b;
        while (e > b && text::is_space(s[e - 1])) --e;
        if (b < e) out.push_back({b, e});
    };

    for (std::size_t i = 0; i < n; ++i) {
        const char c = s[i];
        if (c != '.' && c != '!' && c != '?') continue;
        std::size_t j = i + 1;
        while (j < n && (s[j] == '.' || s[j] == '!' || s[j] == '?')) ++j;
        while (j < n && detail::is_closer(s[j])) ++j;
        if (j >= n || !text::is_space(s[j])) continue;
        std::size_t k = j;
        while (k < n && text::is_space(s[k])) ++k;
        if (!detail::starts_sentence(s, k)) continue;
        if (c == '.' && j == i + 1 && detail::is_abbreviation(s, i)) continue;
        push(start, j);
        start = k;
        i = k - 1;
    }
    push(start, n);
    return out;
}

// ---------------------------------------------------------------------------
// Ingestion

struct SchemaConfig {
    std::string name = "dataset";
    std::string essay_id_column = "essay_id";
    std::string prompt_id_column = "prompt_id";
    std::string text_column = "text";
    std::map<std::string, std::string> trait_columns;  // trait -> column
    std::map<std::string, TraitScale> trait_scales;    // trait -> default scale
    std::optional<char> delimiter;
    std::optional<std::string> prompts_path;           // delimited or JSON sidecar
    std::map<std::string, std::string> inline_prompts;  // prompt_id -> topic text
};

struct LoadReport {
    std::size_t rows_read = 0;
    std::size_t dropped = 0;  // rows missing a target trait score
    std::size_t dropped_empty_text = 0;
    std::vector<std::string> dropped_ids;

    json to_json() const {
        return json{{"rows_read", rows_read},
                    {"dropped", dropped},
                    {"dropped_empty_text", dropped_empty_text},
                    {"dropped_ids", dropped_ids}};
    }
};

struct LoadResult {
    Dataset dataset;
    LoadReport report;
};

inline TraitScale scale_from_json(const std::string& trait, const json& j) {
    if (j.is_array()) {
        TraitScale s{trait, j.get<std::vector<double>>()};
        s.validate();
        return s;
    }
    if (j.is_object())
        return TraitScale::range(trait, j.at("min").get<double>(), j.at("max").get<double>(),
                                 j.value("step", 1.0));
    throw ConfigError("scale for " + trait + " must be a list of levels or {min,max,step}");
}

inline std::optional<double> parse_number(std::string_view s) {
    s = text::trim(s);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

// Reads a schema JSON file. Relative prompt paths resolve against the schema's directory.
inline SchemaConfig schema_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
    SchemaConfig c;
    c.name = j.value("name", c.name);
    const auto& cols = j.contains("columns") ? j.at("columns") : j;
    c.essay_id_column = cols.value("essay_id", c.essay_id_column);
    c.prompt_id_column = cols.value("prompt_id", c.prompt_id_column);
    c.text_column = cols.value("text", c.text_column);
    if (j.contains("traits"))
        for (auto& [trait, col] : j.at("traits").items()) c.trait_columns[trait] = col.get<std::string>();
    if (c.trait_columns.empty()) throw ConfigError("schema maps no trait columns");
    if (j.contains("trait_scales"))
        for (auto& [trait, sj] : j.at("trait_scales").items())
            c.trait_scales[trait] = scale_from_json(trait, sj);
    for (const auto& [trait, col] : c.trait_columns)
        if (!c.trait_scales.contains(trait)) throw ConfigError("no scale declared for trait " + trait);
    if (j.contains("delimiter")) {
        const auto d = j.at("delimiter").get<std::string>();
        if (d == "\\t" || d == "tab" || d == "\t")
            c.delimiter = '\t';
        else if (d.size() == 1)
            c.delimiter = d[0];
        else
            throw ConfigError("delimiter must be a single character");
    }
    if (j.contains("prompts")) {
        const auto& p = j.at("prompts");
        if (p.is_string()) {
            std::filesystem::path pp = p.get<std::string>();
            if (pp.is_relative() && !base_dir.empty()) pp = base_dir / pp;
            c.prompts_path = pp.string();
        } else {
            for (auto& [id, topic] : p.items()) c.inline_prompts[id] = topic.get<std::string>();
        }
    }
    if (!c.prompts_path && c.inline_prompts.empty())
        throw ConfigError("schema needs a prompts file or an inline prompt table");
    return c;
}

inline SchemaConfig load_schema(const std::string& path) {
    json j;
    try {
        j = json::parse(text::read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("schema " + path + ": " + e.what());
    }
    return schema_from_json(j, std::filesystem::path(path).parent_path());
}

namespace detail {

struct RawPrompt {
    std::string topic;
    std::map<std::string, TraitScale> scales;
};

inline std::map<std::string, RawPrompt> read_prompts(const SchemaConfig& schema) {
    std::map<std::string, RawPrompt> out;
    for (const auto& [id, topic] : schema.inline_prompts) out[id].topic = topic;
    if (!schema.prompts_path) return out;
    const auto& path = *schema.prompts_path;
    const auto data = text::read_file(path);
    if (path.ends_with(".json")) {
        const auto j = json::parse(data);
        for (const auto& item : j) {
            auto& rp = out[item.at("prompt_id").get<std::string>()];
            rp.topic = item.at("topic_text").get<std::string>();
            if (item.contains("trait_scales"))
                for (auto& [trait, sj] : item.at("trait_scales").items())
                    rp.scales[trait] = scale_from_json(trait, sj);
        }
        return out;
    }
    const auto rows = text::parse_delimited(data, text::sniff_delimiter(data));
    if (rows.empty()) throw SchemaError("prompt_id", "prompts file is empty: " + path);
    const auto& header = rows.front();
    auto col = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw SchemaError(name, "prompts file " + path + " lacks column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto id_col = col("prompt_id");
    const auto topic_col = col("topic_text");
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() <= std::max(id_col, topic_col))
            throw ValidationError("prompts file " + path + " row " + std::to_string(r + 1) +
                                  " is short");
        out[row[id_col]].topic = row[topic_col];
    }
    return out;
}

}  // namespace detail

inline void Dataset::validate() const {
    std::set<std::string> prompt_ids;
    for (const auto& p : prompts) {
        if (text::is_blank(p.topic_text))
            throw ValidationError("prompt " + p.prompt_id + " has empty topic text");
        if (!prompt_ids.insert(p.prompt_id).second)
            throw ValidationError("duplicate prompt_id " + p.prompt_id);
        for (const auto& [trait, scale] : p.trait_scales) scale.validate();
    }
    std::set<std::string> essay_ids;
    for (const auto& e : essays) {
        if (!essay_ids.insert(e.essay_id).second)
            throw ValidationError("duplicate essay_id " + e.essay_id, {e.essay_id});
        if (!prompt_ids.contains(e.prompt_id))
            throw ValidationError("essay " + e.essay_id + " references unknown prompt " + e.prompt_id,
                                  {e.essay_id});
        const auto& p = prompt(e.prompt_id);
        for (const auto& [trait, value] : e.scores)
            if (!p.scale(trait).contains(value))
                throw ValidationError("essay " + e.essay_id + " score out of scale for " + trait,
                                      {e.essay_id});
        if (e.sentences.empty())
            throw ValidationError("essay " + e.essay_id + " has no sentences", {e.essay_id});
        std::size_t prev_end = 0;
        for (const auto& sp : e.sentences) {
            if (sp.start < prev_end || sp.end > e.text.size() || sp.start >= sp.end ||
                text::is_blank(std::string_view(e.text).substr(sp.start, sp.size())))
                throw ValidationError("essay " + e.essay_id + " has an invalid sentence span",
                                      {e.essay_id});
            prev_end = sp.end;
        }
    }
}

// Loads a delimited essay file under a column mapping. Rows whose text is blank
// or that lack any mapped trait score are dropped and counted; everything else
// must validate or the whole load fails.
inline LoadResult load_dataset(const std::string& path, const SchemaConfig& schema) {
    const auto data = text::read_file(path);
    const char delim = schema.delimiter.value_or(text::sniff_delimiter(data));
    const auto rows = text::parse_delimited(data, delim);
    if (rows.empty()) throw SchemaError(schema.essay_id_column, "empty dataset file: " + path);

    const auto& header = rows.front();
    auto col = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw SchemaError(name, "dataset " + path + " lacks mapped column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto id_col = col(schema.essay_id_column);
    const auto prompt_col = col(schema.prompt_id_column);
    const auto text_col = col(schema.text_column);
    std::map<std::string, std::size_t> trait_cols;
    for (const auto& [trait, column] : schema.trait_columns) trait_cols[trait] = col(column);

    auto raw_prompts = detail::read_prompts(schema);

    LoadResult result;
    result.dataset.name = schema.name;
    std::set<std::string> used_prompts;
    std::vector<std::string> out_of_scale, unknown_prompt, duplicates;
    std::set<std::string> seen_ids;

    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        ++result.report.rows_read;
        auto cell = [&](std::size_t c) -> std::string_view {
            return c < row.size() ? std::string_view(row[c]) : std::string_view{};
        };
        EssayRecord e;
        e.essay_id = std::string(text::trim(cell(id_col)));
        e.prompt_id = std::string(text::trim(cell(prompt_col)));
        e.text = text::normalize_whitespace(cell(text_col));

        bool missing = false;
        bool bad_scale = false;
        for (const auto& [trait, c] : trait_cols) {
            const auto raw = text::trim(cell(c));
            if (raw.empty()) {
                missing = true;
                continue;
            }
            const auto v = parse_number(raw);
            if (!v) {
                bad_scale = true;
                continue;
            }
            e.scores[trait] = *v;
        }
        if (missing) {
            ++result.report.dropped;
            result.report.dropped_ids.push_back(e.essay_id);
            continue;
        }
        if (e.text.empty()) {
            ++result.report.dropped_empty_text;
            result.report.dropped_ids.push_back(e.essay_id);
            continue;
        }
        if (!seen_ids.insert(e.essay_id).second) duplicates.push_back(e.essay_id);
        auto pit = raw_prompts.find(e.prompt_id);
        if (pit == raw_prompts.end()) {
            unknown_prompt.push_back(e.essay_id);
            continue;
        }
        for (auto& [trait, value] : e.scores) {
            auto sit = pit->second.scales.find(trait);
            const auto& scale =
                sit != pit->second.scales.end() ? sit->second : schema.trait_scales.at(trait);
            if (auto idx = scale.index_of(value))
                value = scale.levels[*idx];
            else
                bad_scale = true;
        }
        if (bad_scale) {
            out_of_scale.push_back(e.essay_id);
            continue;
        }
        e.sentences = segment_sentences(e.text);
        used_prompts.insert(e.prompt_id);
        result.dataset.essays.push_back(std::move(e));
    }

    auto join = [](const std::vector<std::string>& ids) {
        std::string s;
        for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
        return s;
    };
    if (!duplicates.empty())
        throw ValidationError("duplicate essay_id(s): " + join(duplicates), duplicates);
    if (!out_of_scale.empty())
        throw ValidationError("score outside declared scale for essay(s): " + join(out_of_scale),
                              out_of_scale);
    if (!unknown_prompt.empty())
        throw ValidationError("unresolvable prompt_id for essay(s): " + join(unknown_prompt),
                              unknown_prompt);

    for (const auto& id : used_prompts) {
        const auto& rp = raw_prompts.at(id);
        PromptSpec p{id, text::normalize_whitespace(rp.topic), {}};
        for (const auto& [trait, _] : schema.trait_columns) {
            auto sit = rp.scales.find(trait);
            p.trait_scales[trait] =
                sit != rp.scales.end() ? sit->second : schema.trait_scales.at(trait);
        }
        result.dataset.prompts.push_back(std::move(p));
    }
    result.dataset.validate();
    return result;
}

// ---------------------------------------------------------------------------
// Canonical JSON

inline json to_json(const Dataset& d) {
    json prompts = json::array();
    for (const auto& p : d.prompts) {
        json scales = json::object();
        for (const auto& [trait, s] : p.trait_scales) scales[trait] = s.levels;
        prompts.push_back({{"prompt_id", p.prompt_id}, {"topic_text", p.topic_text},
                           {"trait_scales", scales}});
    }
    json essays = json::array();
    for (const auto& e : d.essays) {
        json spans = json::array();
        for (const auto& s : e.sentences) spans.push_back({s.start, s.end});
        json scores = json::object();
        for (const auto& [trait, v] : e.scores) scores[trait] = v;
        essays.push_back({{"essay_id", e.essay_id}, {"prompt_id", e.prompt_id}, {"text", e.text},
                          {"sentences", spans}, {"scores", scores}});
    }
    return json{{"name", d.name}, {"prompts", prompts}, {"essays", essays}};
}

inline Dataset dataset_from_json(const json& j) {
    Dataset d;
    d.name = j.at("name").get<std::string>();
    for (const auto& pj : j.at("prompts")) {
        PromptSpec p{pj.at("prompt_id").get<std::string>(), pj.at("topic_text").get<std::string>(), {}};
        for (auto& [trait, levels] : pj.at("trait_scales").items())
            p.trait_scales[trait] = TraitScale{trait, levels.get<std::vector<double>>()};
        d.prompts.push_back(std::move(p));
    }
    for (const auto& ej : j.at("essays")) {
        EssayRecord e;
        e.essay_id = ej.at("essay_id").get<std::string>();
        e.prompt_id = ej.at("prompt_id").get<std::string>();
        e.text = ej.at("text").get<std::string>();
        for (const auto& s : ej.at("sentences"))
            e.sentences.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
        for (auto& [trait, v] : ej.at("scores").items()) e.scores[trait] = v.get<double>();
        d.essays.push_back(std::move(e));
    }
    d.validate();
    return d;
}

inline std::string serialize(const Dataset& d) { return to_json(d).dump(1) + "\n"; }

inline Dataset load_canonical(const std::string& path) {
    return dataset_from_json(json::parse(text::read_file(path)));
}

}  // namespace flowseq
