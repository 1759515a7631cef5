#pragma once

// Model comparison by AIC on full-data fits, cross-validated QWK per
// feature set, and the report files built from them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowseq/corpus.hpp"
#include "flowseq/errors.hpp"
#include "flowseq/ling_features.hpp"
#include "flowseq/ordinal_regression.hpp"
#include "flowseq/parallel.hpp"
#include "flowseq/random.hpp"
#include "flowseq/sequentiality.hpp"
#include "flowseq/text.hpp"

namespace flowseq {

// ---------------------------------------------------------------------------
// Quadratic weighted kappa

inline double qwk(std::span<const double> y_true, std::span<const double> y_pred, std::span<const double> levels) {
    if (y_true.size() != y_pred.size()) throw ValidationError("qwk: label vectors differ in length");
    if (y_true.empty()) throw ValidationError("qwk: no labels");
    if (levels.empty()) throw ValidationError("qwk: no levels");
    const std::size_t K = levels.size();
    auto index = [&](double v) {
        for (std::size_t k = 0; k < K; ++k)
            if (std::abs(levels[k] - v) <= TraitScale::kMatchTolerance) return k;
        throw ValidationError("qwk: label " + std::to_string(v) + " is not in the level set");
    };
    std::vector<double> obs(K * K, 0.0), row(K, 0.0), col(K, 0.0);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const auto a = index(y_true[i]);
        const auto b = index(y_pred[i]);
        obs[a * K + b] += 1.0;
        row[a] += 1.0;
        col[b] += 1.0;
    }
    if (K == 1) return 1.0;
    const double n = static_cast<double>(y_true.size());
    const double denom_w = static_cast<double>((K - 1) * (K - 1));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) {
            const double d = static_cast<double>(i) - static_cast<double>(j);
            const double w = d * d / denom_w;
            num += w * obs[i * K + j];
            den += w * row[i] * col[j] / n;
        }
    if (den == 0.0) return num == 0.0 ? 1.0 : 0.0;
    return 1.0 - num / den;
}

// ---------------------------------------------------------------------------
// Fold assignment

// Partitions 0..n-1 into k folds whose sizes differ by at most one. With
// `strata`, indices are shuffled within each stratum and dealt round-robin,
// which keeps label proportions close across folds.
inline std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed,
                                                         const std::vector<std::size_t>* strata = nullptr) {
    if (k < 2) throw PreconditionError("k-fold needs k >= 2");
    if (n < k) throw PreconditionError("k-fold needs at least k rows");
    if (strata && strata->size() != n) throw PreconditionError("strata length does not match n");
    rng::Engine g(rng::splitmix64(seed));
    std::vector<std::vector<std::size_t>> folds(k);
    if (!strata) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng::shuffle(std::span<std::size_t>(perm), g);
        std::size_t pos = 0;
        for (std::size_t f = 0; f < k; ++f) {
            const std::size_t size = n / k + (f < n % k ? 1 : 0);
            folds[f].assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                            perm.begin() + static_cast<std::ptrdiff_t>(pos + size));
            pos += size;
        }
    } else {
        std::map<std::size_t, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < n; ++i) groups[(*strata)[i]].push_back(i);
        std::size_t next = 0;
        for (auto& [label, members] : groups) {
            rng::shuffle(std::span<std::size_t>(members), g);
            for (auto i : members) {
                folds[next].push_back(i);
                next = (next + 1) % k;
            }
        }
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

// ---------------------------------------------------------------------------
// Feature table

// One row per essay carrying the trait label and every available predictor
// column. Missing values (an unjudged essay's llm_score) are NaN.
struct FeatureTable {
    std::string dataset_name;
    std::string trait;
    std::vector<double> levels;
    std::vector<std::string> essay_ids;
    std::vector<double> labels;
    std::map<std::string, std::vector<double>> columns;

    std::size_t rows() const noexcept { return labels.size(); }

    const std::vector<double>& column(const std::string& name) const {
        auto it = columns.find(name);
        if (it == columns.end()) throw ConfigError("feature column not available: " + name);
        return it->second;
    }

    void validate() const {
        if (essay_ids.size() != labels.size()) throw PreconditionError("feature table: id/label mismatch");
        for (const auto& [name, v] : columns)
            if (v.size() != labels.size()) throw PreconditionError("feature table: column " + name + " has wrong length");
    }
};

inline constexpr const char* kNllTopic = "mean_nll_topic";
inline constexpr const char* kNllContext = "mean_nll_context";
inline constexpr const char* kDelta = "mean_delta";
inline constexpr const char* kLlmScore = "llm_score";

// Joins sequentiality, linguistic features and judge scores onto the essays
// that carry `trait`. Essays lacking a sequentiality or feature row when those
// inputs are supplied are rejected, since every variant needs them.
inline FeatureTable build_feature_table(const Dataset& dataset, const std::string& trait,
                                        const std::vector<EssaySequentiality>* seq,
                                        const std::vector<std::pair<std::string, FeatureVector>>* features,
                                        const std::map<std::string, std::optional<double>>* judged = nullptr) {
    FeatureTable t;
    t.dataset_name = dataset.name;
    t.trait = trait;
    std::map<std::string, const EssaySequentiality*> seq_by_id;
    if (seq)
        for (const auto& s : *seq) seq_by_id[s.essay_id] = &s;
    std::map<std::string, const FeatureVector*> feat_by_id;
    if (features)
        for (const auto& [id, f] : *features) feat_by_id[id] = &f;

    std::optional<std::vector<double>> levels;
    std::vector<std::string> missing;
    for (const auto& e : dataset.essays) {
        auto sc = e.scores.find(trait);
        if (sc == e.scores.end()) continue;
        const auto& scale = dataset.prompt(e.prompt_id).scale(trait);
        if (!levels) levels = scale.levels;
        else if (*levels != scale.levels)
            throw ValidationError("trait " + trait + " uses different scales across prompts; evaluate per prompt");
        const EssaySequentiality* s = nullptr;
        const FeatureVector* f = nullptr;
        if (seq) {
            auto it = seq_by_id.find(e.essay_id);
            if (it == seq_by_id.end()) {
                missing.push_back(e.essay_id);
                continue;
            }
            s = it->second;
        }
        if (features) {
            auto it = feat_by_id.find(e.essay_id);
            if (it == feat_by_id.end()) {
                missing.push_back(e.essay_id);
                continue;
            }
            f = it->second;
        }
        t.essay_ids.push_back(e.essay_id);
        t.labels.push_back(sc->second);
        if (s) {
            t.columns[kNllTopic].push_back(s->mean_nll_topic);
            t.columns[kNllContext].push_back(s->mean_nll_context);
            t.columns[kDelta].push_back(s->mean_delta);
        }
        if (f) {
            const auto v = f->values();
            for (std::size_t k = 0; k < v.size(); ++k)
                t.columns[std::string(FeatureVector::kNames[k])].push_back(static_cast<double>(v[k]));
        }
        if (judged) {
            auto it = judged->find(e.essay_id);
            t.columns[kLlmScore].push_back(it != judged->end() && it->second ? *it->second
                                                                              : std::nan(""));
        }
    }
    if (!missing.empty())
        throw ValidationError("essays lack upstream predictor rows", std::move(missing));
    if (!levels) throw ValidationError("no essay carries trait " + trait);
    t.levels = *levels;
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// Feature sets

struct FeatureSetSpec {
    std::string name;
    std::vector<std::string> columns;
    // Scored directly against the human labels instead of through a fitted
    // model (the zero-shot judge baseline).
    bool direct = false;

    bool operator==(const FeatureSetSpec&) const = default;
};

inline std::vector<std::string> ling_columns() {
    return {FeatureVector::kNames.begin(), FeatureVector::kNames.end()};
}

inline const std::vector<std::string>& feature_set_names() {
    static const std::vector<std::string> names = {"seq",        "topic",        "context",
                                                   "both",       "ling",         "ling+seq",
                                                   "ling+topic", "ling+context", "llm_score",
                                                   "ling+llm_score"};
    return names;
}

inline FeatureSetSpec feature_set(const std::string& name) {
    auto with_ling = [](std::vector<std::string> extra) {
        auto cols = ling_columns();
        cols.insert(cols.end(), extra.begin(), extra.end());
        return cols;
    };
    if (name == "seq") return {name, {kDelta}};
    if (name == "topic") return {name, {kNllTopic}};
    if (name == "context") return {name, {kNllContext}};
    if (name == "both") return {name, {kNllTopic, kNllContext}};
    if (name == "ling") return {name, ling_columns()};
    if (name == "ling+seq") return {name, with_ling({kDelta})};
    if (name == "ling+topic") return {name, with_ling({kNllTopic})};
    if (name == "ling+context") return {name, with_ling({kNllContext})};
    if (name == "llm_score") return {name, {kLlmScore}, true};
    if (name == "ling+llm_score") return {name, with_ling({kLlmScore})};
    throw ConfigError("unknown feature set: " + name);
}

inline std::vector<FeatureSetSpec> parse_feature_sets(const std::string& comma_list) {
    std::vector<FeatureSetSpec> out;
    std::stringstream ss(comma_list);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!text::is_blank(item)) out.push_back(feature_set(std::string(text::trim(item))));
    if (out.empty()) throw ConfigError("no feature sets given");
    return out;
}

namespace detail {

// Rows where every requested column is finite.
inline std::vector<std::size_t> complete_rows(const FeatureTable& t, const FeatureSetSpec& spec) {
    std::vector<const std::vector<double>*> cols;
    for (const auto& c : spec.columns) cols.push_back(&t.column(c));
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < t.rows(); ++i)
        if (std::all_of(cols.begin(), cols.end(), [&](auto* c) { return std::isfinite((*c)[i]); }))
            rows.push_back(i);
    return rows;
}

inline ordinal::MatrixXd gather(const FeatureTable& t, const FeatureSetSpec& spec,
                                std::span<const std::size_t> rows) {
    ordinal::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(spec.columns.size()));
    for (std::size_t j = 0; j < spec.columns.size(); ++j) {
        const auto& c = t.column(spec.columns[j]);
        for (std::size_t r = 0; r < rows.size(); ++r)
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = c[rows[r]];
    }
    return x;
}

inline std::vector<double> gather_labels(const FeatureTable& t, std::span<const std::size_t> rows) {
    std::vector<double> y;
    y.reserve(rows.size());
    for (auto r : rows) y.push_back(t.labels[r]);
    return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cross-validation

struct LevelMerge {
    double from = 0.0;
    double to = 0.0;
    bool operator==(const LevelMerge&) const = default;
};

struct FoldResult {
    double qwk = 0.0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    ordinal::Standardization standardization;  // fitted on the training rows only
    std::vector<LevelMerge> merges;
    bool converged = true;
};

struct CvResult {
    std::vector<FoldResult> folds;
    std::vector<double> per_fold_qwk;
    double mean_qwk = 0.0;
    std::size_t rows_used = 0;
    std::size_t rows_excluded = 0;  // missing values in a requested column
};

struct CvConfig {
    std::size_t k = 5;
    std::uint64_t seed = 42;
    bool stratify = false;
    std::size_t parallelism = 1;
    ordinal::FitConfig fit;
};

// Levels absent from a training fold are mapped to the nearest present level
// (the lower one on ties) for that fold's fit.
inline std::vector<LevelMerge> merge_missing_levels(std::span<const double> levels, std::vector<double>& y,
                                                    std::vector<double>& present) {
    present.clear();
    for (double l : levels)
        if (std::any_of(y.begin(), y.end(), [&](double v) { return std::abs(v - l) <= TraitScale::kMatchTolerance; }))
            present.push_back(l);
    std::vector<LevelMerge> merges;
    if (present.size() == levels.size()) return merges;
    if (present.empty()) throw DegenerateLabelError("training rows carry no labels");
    for (double l : levels) {
        if (std::find(present.begin(), present.end(), l) != present.end()) continue;
        double best = present.front();
        for (double p : present)
            if (std::abs(p - l) < std::abs(best - l)) best = p;
        merges.push_back({l, best});
        for (auto& v : y)
            if (std::abs(v - l) <= TraitScale::kMatchTolerance) v = best;
    }
    return merges;
}

inline CvResult cross_validate(const FeatureTable& table, const FeatureSetSpec& spec, const CvConfig& config = {}) {
    table.validate();
    if (spec.columns.empty()) throw ConfigError("feature set " + spec.name + " has no columns");
    const auto rows = detail::complete_rows(table, spec);
    CvResult res;
    res.rows_used = rows.size();
    res.rows_excluded = table.rows() - rows.size();

    std::optional<std::vector<std::size_t>> strata;
    if (config.stratify) {
        strata.emplace();
        for (auto r : rows) {
            std::size_t k = 0;
            while (k < table.levels.size() &&
                   std::abs(table.levels[k] - table.labels[r]) > TraitScale::kMatchTolerance)
                ++k;
            strata->push_back(k);
        }
    }
    const auto folds = kfold_split(rows.size(), config.k, config.seed, strata ? &*strata : nullptr);
    res.folds.resize(folds.size());

    parallel_for(folds.size(), config.parallelism, [&](std::size_t f) {
        std::vector<char> held(rows.size(), 0);
        for (auto i : folds[f]) held[i] = 1;
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < rows.size(); ++i) (held[i] ? test : train).push_back(rows[i]);
        FoldResult& out = res.folds[f];
        out.n_train = train.size();
        out.n_test = test.size();
        const auto y_test = detail::gather_labels(table, test);
        std::vector<double> pred;
        pred.reserve(test.size());
        if (spec.direct) {
            const auto& c = table.column(spec.columns.front());
            for (auto r : test) pred.push_back(c[r]);
        } else {
            auto x_train = detail::gather(table, spec, train);
            auto y_train = detail::gather_labels(table, train);
            std::vector<double> present;
            out.merges = merge_missing_levels(table.levels, y_train, present);
            auto design = ordinal::DesignMatrix::standardized(std::move(x_train), spec.columns);
            out.standardization = design.standardization;
            const auto model = ordinal::fit(design, y_train, present, config.fit);
            out.converged = model.converged;
            const auto x_test = detail::gather(table, spec, test);
            for (Eigen::Index r = 0; r < x_test.rows(); ++r) {
                const ordinal::VectorXd row = x_test.row(r).transpose();
                pred.push_back(ordinal::predict(model, std::span<const double>(row.data(), static_cast<std::size_t>(row.size()))));
            }
        }
        out.qwk = qwk(y_test, pred, table.levels);
    });
    for (const auto& f : res.folds) res.per_fold_qwk.push_back(f.qwk);
    res.mean_qwk = std::accumulate(res.per_fold_qwk.begin(), res.per_fold_qwk.end(), 0.0) /
                   static_cast<double>(res.per_fold_qwk.size());
    return res;
}

// ---------------------------------------------------------------------------
// Variant comparison

struct FullFit {
    ordinal::OrdinalModel model;
    std::size_t rows_used = 0;
};

inline FullFit fit_full(const FeatureTable& table, const FeatureSetSpec& spec, const ordinal::FitConfig& config = {}) {
    const auto rows = detail::complete_rows(table, spec);
    auto design = ordinal::DesignMatrix::standardized(detail::gather(table, spec, rows), spec.columns);
    const auto y = detail::gather_labels(table, rows);
    return {ordinal::fit(design, y, table.levels, config), rows.size()};
}

struct VariantResult {
    FeatureSetSpec spec;
    bool ok = false;
    std::string error;
    std::optional<FullFit> fit;
    std::optional<CvResult> cv;
};

struct EvalConfig {
    CvConfig cv;
    bool cross_validate = true;
    std::size_t variant_parallelism = 1;
};

struct EvalReport {
    std::string dataset_name;
    std::string trait;
    std::size_t rows = 0;
    EvalConfig config;
    std::vector<VariantResult> variants;

    const VariantResult* find(const std::string& name) const {
        for (const auto& v : variants)
            if (v.spec.name == name) return &v;
        return nullptr;
    }
};

inline EvalReport compare_variants(const FeatureTable& table, const std::vector<FeatureSetSpec>& variants,
                                   const EvalConfig& config = {}) {
    table.validate();
    EvalReport report;
    report.dataset_name = table.dataset_name;
    report.trait = table.trait;
    report.rows = table.rows();
    report.config = config;
    report.variants.resize(variants.size());
    parallel_for(variants.size(), config.variant_parallelism, [&](std::size_t v) {
        VariantResult& out = report.variants[v];
        out.spec = variants[v];
        try {
            out.fit = fit_full(table, out.spec, config.cv.fit);
            if (config.cross_validate) out.cv = cross_validate(table, out.spec, config.cv);
            out.ok = true;
        } catch (const Error& e) {
            out.ok = false;
            out.error = e.what();
        }
    });
    return report;
}

// ---------------------------------------------------------------------------
// Report files

inline json to_json(const EvalReport& r) {
    json variants = json::array();
    for (const auto& v : r.variants) {
        json j{{"name", v.spec.name}, {"columns", v.spec.columns}, {"status", v.ok ? "ok" : "failed"}};
        if (!v.ok) j["error"] = v.error;
        if (v.fit) {
            const auto& m = v.fit->model;
            json coef = json::object(), raw = json::object();
            const auto rw = m.raw_weights();
            for (std::size_t c = 0; c < m.column_names.size(); ++c) {
                coef[m.column_names[c]] = m.weights[static_cast<Eigen::Index>(c)];
                raw[m.column_names[c]] = rw[static_cast<Eigen::Index>(c)];
            }
            j["aic"] = m.aic;
            j["loglik"] = m.loglik;
            j["rows_used"] = v.fit->rows_used;
            j["coefficients"] = coef;
            j["coefficients_raw"] = raw;
            j["model"] = ordinal::to_json(m);
        }
        if (v.cv) {
            j["mean_qwk"] = v.cv->mean_qwk;
            j["per_fold_qwk"] = v.cv->per_fold_qwk;
            j["cv_rows_excluded"] = v.cv->rows_excluded;
            json merges = json::array();
            for (std::size_t f = 0; f < v.cv->folds.size(); ++f)
                for (const auto& m : v.cv->folds[f].merges)
                    merges.push_back({{"fold", f}, {"from", m.from}, {"to", m.to}});
            j["level_merges"] = merges;
        }
        variants.push_back(std::move(j));
    }
    json out{{"dataset", r.dataset_name},
             {"trait", r.trait},
             {"rows", r.rows},
             {"k", r.config.cv.k},
             {"seed", r.config.cv.seed},
             {"stratified", r.config.cv.stratify},
             {"ridge", r.config.cv.fit.ridge},
             {"variants", variants}};
    if (const auto* both = r.find("both"); both && both->fit) {
        const auto& m = both->fit->model;
        const auto rw = m.raw_weights();
        out["both_coefficients"] = {{"w_T", m.weights[0]},
                                    {"w_C", m.weights[1]},
                                    {"w_T_raw", rw[0]},
                                    {"w_C_raw", rw[1]}};
    }
    return out;
}

inline std::string serialize(const EvalReport& r) { return to_json(r).dump(1) + "\n"; }

// AIC table: one row per sequentiality variant, one column per trait report.
inline std::string render_aic_table(const std::vector<EvalReport>& reports) {
    static const std::vector<std::pair<std::string, std::string>> rows = {
        {"Seq", "seq"}, {"Topic", "topic"}, {"Context", "context"}, {"Both", "both"}};
    std::ostringstream out;
    out << "Model fit (AIC, lower is better)";
    if (!reports.empty()) out << ": " << reports.front().dataset_name;
    out << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-10s", "Variant");
    out << buf;
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, " %14s", r.trait.c_str());
        out << buf;
    }
    out << "\n";
    for (const auto& [label, name] : rows) {
        std::snprintf(buf, sizeof buf, "%-10s", label.c_str());
        out << buf;
        for (const auto& r : reports) {
            const auto* v = r.find(name);
            // Mark the best of the four per column.
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [l2, n2] : rows)
                if (const auto* o = r.find(n2); o && o->fit) best = std::min(best, o->fit->model.aic);
            if (!v) std::snprintf(buf, sizeof buf, " %14s", "-");
            else if (!v->fit) std::snprintf(buf, sizeof buf, " %14s", "failed");
            else
                std::snprintf(buf, sizeof buf, " %13.2f%s", v->fit->model.aic, v->fit->model.aic == best ? "*" : " ");
            out << buf;
        }
        out << "\n";
    }
    out << "* lowest AIC in column\n";
    return out.str();
}

inline std::string qwk_csv(const std::vector<EvalReport>& reports) {
    std::string out = text::csv_row({"dataset", "trait", "feature_set", "mean_qwk", "per_fold_qwk"});
    char buf[32];
    for (const auto& r : reports)
        for (const auto& v : r.variants) {
            if (!v.cv) {
                out += text::csv_row({r.dataset_name, r.trait, v.spec.name, "", ""});
                continue;
            }
            std::string folds;
            for (std::size_t f = 0; f < v.cv->per_fold_qwk.size(); ++f) {
                std::snprintf(buf, sizeof buf, "%.6f", v.cv->per_fold_qwk[f]);
                folds += (f ? ";" : "") + std::string(buf);
            }
            std::snprintf(buf, sizeof buf, "%.6f", v.cv->mean_qwk);
            out += text::csv_row({r.dataset_name, r.trait, v.spec.name, buf, folds});
        }
    return out;
}

}  // namespace flowseq
