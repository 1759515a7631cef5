#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "flowseq/evaluation.hpp"
#include "flowseq/random.hpp"
#include "fixtures.hpp"

using namespace flowseq;
using fixtures::qwk_oracle;

namespace {

const std::vector<double> kThree = {1, 2, 3};

std::vector<double> levels_1_to(std::size_t k) {
    std::vector<double> v;
    for (std::size_t i = 1; i <= k; ++i) v.push_back(static_cast<double>(i));
    return v;
}

// Quantile-binned labels of a latent score.
std::vector<double> bin(const std::vector<double>& latent, std::size_t levels) {
    std::vector<double> sorted = latent;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> y;
    for (double v : latent) {
        const auto rank = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
        y.push_back(static_cast<double>(1 + rank * levels / sorted.size()));
    }
    return y;
}

FeatureTable table_of(std::vector<double> labels, std::map<std::string, std::vector<double>> cols,
                      std::vector<double> levels) {
    FeatureTable t;
    t.dataset_name = "synthetic";
    t.trait = "Trait";
    t.levels = std::move(levels);
    for (std::size_t i = 0; i < labels.size(); ++i) t.essay_ids.push_back("e" + std::to_string(i));
    t.labels = std::move(labels);
    t.columns = std::move(cols);
    return t;
}

// Topic and context NLL correlated at 0.5; labels follow context only.
FeatureTable context_driven(std::uint64_t seed, std::size_t n, double signal = 1.5) {
    rng::Engine g(seed);
    std::vector<double> t(n), c(n), d(n), latent(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng::normal(g), b = rng::normal(g);
        c[i] = 3.0 + 0.4 * a;
        t[i] = 3.5 + 0.4 * (0.5 * a + std::sqrt(0.75) * b);
        d[i] = t[i] - c[i];
        latent[i] = -signal * a + rng::logistic(g);
    }
    return table_of(bin(latent, 5), {{kNllTopic, t}, {kNllContext, c}, {kDelta, d}}, levels_1_to(5));
}

}  // namespace

TEST(Qwk, PerfectAgreementIsOne) {
    rng::Engine g(1);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> y(1 + rng::uniform_index(g, 30));
        for (auto& v : y) v = 1.0 + static_cast<double>(rng::uniform_index(g, 5));
        EXPECT_EQ(qwk(y, y, levels_1_to(5)), 1.0);
    }
    const std::vector<double> constant(4, 2.0);
    EXPECT_EQ(qwk(constant, constant, kThree), 1.0);
}

TEST(Qwk, HandBuiltThreeByThree) {
    const std::vector<double> a = {1, 1, 2, 2, 3, 3}, b = {1, 2, 1, 3, 2, 3};
    // O has ones off the diagonal at distance 1, E = 2/3 everywhere.
    EXPECT_NEAR(qwk(a, b, kThree), 0.5, 1e-12);
    EXPECT_NEAR(qwk(a, b, kThree), qwk_oracle(a, b, 3), 1e-9);
}

TEST(Qwk, ReversedScaleIsNegative) {
    const std::vector<double> a = {1, 1, 2, 2, 3, 3};
    std::vector<double> b;
    for (double v : a) b.push_back(4 - v);
    EXPECT_LT(qwk(a, b, kThree), 0.0);
    EXPECT_NEAR(qwk(a, b, kThree), qwk_oracle(a, b, 3), 1e-12);
}

TEST(Qwk, OracleBoundsAndJointPermutation) {
    rng::Engine g(3);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 5 + rng::uniform_index(g, 40);
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = 1.0 + static_cast<double>(rng::uniform_index(g, 4));
            b[i] = rng::uniform_index(g, 3) ? a[i] : 1.0 + static_cast<double>(rng::uniform_index(g, 4));
        }
        const double k = qwk(a, b, levels_1_to(4));
        EXPECT_LE(k, 1.0);
        if (a != b) {
            EXPECT_LT(k, 1.0);
        }
        if (std::set<double>(a.begin(), a.end()).size() > 1) {
            EXPECT_NEAR(k, qwk_oracle(a, b, 4), 1e-9);
        }
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng::shuffle(std::span<std::size_t>(perm), g);
        std::vector<double> pa, pb;
        for (auto i : perm) {
            pa.push_back(a[i]);
            pb.push_back(b[i]);
        }
        EXPECT_NEAR(qwk(pa, pb, levels_1_to(4)), k, 1e-12);
    }
}

TEST(Qwk, RejectsBadInput) {
    EXPECT_THROW(qwk(std::vector<double>{1, 2}, std::vector<double>{1}, kThree), ValidationError);
    EXPECT_THROW(qwk(std::vector<double>{}, std::vector<double>{}, kThree), ValidationError);
    EXPECT_THROW(qwk(std::vector<double>{1, 4}, std::vector<double>{1, 2}, kThree), ValidationError);
}

TEST(KFold, SizesPartitionAndDeterminism) {
    for (auto [n, k] : {std::pair<std::size_t, std::size_t>{10, 5}, {11, 5}, {7, 7}, {100, 3}}) {
        const auto folds = kfold_split(n, k, 9);
        ASSERT_EQ(folds.size(), k);
        std::vector<std::size_t> all;
        std::size_t lo = n, hi = 0;
        for (const auto& f : folds) {
            all.insert(all.end(), f.begin(), f.end());
            lo = std::min(lo, f.size());
            hi = std::max(hi, f.size());
        }
        std::sort(all.begin(), all.end());
        for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(all[i], i);
        EXPECT_LE(hi - lo, 1u);
        EXPECT_EQ(kfold_split(n, k, 9), folds);
    }
    std::multiset<std::size_t> sizes;
    for (const auto& f : kfold_split(11, 5, 1)) sizes.insert(f.size());
    EXPECT_EQ(sizes, (std::multiset<std::size_t>{2, 2, 2, 2, 3}));
    EXPECT_NE(kfold_split(50, 5, 1), kfold_split(50, 5, 2));
    EXPECT_THROW(kfold_split(3, 5, 1), PreconditionError);
    EXPECT_THROW(kfold_split(10, 1, 1), PreconditionError);
}

TEST(KFold, StratifiedKeepsProportions) {
    std::vector<std::size_t> strata;
    for (std::size_t i = 0; i < 100; ++i) strata.push_back(i < 20 ? 0 : 1);
    for (const auto& f : kfold_split(100, 5, 3, &strata)) {
        EXPECT_EQ(f.size(), 20u);
        EXPECT_EQ(std::count_if(f.begin(), f.end(), [](auto i) { return i < 20; }), 4);
    }
}

TEST(CrossValidate, ThresholdedLabelsAreRecovered) {
    rng::Engine g(5);
    std::vector<double> x(500), y(500);
    for (std::size_t i = 0; i < 500; ++i) {
        x[i] = rng::normal(g);
        y[i] = x[i] < -0.5 ? 1 : x[i] < 0.5 ? 2 : 3;
    }
    const auto t = table_of(y, {{"x", x}}, kThree);
    const auto r = cross_validate(t, {"x-only", {"x"}});
    EXPECT_GT(r.mean_qwk, 0.9);
    ASSERT_EQ(r.per_fold_qwk.size(), 5u);
    double s = 0;
    for (double q : r.per_fold_qwk) s += q;
    EXPECT_DOUBLE_EQ(r.mean_qwk, s / 5);
}

TEST(CrossValidate, NullLabelsGiveNearZeroKappa) {
    int within = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        rng::Engine g(seed);
        std::vector<double> x(500), y(500);
        for (std::size_t i = 0; i < 500; ++i) {
            x[i] = rng::normal(g);
            y[i] = 1.0 + static_cast<double>(rng::uniform_index(g, 3));
        }
        CvConfig c;
        c.seed = seed;
        within += std::abs(cross_validate(table_of(y, {{"x", x}}, kThree), {"x-only", {"x"}}, c).mean_qwk) < 0.1;
    }
    EXPECT_GE(within, 95);
}

TEST(CrossValidate, LeaveOneOutRuns) {
    rng::Engine g(6);
    std::vector<double> x(20), y(20);
    for (std::size_t i = 0; i < 20; ++i) {
        x[i] = rng::normal(g);
        y[i] = 1.0 + static_cast<double>(i % 3);
    }
    CvConfig c;
    c.k = 20;
    const auto r = cross_validate(table_of(y, {{"x", x}}, kThree), {"x-only", {"x"}}, c);
    EXPECT_EQ(r.per_fold_qwk.size(), 20u);
    for (double q : r.per_fold_qwk) EXPECT_TRUE(std::isfinite(q));
    EXPECT_TRUE(std::isfinite(r.mean_qwk));
}

TEST(CrossValidate, RareLevelIsMergedAndReported) {
    rng::Engine g(7);
    std::vector<double> x(60), y(60);
    for (std::size_t i = 0; i < 60; ++i) {
        x[i] = rng::normal(g);
        y[i] = x[i] < 0 ? 1 : 2;
    }
    y[17] = 3;  // only row at the top level
    const auto r = cross_validate(table_of(y, {{"x", x}}, kThree), {"x-only", {"x"}});
    std::size_t with_merge = 0;
    for (const auto& f : r.folds) {
        if (f.merges.empty()) continue;
        ++with_merge;
        EXPECT_EQ(f.merges, (std::vector<LevelMerge>{{3, 2}}));
    }
    EXPECT_EQ(with_merge, 1u);
    EXPECT_TRUE(std::isfinite(r.mean_qwk));
}

TEST(CrossValidate, MergeTiesGoLower) {
    std::vector<double> y = {1, 1, 3, 3}, present;
    const auto merges = merge_missing_levels(kThree, y, present);
    EXPECT_EQ(merges, (std::vector<LevelMerge>{{2, 1}}));
    EXPECT_EQ(present, (std::vector<double>{1, 3}));
}

TEST(CrossValidate, StandardizationUsesTrainingRowsOnly) {
    rng::Engine g(8);
    std::vector<double> x(50), y(50);
    for (std::size_t i = 0; i < 50; ++i) {
        x[i] = 5 + 2 * rng::normal(g);
        y[i] = 1.0 + static_cast<double>(i % 3);
    }
    const auto table = table_of(y, {{"x", x}}, kThree);
    const auto r = cross_validate(table, {"x-only", {"x"}});
    const auto folds = kfold_split(50, 5, CvConfig{}.seed);
    for (std::size_t f = 0; f < 5; ++f) {
        std::set<std::size_t> held(folds[f].begin(), folds[f].end());
        ordinal::MatrixXd train(40, 1);
        Eigen::Index k = 0;
        for (std::size_t i = 0; i < 50; ++i)
            if (!held.contains(i)) train(k++, 0) = x[i];
        const auto expect = ordinal::Standardization::fit(train);
        EXPECT_EQ(r.folds[f].standardization.mean, expect.mean) << r.folds[f].standardization.mean[0] - expect.mean[0];
        EXPECT_EQ(r.folds[f].standardization.sd, expect.sd) << r.folds[f].standardization.sd[0] - expect.sd[0];
    }
    // Perturbing the held-out rows of fold 0 leaves that fold's statistics alone.
    auto perturbed = table;
    for (auto i : folds[0]) perturbed.columns["x"][i] += 1000;
    EXPECT_EQ(cross_validate(perturbed, {"x-only", {"x"}}).folds[0].standardization, r.folds[0].standardization);
}

TEST(CrossValidate, DirectSetScoresColumnAndSkipsMissingRows) {
    std::vector<double> y = {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3};
    std::vector<double> judged = y;
    judged[4] = std::nan("");
    judged[7] = 1;
    const auto t = table_of(y, {{kLlmScore, judged}}, kThree);
    const auto r = cross_validate(t, feature_set("llm_score"));
    EXPECT_EQ(r.rows_used, 11u);
    EXPECT_EQ(r.rows_excluded, 1u);
    EXPECT_LT(r.mean_qwk, 1.0);
}

TEST(FeatureSets, NamesAndParsing) {
    for (const auto& n : feature_set_names()) EXPECT_EQ(feature_set(n).name, n);
    EXPECT_EQ(feature_set("both").columns, (std::vector<std::string>{kNllTopic, kNllContext}));
    EXPECT_EQ(feature_set("ling+context").columns.size(), 11u);
    EXPECT_TRUE(feature_set("llm_score").direct);
    EXPECT_THROW(feature_set("bogus"), ConfigError);
    const auto sets = parse_feature_sets(" seq, ling+topic ,context");
    ASSERT_EQ(sets.size(), 3u);
    EXPECT_EQ(sets[1].name, "ling+topic");
    EXPECT_THROW(parse_feature_sets(" , "), ConfigError);
}

TEST(FeatureTable, JoinsUpstreamRows) {
    Dataset d;
    d.name = "mini";
    d.prompts.push_back({"P", "Topic.", {{"Cohesion", TraitScale::range("Cohesion", 1, 5, 0.5)}}});
    for (int i = 0; i < 3; ++i) {
        EssayRecord e;
        e.essay_id = "e" + std::to_string(i);
        e.prompt_id = "P";
        e.text = "Some text here.";
        e.sentences = segment_sentences(e.text);
        e.scores["Cohesion"] = 2.5 + i;
        d.essays.push_back(e);
    }
    std::vector<EssaySequentiality> seq;
    std::vector<std::pair<std::string, FeatureVector>> feats;
    for (int i = 0; i < 3; ++i) {
        seq.push_back({"e" + std::to_string(i), 3.0 + i, 2.0 + i, 1.0, 1, false});
        feats.emplace_back("e" + std::to_string(i), extract_features(d.essays[i].text));
    }
    const std::map<std::string, std::optional<double>> judged = {{"e0", 3.0}, {"e1", std::nullopt}};
    const auto t = build_feature_table(d, "Cohesion", &seq, &feats, &judged);
    EXPECT_EQ(t.rows(), 3u);
    EXPECT_EQ(t.levels.size(), 9u);
    EXPECT_EQ(t.column(kNllContext), (std::vector<double>{2, 3, 4}));
    EXPECT_EQ(t.column("total_words"), (std::vector<double>{3, 3, 3}));
    EXPECT_EQ(t.column(kLlmScore)[0], 3.0);
    EXPECT_TRUE(std::isnan(t.column(kLlmScore)[1]));
    EXPECT_TRUE(std::isnan(t.column(kLlmScore)[2]));
    EXPECT_THROW(t.column("nope"), ConfigError);

    seq.pop_back();
    try {
        build_feature_table(d, "Cohesion", &seq, &feats);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.essay_ids(), (std::vector<std::string>{"e2"}));
    }
    EXPECT_THROW(build_feature_table(d, "Organization", &seq, nullptr), ValidationError);
}

TEST(CompareVariants, ContextDrivenLabelsFavorContext) {
    const auto t = context_driven(11, 3000);
    EvalConfig c;
    c.cross_validate = false;
    const auto r = compare_variants(t, parse_feature_sets("seq,topic,context,both"), c);
    const double ctx = r.find("context")->fit->model.aic;
    EXPECT_LT(ctx, r.find("topic")->fit->model.aic);
    EXPECT_LT(ctx, r.find("seq")->fit->model.aic);
    EXPECT_LE(r.find("both")->fit->model.aic, ctx + 2.0 + 1e-9);
    EXPECT_LT(std::abs(r.find("both")->fit->model.weights[0]), 0.1);
    const auto j = to_json(r);
    EXPECT_EQ(j.at("both_coefficients").at("w_T"), r.find("both")->fit->model.weights[0]);
    EXPECT_TRUE(j.at("both_coefficients").contains("w_C_raw"));
}

TEST(CompareVariants, DuplicateVariantGivesIdenticalRows) {
    const auto t = context_driven(12, 400);
    EvalConfig c;
    c.variant_parallelism = 3;
    const auto r = compare_variants(t, parse_feature_sets("context,topic,context"), c);
    const auto j = to_json(r);
    EXPECT_EQ(j["variants"][0].dump(), j["variants"][2].dump());
    EXPECT_EQ(r.find("context")->cv->per_fold_qwk.size(), 5u);
}

TEST(CompareVariants, FailedVariantDoesNotAbortOthers) {
    const auto t = context_driven(13, 300);
    const auto r = compare_variants(t, parse_feature_sets("context,llm_score,ling"));
    EXPECT_TRUE(r.variants[0].ok);
    EXPECT_FALSE(r.variants[1].ok);
    EXPECT_FALSE(r.variants[2].ok);
    EXPECT_NE(r.variants[1].error.find("llm_score"), std::string::npos);
    const auto j = to_json(r);
    EXPECT_EQ(j["variants"][1]["status"], "failed");
    auto no_topic = t;
    no_topic.columns.erase(kNllTopic);
    const auto table = render_aic_table({compare_variants(no_topic, parse_feature_sets("topic,context"))});
    EXPECT_NE(table.find("failed"), std::string::npos);
}

TEST(CompareVariants, NoiseColumnDoesNotImproveMedianAic) {
    std::vector<double> delta;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto t = context_driven(1000 + seed, 300);
        rng::Engine g(seed);
        std::vector<double> noise(t.rows());
        for (auto& v : noise) v = rng::normal(g);
        t.columns["noise"] = noise;
        const auto base = fit_full(t, {"c", {kNllContext}}).model.aic;
        const auto noisy = fit_full(t, {"c+n", {kNllContext, "noise"}}).model.aic;
        delta.push_back(noisy - base);
    }
    std::nth_element(delta.begin(), delta.begin() + 50, delta.end());
    EXPECT_GE(delta[50], 0.0);
}

TEST(Reports, DeterministicAndShaped) {
    const auto t = context_driven(14, 500);
    EvalConfig c;
    c.cv.parallelism = 4;
    c.variant_parallelism = 4;
    const auto sets = parse_feature_sets("seq,topic,context,both");
    const auto a = compare_variants(t, sets, c);
    EvalConfig serial;
    const auto b = compare_variants(t, sets, serial);
    EXPECT_EQ(serialize(a), serialize(b));
    const auto table = render_aic_table({a, a});
    for (const char* row : {"Seq", "Topic", "Context", "Both"}) EXPECT_NE(table.find(row), std::string::npos);
    EXPECT_EQ(std::count(table.begin(), table.end(), '*'), 3);  // one mark per column plus the legend
    const auto csv = qwk_csv({a});
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    EXPECT_EQ(csv.rfind("dataset,trait,feature_set,mean_qwk,per_fold_qwk", 0), 0u);
}
