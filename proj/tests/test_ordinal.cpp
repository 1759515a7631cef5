#include <gtest/gtest.h>

#include <cmath>

#include "flowseq/ordinal_regression.hpp"
#include "flowseq/random.hpp"

using namespace flowseq;
using namespace flowseq::ordinal;

namespace {

const std::vector<double> kThree = {1, 2, 3};

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct Sample {
    MatrixXd x;
    std::vector<double> y;
};

// Draws labels from the proportional-odds model itself (latent + logistic noise).
Sample draw(rng::Engine& g, std::size_t n, const VectorXd& w, const VectorXd& theta, double x_scale = 1.0,
            double x_shift = 0.0) {
    Sample s{MatrixXd(static_cast<Eigen::Index>(n), w.size()), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        double eta = 0;
        for (Eigen::Index j = 0; j < w.size(); ++j) {
            s.x(r, j) = x_shift + x_scale * rng::normal(g);
            eta += s.x(r, j) * w[j];
        }
        const double latent = eta + rng::logistic(g);
        std::size_t k = 0;
        while (k < static_cast<std::size_t>(theta.size()) && latent > theta[static_cast<Eigen::Index>(k)]) ++k;
        s.y[i] = static_cast<double>(k + 1);
    }
    return s;
}

std::vector<double> levels_1_to(std::size_t k) {
    std::vector<double> v;
    for (std::size_t i = 1; i <= k; ++i) v.push_back(static_cast<double>(i));
    return v;
}

OrdinalModel handmade(VectorXd w, VectorXd theta, std::vector<double> levels) {
    OrdinalModel m;
    m.standardization = Standardization::identity(static_cast<std::size_t>(w.size()));
    for (Eigen::Index j = 0; j < w.size(); ++j) m.column_names.push_back("x" + std::to_string(j));
    m.weights = std::move(w);
    m.thresholds = std::move(theta);
    m.levels = std::move(levels);
    return m;
}

}  // namespace

TEST(OrdinalFit, InterceptOnlyMatchesCumulativeLogits) {
    const std::vector<double> y = {1, 1, 2, 2, 2, 2, 2, 3, 3, 3};
    const auto m = fit(DesignMatrix::unstandardized(MatrixXd::Zero(10, 1), {"zero"}), y, kThree);
    EXPECT_TRUE(m.converged);
    EXPECT_NEAR(m.weights[0], 0.0, 1e-9);
    EXPECT_NEAR(m.thresholds[0], std::log(0.2 / 0.8), 1e-9);
    EXPECT_NEAR(m.thresholds[1], std::log(0.7 / 0.3), 1e-9);
    EXPECT_NEAR(m.thresholds[0], -1.3863, 1e-4);
    EXPECT_NEAR(m.thresholds[1], 0.8473, 1e-4);
    const double hand = 2 * std::log(0.2) + 5 * std::log(0.5) + 3 * std::log(0.3);
    EXPECT_NEAR(m.loglik, hand, 1e-12);
    EXPECT_NEAR(m.loglik, -10.2965, 1e-4);
    EXPECT_EQ(m.aic, 2.0 * 3 - 2.0 * m.loglik);
}

TEST(OrdinalFit, RecoversGeneratingParameters) {
    rng::Engine g(2024);
    VectorXd w(1), th(2);
    w << 1.5;
    th << -1, 1;
    const auto s = draw(g, 2000, w, th);
    const auto m = fit(DesignMatrix::unstandardized(s.x, {"x"}), s.y, kThree);
    ASSERT_TRUE(m.converged);
    EXPECT_NEAR(m.weights[0], 1.5, 0.1);
    EXPECT_NEAR(m.thresholds[0], -1.0, 0.15);
    EXPECT_NEAR(m.thresholds[1], 1.0, 0.15);
    // MLE optimality on the training data.
    const auto truth = handmade(w, th, kThree);
    EXPECT_GE(m.loglik, loglik(truth, DesignMatrix::unstandardized(s.x, {"x"}), s.y));
    // A grid around the estimate never beats it.
    for (double dw : {-0.01, 0.01}) {
        auto probe = m;
        probe.weights[0] += dw;
        EXPECT_LT(loglik(probe, DesignMatrix::unstandardized(s.x, {"x"}), s.y), m.loglik);
    }
}

TEST(OrdinalFit, StandardizedFitReportsRawCoefficients) {
    rng::Engine g(7);
    VectorXd w(2), th(3);
    w << 0.8, -0.5;
    th << -1.5, 0, 1.2;
    const auto s = draw(g, 3000, w, th, 3.0, 10.0);
    const auto raw = fit(DesignMatrix::unstandardized(s.x, {"a", "b"}), s.y, levels_1_to(4));
    const auto std_fit = fit(DesignMatrix::standardized(s.x, {"a", "b"}), s.y, levels_1_to(4));
    ASSERT_TRUE(raw.converged);
    ASSERT_TRUE(std_fit.converged);
    EXPECT_NEAR(std_fit.loglik, raw.loglik, 1e-7);
    for (Eigen::Index j = 0; j < 2; ++j) EXPECT_NEAR(std_fit.raw_weights()[j], raw.weights[j], 1e-5);
    for (Eigen::Index k = 0; k < 3; ++k) EXPECT_NEAR(std_fit.raw_thresholds()[k], raw.thresholds[k], 1e-4);
}

TEST(OrdinalFit, ShiftMovesThresholdsOnly) {
    rng::Engine g(8);
    VectorXd w(2), th(2);
    w << 1.0, 0.4;
    th << -0.5, 0.7;
    auto s = draw(g, 800, w, th);
    const auto base = fit(DesignMatrix::unstandardized(s.x, {"a", "b"}), s.y, kThree);
    const double c = 3.25;
    MatrixXd shifted = s.x;
    shifted.col(0).array() += c;
    const auto moved = fit(DesignMatrix::unstandardized(shifted, {"a", "b"}), s.y, kThree);
    EXPECT_NEAR(moved.weights[0], base.weights[0], 1e-6);
    EXPECT_NEAR(moved.weights[1], base.weights[1], 1e-6);
    for (Eigen::Index k = 0; k < 2; ++k) EXPECT_NEAR(moved.thresholds[k], base.thresholds[k] + c * base.weights[0], 1e-6);
    EXPECT_NEAR(moved.loglik, base.loglik, 1e-8);
    EXPECT_NEAR(moved.aic, base.aic, 1e-8);
    for (Eigen::Index i = 0; i < s.x.rows(); ++i) {
        const std::vector<double> a = {s.x(i, 0), s.x(i, 1)}, b = {shifted(i, 0), shifted(i, 1)};
        EXPECT_EQ(predict(base, a), predict(moved, b));
    }
}

TEST(OrdinalFit, ScaleRescalesWeightAndKeepsPredictions) {
    rng::Engine g(9);
    VectorXd w(1), th(2);
    w << -1.2;
    th << -0.3, 0.9;
    auto s = draw(g, 600, w, th);
    const auto base = fit(DesignMatrix::unstandardized(s.x, {"a"}), s.y, kThree);
    const double a = 4.0;
    const MatrixXd scaled = s.x * a;
    const auto m = fit(DesignMatrix::unstandardized(scaled, {"a"}), s.y, kThree);
    EXPECT_NEAR(m.weights[0], base.weights[0] / a, 1e-6);
    EXPECT_NEAR(m.loglik, base.loglik, 1e-8);
    for (Eigen::Index i = 0; i < s.x.rows(); ++i)
        EXPECT_EQ(predict(base, std::vector<double>{s.x(i, 0)}), predict(m, std::vector<double>{scaled(i, 0)}));
}

TEST(OrdinalFit, DegenerateLabelsAreRejected) {
    const MatrixXd x = MatrixXd::Random(6, 1);
    const std::vector<double> constant(6, 2.0);
    EXPECT_THROW(fit(DesignMatrix::unstandardized(x, {"x"}), constant, kThree), DegenerateLabelError);
    const std::vector<double> missing_middle = {1, 1, 1, 3, 3, 3};
    EXPECT_THROW(fit(DesignMatrix::unstandardized(x, {"x"}), missing_middle, kThree), DegenerateLabelError);
    EXPECT_THROW(fit(DesignMatrix::unstandardized(x, {"x"}), constant, std::vector<double>{2}), DegenerateLabelError);
    const std::vector<double> off_scale = {1, 2, 3, 1, 2, 7};
    EXPECT_THROW(fit(DesignMatrix::unstandardized(x, {"x"}), off_scale, kThree), Error);
}

TEST(OrdinalFit, NonFiniteDesignIsRejected) {
    MatrixXd x = MatrixXd::Zero(4, 1);
    x(2, 0) = std::nan("");
    EXPECT_THROW(fit(DesignMatrix::unstandardized(x, {"x"}), std::vector<double>{1, 2, 3, 1}, kThree),
                 PreconditionError);
}

TEST(OrdinalFit, SeparationIsFlagged) {
    MatrixXd x(8, 1);
    x << -4, -3, -2, -1, 1, 2, 3, 4;
    const std::vector<double> y = {1, 1, 1, 1, 2, 2, 2, 2};
    FitConfig c;
    c.ridge = 0;
    const auto m = fit(DesignMatrix::unstandardized(x, {"x"}), y, std::vector<double>{1, 2}, c);
    EXPECT_TRUE(m.separation_suspected);
}

TEST(OrdinalFit, ThresholdsIncreaseAndAicIdentityHolds) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        rng::Engine g(seed);
        VectorXd w(2), th(4);
        w << rng::normal(g), rng::normal(g);
        th << -2, -0.5, 0.5, 2;
        const auto s = draw(g, 300, w, th);
        const auto m = fit(DesignMatrix::standardized(s.x, {"a", "b"}), s.y, levels_1_to(5));
        for (Eigen::Index k = 1; k < m.thresholds.size(); ++k) EXPECT_LT(m.thresholds[k - 1], m.thresholds[k]);
        EXPECT_EQ(m.aic, 2.0 * static_cast<double>(2 + 4) - 2.0 * m.loglik);
        EXPECT_EQ(m.aic, aic(m.loglik, m.num_parameters()));
        EXPECT_LE(m.loglik, 0.0);
    }
}

TEST(OrdinalDerivatives, GradientMatchesCentralDifferences) {
    rng::Engine g(31);
    const double h = 1e-5;
    for (int point = 0; point < 20; ++point) {
        const Eigen::Index n = 40, p = 3, m = 3;
        MatrixXd z(n, p);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < p; ++j) z(i, j) = rng::normal(g);
        std::vector<std::size_t> y(static_cast<std::size_t>(n));
        for (auto& v : y) v = rng::uniform_index(g, m + 1);
        VectorXd w(p), th(m);
        for (Eigen::Index j = 0; j < p; ++j) w[j] = rng::normal(g);
        th[0] = rng::normal(g) - 1;
        for (Eigen::Index k = 1; k < m; ++k) th[k] = th[k - 1] + 0.2 + rng::uniform01(g);

        const auto d = loglik_derivatives(z, y, w, th, true);
        VectorXd params(p + m);
        params << w, th;
        auto value = [&](const VectorXd& q) {
            return loglik_derivatives(z, y, q.head(p), q.tail(m), false).value;
        };
        VectorXd fd(p + m);
        for (Eigen::Index k = 0; k < p + m; ++k) {
            VectorXd up = params, dn = params;
            up[k] += h;
            dn[k] -= h;
            fd[k] = (value(up) - value(dn)) / (2 * h);
        }
        for (Eigen::Index k = 0; k < p + m; ++k)
            EXPECT_LE(std::abs(d.gradient[k] - fd[k]), 1e-4 * std::max(1.0, std::abs(d.gradient[k])))
                << "point " << point << " component " << k;

        // Hessian against differences of the analytic gradient.
        for (Eigen::Index k = 0; k < p + m; ++k) {
            VectorXd up = params, dn = params;
            up[k] += h;
            dn[k] -= h;
            const VectorXd gu = loglik_derivatives(z, y, up.head(p), up.tail(m), false).gradient;
            const VectorXd gd = loglik_derivatives(z, y, dn.head(p), dn.tail(m), false).gradient;
            const VectorXd col = (gu - gd) / (2 * h);
            for (Eigen::Index r = 0; r < p + m; ++r)
                EXPECT_LE(std::abs(d.hessian(r, k) - col[r]), 1e-4 * std::max(1.0, std::abs(col[r])));
        }
    }
}

TEST(OrdinalPredict, ProbabilityExamples) {
    VectorXd w(1), th(2);
    w << 1.0;
    th << -1, 1;
    const auto m = handmade(w, th, kThree);
    const auto p0 = predict_proba(m, std::vector<double>{0.0});
    EXPECT_NEAR(p0[0], sig(-1), 1e-15);
    EXPECT_NEAR(p0[1], sig(1) - sig(-1), 1e-15);
    EXPECT_NEAR(p0[2], 1 - sig(1), 1e-15);
    EXPECT_NEAR(p0[0], 0.2689, 1e-4);
    EXPECT_NEAR(p0[1], 0.4621, 1e-4);
    EXPECT_EQ(predict(m, std::vector<double>{0.0}), 2.0);
    const auto p50 = predict_proba(m, std::vector<double>{50.0});
    EXPECT_GT(p50[2], 1 - 1e-15);
    EXPECT_LT(p50[0], 1e-20);
    EXPECT_EQ(predict(m, std::vector<double>{50.0}), 3.0);
    EXPECT_EQ(predict(m, std::vector<double>{-50.0}), 1.0);
}

TEST(OrdinalPredict, MatchesBruteForceAndIsMonotone) {
    rng::Engine g(77);
    for (int t = 0; t < 200; ++t) {
        VectorXd w(2), th(4);
        w << rng::normal(g), rng::normal(g);
        th[0] = 2 * rng::normal(g);
        for (Eigen::Index k = 1; k < 4; ++k) th[k] = th[k - 1] + 0.05 + 2 * rng::uniform01(g);
        const auto m = handmade(w, th, levels_1_to(5));
        const std::vector<double> x = {3 * rng::normal(g), 3 * rng::normal(g)};
        const auto probs = predict_proba(m, x);
        const double eta = w[0] * x[0] + w[1] * x[1];
        double sum = 0, cum = 0;
        std::size_t best = 0;
        for (std::size_t k = 0; k < 5; ++k) {
            EXPECT_GT(probs[k], 0.0);
            sum += probs[k];
            const double upper = k < 4 ? sig(th[static_cast<Eigen::Index>(k)] - eta) : 1.0;
            const double lower = k > 0 ? sig(th[static_cast<Eigen::Index>(k - 1)] - eta) : 0.0;
            EXPECT_NEAR(probs[k], upper - lower, 1e-12);
            if (probs[k] > probs[best]) best = k;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        EXPECT_EQ(predict(m, x), m.levels[best]);
        // Raising x.w never raises any cumulative probability.
        const std::vector<double> x2 = {x[0] + (w[0] > 0 ? 0.5 : -0.5), x[1]};
        const auto probs2 = predict_proba(m, x2);
        double cum2 = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            cum += probs[k];
            cum2 += probs2[k];
            EXPECT_LE(cum2, cum + 1e-12);
        }
    }
}

TEST(OrdinalPredict, TiesGoToLowerCategory) {
    VectorXd w(1), th(1);
    w << 1.0;
    th << 0.0;
    EXPECT_EQ(predict(handmade(w, th, {1, 2}), std::vector<double>{0.0}), 1.0);
}

TEST(OrdinalLoglik, SingleSampleIsLogOfItsProbability) {
    VectorXd w(1), th(2);
    w << 0.7;
    th << -0.4, 1.1;
    const auto m = handmade(w, th, kThree);
    MatrixXd x(1, 1);
    x << 0.9;
    const auto probs = predict_proba(m, std::vector<double>{0.9});
    for (std::size_t k = 0; k < 3; ++k)
        EXPECT_NEAR(loglik(m, DesignMatrix::unstandardized(x, {"x"}), std::vector<double>{kThree[k]}),
                    std::log(probs[k]), 1e-12);
}

TEST(OrdinalJson, RoundTripIsBitExact) {
    rng::Engine g(5);
    VectorXd w(2), th(2);
    w << 0.3, -1.1;
    th << -0.2, 0.9;
    const auto s = draw(g, 400, w, th, 2.0, -1.0);
    const auto m = fit(DesignMatrix::standardized(s.x, {"a", "b"}), s.y, kThree);
    const auto text = to_json(m).dump();
    const auto back = model_from_json(json::parse(text));
    EXPECT_EQ(back.weights, m.weights);
    EXPECT_EQ(back.thresholds, m.thresholds);
    EXPECT_EQ(back.standardization, m.standardization);
    EXPECT_EQ(back.loglik, m.loglik);
    EXPECT_EQ(back.aic, m.aic);
    EXPECT_EQ(back.iterations, m.iterations);
    EXPECT_EQ(to_json(back).dump(), text);
}
