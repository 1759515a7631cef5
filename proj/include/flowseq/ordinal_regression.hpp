#pragma once

// Proportional-odds (ordered logit) regression fitted by maximum likelihood.
//
//   P(Y <= k | x) = sigmoid(theta_k - x.w),   theta_1 < ... < theta_{K-1}
//
// Thresholds are optimized through gaps, theta_1 = a_1 and
// theta_k = theta_{k-1} + exp(a_k), so every iterate stays ordered. The
// optimizer is a damped Newton method with step halving; convergence is
// judged on the max-norm of the gradient in (w, theta).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowseq/errors.hpp"

namespace flowseq::ordinal {

using json = nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Per-column affine map applied before fitting: z = (x - mean) / sd.
struct Standardization {
    std::vector<double> mean;
    std::vector<double> sd;

    static Standardization identity(std::size_t p) {
        return {std::vector<double>(p, 0.0), std::vector<double>(p, 1.0)};
    }

    // Sample statistics over the rows of `x`. Constant columns keep sd = 1.
    static Standardization fit(const MatrixXd& x) {
        Standardization s;
        const auto n = static_cast<double>(x.rows());
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double m = x.col(j).mean();
            const double var = x.rows() > 1 ? (x.col(j).array() - m).square().sum() / (n - 1.0) : 0.0;
            const double sd = std::sqrt(var);
            s.mean.push_back(m);
            s.sd.push_back(sd > 1e-12 * std::max(1.0, std::abs(m)) ? sd : 1.0);
        }
        return s;
    }

    std::size_t size() const noexcept { return mean.size(); }

    MatrixXd apply(const MatrixXd& x) const {
        MatrixXd z = x;
        for (Eigen::Index j = 0; j < z.cols(); ++j)
            z.col(j) = (z.col(j).array() - mean[static_cast<std::size_t>(j)]) / sd[static_cast<std::size_t>(j)];
        return z;
    }

    bool operator==(const Standardization&) const = default;
};

struct DesignMatrix {
    MatrixXd values;  // raw predictor values, one row per observation
    std::vector<std::string> column_names;
    Standardization standardization;

    // Fits z-scoring statistics on these rows.
    static DesignMatrix standardized(MatrixXd values, std::vector<std::string> names) {
        auto s = Standardization::fit(values);
        return {std::move(values), std::move(names), std::move(s)};
    }

    static DesignMatrix unstandardized(MatrixXd values, std::vector<std::string> names) {
        auto s = Standardization::identity(static_cast<std::size_t>(values.cols()));
        return {std::move(values), std::move(names), std::move(s)};
    }

    std::size_t rows() const noexcept { return static_cast<std::size_t>(values.rows()); }
    std::size_t cols() const noexcept { return static_cast<std::size_t>(values.cols()); }

    void validate() const {
        if (column_names.size() != cols()) throw PreconditionError("column names do not match matrix width");
        if (standardization.size() != cols()) throw PreconditionError("standardization does not match matrix width");
        if (!values.allFinite()) throw PreconditionError("design matrix has non-finite entries");
    }
};

struct FitConfig {
    int max_iter = 200;
    double tol = 1e-8;
    double ridge = 1e-8;  // L2 penalty on standardized weights
};

struct OrdinalModel {
    VectorXd weights;     // standardized units
    VectorXd thresholds;  // standardized units, strictly increasing, length K-1
    std::vector<double> levels;
    std::vector<std::string> column_names;
    Standardization standardization;
    double loglik = 0.0;  // unpenalized
    double aic = 0.0;
    bool converged = false;
    int iterations = 0;
    double gradient_norm = 0.0;
    double ridge = 0.0;
    bool separation_suspected = false;

    std::size_t num_parameters() const noexcept {
        return static_cast<std::size_t>(weights.size() + thresholds.size());
    }

    double linear_predictor(std::span<const double> x) const {
        if (x.size() != static_cast<std::size_t>(weights.size()))
            throw PreconditionError("feature vector has wrong length");
        double eta = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            if (!std::isfinite(x[j])) throw PreconditionError("non-finite feature value");
            eta += weights[static_cast<Eigen::Index>(j)] * (x[j] - standardization.mean[j]) / standardization.sd[j];
        }
        return eta;
    }

    // Coefficients per raw unit of each predictor.
    VectorXd raw_weights() const {
        VectorXd r = weights;
        for (Eigen::Index j = 0; j < r.size(); ++j) r[j] /= standardization.sd[static_cast<std::size_t>(j)];
        return r;
    }

    VectorXd raw_thresholds() const {
        double shift = 0.0;
        for (Eigen::Index j = 0; j < weights.size(); ++j)
            shift += weights[j] * standardization.mean[static_cast<std::size_t>(j)] /
                     standardization.sd[static_cast<std::size_t>(j)];
        return thresholds.array() + shift;
    }
};

inline double aic(double loglik, std::size_t num_parameters) {
    return 2.0 * static_cast<double>(num_parameters) - 2.0 * loglik;
}

// ---------------------------------------------------------------------------
// Numerics

namespace detail {

inline double sigmoid(double z) noexcept {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double log_sigmoid(double z) noexcept {
    return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline double density(double z) noexcept { return sigmoid(z) * sigmoid(-z); }

// Probability of the interval (lower, upper] under the logistic CDF.
inline double interval_prob(double lower, double upper) noexcept {
    if (lower > 0) return sigmoid(-lower) - sigmoid(-upper);
    return sigmoid(upper) - sigmoid(lower);
}

inline std::vector<std::size_t> label_indices(std::span<const double> y, std::span<const double> levels) {
    std::vector<std::size_t> idx(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        auto it = std::find_if(levels.begin(), levels.end(),
                               [&](double l) { return std::abs(l - y[i]) <= 1e-9; });
        if (it == levels.end()) throw PreconditionError("label " + std::to_string(y[i]) + " is not a level");
        idx[i] = static_cast<std::size_t>(it - levels.begin());
    }
    return idx;
}

}  // namespace detail

struct Derivatives {
    double value = 0.0;
    VectorXd gradient;  // (w, theta)
    MatrixXd hessian;   // (w, theta); empty unless requested
};

// Log-likelihood of standardized predictors `z` with label indices `y` at
// (w, theta), with gradient and optionally Hessian in (w, theta).
inline Derivatives loglik_derivatives(const MatrixXd& z, std::span<const std::size_t> y, const VectorXd& w,
                                      const VectorXd& theta, bool want_hessian) {
    const Eigen::Index p = w.size();
    const Eigen::Index m = theta.size();
    const auto n = static_cast<Eigen::Index>(y.size());
    Derivatives d;
    d.gradient = VectorXd::Zero(p + m);
    VectorXd g_eta(n);
    VectorXd h_eta(n);
    MatrixXd h_theta;
    MatrixXd h_w_theta;
    if (want_hessian) {
        h_theta = MatrixXd::Zero(m, m);
        h_w_theta = MatrixXd::Zero(p, m);
    }
    const VectorXd eta = p > 0 ? VectorXd(z * w) : VectorXd::Zero(n);
    constexpr double inf = std::numeric_limits<double>::infinity();

    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)]);
        const bool has_upper = k < m;
        const bool has_lower = k > 0;
        const double u = has_upper ? theta[k] - eta[i] : inf;
        const double l = has_lower ? theta[k - 1] - eta[i] : -inf;
        double logp;
        double pr;
        if (!has_lower) {
            logp = detail::log_sigmoid(u);
            pr = detail::sigmoid(u);
        } else if (!has_upper) {
            logp = detail::log_sigmoid(-l);
            pr = detail::sigmoid(-l);
        } else {
            pr = detail::interval_prob(l, u);
            logp = pr > 0 ? std::log(pr) : -inf;
        }
        d.value += logp;
        if (!(pr > 0)) {
            g_eta[i] = h_eta[i] = 0.0;
            continue;
        }
        // A = f(u)/p, B = f(l)/p and their f' analogues; absent cuts contribute zero.
        double a = 0, b = 0, a1 = 0, b1 = 0;
        if (has_upper) {
            const double fu = detail::density(u);
            a = has_lower ? fu / pr : detail::sigmoid(-u);
            a1 = fu * (detail::sigmoid(-u) - detail::sigmoid(u)) / pr;
        }
        if (has_lower) {
            const double fl = detail::density(l);
            b = has_upper ? fl / pr : detail::sigmoid(l);
            b1 = fl * (detail::sigmoid(-l) - detail::sigmoid(l)) / pr;
        }
        if (has_upper) d.gradient[p + k] += a;
        if (has_lower) d.gradient[p + k - 1] -= b;
        g_eta[i] = -(a - b);
        if (!want_hessian) continue;
        h_eta[i] = (a1 - b1) - (a - b) * (a - b);
        const auto zi = p > 0 ? VectorXd(z.row(i).transpose()) : VectorXd();
        if (has_upper) {
            h_theta(k, k) += a1 - a * a;
            if (p > 0) h_w_theta.col(k) += zi * (-a1 + a * (a - b));
        }
        if (has_lower) {
            h_theta(k - 1, k - 1) += -b1 - b * b;
            if (p > 0) h_w_theta.col(k - 1) += zi * (b1 - b * (a - b));
        }
        if (has_upper && has_lower) {
            h_theta(k, k - 1) += a * b;
            h_theta(k - 1, k) += a * b;
        }
    }
    if (p > 0) d.gradient.head(p) = z.transpose() * g_eta;
    if (want_hessian) {
        d.hessian = MatrixXd::Zero(p + m, p + m);
        if (p > 0) {
            d.hessian.topLeftCorner(p, p) = z.transpose() * h_eta.asDiagonal() * z;
            d.hessian.topRightCorner(p, m) = h_w_theta;
            d.hessian.bottomLeftCorner(m, p) = h_w_theta.transpose();
        }
        d.hessian.bottomRightCorner(m, m) = h_theta;
    }
    return d;
}

namespace detail {

inline VectorXd thresholds_from_gaps(const VectorXd& a) {
    VectorXd t(a.size());
    for (Eigen::Index k = 0; k < a.size(); ++k) t[k] = k == 0 ? a[0] : t[k - 1] + std::exp(a[k]);
    return t;
}

inline VectorXd gaps_from_thresholds(const VectorXd& t) {
    VectorXd a(t.size());
    for (Eigen::Index k = 0; k < t.size(); ++k) a[k] = k == 0 ? t[0] : std::log(t[k] - t[k - 1]);
    return a;
}

inline double penalized(double loglik, const VectorXd& w, double ridge) {
    return loglik - 0.5 * ridge * w.squaredNorm();
}

}  // namespace detail

inline double loglik(const OrdinalModel& model, const DesignMatrix& x, std::span<const double> y);

// Maximum-likelihood fit. `levels` lists the K ordered categories; every one
// must occur in `y`.
inline OrdinalModel fit(const DesignMatrix& x, std::span<const double> y, std::span<const double> levels,
                        const FitConfig& config = {}) {
    x.validate();
    if (levels.size() < 2) throw DegenerateLabelError("need at least two ordered levels");
    if (y.size() != x.rows()) throw PreconditionError("label count does not match design rows");
    const auto idx = detail::label_indices(y, levels);
    const std::size_t K = levels.size();
    std::vector<std::size_t> counts(K, 0);
    for (auto k : idx) ++counts[k];
    for (std::size_t k = 0; k < K; ++k)
        if (counts[k] == 0)
            throw DegenerateLabelError("level " + std::to_string(levels[k]) + " does not occur in the labels");

    const MatrixXd z = x.standardization.apply(x.values);
    const auto p = static_cast<Eigen::Index>(x.cols());
    const auto m = static_cast<Eigen::Index>(K - 1);
    const double n = static_cast<double>(y.size());

    // Start at the intercept-only optimum: cumulative logits of the proportions.
    VectorXd w = VectorXd::Zero(p);
    VectorXd theta(m);
    double cum = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
        cum += static_cast<double>(counts[static_cast<std::size_t>(k)]);
        theta[k] = std::log(cum / (n - cum));
    }
    VectorXd a = detail::gaps_from_thresholds(theta);

    OrdinalModel model;
    model.levels.assign(levels.begin(), levels.end());
    model.column_names = x.column_names;
    model.standardization = x.standardization;
    model.ridge = config.ridge;

    auto derivs = loglik_derivatives(z, idx, w, theta, true);
    double objective = detail::penalized(derivs.value, w, config.ridge);
    int it = 0;
    bool converged = false;
    double lambda = 0.0;

    for (;; ++it) {
        VectorXd grad = derivs.gradient;
        grad.head(p) -= config.ridge * w;
        const double gnorm = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
        model.gradient_norm = gnorm;
        if (gnorm < config.tol) {
            converged = true;
            break;
        }
        if (it >= config.max_iter) break;

        // Chain rule to (w, a).
        MatrixXd jac = MatrixXd::Zero(m, m);
        for (Eigen::Index k = 0; k < m; ++k) {
            jac(k, 0) = 1.0;
            for (Eigen::Index j = 1; j <= k; ++j) jac(k, j) = std::exp(a[j]);
        }
        MatrixXd t = MatrixXd::Identity(p + m, p + m);
        t.bottomRightCorner(m, m) = jac;
        VectorXd g_phi = t.transpose() * grad;
        MatrixXd h = derivs.hessian;
        h.topLeftCorner(p, p) -= config.ridge * MatrixXd::Identity(p, p);
        MatrixXd h_phi = t.transpose() * h * t;
        for (Eigen::Index j = 1; j < m; ++j)
            h_phi(p + j, p + j) += std::exp(a[j]) * grad.segment(p + j, m - j).sum();

        const MatrixXd neg_h = -h_phi;
        const double scale = std::max(1.0, neg_h.diagonal().cwiseAbs().maxCoeff());
        bool stepped = false;
        for (int attempt = 0; attempt < 30 && !stepped; ++attempt) {
            Eigen::LLT<MatrixXd> llt(neg_h + lambda * scale * MatrixXd::Identity(p + m, p + m));
            if (llt.info() != Eigen::Success) {
                lambda = lambda == 0.0 ? 1e-10 : lambda * 10.0;
                continue;
            }
            const VectorXd delta = llt.solve(g_phi);
            double step = 1.0;
            for (int half = 0; half < 40; ++half, step *= 0.5) {
                const VectorXd w_new = w + step * delta.head(p);
                const VectorXd a_new = a + step * delta.tail(m);
                const VectorXd theta_new = detail::thresholds_from_gaps(a_new);
                auto d_new = loglik_derivatives(z, idx, w_new, theta_new, false);
                const double obj_new = detail::penalized(d_new.value, w_new, config.ridge);
                // Near the optimum the change is below summation roundoff; allow that much.
                const double slack = 64.0 * std::numeric_limits<double>::epsilon() * (std::abs(objective) + 1.0);
                if (std::isfinite(obj_new) && obj_new >= objective - slack) {
                    w = w_new;
                    a = a_new;
                    theta = theta_new;
                    objective = obj_new;
                    stepped = true;
                    break;
                }
            }
            if (stepped)
                lambda = lambda > 0 ? lambda / 10.0 : 0.0;
            else
                lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
        }
        if (!stepped) break;
        derivs = loglik_derivatives(z, idx, w, theta, true);
    }

    model.weights = w;
    model.thresholds = theta;
    model.converged = converged;
    model.iterations = it;
    model.loglik = loglik_derivatives(z, idx, w, theta, false).value;
    model.aic = aic(model.loglik, model.num_parameters());
    // A near-zero loglik means the data are (quasi-)separated: the gradient
    // vanishes as the weights run off, so convergence alone does not rule it out.
    model.separation_suspected = (w.size() && w.cwiseAbs().maxCoeff() > 30.0) ||
                                 model.loglik > -1e-6 * n;
    return model;
}

// Exact proportional-odds log-likelihood of raw predictors `x` under `model`
// (the model's own standardization is applied; x's is ignored).
inline double loglik(const OrdinalModel& model, const DesignMatrix& x, std::span<const double> y) {
    if (x.cols() != static_cast<std::size_t>(model.weights.size()))
        throw PreconditionError("design width does not match model");
    if (y.size() != x.rows()) throw PreconditionError("label count does not match design rows");
    const auto idx = detail::label_indices(y, model.levels);
    return loglik_derivatives(model.standardization.apply(x.values), idx, model.weights, model.thresholds, false)
        .value;
}

// Category probabilities as adjacent differences of the cumulative logits.
inline std::vector<double> predict_proba(const OrdinalModel& model, std::span<const double> x) {
    const double eta = model.linear_predictor(x);
    const auto m = static_cast<std::size_t>(model.thresholds.size());
    std::vector<double> probs(m + 1);
    double prev = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const double th = model.thresholds[static_cast<Eigen::Index>(k)];
        const double lower = k == 0 ? -std::numeric_limits<double>::infinity()
                                    : model.thresholds[static_cast<Eigen::Index>(k - 1)];
        probs[k] = k == 0 ? detail::sigmoid(th - eta) : detail::interval_prob(lower - eta, th - eta);
        prev = th;
    }
    probs[m] = detail::sigmoid(eta - prev);
    return probs;
}

// Most probable level; ties go to the lower category.
inline double predict(const OrdinalModel& model, std::span<const double> x) {
    const auto probs = predict_proba(model, x);
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[best]) best = k;
    return model.levels[best];
}

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const OrdinalModel& m) {
    auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return json{{"weights", vec(m.weights)},
                {"thresholds", vec(m.thresholds)},
                {"levels", m.levels},
                {"column_names", m.column_names},
                {"standardization", {{"mean", m.standardization.mean}, {"sd", m.standardization.sd}}},
                {"loglik", m.loglik},
                {"aic", m.aic},
                {"converged", m.converged},
                {"iterations", m.iterations},
                {"gradient_norm", m.gradient_norm},
                {"ridge", m.ridge},
                {"separation_suspected", m.separation_suspected}};
}

inline OrdinalModel model_from_json(const json& j) {
    auto vec = [](const json& a) {
        const auto v = a.get<std::vector<double>>();
        return VectorXd(Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    OrdinalModel m;
    m.weights = vec(j.at("weights"));
    m.thresholds = vec(j.at("thresholds"));
    m.levels = j.at("levels").get<std::vector<double>>();
    m.column_names = j.at("column_names").get<std::vector<std::string>>();
    m.standardization.mean = j.at("standardization").at("mean").get<std::vector<double>>();
    m.standardization.sd = j.at("standardization").at("sd").get<std::vector<double>>();
    m.loglik = j.at("loglik").get<double>();
    m.aic = j.at("aic").get<double>();
    m.converged = j.at("converged").get<bool>();
    m.iterations = j.at("iterations").get<int>();
    m.gradient_norm = j.at("gradient_norm").get<double>();
    m.ridge = j.at("ridge").get<double>();
    m.separation_suspected = j.at("separation_suspected").get<bool>();
    return m;
}

}  // namespace flowseq::ordinal
