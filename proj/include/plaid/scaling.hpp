#pragma once

// IsoFLOP analysis: per-budget quadratic fits of loss against log model size,
// power-law fits of the compute-optimal loss and size, and the FLOP
// accounting convention (all constants in one place).

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "plaid/core.hpp"
#include "plaid/model.hpp"

namespace plaid {

struct IsoFlopPoint {
    double flops{0};
    double params{0};
    double loss{0};
};

struct IsoFlopFit {
    double n_star{0};
    double l_star{0};
};

struct PowerLawFit {
    double alpha{0};
    double beta{0};
    double residual{0};
};

// Least-squares quadratic of loss on ln(params); returns the vertex.
inline IsoFlopFit fit_isoflop(const std::vector<IsoFlopPoint>& points) {
    std::vector<double> distinct;
    for (const auto& p : points) {
        require_domain(p.params > 0 && p.loss > 0, "fit_isoflop: values must be positive");
        if (std::find(distinct.begin(), distinct.end(), p.params) == distinct.end())
            distinct.push_back(p.params);
    }
    require(distinct.size() >= 3, "fit_isoflop: needs >= 3 distinct model sizes");

    // normal equations for y = a x^2 + b x + c, x = ln params
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, t0 = 0, t1 = 0, t2 = 0;
    for (const auto& p : points) {
        const double x = std::log(p.params), y = p.loss;
        const double x2 = x * x;
        s0 += 1;
        s1 += x;
        s2 += x2;
        s3 += x2 * x;
        s4 += x2 * x2;
        t0 += y;
        t1 += x * y;
        t2 += x2 * y;
    }
    double M[3][4] = {{s4, s3, s2, t2}, {s3, s2, s1, t1}, {s2, s1, s0, t0}};
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::fabs(M[r][col]) > std::fabs(M[piv][col])) piv = r;
        std::swap(M[col], M[piv]);
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            const double f = M[r][col] / M[col][col];
            for (int c = col; c < 4; ++c) M[r][c] -= f * M[col][c];
        }
    }
    const double a = M[0][3] / M[0][0];
    const double b = M[1][3] / M[1][1];
    const double c = M[2][3] / M[2][2];
    const double curvature_floor = 1e-10 * std::max({1.0, std::fabs(b), std::fabs(c)});
    if (!(a > curvature_floor))
        throw std::runtime_error("fit_isoflop: fitted quadratic has no minimum");
    return {std::exp(-b / (2 * a)), c - b * b / (4 * a)};
}

// OLS of ln Y on ln C: Y ~ alpha * C^beta.
inline PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& pairs) {
    std::vector<double> distinct;
    for (const auto& [c, y] : pairs) {
        require_domain(c > 0 && y > 0, "fit_power_law: values must be positive");
        if (std::find(distinct.begin(), distinct.end(), c) == distinct.end())
            distinct.push_back(c);
    }
    require(distinct.size() >= 2, "fit_power_law: needs >= 2 distinct budgets");
    const double n = static_cast<double>(pairs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [c, y] : pairs) {
        const double x = std::log(c), v = std::log(y);
        sx += x;
        sy += v;
        sxx += x * x;
        sxy += x * v;
    }
    const double beta = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double intercept = (sy - beta * sx) / n;
    double rss = 0;
    for (const auto& [c, y] : pairs) {
        const double r = std::log(y) - (beta * std::log(c) + intercept);
        rss += r * r;
    }
    return {std::exp(intercept), beta, std::sqrt(rss / n)};
}

// FLOP accounting. Parameters exclude the embedding table and the two
// projections; the usual 2 FLOPs/param forward and 4 backward, with the
// self-conditioning unroll contributing E[passes] = 0.75*1 + 0.25*2 = 1.25
// forward passes per training token.
struct FlopConvention {
    double forward_per_param = 2.0;
    double backward_per_param = 4.0;
    double self_cond_expected_passes = 1.25;
};

inline double count_flops(const DenoiserConfig& cfg, double tokens_processed, bool training,
                          bool self_conditioning = true, double inference_passes = 1.0,
                          const FlopConvention& conv = {}) {
    require(tokens_processed > 0, "count_flops: tokens must be positive");
    const double p = static_cast<double>(non_embedding_param_count(cfg));
    if (!training) return conv.forward_per_param * p * tokens_processed * inference_passes;
    const double passes = self_conditioning ? conv.self_cond_expected_passes : 1.0;
    return (conv.forward_per_param * passes + conv.backward_per_param) * p * tokens_processed;
}

struct ScalingReport {
    struct BudgetFit {
        double budget{0};
        double n_star{0};
        double l_star{0};
    };
    std::vector<BudgetFit> budgets;
    PowerLawFit loss_law;
    PowerLawFit param_law;
};

// Group points by budget, fit each profile, then fit both scaling laws.
inline ScalingReport analyze_isoflops(const std::vector<IsoFlopPoint>& points) {
    std::map<double, std::vector<IsoFlopPoint>> by_budget;
    for (const auto& p : points) by_budget[p.flops].push_back(p);
    require(by_budget.size() >= 2, "analyze_isoflops: needs >= 2 budgets");
    ScalingReport rep;
    std::vector<std::pair<double, double>> loss_pairs, param_pairs;
    for (const auto& [budget, pts] : by_budget) {
        const IsoFlopFit f = fit_isoflop(pts);
        rep.budgets.push_back({budget, f.n_star, f.l_star});
        loss_pairs.emplace_back(budget, f.l_star);
        param_pairs.emplace_back(budget, f.n_star);
    }
    rep.loss_law = fit_power_law(loss_pairs);
    rep.param_law = fit_power_law(param_pairs);
    return rep;
}

}  // namespace plaid
