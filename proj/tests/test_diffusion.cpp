#include "doctest.h"

#include <cmath>

#include "plaid/diffusion.hpp"
#include "support/oracles.hpp"

using plaid::Mat;
using plaid::NoiseSchedule;
using plaid::Rng;

namespace {

NoiseSchedule<double> linear_schedule(double g0, double g1) {
    NoiseSchedule<double> s = NoiseSchedule<double>::defaults(1);
    s.gamma0.a[0] = g0;
    s.gamma1.a[0] = g1;
    s.interior.a[0] = 10.0;
    s.interior.a[1] = -40.0;
    return s;
}

// schedule engineered so that sigma2(s)=1 at s=0.5 and sigma2(t)=4 at t=1
NoiseSchedule<double> bridge_schedule() { return linear_schedule(std::log(0.25), std::log(4.0)); }

}  // namespace

TEST_SUITE("diffusion_core") {

TEST_CASE("sample_latent: zero noise returns the embedding exactly") {
    const auto s = linear_schedule(-2.0, 3.0);
    Mat<double> x(3, 2);
    for (size_t i = 0; i < x.size(); ++i) x.a[i] = 0.3 * static_cast<double>(i) - 0.5;
    const Mat<double> eps(3, 2);  // zeros
    const auto lat = plaid::sample_latent(x, 0.7, s, eps);
    for (size_t i = 0; i < x.size(); ++i) CHECK(lat.z.a[i] == x.a[i]);
}

TEST_CASE("sample_latent: empirical variance matches sigma2(t)") {
    const auto s = linear_schedule(std::log(0.01), std::log(100.0));
    const double t = 0.62;
    const double s2 = plaid::sigma2(s, t);
    Mat<double> x(1, 4);
    x.a = {1.0, -2.0, 0.5, 3.0};
    Rng rng(77);
    oracles::MeanVar mv[4];
    for (int k = 0; k < 100000; ++k) {
        const auto lat = plaid::sample_latent(x, t, s, rng);
        for (int c = 0; c < 4; ++c) mv[c].add(lat.z.a[c] - x.a[c]);
    }
    for (int c = 0; c < 4; ++c) {
        CHECK(mv[c].variance() > s2 * 0.97);
        CHECK(mv[c].variance() < s2 * 1.03);
    }
}

TEST_CASE("sample_latent: deterministic given seed") {
    const auto s = linear_schedule(-3.0, 2.0);
    Mat<double> x(4, 3);
    Rng r1(5), r2(5);
    const auto a = plaid::sample_latent(x, 0.4, s, r1);
    const auto b = plaid::sample_latent(x, 0.4, s, r2);
    for (size_t i = 0; i < a.z.size(); ++i) CHECK(a.z.a[i] == b.z.a[i]);
}

TEST_CASE("posterior_params pins") {
    const auto sched = bridge_schedule();
    Mat<double> z(1, 1), xh(1, 1);
    z.a[0] = 2.0;
    xh.a[0] = 0.0;
    const auto p = plaid::posterior_params(z, xh, 0.5, 1.0, sched);
    CHECK(p.mean.a[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(p.var == doctest::Approx(0.75).epsilon(1e-9));
    CHECK_THROWS_AS(plaid::posterior_params(z, xh, 1.0, 0.5, sched), std::invalid_argument);
    CHECK_THROWS_AS(plaid::posterior_params(z, xh, 0.5, 0.5, sched), std::invalid_argument);
}

TEST_CASE("posterior_params limits") {
    // s -> t: bridge collapses to z_t
    const auto sched = linear_schedule(std::log(0.01), std::log(100.0));
    Mat<double> z(1, 2), xh(1, 2);
    z.a = {1.5, -0.5};
    xh.a = {0.2, 0.2};
    const double t = 0.6;
    const auto near = plaid::posterior_params(z, xh, t - 1e-9, t, sched);
    CHECK(near.mean.a[0] == doctest::Approx(z.a[0]).epsilon(1e-6));
    CHECK(near.var == doctest::Approx(0.0).epsilon(1e-6));

    // sigma2(s) -> 0: bridge collapses to x_hat
    const auto tiny0 = linear_schedule(std::log(1e-12), std::log(100.0));
    const auto clean = plaid::posterior_params(z, xh, 1e-9, t, tiny0);
    CHECK(clean.mean.a[0] == doctest::Approx(xh.a[0]).epsilon(1e-5));
    CHECK(clean.var == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("posterior conditioning agrees with a Monte-Carlo regression oracle") {
    // joint draws (z_s, z_t); for Gaussians E[z_s|z_t] is linear with slope
    // cov/var and residual variance matching the closed form
    const auto sched = bridge_schedule();
    const double s = 0.5, t = 1.0;
    const double s2s = plaid::sigma2(sched, s), s2t = plaid::sigma2(sched, t);
    const double x_true = 0.8;
    Rng rng(123);
    const long long n = 1000000;
    double sum_s = 0, sum_t = 0, sum_tt = 0, sum_st = 0, sum_ss = 0;
    for (long long k = 0; k < n; ++k) {
        const double zs = x_true + std::sqrt(s2s) * rng.normal();
        const double zt = zs + std::sqrt(s2t - s2s) * rng.normal();
        sum_s += zs;
        sum_t += zt;
        sum_tt += zt * zt;
        sum_st += zs * zt;
        sum_ss += zs * zs;
    }
    const double mean_s = sum_s / n, mean_t = sum_t / n;
    const double var_t = sum_tt / n - mean_t * mean_t;
    const double cov_st = sum_st / n - mean_s * mean_t;
    const double var_s = sum_ss / n - mean_s * mean_s;
    const double slope = cov_st / var_t;                  // expected sigma2(s)/sigma2(t)
    const double resid_var = var_s - cov_st * cov_st / var_t;

    // closed form via posterior_params at a probe z_t
    Mat<double> zt_probe(1, 1), xh(1, 1);
    zt_probe.a[0] = 1.7;
    xh.a[0] = x_true;
    const auto p = plaid::posterior_params(zt_probe, xh, s, t, sched);
    const double rho = s2s / s2t;
    CHECK(slope == doctest::Approx(rho).epsilon(0.01));
    CHECK(resid_var == doctest::Approx(p.var).epsilon(0.01));
    CHECK(p.mean.a[0] == doctest::Approx(x_true + rho * (zt_probe.a[0] - x_true)).epsilon(1e-12));
}

TEST_CASE("posterior marginal consistency: composing the bridge recovers q(z_s|x)") {
    const auto sched = linear_schedule(std::log(0.05), std::log(25.0));
    const double s = 0.35, t = 0.8;
    const double x_true = -0.4;
    Mat<double> x(1, 1), xh(1, 1);
    x.a[0] = x_true;
    xh.a[0] = x_true;  // bridge under the true x
    Rng rng(321);
    oracles::MeanVar mv;
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
        const auto zt = plaid::sample_latent(x, t, sched, rng);
        const auto p = plaid::posterior_params(zt.z, xh, s, t, sched);
        const double zs = p.mean.a[0] + std::sqrt(p.var) * rng.normal();
        mv.add(zs);
    }
    const double s2s = plaid::sigma2(sched, s);
    CHECK(std::fabs(mv.mean - x_true) < 3.0 * mv.std_err());
    // variance of the sample variance ~ 2 var^2/(n-1) for Gaussians
    const double var_se = s2s * std::sqrt(2.0 / (n - 1));
    CHECK(std::fabs(mv.variance() - s2s) < 3.0 * var_se);
}

TEST_CASE("prior_kl pins") {
    const auto sched = linear_schedule(std::log(0.01), std::log(100.0));  // sigma2(1)=100
    Mat<double> zero(2, 3);
    CHECK(plaid::prior_kl(zero, sched) == 0.0);

    Mat<double> x(1, 2);
    x.a = {10.0, 10.0};  // |x|^2 = 200 = 2 sigma2(1)
    CHECK(plaid::prior_kl(x, sched) == doctest::Approx(1.0).epsilon(1e-9));

    const auto doubled = linear_schedule(std::log(0.01), std::log(200.0));
    CHECK(plaid::prior_kl(x, doubled) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("prior_kl matches a Monte-Carlo KL oracle") {
    // KL(q||p) estimated by sampling from q = N(x, s2 I), p = N(0, s2 I)
    const auto sched = linear_schedule(std::log(0.04), std::log(9.0));
    Mat<double> x(1, 3);
    x.a = {1.0, -2.0, 0.7};
    const double s2 = plaid::sigma2(sched, 1.0);
    Rng rng(9);
    oracles::MeanVar mv;
    for (int k = 0; k < 200000; ++k) {
        double logq = 0, logp = 0;
        for (int c = 0; c < 3; ++c) {
            const double z = x.a[c] + std::sqrt(s2) * rng.normal();
            logq += -(z - x.a[c]) * (z - x.a[c]) / (2 * s2);
            logp += -z * z / (2 * s2);
        }
        mv.add(logq - logp);
    }
    CHECK(std::fabs(mv.mean - plaid::prior_kl(x, sched)) < 3.0 * mv.std_err());
}

TEST_CASE("posterior step KL matches a Monte-Carlo oracle") {
    const auto sched = bridge_schedule();
    Mat<double> z(1, 2), xh(1, 2), xt(1, 2);
    z.a = {1.0, -1.0};
    xt.a = {0.6, 0.1};
    xh.a = {0.1, -0.3};
    const auto q = plaid::posterior_params(z, xt, 0.5, 1.0, sched);
    const auto p = plaid::posterior_params(z, xh, 0.5, 1.0, sched);
    const double closed = plaid::posterior_step_kl(q, p);
    Rng rng(31);
    oracles::MeanVar mv;
    for (int k = 0; k < 100000; ++k) {
        double lq = 0, lp = 0;
        for (int c = 0; c < 2; ++c) {
            const double zs = q.mean.a[c] + std::sqrt(q.var) * rng.normal();
            lq += -(zs - q.mean.a[c]) * (zs - q.mean.a[c]) / (2 * q.var);
            lp += -(zs - p.mean.a[c]) * (zs - p.mean.a[c]) / (2 * p.var);
        }
        mv.add(lq - lp);
    }
    CHECK(std::fabs(mv.mean - closed) < 3.0 * mv.std_err());
}

}  // TEST_SUITE
