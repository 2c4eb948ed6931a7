#pragma once

// Variance-exploding forward process over embedded tokens and its closed-form
// Gaussian conditionals: q(z_t|x) = N(x_embed, sigma^2(t) I) and
// q(z_s|z_t, x) with s < t.

#include <cmath>

#include "plaid/core.hpp"
#include "plaid/rng.hpp"
#include "plaid/schedule.hpp"

namespace plaid {

template <class Real>
struct Latent {
    Mat<Real> z;
    double t{0};
};

template <class Real>
Mat<Real> randn_like(int rows, int cols, Rng& rng) {
    Mat<Real> m(rows, cols);
    for (auto& v : m.a) v = static_cast<Real>(rng.normal());
    return m;
}

// z = x_embed + sigma(t) * eps with explicit noise
template <class Real>
Latent<Real> sample_latent(const Mat<Real>& x_embed, double t, const NoiseSchedule<Real>& s,
                           const Mat<Real>& eps) {
    require(x_embed.same_shape(eps), "sample_latent: noise shape mismatch");
    const double sigma = std::sqrt(sigma2(s, t));
    Latent<Real> out{x_embed, t};
    for (size_t i = 0; i < out.z.size(); ++i)
        out.z.a[i] += static_cast<Real>(sigma * static_cast<double>(eps.a[i]));
    return out;
}

template <class Real>
Latent<Real> sample_latent(const Mat<Real>& x_embed, double t, const NoiseSchedule<Real>& s,
                           Rng& rng) {
    const double sigma = std::sqrt(sigma2(s, t));
    Latent<Real> out{x_embed, t};
    for (auto& v : out.z.a) v += static_cast<Real>(sigma * rng.normal());
    return out;
}

template <class Real>
struct PosteriorParams {
    Mat<Real> mean;
    double var{0};
};

// q(z_s | z_t, x=x_hat): mean = x_hat + rho (z_t - x_hat), var = s2s (1 - rho),
// rho = sigma^2(s)/sigma^2(t).
template <class Real>
PosteriorParams<Real> posterior_params(const Mat<Real>& z_t, const Mat<Real>& x_hat, double s,
                                       double t, const NoiseSchedule<Real>& sched) {
    require(s < t, "posterior_params: requires s < t");
    require(z_t.same_shape(x_hat), "posterior_params: shape mismatch");
    const double s2s = sigma2(sched, s);
    const double s2t = sigma2(sched, t);
    const double rho = s2s / s2t;
    PosteriorParams<Real> out;
    out.mean = x_hat;
    for (size_t i = 0; i < out.mean.size(); ++i)
        out.mean.a[i] += static_cast<Real>(rho * (static_cast<double>(z_t.a[i]) - x_hat.a[i]));
    out.var = s2s * (1.0 - rho);
    return out;
}

// KL(q(z_1|x) || N(0, sigma^2(1) I)) = ||x_embed||^2 / (2 sigma^2(1)),
// restricted to the first valid_rows positions when masking.
template <class Real>
double prior_kl(const Mat<Real>& x_embed, const NoiseSchedule<Real>& s, int valid_rows = -1) {
    const int vr = valid_rows < 0 ? x_embed.rows : valid_rows;
    require(vr >= 0 && vr <= x_embed.rows, "prior_kl: bad valid_rows");
    double ss = 0;
    for (int r = 0; r < vr; ++r)
        for (int c = 0; c < x_embed.cols; ++c)
            ss += static_cast<double>(x_embed(r, c)) * x_embed(r, c);
    return ss / (2.0 * sigma2(s, 1.0));
}

// KL between the two same-variance step posteriors (true x vs denoised x_hat).
template <class Real>
double posterior_step_kl(const PosteriorParams<Real>& under_x,
                         const PosteriorParams<Real>& under_xhat) {
    double ss = 0;
    for (size_t i = 0; i < under_x.mean.size(); ++i) {
        const double d =
            static_cast<double>(under_x.mean.a[i]) - static_cast<double>(under_xhat.mean.a[i]);
        ss += d * d;
    }
    return ss / (2.0 * under_x.var);
}

}  // namespace plaid
