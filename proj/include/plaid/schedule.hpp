#pragma once

// Learned noise schedule. gamma(t) = log sigma^2(t) interpolates trainable
// endpoints through a monotone map F with F(0)=0, F(1)=1:
//
//   F(t) = G(t)/G(1),  G(t) = softplus(a0)*t + sum_j softplus(a_j)*psi_j(t)
//   psi_j(t) = (softplus(s_j*(t-c_j)) - softplus(-s_j*c_j)) / s_j
//
// psi_j is the running integral of sigmoid(s_j*(u-c_j)), so G' > 0 everywhere
// and gamma is strictly increasing whenever gamma1 > gamma0. All closed-form
// evaluation happens in double regardless of the tensor scalar type.

#include <cmath>
#include <vector>

#include "plaid/autodiff.hpp"
#include "plaid/core.hpp"
#include "plaid/rng.hpp"

namespace plaid {

inline double softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

template <class Real>
struct NoiseSchedule {
    Mat<Real> gamma0{1, 1};    // log sigma^2(0)
    Mat<Real> gamma1{1, 1};    // log sigma^2(1)
    Mat<Real> interior{1, 1};  // [a0_raw, then (a_raw, c, s_raw) per unit]

    int units() const { return (interior.cols - 1) / 3; }

    static NoiseSchedule defaults(int k_units = 8) {
        NoiseSchedule s;
        s.gamma0.a[0] = static_cast<Real>(std::log(1e-4));
        s.gamma1.a[0] = static_cast<Real>(std::log(100.0));
        s.interior = Mat<Real>(1, 1 + 3 * k_units);
        s.interior.a[0] = static_cast<Real>(0.5413248546129181);  // softplus^-1(1)
        for (int j = 0; j < k_units; ++j) {
            s.interior.a[1 + 3 * j + 0] = static_cast<Real>(-4.0);  // amplitude ~0.018
            s.interior.a[1 + 3 * j + 1] = static_cast<Real>((j + 0.5) / k_units);
            s.interior.a[1 + 3 * j + 2] = static_cast<Real>(2.9997);  // softplus^-1(3)
        }
        return s;
    }

    static NoiseSchedule random(Rng& rng, int k_units = 8) {
        NoiseSchedule s = defaults(k_units);
        s.gamma0.a[0] = static_cast<Real>(-8.0 + 4.0 * rng.normal());
        s.gamma1.a[0] = static_cast<Real>(s.gamma0.a[0] + 1.0 + 12.0 * rng.uniform());
        for (size_t i = 0; i < s.interior.size(); ++i)
            s.interior.a[i] += static_cast<Real>(rng.normal());
        return s;
    }
};

// gamma, gamma' and their partials w.r.t. (gamma0, gamma1, interior) at one t.
struct ScheduleEval {
    double gamma{0};
    double gamma_prime{0};
    double d_gamma_g0{0}, d_gamma_g1{0};
    double d_gp_g0{0}, d_gp_g1{0};
    std::vector<double> d_gamma_phi;
    std::vector<double> d_gp_phi;
};

template <class Real>
ScheduleEval schedule_eval(const NoiseSchedule<Real>& s, double t, bool with_partials = false) {
    const int k = s.units();
    const int np = s.interior.cols;
    const double g0 = static_cast<double>(s.gamma0.a[0]);
    const double g1 = static_cast<double>(s.gamma1.a[0]);

    // G(x) and dG/dphi at x in {t, 1}; Gp(t) = G'(t) and its phi-partials
    auto eval_G = [&](double x, double* dG) {
        const double ra0 = static_cast<double>(s.interior.a[0]);
        const double a0 = softplus(ra0);
        double G = a0 * x;
        if (dG) dG[0] = sigmoid(ra0) * x;
        for (int j = 0; j < k; ++j) {
            const double ra = static_cast<double>(s.interior.a[1 + 3 * j + 0]);
            const double c = static_cast<double>(s.interior.a[1 + 3 * j + 1]);
            const double rs = static_cast<double>(s.interior.a[1 + 3 * j + 2]);
            const double a = softplus(ra), sj = softplus(rs);
            const double psi = (softplus(sj * (x - c)) - softplus(-sj * c)) / sj;
            G += a * psi;
            if (dG) {
                dG[1 + 3 * j + 0] = sigmoid(ra) * psi;
                dG[1 + 3 * j + 1] = a * (sigmoid(-sj * c) - sigmoid(sj * (x - c)));
                const double dpsi_ds =
                    ((x - c) * sigmoid(sj * (x - c)) + c * sigmoid(-sj * c) - psi) / sj;
                dG[1 + 3 * j + 2] = a * dpsi_ds * sigmoid(rs);
            }
        }
        return G;
    };
    auto eval_Gp = [&](double x, double* dGp) {
        const double ra0 = static_cast<double>(s.interior.a[0]);
        double Gp = softplus(ra0);
        if (dGp) dGp[0] = sigmoid(ra0);
        for (int j = 0; j < k; ++j) {
            const double ra = static_cast<double>(s.interior.a[1 + 3 * j + 0]);
            const double c = static_cast<double>(s.interior.a[1 + 3 * j + 1]);
            const double rs = static_cast<double>(s.interior.a[1 + 3 * j + 2]);
            const double a = softplus(ra), sj = softplus(rs);
            const double sg = sigmoid(sj * (x - c));
            Gp += a * sg;
            if (dGp) {
                const double dsg = sg * (1.0 - sg);
                dGp[1 + 3 * j + 0] = sigmoid(ra) * sg;
                dGp[1 + 3 * j + 1] = -a * dsg * sj;
                dGp[1 + 3 * j + 2] = a * dsg * (x - c) * sigmoid(rs);
            }
        }
        return Gp;
    };

    ScheduleEval e;
    std::vector<double> dGt, dG1, dGpt;
    double *pGt = nullptr, *pG1 = nullptr, *pGpt = nullptr;
    if (with_partials) {
        dGt.assign(np, 0.0);
        dG1.assign(np, 0.0);
        dGpt.assign(np, 0.0);
        pGt = dGt.data();
        pG1 = dG1.data();
        pGpt = dGpt.data();
    }
    const double Gt = eval_G(t, pGt);
    const double G1 = eval_G(1.0, pG1);
    const double Gpt = eval_Gp(t, pGpt);
    const double F = Gt / G1;
    const double Fp = Gpt / G1;

    e.gamma = g0 + (g1 - g0) * F;
    e.gamma_prime = (g1 - g0) * Fp;
    if (with_partials) {
        e.d_gamma_g0 = 1.0 - F;
        e.d_gamma_g1 = F;
        e.d_gp_g0 = -Fp;
        e.d_gp_g1 = Fp;
        e.d_gamma_phi.assign(np, 0.0);
        e.d_gp_phi.assign(np, 0.0);
        for (int i = 0; i < np; ++i) {
            const double dF = (dGt[i] - F * dG1[i]) / G1;
            const double dFp = (dGpt[i] - Fp * dG1[i]) / G1;
            e.d_gamma_phi[i] = (g1 - g0) * dF;
            e.d_gp_phi[i] = (g1 - g0) * dFp;
        }
    }
    return e;
}

// sigma^2(t) = exp(gamma(t))
template <class Real>
double sigma2(const NoiseSchedule<Real>& s, double t) {
    require_domain(t >= 0.0 && t <= 1.0, "sigma2: t must lie in [0,1]");
    return std::exp(schedule_eval(s, t).gamma);
}

// SNR'(t) = d/dt 1/sigma^2(t) = -gamma'(t) * exp(-gamma(t))
template <class Real>
double snr_prime(const NoiseSchedule<Real>& s, double t) {
    require_domain(t > 0.0 && t < 1.0, "snr_prime: t must lie in (0,1)");
    const ScheduleEval e = schedule_eval(s, t);
    return -e.gamma_prime * std::exp(-e.gamma);
}

// Graph-side schedule access: leaf ids for the three parameter tensors.
template <class Real>
struct ScheduleLeaves {
    typename Graph<Real>::Id g0, g1, phi;

    static ScheduleLeaves attach(Graph<Real>& g, const NoiseSchedule<Real>& s,
                                 bool needs_grad = true) {
        return {g.leaf(s.gamma0, needs_grad), g.leaf(s.gamma1, needs_grad),
                g.leaf(s.interior, needs_grad)};
    }
};

namespace detail {
template <class Real>
typename Graph<Real>::Id schedule_node(Graph<Real>& g, const ScheduleLeaves<Real>& sl,
                                       const NoiseSchedule<Real>& sched, double t,
                                       bool prime) {
    const ScheduleEval e = schedule_eval(sched, t, /*with_partials=*/true);
    const double v = prime ? e.gamma_prime : e.gamma;
    const double dg0 = prime ? e.d_gp_g0 : e.d_gamma_g0;
    const double dg1 = prime ? e.d_gp_g1 : e.d_gamma_g1;
    const std::vector<double>& dphi = prime ? e.d_gp_phi : e.d_gamma_phi;
    return g.custom(Mat<Real>::scalar(static_cast<Real>(v)), {sl.g0, sl.g1, sl.phi},
                    [sl, dg0, dg1, dphi](Graph<Real>& gr, typename Graph<Real>::Id o) {
                        const Real seed = gr.grad(o).a[0];
                        if (gr.needs_grad(sl.g0))
                            gr.grad(sl.g0).a[0] += seed * static_cast<Real>(dg0);
                        if (gr.needs_grad(sl.g1))
                            gr.grad(sl.g1).a[0] += seed * static_cast<Real>(dg1);
                        if (gr.needs_grad(sl.phi)) {
                            Mat<Real>& gp = gr.grad(sl.phi);
                            for (size_t i = 0; i < dphi.size(); ++i)
                                gp.a[i] += seed * static_cast<Real>(dphi[i]);
                        }
                    });
}
}  // namespace detail

// gamma(t) as a differentiable scalar node
template <class Real>
typename Graph<Real>::Id gamma_node(Graph<Real>& g, const ScheduleLeaves<Real>& sl,
                                    const NoiseSchedule<Real>& sched, double t) {
    return detail::schedule_node(g, sl, sched, t, false);
}

// gamma'(t) as a differentiable scalar node
template <class Real>
typename Graph<Real>::Id gamma_prime_node(Graph<Real>& g, const ScheduleLeaves<Real>& sl,
                                          const NoiseSchedule<Real>& sched, double t) {
    return detail::schedule_node(g, sl, sched, t, true);
}

// -gamma'(t)*exp(-gamma(t)) composed from graph nodes
template <class Real>
typename Graph<Real>::Id snr_prime_node(Graph<Real>& g, typename Graph<Real>::Id gamma,
                                        typename Graph<Real>::Id gamma_prime) {
    const auto exp_neg_gamma = g.unary(g.unary(gamma, Unary::Neg), Unary::Exp);
    return g.scale(g.mul(gamma_prime, exp_neg_gamma), -1.0);
}

}  // namespace plaid
