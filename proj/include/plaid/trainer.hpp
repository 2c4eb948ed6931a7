#pragma once

// Optimization loop. One step = one bound estimate over the batch, a backward
// pass for model parameters and schedule endpoints, a second backward pass
// from the variance objective for the schedule interior, global-norm clipping
// and a decoupled AdamW update.
//
// Learning-rate/weight-decay rule: ramp(step) warms linearly 0->1 over
// warmup_steps then decays linearly to 0 at total_steps; lr = base_lr * ramp
// and wd = (wd_coeff / base_lr) * ramp, so wd * lr = wd_coeff at peak.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "plaid/model.hpp"
#include "plaid/objective.hpp"

namespace plaid {

struct TrainConfig {
    double base_lr = 1.4e-3;
    int warmup_steps = 2500;
    int total_steps = 10000;
    int batch_size = 256;
    int seq_len = 256;
    double truncate_frac = 0.03;
    std::uint64_t seed = 0;
    double wd_coeff = 4e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    bool disable_output_prior = false;  // ablation switch: hold the prior coefficient at 0

    void validate() const {
        require(warmup_steps >= 0 && warmup_steps <= total_steps,
                "train config: warmup_steps must not exceed total_steps");
        require(truncate_frac >= 0.0 && truncate_frac <= 1.0,
                "train config: truncate_frac must lie in [0,1]");
        require(batch_size >= 1 && seq_len >= 1 && base_lr > 0,
                "train config: bad sizes");
    }
};

struct LrWd {
    double lr{0};
    double wd{0};
};

inline LrWd lr_wd_schedule(long long step, const TrainConfig& c) {
    if (step < 0 || step > c.total_steps)
        throw std::out_of_range("lr_wd_schedule: step outside [0, total_steps]");
    double ramp;
    if (step <= c.warmup_steps)
        ramp = c.warmup_steps > 0 ? static_cast<double>(step) / c.warmup_steps : 1.0;
    else
        ramp = static_cast<double>(c.total_steps - step) /
               static_cast<double>(c.total_steps - c.warmup_steps);
    return {c.base_lr * ramp, (c.wd_coeff / c.base_lr) * ramp};
}

// Each example is independently truncated with probability frac to a length
// uniform on [1, L]; the loss and attention mask everything past len.
inline void truncate_batch(std::vector<BatchItem>& batch, double frac, Rng& rng) {
    require(frac >= 0.0 && frac <= 1.0, "truncate_batch: frac must lie in [0,1]");
    for (auto& item : batch) {
        if (frac > 0.0 && rng.uniform() < frac) {
            const int L = static_cast<int>(item.tokens.size());
            item.len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(L)));
        }
    }
}

struct StepMetrics {
    long long step{0};
    double total{0}, prior_kl{0}, diffusion{0}, recon{0};
    int n_diff{0}, n_recon{0};
    double lr{0}, wd{0}, grad_norm{0};
    double wallclock_s{0};
};

template <class Real>
struct TrainState {
    TrainConfig cfg;
    Model<Real> model;
    std::vector<Mat<Real>> adam_m, adam_v;  // aligned with Model::for_each_param order
    MomentTracker tracker;
    Rng rng;
    long long step = 0;

    static TrainState init(const TrainConfig& tc, const DenoiserConfig& dc, int sched_units = 8) {
        tc.validate();
        TrainState st;
        st.cfg = tc;
        st.model = Model<Real>::init(dc, tc.seed, sched_units);
        st.rng = Rng(tc.seed ^ 0x74726e);
        st.model.for_each_param([&](const std::string&, Mat<Real>& p, bool) {
            st.adam_m.emplace_back(p.rows, p.cols);
            st.adam_v.emplace_back(p.rows, p.cols);
        });
        return st;
    }
};

namespace detail {
// Grad tensors in Model::for_each_param order: denoiser tensors, embedding,
// gamma0, gamma1, interior. The interior slot is filled from the second
// (variance-objective) backward pass; everything else from the first.
template <class Real>
std::vector<Mat<Real>> collect_grads(Graph<Real>& g, const ModelLeaves<Real>& lv,
                                     const Mat<Real>& interior_grad) {
    std::vector<Mat<Real>> out;
    lv.den.for_each([&](typename Graph<Real>::Id id) { out.push_back(g.grad(id)); });
    out.push_back(g.grad(lv.table));
    out.push_back(g.grad(lv.sched.g0));
    out.push_back(g.grad(lv.sched.g1));
    out.push_back(interior_grad);
    return out;
}
}  // namespace detail

template <class Real>
StepMetrics train_step(TrainState<Real>& st, std::vector<BatchItem> batch) {
    const auto t0 = std::chrono::steady_clock::now();
    require(!batch.empty(), "train_step: empty batch");
    for (const auto& item : batch)
        require(static_cast<int>(item.tokens.size()) <= st.model.cfg.max_seq_len,
                "train_step: sequence longer than model max_seq_len");

    const LrWd sched = lr_wd_schedule(st.step, st.cfg);
    truncate_batch(batch, st.cfg.truncate_frac, st.rng);
    st.model.anneal_step = st.cfg.disable_output_prior ? 0 : st.step;

    Graph<Real> g;
    const auto lv = ModelLeaves<Real>::attach(g, st.model, true);
    const auto fwd = vlb_forward(g, lv, st.model, batch, st.tracker, st.rng, st.step,
                                 st.cfg.disable_output_prior ? 0.0 : -1.0);

    if (!std::isfinite(fwd.est.total)) {
        std::ostringstream os;
        os << "train_step: non-finite loss at step " << st.step << " (prior_kl="
           << fwd.est.prior_kl << " diffusion=" << fwd.est.diffusion << " recon="
           << fwd.est.recon << ")";
        throw std::runtime_error(os.str());
    }

    g.backward(fwd.vlb_loss);
    Mat<Real> interior_grad(st.model.sched.interior.rows, st.model.sched.interior.cols);
    if (fwd.interior_loss >= 0) {
        // endpoints and network read their gradient from the bound only; the
        // interior reads its own from the variance objective
        auto vlb_grads = detail::collect_grads(g, lv, interior_grad);
        g.zero_grads();
        g.backward(fwd.interior_loss);
        vlb_grads.back() = g.grad(lv.sched.phi);
        return apply_update(st, fwd, std::move(vlb_grads), sched, t0);
    }
    auto grads = detail::collect_grads(g, lv, interior_grad);
    return apply_update(st, fwd, std::move(grads), sched, t0);
}

template <class Real>
StepMetrics apply_update(TrainState<Real>& st, const VlbForward<Real>& fwd,
                         std::vector<Mat<Real>> grads, const LrWd& sched,
                         std::chrono::steady_clock::time_point t0) {
    double norm_sq = 0;
    for (const auto& gmat : grads) norm_sq += sumsq(gmat);
    const double grad_norm = std::sqrt(norm_sq);
    const double clip_scale =
        (st.cfg.grad_clip > 0 && grad_norm > st.cfg.grad_clip) ? st.cfg.grad_clip / grad_norm
                                                               : 1.0;

    for (double v : fwd.diff_samples) st.tracker.update_diff(v);
    for (double v : fwd.recon_samples) st.tracker.update_recon(v);

    const double bc1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step + 1));
    const double bc2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step + 1));
    size_t idx = 0;
    st.model.for_each_param([&](const std::string&, Mat<Real>& p, bool decay) {
        const Mat<Real>& gmat = grads[idx];
        Mat<Real>& m = st.adam_m[idx];
        Mat<Real>& v = st.adam_v[idx];
        const double wd = decay ? sched.wd : 0.0;
        for (size_t i = 0; i < p.size(); ++i) {
            const double gv = static_cast<double>(gmat.a[i]) * clip_scale;
            const double mi = st.cfg.beta1 * m.a[i] + (1 - st.cfg.beta1) * gv;
            const double vi = st.cfg.beta2 * v.a[i] + (1 - st.cfg.beta2) * gv * gv;
            m.a[i] = static_cast<Real>(mi);
            v.a[i] = static_cast<Real>(vi);
            const double upd = (mi / bc1) / (std::sqrt(vi / bc2) + st.cfg.adam_eps);
            p.a[i] = static_cast<Real>(p.a[i] - sched.lr * upd - sched.lr * wd * p.a[i]);
        }
        ++idx;
    });

    StepMetrics mtr;
    mtr.step = st.step;
    mtr.total = fwd.est.total;
    mtr.prior_kl = fwd.est.prior_kl;
    mtr.diffusion = fwd.est.diffusion;
    mtr.recon = fwd.est.recon;
    mtr.n_diff = fwd.est.n_diff;
    mtr.n_recon = fwd.est.n_recon;
    mtr.lr = sched.lr;
    mtr.wd = sched.wd;
    mtr.grad_norm = grad_norm;
    mtr.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++st.step;
    // keep the counter live for eval/sampling between steps
    st.model.anneal_step = st.cfg.disable_output_prior ? 0 : st.step;
    return mtr;
}

}  // namespace plaid
