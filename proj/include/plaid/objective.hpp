#pragma once

// Continuous-time variational bound and its estimators.
//
//   -VLB(x) = KL(q(z1|x) || p(z1)) + E[-log p(x|z0)] + L_inf
//   L_inf   = -1/2 E_{t~U[0,1], z_t}[ SNR'(t) |x_embed - x_hat|^2 ]
//
// The minibatch is split between the diffusion and reconstruction terms in
// proportion to sqrt of their tracked variances. The schedule interior trains
// on the second moment of the per-example diffusion losses (the expectation
// is interior-invariant, so minimizing E[loss^2] minimizes the estimator
// variance).

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "plaid/diffusion.hpp"
#include "plaid/model.hpp"

namespace plaid {

struct BatchItem {
    std::vector<int> tokens;
    int len{0};  // loss-visible prefix; tokens.size() unless truncated

    explicit BatchItem(std::vector<int> t)
        : tokens(std::move(t)), len(static_cast<int>(tokens.size())) {}
    BatchItem() = default;
};

struct VlbEstimate {
    double prior_kl{0};
    double recon{0};
    double diffusion{0};
    double total{0};
    int n_diff{0};
    int n_recon{0};
};

struct MomentTracker {
    double decay{0.99};
    double m1_diff{0}, m2_diff{0};
    double m1_recon{0}, m2_recon{0};

    void update_diff(double v) {
        m1_diff = decay * m1_diff + (1 - decay) * v;
        m2_diff = decay * m2_diff + (1 - decay) * v * v;
    }
    void update_recon(double v) {
        m1_recon = decay * m1_recon + (1 - decay) * v;
        m2_recon = decay * m2_recon + (1 - decay) * v * v;
    }
    double var_diff() const { return std::max(0.0, m2_diff - m1_diff * m1_diff); }
    double var_recon() const { return std::max(0.0, m2_recon - m1_recon * m1_recon); }
};

// n_diff : n_recon ~ sqrt(var_diff) : sqrt(var_recon), nearest-rounded, both >= 1
inline std::pair<int, int> allocate_split(double var_diff, double var_recon, int batch) {
    require(batch >= 2, "allocate_split: batch must be >= 2");
    require(var_diff >= 0 && var_recon >= 0, "allocate_split: variances must be nonnegative");
    double sd = std::sqrt(var_diff), sr = std::sqrt(var_recon);
    if (sd + sr == 0) sd = sr = 1;
    int n_diff = static_cast<int>(std::llround(batch * sd / (sd + sr)));
    n_diff = std::max(1, std::min(batch - 1, n_diff));
    return {n_diff, batch - n_diff};
}

// -1/2 SNR'(t) |x_embed - x_hat|^2 over the first valid_rows positions
template <class Real>
double diffusion_loss(const Mat<Real>& x_embed, const Mat<Real>& x_hat, double t,
                      const NoiseSchedule<Real>& sched, int valid_rows = -1) {
    require(x_embed.same_shape(x_hat), "diffusion_loss: shape mismatch");
    const int vr = valid_rows < 0 ? x_embed.rows : valid_rows;
    double ss = 0;
    for (int r = 0; r < vr; ++r)
        for (int c = 0; c < x_embed.cols; ++c) {
            const double d = static_cast<double>(x_embed(r, c)) - x_hat(r, c);
            ss += d * d;
        }
    return -0.5 * snr_prime(sched, t) * ss;
}

// sum_i -log softmax(logits[i])[tokens[i]]
template <class Real>
double reconstruction_loss(const Mat<Real>& logits, const std::vector<int>& tokens,
                           int valid_rows = -1) {
    const int vr = valid_rows < 0 ? static_cast<int>(tokens.size()) : valid_rows;
    require(vr <= logits.rows && vr <= static_cast<int>(tokens.size()),
            "reconstruction_loss: row mismatch");
    double total = 0;
    for (int r = 0; r < vr; ++r) {
        if (tokens[r] < 0 || tokens[r] >= logits.cols)
            throw std::out_of_range("reconstruction_loss: token id out of range");
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < logits.cols; ++c) mx = std::max(mx, static_cast<double>(logits(r, c)));
        double z = 0;
        for (int c = 0; c < logits.cols; ++c) z += std::exp(static_cast<double>(logits(r, c)) - mx);
        total += -(static_cast<double>(logits(r, tokens[r])) - mx - std::log(z));
    }
    return total;
}

// mean of squared per-example diffusion losses
inline double schedule_interior_loss(const std::vector<double>& diffusion_samples) {
    require(diffusion_samples.size() >= 2, "schedule_interior_loss: needs >= 2 samples");
    double s = 0;
    for (double v : diffusion_samples) s += v * v;
    return s / static_cast<double>(diffusion_samples.size());
}

template <class Real>
struct ModelLeaves {
    DenoiserLeaves<Real> den;
    typename Graph<Real>::Id table;
    ScheduleLeaves<Real> sched;

    static ModelLeaves attach(Graph<Real>& g, const Model<Real>& m, bool needs_grad = true) {
        return {DenoiserLeaves<Real>::attach(g, m.den, needs_grad),
                g.leaf(m.emb.weights, needs_grad),
                ScheduleLeaves<Real>::attach(g, m.sched, needs_grad)};
    }
};

template <class Real>
struct VlbForward {
    VlbEstimate est;
    typename Graph<Real>::Id vlb_loss{-1};       // mean per-sequence bound
    typename Graph<Real>::Id interior_loss{-1};  // -1 when n_diff < 2
    std::vector<double> diff_samples;
    std::vector<double> recon_samples;
};

namespace detail {
inline double clamp_unit_open(double t) {
    return std::min(1.0 - 1e-12, std::max(1e-12, t));
}

template <class Real>
typename Graph<Real>::Id mean_of(Graph<Real>& g, const std::vector<typename Graph<Real>::Id>& xs) {
    typename Graph<Real>::Id acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = g.add(acc, xs[i]);
    return g.scale(acc, 1.0 / static_cast<double>(xs.size()));
}
}  // namespace detail

// Graph construction for one minibatch estimate of the bound. RNG draw order
// (fixed for reproducibility): per diffusion example t, then noise, then the
// self-conditioning coin; per reconstruction example noise, then the coin.
// prior_coeff_override >= 0 replaces the annealed prior coefficient (the
// no-output-prior ablation passes 0).
template <class Real>
VlbForward<Real> vlb_forward(Graph<Real>& g, const ModelLeaves<Real>& lv, const Model<Real>& m,
                             const std::vector<BatchItem>& batch, const MomentTracker& tracker,
                             Rng& rng, long long anneal_step, double prior_coeff_override = -1.0) {
    using Id = typename Graph<Real>::Id;
    require(!batch.empty(), "vlb_forward: empty batch");
    const int n = static_cast<int>(batch.size());
    const double prior_c =
        prior_coeff_override >= 0 ? prior_coeff_override : prior_anneal_coeff(anneal_step);

    // Equal split while the tracker warms up (first 100 steps). A single
    // sequence takes both roles so the estimate still covers every term.
    int n_diff = 0, n_recon = 0;
    if (n == 1) {
        n_diff = 1;
        n_recon = 1;
    } else if (anneal_step < 100) {
        std::tie(n_diff, n_recon) = allocate_split(1.0, 1.0, n);
    } else {
        std::tie(n_diff, n_recon) =
            allocate_split(tracker.var_diff(), tracker.var_recon(), n);
    }

    VlbForward<Real> out;
    std::vector<Id> prior_terms, diff_terms, recon_terms;

    // sigma^2(1) pieces for the prior KL, shared across the batch
    const Id g1 = gamma_node(g, lv.sched, m.sched, 1.0);
    const Id half_inv_s21 = g.scale(g.unary(g.unary(g1, Unary::Exp), Unary::Recip), 0.5);

    for (int i = 0; i < n; ++i) {
        const BatchItem& item = batch[i];
        require(item.len >= 1 && item.len <= static_cast<int>(item.tokens.size()),
                "vlb_forward: bad item length");
        const int L = static_cast<int>(item.tokens.size());
        const Id xemb = g.gather_rows(lv.table, item.tokens);
        prior_terms.push_back(g.scale_by(g.sumsq_rows(xemb, item.len), half_inv_s21));

        const bool do_diff = i < n_diff;
        const bool do_recon = i >= n - n_recon;

        if (do_diff) {
            const double t = detail::clamp_unit_open(rng.uniform());
            const Id gam = gamma_node(g, lv.sched, m.sched, t);
            const Id s2 = g.unary(gam, Unary::Exp);
            const Id eps = g.constant(randn_like<Real>(L, m.cfg.embed_dim, rng));
            const Id z = g.add(xemb, g.scale_by(eps, g.unary(s2, Unary::Sqrt)));
            const auto sc = self_cond_forward_node(g, m.cfg, lv.den, lv.table, z, s2, t, prior_c,
                                                   item.len, SelfCondMode::Train, Id(-1), &rng);
            const Id rss = g.sumsq_rows(g.sub(xemb, sc.xhat), item.len);
            const Id snrp = snr_prime_node(g, gam, gamma_prime_node(g, lv.sched, m.sched, t));
            const Id ell = g.scale(g.mul(snrp, rss), -0.5);
            diff_terms.push_back(ell);
            out.diff_samples.push_back(static_cast<double>(g.val(ell).a[0]));
        }
        if (do_recon) {
            const Id gam0 = gamma_node(g, lv.sched, m.sched, 0.0);
            const Id s20 = g.unary(gam0, Unary::Exp);
            const Id eps = g.constant(randn_like<Real>(L, m.cfg.embed_dim, rng));
            const Id z0 = g.add(xemb, g.scale_by(eps, g.unary(s20, Unary::Sqrt)));
            const auto sc = self_cond_forward_node(g, m.cfg, lv.den, lv.table, z0, s20, 0.0,
                                                   prior_c, item.len, SelfCondMode::Train, Id(-1),
                                                   &rng);
            std::vector<int> rows(item.len);
            std::vector<int> toks(item.tokens.begin(), item.tokens.begin() + item.len);
            for (int r = 0; r < item.len; ++r) rows[r] = r;
            const Id ce = g.scale(g.select_logprob_sum(sc.logits, rows, toks), -1.0);
            recon_terms.push_back(ce);
            out.recon_samples.push_back(static_cast<double>(g.val(ce).a[0]));
        }
    }

    const Id prior_mean = detail::mean_of(g, prior_terms);
    Id loss = prior_mean;
    if (!diff_terms.empty()) loss = g.add(loss, detail::mean_of(g, diff_terms));
    if (!recon_terms.empty()) loss = g.add(loss, detail::mean_of(g, recon_terms));
    out.vlb_loss = loss;

    if (diff_terms.size() >= 2) {
        std::vector<Id> sq;
        sq.reserve(diff_terms.size());
        for (Id d : diff_terms) sq.push_back(g.mul(d, d));
        out.interior_loss = detail::mean_of(g, sq);
    }

    out.est.n_diff = n_diff;
    out.est.n_recon = n_recon;
    out.est.prior_kl = static_cast<double>(g.val(prior_mean).a[0]);
    double dsum = 0, rsum = 0;
    for (double v : out.diff_samples) dsum += v;
    for (double v : out.recon_samples) rsum += v;
    out.est.diffusion = out.diff_samples.empty() ? 0 : dsum / out.diff_samples.size();
    out.est.recon = out.recon_samples.empty() ? 0 : rsum / out.recon_samples.size();
    out.est.total = out.est.prior_kl + out.est.diffusion + out.est.recon;
    return out;
}

// Monte-Carlo estimate of the bound over one minibatch; updates the tracker.
template <class Real>
VlbEstimate vlb_estimate(const Model<Real>& m, const std::vector<BatchItem>& batch,
                         MomentTracker& tracker, Rng& rng, long long anneal_step) {
    Graph<Real> g;
    const auto lv = ModelLeaves<Real>::attach(g, m, false);
    const auto fwd = vlb_forward(g, lv, m, batch, tracker, rng, anneal_step);
    for (double v : fwd.diff_samples) tracker.update_diff(v);
    for (double v : fwd.recon_samples) tracker.update_recon(v);
    return fwd.est;
}

struct McEstimate {
    double value{0};
    double std_err{0};
};

// Finite-T diffusion bound L_T (Eq. with per-step posterior KLs), Monte-Carlo
// over z_t draws. Self-conditioning follows the evaluation protocol (2-pass).
template <class Real>
McEstimate discrete_vlb(const Model<Real>& m, const BatchItem& seq, int T, int draws_per_step,
                        Rng& rng) {
    require(T >= 1, "discrete_vlb: T must be >= 1");
    require(draws_per_step >= 1, "discrete_vlb: draws_per_step must be >= 1");
    const Mat<Real> xemb = embed(seq.tokens, m.emb);
    double total = 0, var_total = 0;
    for (int i = 1; i <= T; ++i) {
        const double t = static_cast<double>(i) / T;
        const double s = static_cast<double>(i - 1) / T;
        double acc = 0, acc2 = 0;
        for (int k = 0; k < draws_per_step; ++k) {
            const Latent<Real> zt = sample_latent(xemb, t, m.sched, rng);
            const auto den = self_cond_forward(m, zt, SelfCondMode::Eval, std::nullopt, rng,
                                               seq.len);
            const auto under_x = posterior_params(zt.z, xemb, s, t, m.sched);
            const auto under_xhat = posterior_params(zt.z, den.x_hat, s, t, m.sched);
            const double kl = posterior_step_kl(under_x, under_xhat);
            acc += kl;
            acc2 += kl * kl;
        }
        const double mean = acc / draws_per_step;
        total += mean;
        if (draws_per_step > 1) {
            const double var = std::max(0.0, acc2 / draws_per_step - mean * mean) /
                               (draws_per_step - 1);
            var_total += var;
        }
    }
    return {total, std::sqrt(var_total)};
}

// Continuous-time diffusion term estimate with its standard error.
// Stratified-jittered t draws when stratified=true (the evaluation protocol).
template <class Real>
McEstimate continuous_diffusion_estimate(const Model<Real>& m, const BatchItem& seq, int draws,
                                         Rng& rng, bool stratified = true) {
    require(draws >= 2, "continuous_diffusion_estimate: needs >= 2 draws");
    const Mat<Real> xemb = embed(seq.tokens, m.emb);
    double acc = 0, acc2 = 0;
    for (int k = 0; k < draws; ++k) {
        const double u = rng.uniform();
        const double t = detail::clamp_unit_open(
            stratified ? (k + u) / static_cast<double>(draws) : u);
        const Latent<Real> zt = sample_latent(xemb, t, m.sched, rng);
        const auto den = self_cond_forward(m, zt, SelfCondMode::Eval, std::nullopt, rng, seq.len);
        const double ell = diffusion_loss(xemb, den.x_hat, t, m.sched, seq.len);
        acc += ell;
        acc2 += ell * ell;
    }
    const double mean = acc / draws;
    const double var = std::max(0.0, acc2 / draws - mean * mean) / (draws - 1);
    return {mean, std::sqrt(var)};
}

struct EvalReport {
    std::string dataset;
    long long sequences{0};
    double nats_per_token{0};
    double nats_per_char{0};
    double bpc{0};
    double ppl{0};
    int mc_draws{0};
    std::uint64_t seed{0};
};

// Held-out bound over a dataset: per sequence, closed-form prior KL plus
// mc_draws stratified diffusion draws plus mc_draws reconstruction draws,
// every network call unrolled to y2.
template <class Real>
EvalReport eval_nll(const Model<Real>& m, const std::vector<BatchItem>& seqs,
                    long long total_chars, int mc_draws, std::uint64_t seed,
                    const std::string& dataset_name) {
    require(!seqs.empty(), "eval_nll: empty dataset");
    require(mc_draws >= 1, "eval_nll: mc_draws must be >= 1");
    Rng rng(seed);
    double total_nats = 0;
    long long total_tokens = 0;
    for (const BatchItem& seq : seqs) {
        const Mat<Real> xemb = embed(seq.tokens, m.emb);
        double nats = prior_kl(xemb, m.sched, seq.len);
        double diff = 0, recon = 0;
        for (int k = 0; k < mc_draws; ++k) {
            const double t =
                detail::clamp_unit_open((k + rng.uniform()) / static_cast<double>(mc_draws));
            const Latent<Real> zt = sample_latent(xemb, t, m.sched, rng);
            const auto den = self_cond_forward(m, zt, SelfCondMode::Eval, std::nullopt, rng,
                                               seq.len);
            diff += diffusion_loss(xemb, den.x_hat, t, m.sched, seq.len);

            const Latent<Real> z0 = sample_latent(xemb, 0.0, m.sched, rng);
            const auto den0 = self_cond_forward(m, z0, SelfCondMode::Eval, std::nullopt, rng,
                                                seq.len);
            recon += reconstruction_loss(den0.logits, seq.tokens, seq.len);
        }
        nats += (diff + recon) / mc_draws;
        total_nats += nats;
        total_tokens += seq.len;
    }
    EvalReport r;
    r.dataset = dataset_name;
    r.sequences = static_cast<long long>(seqs.size());
    r.nats_per_token = total_nats / static_cast<double>(total_tokens);
    r.nats_per_char = total_chars > 0 ? total_nats / static_cast<double>(total_chars)
                                      : r.nats_per_token;
    r.bpc = r.nats_per_char / std::log(2.0);
    r.ppl = std::exp(r.nats_per_token);
    r.mc_draws = mc_draws;
    r.seed = seed;
    return r;
}

}  // namespace plaid
