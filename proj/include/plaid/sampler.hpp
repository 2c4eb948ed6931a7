#pragma once

// Ancestral sampling: z_1 ~ N(0, sigma^2(1) I), T reverse posterior steps with
// self-conditioning chained from the previous step's estimate, then argmax of
// p(x|z_0). Score temperature moves x_hat away from z_t by (1-tau)/tau; token
// guidance biases x_hat by weight * sigma^2(t) * grad_z log p(y|z_t), where
// p(y|z_t) comes from the denoiser's own token posteriors.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <vector>

#include "plaid/model.hpp"
#include "plaid/objective.hpp"

namespace plaid {

struct SamplerConfig {
    long long T = 4096;
    double tau = 0.9;
    int seq_len = 256;
    std::uint64_t seed = 0;
    double guidance_weight = 0.0;

    void validate() const {
        require(T >= 1, "sampler config: T must be >= 1");
        require_domain(tau > 0.0 && tau <= 1.0, "sampler config: tau must lie in (0,1]");
        require(seq_len >= 1, "sampler config: seq_len must be >= 1");
        require(guidance_weight >= 0.0, "sampler config: guidance weight must be >= 0");
    }
};

struct GuidanceTerm {
    enum class Kind { Span, Lexical };
    Kind kind{Kind::Lexical};
    int start{0}, end{0};          // span: positions [start, end)
    std::vector<int> span_tokens;  // span: one token per position
    int lexical_token{0};
    double weight{1.0};
    bool negated{false};
};

struct GuidanceSpec {
    std::vector<GuidanceTerm> terms;

    void validate(int seq_len, int vocab) const {
        std::vector<char> covered(static_cast<size_t>(seq_len), 0);
        for (const auto& t : terms) {
            require(std::isfinite(t.weight), "guidance spec: weight must be finite");
            if (t.kind == GuidanceTerm::Kind::Span) {
                require(0 <= t.start && t.start < t.end && t.end <= seq_len,
                        "guidance spec: span out of range");
                require(static_cast<int>(t.span_tokens.size()) == t.end - t.start,
                        "guidance spec: span token count mismatch");
                for (int tok : t.span_tokens)
                    require(tok >= 0 && tok < vocab, "guidance spec: span token out of range");
                for (int i = t.start; i < t.end; ++i) {
                    require(!covered[i], "guidance spec: overlapping span terms");
                    covered[i] = 1;
                }
            } else {
                require(t.lexical_token >= 0 && t.lexical_token < vocab,
                        "guidance spec: lexical token out of range");
            }
        }
    }
};

// x_hat + ((1-tau)/tau) * (x_hat - z)
template <class Real>
Mat<Real> apply_score_temperature(const Mat<Real>& x_hat, const Mat<Real>& z, double tau) {
    require_domain(tau > 0.0, "apply_score_temperature: tau must be positive");
    if (tau == 1.0) return x_hat;
    const double c = (1.0 - tau) / tau;
    Mat<Real> out = x_hat;
    for (size_t i = 0; i < out.size(); ++i)
        out.a[i] += static_cast<Real>(c * (static_cast<double>(x_hat.a[i]) - z.a[i]));
    return out;
}

// Weighted sum of guidance term log-probabilities over the logits node.
// Span terms are evaluated in log space; probabilities that are materialized
// (lexical mean, complements) are clamped to [1e-12, 1-1e-12] first.
template <class Real>
typename Graph<Real>::Id guidance_logprob_node(Graph<Real>& g, const GuidanceSpec& spec,
                                               typename Graph<Real>::Id logits) {
    using Id = typename Graph<Real>::Id;
    spec.validate(g.val(logits).rows, g.val(logits).cols);
    Id total = g.constant_scalar(0.0);
    for (const auto& term : spec.terms) {
        Id lp;
        if (term.kind == GuidanceTerm::Kind::Span) {
            std::vector<int> rows(term.span_tokens.size());
            for (size_t i = 0; i < rows.size(); ++i) rows[i] = term.start + static_cast<int>(i);
            lp = g.select_logprob_sum(logits, rows, term.span_tokens);
            if (term.negated) {
                const Id p = g.unary(g.unary(lp, Unary::Exp), Unary::ClampProb);
                lp = g.unary(g.unary(p, Unary::OneMinus), Unary::Log);
            }
        } else {
            const Id probs = g.softmax_rows(logits);
            const Id p = g.unary(g.mean(g.gather_col(probs, term.lexical_token)),
                                 Unary::ClampProb);
            lp = term.negated ? g.unary(g.unary(p, Unary::OneMinus), Unary::Log)
                              : g.unary(p, Unary::Log);
        }
        total = g.add(total, g.scale(lp, term.weight));
    }
    return total;
}

template <class Real>
double guidance_logprob(const GuidanceSpec& spec, const Mat<Real>& logits) {
    Graph<Real> g;
    const auto id = guidance_logprob_node(g, spec, g.constant(logits));
    return static_cast<double>(g.val(id).a[0]);
}

// Standalone guided denoise: one sample-mode pass at (z, t) conditioned on
// prev, returning x_hat biased by the guidance gradient through the full
// logits computation. weight == 0 returns x_hat untouched, bit-exact.
template <class Real>
Mat<Real> guided_xhat(const Model<Real>& m, const Latent<Real>& z, const Mat<Real>& prev,
                      const GuidanceSpec& spec, double weight) {
    require(weight >= 0.0, "guided_xhat: weight must be >= 0");
    Graph<Real> g;
    const auto lv = DenoiserLeaves<Real>::attach(g, m.den, false);
    const auto table = g.leaf(m.emb.weights, false);
    const auto zn = g.leaf(z.z, /*needs_grad=*/weight > 0);
    const double s2 = sigma2(m.sched, z.t);
    const auto sc = self_cond_forward_node(g, m.cfg, lv, table, zn, g.constant_scalar(s2), z.t,
                                           prior_anneal_coeff(m.anneal_step), -1,
                                           SelfCondMode::Sample, g.constant(prev), nullptr);
    Mat<Real> xh = g.val(sc.xhat);
    if (weight == 0.0) return xh;
    g.backward(guidance_logprob_node(g, spec, sc.logits));
    const Mat<Real>& gz = g.grad(zn);
    if (!gz.all_finite()) throw std::runtime_error("guided_xhat: non-finite guidance gradient");
    for (size_t i = 0; i < xh.size(); ++i)
        xh.a[i] += static_cast<Real>(weight * s2 * static_cast<double>(gz.a[i]));
    return xh;
}

struct SampleStats {
    long long network_calls{0};
    long long posterior_draws{0};
    double wallclock_s{0};
};

template <class Real>
std::vector<int> sample(const Model<Real>& m, const SamplerConfig& cfg,
                        const std::optional<GuidanceSpec>& spec = std::nullopt,
                        SampleStats* stats = nullptr) {
    const auto t_start = std::chrono::steady_clock::now();
    cfg.validate();
    require(cfg.seq_len <= m.cfg.max_seq_len, "sample: seq_len exceeds model max_seq_len");
    if (spec) spec->validate(cfg.seq_len, m.cfg.vocab);
    const bool guided = spec.has_value() && cfg.guidance_weight > 0.0;
    const int L = cfg.seq_len, d = m.cfg.embed_dim;
    const double prior_c = prior_anneal_coeff(m.anneal_step);

    Rng rng(cfg.seed);
    std::uint64_t calls = 0;
    long long draws = 0;

    Mat<Real> z(L, d);
    {
        const double s1 = std::sqrt(sigma2(m.sched, 1.0));
        for (auto& v : z.a) v = static_cast<Real>(s1 * rng.normal());
    }
    Mat<Real> prev(L, d);  // first step conditions on zeros

    for (long long k = cfg.T; k >= 1; --k) {
        const double t = static_cast<double>(k) / cfg.T;
        const double s = static_cast<double>(k - 1) / cfg.T;
        const double s2 = sigma2(m.sched, t);

        Graph<Real> g;
        const auto lv = DenoiserLeaves<Real>::attach(g, m.den, false);
        const auto table = g.leaf(m.emb.weights, false);
        const auto zn = g.leaf(z, guided);
        const auto sc = self_cond_forward_node(g, m.cfg, lv, table, zn, g.constant_scalar(s2), t,
                                               prior_c, -1, SelfCondMode::Sample,
                                               g.constant(prev), nullptr, &calls);
        const Mat<Real> xh_raw = g.val(sc.xhat);
        Mat<Real> xh = apply_score_temperature(xh_raw, z, cfg.tau);
        if (guided) {
            g.backward(guidance_logprob_node(g, *spec, sc.logits));
            const Mat<Real>& gz = g.grad(zn);
            if (!gz.all_finite())
                throw std::runtime_error("sample: non-finite guidance gradient");
            for (size_t i = 0; i < xh.size(); ++i)
                xh.a[i] += static_cast<Real>(cfg.guidance_weight * s2 *
                                             static_cast<double>(gz.a[i]));
        }
        const auto post = posterior_params(z, xh, s, t, m.sched);
        const double sd = std::sqrt(post.var);
        z = post.mean;
        for (auto& v : z.a) v += static_cast<Real>(sd * rng.normal());
        ++draws;
        prev = xh_raw;  // chain the raw estimate
    }

    // decode: argmax of the token posterior at the final latent, t = 0
    const Latent<Real> z0{z, 0.0};
    const Mat<Real> logits =
        denoise_logits(m, z0, prev, m.anneal_step, -1, &calls);
    std::vector<int> tokens(L);
    for (int r = 0; r < L; ++r) {
        int best = 0;
        for (int c = 1; c < logits.cols; ++c)
            if (logits(r, c) > logits(r, best)) best = c;
        tokens[r] = best;
    }
    if (stats) {
        stats->network_calls = static_cast<long long>(calls);
        stats->posterior_draws = draws;
        stats->wallclock_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    }
    return tokens;
}

}  // namespace plaid
