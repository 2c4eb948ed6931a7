#pragma once

// Denoiser f_theta: pre-activation transformer (RMSNorm + GeLU, bidirectional
// attention) over the rescaled latent concatenated with the self-conditioning
// input. Output logits get the closed-form Gaussian output prior, annealed in
// linearly over the first 5000 training steps. x_hat is the softmax-weighted
// average of embedding rows.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "plaid/autodiff.hpp"
#include "plaid/core.hpp"
#include "plaid/embedding.hpp"
#include "plaid/rng.hpp"
#include "plaid/schedule.hpp"

namespace plaid {

constexpr int kPriorAnnealSteps = 5000;

inline double prior_anneal_coeff(long long step) {
    require(step >= 0, "prior_anneal_coeff: step must be nonnegative");
    return step >= kPriorAnnealSteps ? 1.0 : static_cast<double>(step) / kPriorAnnealSteps;
}

struct DenoiserConfig {
    int depth = 16;
    int width = 256;
    int vocab = 259;
    int embed_dim = 16;
    int heads = 4;
    int max_seq_len = 256;
    int time_enc_dim = 64;

    int head_dim() const { return width / heads; }
    int mlp_dim() const { return 4 * width; }

    void validate() const {
        require(depth >= 1, "config: depth must be >= 1");
        require(width >= 1 && heads >= 1 && width % heads == 0,
                "config: width must be divisible by heads");
        require(vocab >= 1 && embed_dim >= 1 && max_seq_len >= 1, "config: bad dimensions");
        require(time_enc_dim >= 2 && time_enc_dim % 2 == 0, "config: time_enc_dim must be even");
    }
};

// 64-dim sinusoidal features of diffusion time, frequencies geometric in [1, 1e4]
template <class Real>
Mat<Real> time_encoding(double t, int dim) {
    const int half = dim / 2;
    Mat<Real> enc(1, dim);
    for (int k = 0; k < half; ++k) {
        const double freq =
            half > 1 ? std::pow(10000.0, static_cast<double>(k) / (half - 1)) : 1.0;
        enc.a[k] = static_cast<Real>(std::sin(t * freq));
        enc.a[half + k] = static_cast<Real>(std::cos(t * freq));
    }
    return enc;
}

template <class Real>
struct DenoiserParams {
    struct Block {
        Mat<Real> ln1_g, wq, wk, wv, wo, bo;
        Mat<Real> ln2_g, w1, b1, w2, b2;
    };

    Mat<Real> in_proj_w, in_proj_b;      // (2d, w), (1, w)
    Mat<Real> pos_emb;                   // (max_seq_len, w)
    Mat<Real> time_proj_w, time_proj_b;  // (time_enc_dim, w), (1, w)
    std::vector<Block> blocks;
    Mat<Real> final_ln_g;              // (1, w)
    Mat<Real> out_proj_w, out_proj_b;  // (w, V), (1, V)

    static DenoiserParams init(const DenoiserConfig& cfg, Rng& rng) {
        cfg.validate();
        const int w = cfg.width;
        auto wmat = [&](int r, int c) {
            Mat<Real> m(r, c);
            for (auto& v : m.a) v = static_cast<Real>(0.02 * rng.normal());
            return m;
        };
        DenoiserParams p;
        p.in_proj_w = wmat(2 * cfg.embed_dim, w);
        p.in_proj_b = Mat<Real>(1, w);
        p.pos_emb = wmat(cfg.max_seq_len, w);
        p.time_proj_w = wmat(cfg.time_enc_dim, w);
        p.time_proj_b = Mat<Real>(1, w);
        p.blocks.resize(cfg.depth);
        for (auto& b : p.blocks) {
            b.ln1_g = Mat<Real>(1, w, Real(1));
            b.wq = wmat(w, w);
            b.wk = wmat(w, w);
            b.wv = wmat(w, w);
            b.wo = wmat(w, w);
            b.bo = Mat<Real>(1, w);
            b.ln2_g = Mat<Real>(1, w, Real(1));
            b.w1 = wmat(w, cfg.mlp_dim());
            b.b1 = Mat<Real>(1, cfg.mlp_dim());
            b.w2 = wmat(cfg.mlp_dim(), w);
            b.b2 = Mat<Real>(1, w);
        }
        p.final_ln_g = Mat<Real>(1, w, Real(1));
        p.out_proj_w = wmat(w, cfg.vocab);
        p.out_proj_b = Mat<Real>(1, cfg.vocab);
        return p;
    }

    // Fixed enumeration order shared by the optimizer and the checkpoint.
    // The bool marks weight-decay eligibility.
    template <class F>
    void for_each(F&& f) {
        f(std::string("in_proj_w"), in_proj_w, true);
        f(std::string("in_proj_b"), in_proj_b, false);
        f(std::string("pos_emb"), pos_emb, false);
        f(std::string("time_proj_w"), time_proj_w, true);
        f(std::string("time_proj_b"), time_proj_b, false);
        for (size_t i = 0; i < blocks.size(); ++i) {
            const std::string pre = "block" + std::to_string(i) + ".";
            auto& b = blocks[i];
            f(pre + "ln1_g", b.ln1_g, false);
            f(pre + "wq", b.wq, true);
            f(pre + "wk", b.wk, true);
            f(pre + "wv", b.wv, true);
            f(pre + "wo", b.wo, true);
            f(pre + "bo", b.bo, false);
            f(pre + "ln2_g", b.ln2_g, false);
            f(pre + "w1", b.w1, true);
            f(pre + "b1", b.b1, false);
            f(pre + "w2", b.w2, true);
            f(pre + "b2", b.b2, false);
        }
        f(std::string("final_ln_g"), final_ln_g, false);
        f(std::string("out_proj_w"), out_proj_w, true);
        f(std::string("out_proj_b"), out_proj_b, false);
    }
};

template <class Real>
struct DenoiserLeaves {
    using Id = typename Graph<Real>::Id;
    struct Block {
        Id ln1_g, wq, wk, wv, wo, bo, ln2_g, w1, b1, w2, b2;
    };
    Id in_proj_w, in_proj_b, pos_emb, time_proj_w, time_proj_b;
    std::vector<Block> blocks;
    Id final_ln_g, out_proj_w, out_proj_b;

    static DenoiserLeaves attach(Graph<Real>& g, const DenoiserParams<Real>& p,
                                 bool needs_grad = true) {
        DenoiserLeaves l;
        l.in_proj_w = g.leaf(p.in_proj_w, needs_grad);
        l.in_proj_b = g.leaf(p.in_proj_b, needs_grad);
        l.pos_emb = g.leaf(p.pos_emb, needs_grad);
        l.time_proj_w = g.leaf(p.time_proj_w, needs_grad);
        l.time_proj_b = g.leaf(p.time_proj_b, needs_grad);
        for (const auto& b : p.blocks)
            l.blocks.push_back(Block{
                g.leaf(b.ln1_g, needs_grad), g.leaf(b.wq, needs_grad), g.leaf(b.wk, needs_grad),
                g.leaf(b.wv, needs_grad), g.leaf(b.wo, needs_grad), g.leaf(b.bo, needs_grad),
                g.leaf(b.ln2_g, needs_grad), g.leaf(b.w1, needs_grad), g.leaf(b.b1, needs_grad),
                g.leaf(b.w2, needs_grad), g.leaf(b.b2, needs_grad)});
        l.final_ln_g = g.leaf(p.final_ln_g, needs_grad);
        l.out_proj_w = g.leaf(p.out_proj_w, needs_grad);
        l.out_proj_b = g.leaf(p.out_proj_b, needs_grad);
        return l;
    }

    // Same order as DenoiserParams::for_each.
    template <class F>
    void for_each(F&& f) const {
        f(in_proj_w);
        f(in_proj_b);
        f(pos_emb);
        f(time_proj_w);
        f(time_proj_b);
        for (const auto& b : blocks) {
            f(b.ln1_g);
            f(b.wq);
            f(b.wk);
            f(b.wv);
            f(b.wo);
            f(b.bo);
            f(b.ln2_g);
            f(b.w1);
            f(b.b1);
            f(b.w2);
            f(b.b2);
        }
        f(final_ln_g);
        f(out_proj_w);
        f(out_proj_b);
    }
};

// logits = net(z / sqrt(1+sigma2), t-encoding, y) + prior_coeff * prior(z),
// prior[i][v] = -|z_i - W_v|^2 / (2 sigma2) up to a per-row constant, which is
// softmax-invariant and dropped.
template <class Real>
typename Graph<Real>::Id denoiser_logits_node(Graph<Real>& g, const DenoiserConfig& cfg,
                                              const DenoiserLeaves<Real>& lv,
                                              typename Graph<Real>::Id table,
                                              typename Graph<Real>::Id z,
                                              typename Graph<Real>::Id y,
                                              typename Graph<Real>::Id sigma2_node, double t,
                                              double prior_coeff, int valid_len = -1,
                                              std::uint64_t* call_counter = nullptr) {
    using Id = typename Graph<Real>::Id;
    const int L = g.val(z).rows;
    require(g.val(z).cols == cfg.embed_dim, "denoiser: latent feature dim mismatch");
    require(g.val(y).rows == L && g.val(y).cols == cfg.embed_dim,
            "denoiser: self-conditioning input shape mismatch");
    require(g.val(table).cols == cfg.embed_dim, "denoiser: table dim mismatch");
    require(L <= cfg.max_seq_len, "denoiser: sequence longer than max_seq_len");
    const int vl = valid_len < 0 ? L : valid_len;
    require(vl >= 1 && vl <= L, "denoiser: bad valid_len");
    if (call_counter) ++*call_counter;

    const Id rescale = g.unary(sigma2_node, Unary::Rsqrt1p);
    const Id xin = g.concat_cols(g.scale_by(z, rescale), y);                 // (L, 2d)
    Id h = g.add_rowvec(g.matmul(xin, lv.in_proj_w), lv.in_proj_b);          // (L, w)
    h = g.add(h, g.slice_rows(lv.pos_emb, 0, L));
    const Id tenc = g.constant(time_encoding<Real>(t, cfg.time_enc_dim));
    const Id tvec = g.add_rowvec(g.matmul(tenc, lv.time_proj_w), lv.time_proj_b);
    h = g.add_rowvec(h, tvec);

    const double qk_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    for (const auto& b : lv.blocks) {
        const Id xa = g.rmsnorm(h, b.ln1_g);
        const Id q = g.matmul(xa, b.wq);
        const Id k = g.matmul(xa, b.wk);
        const Id v = g.matmul(xa, b.wv);
        Id ctx = -1;
        for (int hd = 0; hd < cfg.heads; ++hd) {
            const int c0 = hd * cfg.head_dim(), c1 = c0 + cfg.head_dim();
            const Id scores =
                g.scale(g.matmul_nt(g.slice_cols(q, c0, c1), g.slice_cols(k, c0, c1)), qk_scale);
            // keys beyond valid_len carry exactly zero attention weight
            const Id probs = g.softmax_rows(scores, vl);
            const Id oh = g.matmul(probs, g.slice_cols(v, c0, c1));
            ctx = hd == 0 ? oh : g.concat_cols(ctx, oh);
        }
        h = g.add(h, g.add_rowvec(g.matmul(ctx, b.wo), b.bo));
        const Id xm = g.rmsnorm(h, b.ln2_g);
        const Id m = g.gelu(g.add_rowvec(g.matmul(xm, b.w1), b.b1));
        h = g.add(h, g.add_rowvec(g.matmul(m, b.w2), b.b2));
    }
    Id logits = g.add_rowvec(g.matmul(g.rmsnorm(h, lv.final_ln_g), lv.out_proj_w), lv.out_proj_b);

    if (prior_coeff > 0.0) {
        const Id dots = g.matmul_nt(z, table);               // (L, V)
        const Id cn = g.scale(g.sumsq_rows_t(table), 0.5);   // (1, V)
        const Id prior = g.scale_by(g.sub_rowvec(dots, cn), g.unary(sigma2_node, Unary::Recip));
        logits = g.add(logits, g.scale(prior, prior_coeff));
    }
    return logits;
}

// x_hat rows are softmax-weighted averages of embedding rows (convex hull)
template <class Real>
typename Graph<Real>::Id xhat_node(Graph<Real>& g, typename Graph<Real>::Id logits,
                                   typename Graph<Real>::Id table) {
    return g.matmul(g.softmax_rows(logits), table);
}

enum class SelfCondMode { Train, Eval, Sample };

template <class Real>
struct SelfCondNodes {
    typename Graph<Real>::Id logits;
    typename Graph<Real>::Id xhat;
    int passes{0};
};

// Self-conditioning recurrence, unrolled per mode:
//   Train: 1 pass from y0=0 w.p. 0.75, else 2 passes with the inner pass's
//          estimate detached (zero gradient through y1 and everything above it)
//   Eval:  always 2 passes
//   Sample: 1 pass conditioned on the previous step's estimate
template <class Real>
SelfCondNodes<Real> self_cond_forward_node(Graph<Real>& g, const DenoiserConfig& cfg,
                                           const DenoiserLeaves<Real>& lv,
                                           typename Graph<Real>::Id table,
                                           typename Graph<Real>::Id z,
                                           typename Graph<Real>::Id sigma2_node, double t,
                                           double prior_coeff, int valid_len, SelfCondMode mode,
                                           typename Graph<Real>::Id prev, Rng* rng,
                                           std::uint64_t* call_counter = nullptr) {
    using Id = typename Graph<Real>::Id;
    const int L = g.val(z).rows;
    if (mode == SelfCondMode::Sample) {
        require(prev >= 0, "self_cond_forward: sample mode requires a previous estimate");
        const Id logits = denoiser_logits_node(g, cfg, lv, table, z, prev, sigma2_node, t,
                                               prior_coeff, valid_len, call_counter);
        return {logits, xhat_node(g, logits, table), 1};
    }
    bool two_pass = mode == SelfCondMode::Eval;
    if (mode == SelfCondMode::Train) {
        require(rng != nullptr, "self_cond_forward: train mode requires an rng");
        two_pass = rng->uniform() < 0.25;
    }
    const Id y0 = g.constant(Mat<Real>(L, cfg.embed_dim));
    const Id logits1 = denoiser_logits_node(g, cfg, lv, table, z, y0, sigma2_node, t, prior_coeff,
                                            valid_len, call_counter);
    if (!two_pass) return {logits1, xhat_node(g, logits1, table), 1};
    const Id y1 = g.stop_grad(xhat_node(g, logits1, table));
    const Id logits2 = denoiser_logits_node(g, cfg, lv, table, z, y1, sigma2_node, t, prior_coeff,
                                            valid_len, call_counter);
    return {logits2, xhat_node(g, logits2, table), 2};
}

// ---- value-level wrappers ----

template <class Real>
struct DenoiserOutput {
    Mat<Real> logits;
    Mat<Real> x_hat;
    int passes{0};
};

template <class Real>
Mat<Real> logits_to_xhat(const Mat<Real>& logits, const EmbeddingTable<Real>& table) {
    require(logits.cols == table.vocab(), "logits_to_xhat: vocab mismatch");
    Mat<Real> probs(logits.rows, logits.cols);
    for (int r = 0; r < logits.rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < logits.cols; ++c) mx = std::max(mx, static_cast<double>(logits(r, c)));
        double zsum = 0;
        for (int c = 0; c < logits.cols; ++c)
            zsum += std::exp(static_cast<double>(logits(r, c)) - mx);
        for (int c = 0; c < logits.cols; ++c)
            probs(r, c) = static_cast<Real>(std::exp(static_cast<double>(logits(r, c)) - mx) / zsum);
    }
    return matmul(probs, table.weights);
}

}  // namespace plaid
