#pragma once

// Reverse-mode tape over Mat<Real>. Nodes are appended in topological order,
// so backward() is a single reverse sweep. A tape can be swept more than once
// (zero_grads between sweeps); the trainer uses that to give the schedule
// interior its own gradient source.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <utility>
#include <vector>

#include "plaid/core.hpp"

namespace plaid {

enum class Unary {
    Exp,
    Log,
    Neg,
    Sqrt,
    Recip,
    Rsqrt1p,    // 1/sqrt(1+x)
    OneMinus,   // 1-x
    ClampProb,  // clamp to [1e-12, 1-1e-12]
};

template <class Real>
class Graph {
public:
    using Id = int;

    Id leaf(Mat<Real> v, bool needs_grad = true) {
        nodes_.push_back(Node{std::move(v), Mat<Real>{}, needs_grad, nullptr});
        return static_cast<Id>(nodes_.size()) - 1;
    }

    Id constant(Mat<Real> v) { return leaf(std::move(v), false); }
    Id constant_scalar(double v) { return constant(Mat<Real>::scalar(static_cast<Real>(v))); }

    const Mat<Real>& val(Id id) const { return nodes_[id].val; }
    Mat<Real>& grad(Id id) { return touch_grad(id); }
    bool needs_grad(Id id) const { return nodes_[id].needs_grad; }
    size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    void zero_grads() {
        for (auto& n : nodes_)
            if (!n.grad.a.empty()) n.grad.fill(Real(0));
    }

    void backward(Id from, double seed = 1.0) {
        touch_grad(from);
        require(nodes_[from].val.size() == 1, "backward: seed node must be scalar");
        nodes_[from].grad.a[0] += static_cast<Real>(seed);
        for (Id id = from; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.back || n.grad.a.empty() || !n.needs_grad) continue;
            n.back();
        }
    }

    // ---- elementwise ----

    Id add(Id a, Id b) {
        require(val(a).same_shape(val(b)), "add: shape mismatch");
        Mat<Real> out = val(a);
        for (size_t i = 0; i < out.size(); ++i) out.a[i] += val(b).a[i];
        return make(std::move(out), {a, b}, [this, a, b](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            if (nodes_[a].needs_grad) acc(a, g);
            if (nodes_[b].needs_grad) acc(b, g);
        });
    }

    Id sub(Id a, Id b) {
        require(val(a).same_shape(val(b)), "sub: shape mismatch");
        Mat<Real> out = val(a);
        for (size_t i = 0; i < out.size(); ++i) out.a[i] -= val(b).a[i];
        return make(std::move(out), {a, b}, [this, a, b](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            if (nodes_[a].needs_grad) acc(a, g);
            if (nodes_[b].needs_grad) {
                Mat<Real>& gb = touch_grad(b);
                for (size_t i = 0; i < g.size(); ++i) gb.a[i] -= g.a[i];
            }
        });
    }

    Id mul(Id a, Id b) {
        require(val(a).same_shape(val(b)), "mul: shape mismatch");
        Mat<Real> out = val(a);
        for (size_t i = 0; i < out.size(); ++i) out.a[i] *= val(b).a[i];
        return make(std::move(out), {a, b}, [this, a, b](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            if (nodes_[a].needs_grad) {
                Mat<Real>& ga = touch_grad(a);
                const Mat<Real>& vb = nodes_[b].val;
                for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * vb.a[i];
            }
            if (nodes_[b].needs_grad) {
                Mat<Real>& gb = touch_grad(b);
                const Mat<Real>& va = nodes_[a].val;
                for (size_t i = 0; i < g.size(); ++i) gb.a[i] += g.a[i] * va.a[i];
            }
        });
    }

    Id scale(Id a, double c) {
        Mat<Real> out = val(a);
        const Real rc = static_cast<Real>(c);
        for (auto& v : out.a) v *= rc;
        return make(std::move(out), {a}, [this, a, rc](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            Mat<Real>& ga = touch_grad(a);
            for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * rc;
        });
    }

    Id unary(Id a, Unary k) {
        const Mat<Real>& x = val(a);
        Mat<Real> out(x.rows, x.cols);
        // scalar schedule quantities stay double-precise; bulk tensors use Real
        const bool precise = x.size() == 1 || sizeof(Real) == 8;
        for (size_t i = 0; i < x.size(); ++i) {
            if (precise) {
                const double v = static_cast<double>(x.a[i]);
                double y = 0;
                switch (k) {
                    case Unary::Exp: y = std::exp(v); break;
                    case Unary::Log: y = std::log(v); break;
                    case Unary::Neg: y = -v; break;
                    case Unary::Sqrt: y = std::sqrt(v); break;
                    case Unary::Recip: y = 1.0 / v; break;
                    case Unary::Rsqrt1p: y = 1.0 / std::sqrt(1.0 + v); break;
                    case Unary::OneMinus: y = 1.0 - v; break;
                    case Unary::ClampProb: y = std::min(1.0 - 1e-12, std::max(1e-12, v)); break;
                }
                out.a[i] = static_cast<Real>(y);
            } else {
                const Real v = x.a[i];
                Real y = 0;
                switch (k) {
                    case Unary::Exp: y = std::exp(v); break;
                    case Unary::Log: y = std::log(v); break;
                    case Unary::Neg: y = -v; break;
                    case Unary::Sqrt: y = std::sqrt(v); break;
                    case Unary::Recip: y = Real(1) / v; break;
                    case Unary::Rsqrt1p: y = Real(1) / std::sqrt(Real(1) + v); break;
                    case Unary::OneMinus: y = Real(1) - v; break;
                    case Unary::ClampProb:
                        y = std::min(Real(1.0 - 1e-12), std::max(Real(1e-12), v));
                        break;
                }
                out.a[i] = y;
            }
        }
        return make(std::move(out), {a}, [this, a, k](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            const Mat<Real>& x = nodes_[a].val;
            const Mat<Real>& y = nodes_[o].val;
            Mat<Real>& ga = touch_grad(a);
            for (size_t i = 0; i < g.size(); ++i) {
                const double v = static_cast<double>(x.a[i]);
                const double w = static_cast<double>(y.a[i]);
                double d = 0;
                switch (k) {
                    case Unary::Exp: d = w; break;
                    case Unary::Log: d = 1.0 / v; break;
                    case Unary::Neg: d = -1.0; break;
                    case Unary::Sqrt: d = 0.5 / w; break;
                    case Unary::Recip: d = -w * w; break;
                    case Unary::Rsqrt1p: d = -0.5 * w * w * w; break;
                    case Unary::OneMinus: d = -1.0; break;
                    case Unary::ClampProb: d = (v > 1e-12 && v < 1.0 - 1e-12) ? 1.0 : 0.0; break;
                }
                ga.a[i] += g.a[i] * static_cast<Real>(d);
            }
        });
    }

    Id stop_grad(Id a) { return constant(val(a)); }

    // ---- broadcasts ----

    // out[i,j] = a[i,j] + v[0,j]
    Id add_rowvec(Id a, Id v) {
        require(val(v).rows == 1 && val(v).cols == val(a).cols, "add_rowvec: bad vector shape");
        Mat<Real> out = val(a);
        const Mat<Real>& b = val(v);
        for (int r = 0; r < out.rows; ++r)
            for (int c = 0; c < out.cols; ++c) out(r, c) += b.a[c];
        return make(std::move(out), {a, v}, [this, a, v](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            if (nodes_[a].needs_grad) acc(a, g);
            if (nodes_[v].needs_grad) {
                Mat<Real>& gv = touch_grad(v);
                for (int r = 0; r < g.rows; ++r)
                    for (int c = 0; c < g.cols; ++c) gv.a[c] += g(r, c);
            }
        });
    }

    Id sub_rowvec(Id a, Id v) { return add_rowvec(a, scale(v, -1.0)); }

    // out = a * s, s scalar node
    Id scale_by(Id a, Id s) {
        require(val(s).size() == 1, "scale_by: s must be scalar");
        Mat<Real> out = val(a);
        const Real sv = val(s).a[0];
        for (auto& v : out.a) v *= sv;
        return make(std::move(out), {a, s}, [this, a, s](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            const Real sv = nodes_[s].val.a[0];
            if (nodes_[a].needs_grad) {
                Mat<Real>& ga = touch_grad(a);
                for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * sv;
            }
            if (nodes_[s].needs_grad) {
                const Mat<Real>& va = nodes_[a].val;
                double acc_s = 0;
                for (size_t i = 0; i < g.size(); ++i)
                    acc_s += static_cast<double>(g.a[i]) * static_cast<double>(va.a[i]);
                touch_grad(s).a[0] += static_cast<Real>(acc_s);
            }
        });
    }

    // ---- linear algebra ----

    Id matmul(Id a, Id b) {
        require(val(a).cols == val(b).rows, "matmul: inner dimensions differ");
        Mat<Real> out(val(a).rows, val(b).cols);
        gemm_nn_acc(val(a), val(b), out);
        return make(std::move(out), {a, b}, [this, a, b](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            if (nodes_[a].needs_grad) gemm_nt_acc(g, nodes_[b].val, touch_grad(a));
            if (nodes_[b].needs_grad) gemm_tn_acc(nodes_[a].val, g, touch_grad(b));
        });
    }

    // out = a * b^T
    Id matmul_nt(Id a, Id b) {
        require(val(a).cols == val(b).cols, "matmul_nt: inner dimensions differ");
        Mat<Real> out(val(a).rows, val(b).rows);
        gemm_nt_acc(val(a), val(b), out);
        return make(std::move(out), {a, b}, [this, a, b](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            if (nodes_[a].needs_grad) gemm_nn_acc(g, nodes_[b].val, touch_grad(a));
            if (nodes_[b].needs_grad) gemm_tn_acc(g, nodes_[a].val, touch_grad(b));
        });
    }

    Id gather_rows(Id table, std::vector<int> ids) {
        const Mat<Real>& t = val(table);
        for (int id : ids) require(id >= 0 && id < t.rows, "gather_rows: row index out of range");
        Mat<Real> out(static_cast<int>(ids.size()), t.cols);
        for (size_t i = 0; i < ids.size(); ++i)
            std::copy(t.row(ids[i]), t.row(ids[i]) + t.cols, out.row(static_cast<int>(i)));
        return make(std::move(out), {table}, [this, table, ids = std::move(ids)](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            Mat<Real>& gt = touch_grad(table);
            for (size_t i = 0; i < ids.size(); ++i) {
                const Real* gr = g.row(static_cast<int>(i));
                Real* tr = gt.row(ids[i]);
                for (int c = 0; c < g.cols; ++c) tr[c] += gr[c];
            }
        });
    }

    Id concat_cols(Id a, Id b) {
        require(val(a).rows == val(b).rows, "concat_cols: row mismatch");
        const Mat<Real>&va = val(a), &vb = val(b);
        Mat<Real> out(va.rows, va.cols + vb.cols);
        for (int r = 0; r < va.rows; ++r) {
            std::copy(va.row(r), va.row(r) + va.cols, out.row(r));
            std::copy(vb.row(r), vb.row(r) + vb.cols, out.row(r) + va.cols);
        }
        const int ca = va.cols;
        return make(std::move(out), {a, b}, [this, a, b, ca](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            if (nodes_[a].needs_grad) {
                Mat<Real>& ga = touch_grad(a);
                for (int r = 0; r < g.rows; ++r)
                    for (int c = 0; c < ca; ++c) ga(r, c) += g(r, c);
            }
            if (nodes_[b].needs_grad) {
                Mat<Real>& gb = touch_grad(b);
                for (int r = 0; r < g.rows; ++r)
                    for (int c = ca; c < g.cols; ++c) gb(r, c - ca) += g(r, c);
            }
        });
    }

    Id slice_rows(Id a, int r0, int r1) {
        const Mat<Real>& va = val(a);
        require(0 <= r0 && r0 < r1 && r1 <= va.rows, "slice_rows: bad range");
        Mat<Real> out(r1 - r0, va.cols);
        std::copy(va.row(r0), va.row(r0) + static_cast<size_t>(r1 - r0) * va.cols, out.data());
        return make(std::move(out), {a}, [this, a, r0](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            Mat<Real>& ga = touch_grad(a);
            for (int r = 0; r < g.rows; ++r)
                for (int c = 0; c < g.cols; ++c) ga(r0 + r, c) += g(r, c);
        });
    }

    Id slice_cols(Id a, int c0, int c1) {
        const Mat<Real>& va = val(a);
        require(0 <= c0 && c0 < c1 && c1 <= va.cols, "slice_cols: bad range");
        Mat<Real> out(va.rows, c1 - c0);
        for (int r = 0; r < va.rows; ++r)
            std::copy(va.row(r) + c0, va.row(r) + c1, out.row(r));
        return make(std::move(out), {a}, [this, a, c0](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            Mat<Real>& ga = touch_grad(a);
            for (int r = 0; r < g.rows; ++r)
                for (int c = 0; c < g.cols; ++c) ga(r, c0 + c) += g(r, c);
        });
    }

    // ---- nonlinearities / normalization ----

    Id gelu(Id a) {
        const Mat<Real>& x = val(a);
        Mat<Real> out(x.rows, x.cols);
        for (size_t i = 0; i < x.size(); ++i) {
            const Real v = x.a[i];
            out.a[i] = Real(0.5) * v * (Real(1) + std::erf(v * Real(0.70710678118654752440)));
        }
        return make(std::move(out), {a}, [this, a](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            const Mat<Real>& x = nodes_[a].val;
            Mat<Real>& ga = touch_grad(a);
            for (size_t i = 0; i < g.size(); ++i) {
                const Real v = x.a[i];
                const Real cdf =
                    Real(0.5) * (Real(1) + std::erf(v * Real(0.70710678118654752440)));
                const Real pdf = Real(0.39894228040143267794) * std::exp(Real(-0.5) * v * v);
                ga.a[i] += g.a[i] * (cdf + v * pdf);
            }
        });
    }

    // y[i,:] = x[i,:] * gain / rms(x[i,:]),  rms = sqrt(mean(x^2)+eps)
    Id rmsnorm(Id a, Id gain, double eps = 1e-6) {
        const Mat<Real>& x = val(a);
        require(val(gain).rows == 1 && val(gain).cols == x.cols, "rmsnorm: bad gain shape");
        Mat<Real> out(x.rows, x.cols);
        std::vector<double> inv_rms(x.rows);
        for (int r = 0; r < x.rows; ++r) {
            double ss = 0;
            for (int c = 0; c < x.cols; ++c) ss += static_cast<double>(x(r, c)) * x(r, c);
            inv_rms[r] = 1.0 / std::sqrt(ss / x.cols + eps);
            for (int c = 0; c < x.cols; ++c)
                out(r, c) = static_cast<Real>(x(r, c) * val(gain).a[c] * inv_rms[r]);
        }
        return make(std::move(out), {a, gain},
                    [this, a, gain, inv_rms = std::move(inv_rms)](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            const Mat<Real>& x = nodes_[a].val;
            const Mat<Real>& gn = nodes_[gain].val;
            const int n = x.cols;
            if (nodes_[a].needs_grad) {
                Mat<Real>& ga = touch_grad(a);
                for (int r = 0; r < x.rows; ++r) {
                    double dot = 0;  // sum_j g_j * gain_j * x_j
                    for (int c = 0; c < n; ++c)
                        dot += static_cast<double>(g(r, c)) * gn.a[c] * x(r, c);
                    const double ir = inv_rms[r];
                    const double k = dot * ir * ir * ir / n;
                    for (int c = 0; c < n; ++c)
                        ga(r, c) += static_cast<Real>(g(r, c) * gn.a[c] * ir - x(r, c) * k);
                }
            }
            if (nodes_[gain].needs_grad) {
                Mat<Real>& gg = touch_grad(gain);
                for (int r = 0; r < x.rows; ++r)
                    for (int c = 0; c < n; ++c)
                        gg.a[c] += static_cast<Real>(g(r, c) * x(r, c) * inv_rms[r]);
            }
        });
    }

    // Row softmax over the first valid_cols columns; the rest are exactly zero.
    Id softmax_rows(Id a, int valid_cols = -1) {
        const Mat<Real>& x = val(a);
        const int vc = valid_cols < 0 ? x.cols : valid_cols;
        require(vc >= 1 && vc <= x.cols, "softmax_rows: bad valid_cols");
        Mat<Real> out(x.rows, x.cols);
        for (int r = 0; r < x.rows; ++r) {
            Real mx = x(r, 0);
            for (int c = 1; c < vc; ++c) mx = std::max(mx, x(r, c));
            Real z = 0;
            for (int c = 0; c < vc; ++c) {
                out(r, c) = std::exp(x(r, c) - mx);
                z += out(r, c);
            }
            const Real inv = Real(1) / z;
            for (int c = 0; c < vc; ++c) out(r, c) *= inv;
        }
        return make(std::move(out), {a}, [this, a, vc](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            const Mat<Real>& p = nodes_[o].val;
            Mat<Real>& ga = touch_grad(a);
            for (int r = 0; r < g.rows; ++r) {
                Real dot = 0;
                for (int c = 0; c < vc; ++c) dot += g(r, c) * p(r, c);
                for (int c = 0; c < vc; ++c) ga(r, c) += p(r, c) * (g(r, c) - dot);
            }
        });
    }

    // sum over the selected rows of log softmax(logits[row])[token]
    Id select_logprob_sum(Id logits, std::vector<int> rows, std::vector<int> toks) {
        require(rows.size() == toks.size(), "select_logprob_sum: size mismatch");
        const Mat<Real>& x = val(logits);
        for (size_t i = 0; i < rows.size(); ++i) {
            require(rows[i] >= 0 && rows[i] < x.rows, "select_logprob_sum: row out of range");
            if (toks[i] < 0 || toks[i] >= x.cols)
                throw std::out_of_range("select_logprob_sum: token id out of range");
        }
        double total = 0;
        for (size_t i = 0; i < rows.size(); ++i) {
            const int r = rows[i];
            Real mx = x(r, 0);
            for (int c = 1; c < x.cols; ++c) mx = std::max(mx, x(r, c));
            Real z = 0;
            for (int c = 0; c < x.cols; ++c) z += std::exp(x(r, c) - mx);
            total += static_cast<double>(x(r, toks[i]) - mx) - std::log(static_cast<double>(z));
        }
        return make(Mat<Real>::scalar(static_cast<Real>(total)), {logits},
                    [this, logits, rows = std::move(rows), toks = std::move(toks)](Id o) {
            const Real seed = nodes_[o].grad.a[0];
            const Mat<Real>& x = nodes_[logits].val;
            Mat<Real>& gx = touch_grad(logits);
            for (size_t i = 0; i < rows.size(); ++i) {
                const int r = rows[i];
                Real mx = x(r, 0);
                for (int c = 1; c < x.cols; ++c) mx = std::max(mx, x(r, c));
                Real z = 0;
                for (int c = 0; c < x.cols; ++c) z += std::exp(x(r, c) - mx);
                const Real inv = Real(1) / z;
                for (int c = 0; c < x.cols; ++c) {
                    const Real p = std::exp(x(r, c) - mx) * inv;
                    gx(r, c) += seed * ((c == toks[i] ? Real(1) : Real(0)) - p);
                }
            }
        });
    }

    // ---- reductions ----

    Id sum(Id a) {
        double s = 0;
        for (Real v : val(a).a) s += static_cast<double>(v);
        return make(Mat<Real>::scalar(static_cast<Real>(s)), {a}, [this, a](Id o) {
            const Real seed = nodes_[o].grad.a[0];
            Mat<Real>& ga = touch_grad(a);
            for (auto& v : ga.a) v += seed;
        });
    }

    Id mean(Id a) { return scale(sum(a), 1.0 / static_cast<double>(val(a).size())); }

    // sum of squares over the first valid_rows rows
    Id sumsq_rows(Id a, int valid_rows = -1) {
        const Mat<Real>& x = val(a);
        const int vr = valid_rows < 0 ? x.rows : valid_rows;
        require(vr >= 0 && vr <= x.rows, "sumsq_rows: bad valid_rows");
        double s = 0;
        for (int r = 0; r < vr; ++r)
            for (int c = 0; c < x.cols; ++c) s += static_cast<double>(x(r, c)) * x(r, c);
        return make(Mat<Real>::scalar(static_cast<Real>(s)), {a}, [this, a, vr](Id o) {
            const Real seed = nodes_[o].grad.a[0];
            const Mat<Real>& x = nodes_[a].val;
            Mat<Real>& ga = touch_grad(a);
            for (int r = 0; r < vr; ++r)
                for (int c = 0; c < x.cols; ++c) ga(r, c) += seed * Real(2) * x(r, c);
        });
    }

    // (1, rows) vector of per-row sums of squares
    Id sumsq_rows_t(Id a) {
        const Mat<Real>& x = val(a);
        Mat<Real> out(1, x.rows);
        for (int r = 0; r < x.rows; ++r) {
            double s = 0;
            for (int c = 0; c < x.cols; ++c) s += static_cast<double>(x(r, c)) * x(r, c);
            out.a[r] = static_cast<Real>(s);
        }
        return make(std::move(out), {a}, [this, a](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            const Mat<Real>& x = nodes_[a].val;
            Mat<Real>& ga = touch_grad(a);
            for (int r = 0; r < x.rows; ++r)
                for (int c = 0; c < x.cols; ++c) ga(r, c) += g.a[r] * Real(2) * x(r, c);
        });
    }

    Id gather_col(Id a, int col) {
        const Mat<Real>& x = val(a);
        require(col >= 0 && col < x.cols, "gather_col: out of range");
        Mat<Real> out(x.rows, 1);
        for (int r = 0; r < x.rows; ++r) out.a[r] = x(r, col);
        return make(std::move(out), {a}, [this, a, col](Id o) {
            const Mat<Real>& g = nodes_[o].grad;
            Mat<Real>& ga = touch_grad(a);
            for (int r = 0; r < g.rows; ++r) ga(r, col) += g.a[r];
        });
    }

    // Escape hatch for fused ops with hand-derived backward (the learned
    // schedule uses this). The callback receives the graph and the output id
    // and must accumulate into parent grads itself.
    Id custom(Mat<Real> out, const std::vector<Id>& parents,
              std::function<void(Graph&, Id)> back) {
        bool ng = false;
        for (Id p : parents) ng = ng || nodes_[p].needs_grad;
        const Id id = static_cast<Id>(nodes_.size());
        Node n{std::move(out), Mat<Real>{}, ng, nullptr};
        if (ng) n.back = [this, id, fn = std::move(back)]() { fn(*this, id); };
        nodes_.push_back(std::move(n));
        return id;
    }

private:
    struct Node {
        Mat<Real> val;
        Mat<Real> grad;
        bool needs_grad{false};
        std::function<void()> back;
    };

    std::vector<Node> nodes_;

    Mat<Real>& touch_grad(Id id) {
        Node& n = nodes_[id];
        if (n.grad.a.empty()) n.grad = Mat<Real>(n.val.rows, n.val.cols);
        return n.grad;
    }

    void acc(Id id, const Mat<Real>& g) {
        Mat<Real>& dst = touch_grad(id);
        for (size_t i = 0; i < g.size(); ++i) dst.a[i] += g.a[i];
    }

    template <class F>
    Id make(Mat<Real> out, std::initializer_list<Id> parents, F&& back_fn) {
        bool ng = false;
        for (Id p : parents) ng = ng || nodes_[p].needs_grad;
        const Id id = static_cast<Id>(nodes_.size());
        Node n{std::move(out), Mat<Real>{}, ng, nullptr};
        if (ng) n.back = [this, id, fn = std::forward<F>(back_fn)]() { fn(id); };
        nodes_.push_back(std::move(n));
        return id;
    }
};

}  // namespace plaid
