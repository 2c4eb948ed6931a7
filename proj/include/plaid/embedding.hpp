#pragma once

// Learned token embedding table. Trained jointly through the bound with no
// regularizer; rows init i.i.d. N(0, 1/d) so embedded sequences start near
// unit scale.

#include <vector>

#include "plaid/core.hpp"
#include "plaid/rng.hpp"

namespace plaid {

template <class Real>
struct EmbeddingTable {
    Mat<Real> weights;  // (V, d)

    int vocab() const { return weights.rows; }
    int dim() const { return weights.cols; }

    static EmbeddingTable init(int vocab, int dim, Rng& rng) {
        EmbeddingTable t;
        t.weights = Mat<Real>(vocab, dim);
        const double s = 1.0 / std::sqrt(static_cast<double>(dim));
        for (auto& v : t.weights.a) v = static_cast<Real>(s * rng.normal());
        return t;
    }

    // Invertibility of Embed on tokens; checked at checkpoint save time.
    bool rows_distinct() const {
        for (int i = 0; i < weights.rows; ++i)
            for (int j = i + 1; j < weights.rows; ++j) {
                bool same = true;
                for (int c = 0; c < weights.cols && same; ++c)
                    same = weights(i, c) == weights(j, c);
                if (same) return false;
            }
        return true;
    }
};

template <class Real>
Mat<Real> embed(const std::vector<int>& tokens, const EmbeddingTable<Real>& table) {
    Mat<Real> out(static_cast<int>(tokens.size()), table.dim());
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= table.vocab())
            throw std::out_of_range("embed: token id out of range");
        const Real* src = table.weights.row(tokens[i]);
        std::copy(src, src + table.dim(), out.row(static_cast<int>(i)));
    }
    return out;
}

// argmin over table rows of squared distance; ties break to the lowest id.
template <class Real>
int nearest_token(const Real* vec, const EmbeddingTable<Real>& table) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int v = 0; v < table.vocab(); ++v) {
        double d = 0;
        for (int c = 0; c < table.dim(); ++c) {
            const double diff = static_cast<double>(vec[c]) - table.weights(v, c);
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = v;
        }
    }
    return best;
}

template <class Real>
int nearest_token(const Mat<Real>& vec, const EmbeddingTable<Real>& table) {
    require(static_cast<int>(vec.size()) == table.dim(), "nearest_token: dimension mismatch");
    return nearest_token(vec.data(), table);
}

}  // namespace plaid
