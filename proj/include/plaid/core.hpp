#pragma once

// Dense row-major matrix plus the handful of BLAS-3 kernels everything else
// is built from. GEMM is delegated to Eigen; all other numerics in this
// library are hand-written.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace plaid {

using std::size_t;

// The dense products here are small (hundreds of rows); Eigen's threaded GEMM
// loses to its single-thread path at these sizes, and one-thread kernels keep
// every result bit-reproducible. Parallelism belongs above the math: run
// independent chains or runs on separate threads.
inline const bool eigen_threads_pinned = [] {
    Eigen::setNbThreads(1);
    return true;
}();

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void require_domain(bool cond, const std::string& msg) {
    if (!cond) throw std::domain_error(msg);
}

// Row-major dense matrix. Vectors are (n,1) or (1,n); scalars are (1,1).
template <class Real>
struct Mat {
    int rows{0};
    int cols{0};
    std::vector<Real> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, Real(0)) {}
    Mat(int r, int c, Real fill) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

    static Mat scalar(Real v) {
        Mat m(1, 1);
        m.a[0] = v;
        return m;
    }

    Real* data() { return a.data(); }
    const Real* data() const { return a.data(); }
    size_t size() const { return a.size(); }

    Real& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    Real operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    Real* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const Real* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void fill(Real v) { std::fill(a.begin(), a.end(), v); }

    bool all_finite() const {
        for (Real v : a)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <class Real>
using EigenMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class Real>
using EigenCMap =
    Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// C += A * B
template <class Real>
void gemm_nn_acc(const Mat<Real>& A, const Mat<Real>& B, Mat<Real>& C) {
    EigenCMap<Real> a(A.data(), A.rows, A.cols), b(B.data(), B.rows, B.cols);
    EigenMap<Real> c(C.data(), C.rows, C.cols);
    c.noalias() += a * b;
}

// C += A * B^T
template <class Real>
void gemm_nt_acc(const Mat<Real>& A, const Mat<Real>& B, Mat<Real>& C) {
    EigenCMap<Real> a(A.data(), A.rows, A.cols), b(B.data(), B.rows, B.cols);
    EigenMap<Real> c(C.data(), C.rows, C.cols);
    c.noalias() += a * b.transpose();
}

// C += A^T * B
template <class Real>
void gemm_tn_acc(const Mat<Real>& A, const Mat<Real>& B, Mat<Real>& C) {
    EigenCMap<Real> a(A.data(), A.rows, A.cols), b(B.data(), B.rows, B.cols);
    EigenMap<Real> c(C.data(), C.rows, C.cols);
    c.noalias() += a.transpose() * b;
}

template <class Real>
Mat<Real> matmul(const Mat<Real>& A, const Mat<Real>& B) {
    require(A.cols == B.rows, "matmul: inner dimensions differ");
    Mat<Real> C(A.rows, B.cols);
    gemm_nn_acc(A, B, C);
    return C;
}

template <class Real>
double sumsq(const Mat<Real>& m) {
    double s = 0;
    for (Real v : m.a) s += static_cast<double>(v) * static_cast<double>(v);
    return s;
}

}  // namespace plaid
