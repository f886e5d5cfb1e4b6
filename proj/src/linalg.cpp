#include "orbit/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace orbit {

namespace {

// Relative cutoff below which a singular value counts as zero.
constexpr double kRankEps = 1e-10;

void normalize_signs(Mat& u, Mat& v) {
    for (int j = 0; j < u.cols(); ++j) {
        int imax = 0;
        u.col(j).cwiseAbs().maxCoeff(&imax);
        if (u(imax, j) < 0.0) {
            u.col(j) = -u.col(j);
            v.col(j) = -v.col(j);
        }
    }
}

}  // namespace

SvdResult svd(const Mat& m) {
    if (m.rows() != m.cols())
        throw DimensionError("svd: matrix must be square, got " + std::to_string(m.rows()) +
                             "x" + std::to_string(m.cols()));
    require_finite(m, "svd");

    Eigen::JacobiSVD<Mat> dec(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    SvdResult out{dec.matrixU(), dec.singularValues(), dec.matrixV()};
    normalize_signs(out.u, out.v);
    return out;
}

Vec ridge_solve(const Mat& r, const Vec& s, double lambda) {
    if (r.rows() != r.cols()) throw DimensionError("ridge_solve: matrix must be square");
    if (s.size() != r.rows()) throw DimensionError("ridge_solve: state length mismatch");
    if (lambda < 0.0) throw ValueError("ridge_solve: lambda must be non-negative");
    require_finite(r, "ridge_solve");
    require_finite(s, "ridge_solve");

    const int n = static_cast<int>(r.rows());
    Mat g = r.transpose() * r;
    g.diagonal().array() += lambda;
    const Vec rhs = -(r.transpose() * s);

    Eigen::LDLT<Mat> ldlt(g);
    if (lambda == 0.0) {
        const Vec d = ldlt.vectorD();
        const double dmax = d.cwiseAbs().maxCoeff();
        if (ldlt.info() != Eigen::Success || dmax == 0.0 ||
            d.minCoeff() <= 1e-13 * dmax)
            throw SingularityError("ridge_solve: singular matrix with lambda = 0");
    }

    Vec a = ldlt.solve(rhs);
    // One step of iterative refinement keeps the stationarity residual near
    // machine level even when R^T R is badly conditioned.
    a += ldlt.solve(rhs - g * a);
    if (!a.allFinite()) throw SingularityError("ridge_solve: solve produced non-finite values");
    return a;
}

Mat fit_response_lstsq(const std::vector<Transition>& transitions) {
    if (transitions.empty()) throw RankError("fit_response_lstsq: no transitions", 0);
    const int m = static_cast<int>(transitions.front().a.size());
    const int dim = static_cast<int>(transitions.front().s.size());
    const int n = static_cast<int>(transitions.size());

    Mat a_rows(n, m);
    Mat b_rows(n, dim);
    for (int i = 0; i < n; ++i) {
        const Transition& t = transitions[i];
        if (t.a.size() != m || t.s.size() != dim || t.s_next.size() != dim)
            throw DimensionError("fit_response_lstsq: inconsistent transition dimensions");
        a_rows.row(i) = t.a.transpose();
        b_rows.row(i) = (t.s_next - t.s).transpose();
    }

    const Mat g = a_rows.transpose() * a_rows;
    Eigen::SelfAdjointEigenSolver<Mat> eig(g);
    if (eig.info() != Eigen::Success)
        throw Error("fit_response_lstsq: eigendecomposition failed");
    const Vec evals = eig.eigenvalues();  // ascending
    const double sig_max = std::sqrt(std::max(evals[m - 1], 0.0));
    int rank = 0;
    for (int i = 0; i < m; ++i)
        if (std::sqrt(std::max(evals[i], 0.0)) > kRankEps * sig_max) ++rank;
    if (rank < m)
        throw RankError("fit_response_lstsq: actions span only rank " + std::to_string(rank) +
                            " of " + std::to_string(m),
                        rank);

    // Normal equations A^T A X = A^T B, solved through the eigenbasis of A^T A.
    const Mat h = a_rows.transpose() * b_rows;
    const Mat x = eig.eigenvectors() *
                  evals.cwiseInverse().asDiagonal() * (eig.eigenvectors().transpose() * h);
    return x.transpose();
}

void format_value(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

void write_matrix(std::ostream& out, const Mat& m) {
    std::string body;
    body.reserve(static_cast<size_t>(m.size()) * 26 + 32);
    body += std::to_string(m.rows());
    body += ' ';
    body += std::to_string(m.cols());
    body += '\n';
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            if (j) body += ' ';
            format_value(body, m(i, j));
        }
        body += '\n';
    }
    out << body;
}

void write_matrix(const std::string& path, const Mat& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("write_matrix: cannot open " + path);
    write_matrix(f, m);
    if (!f) throw Error("write_matrix: write failed for " + path);
}

Mat read_matrix(std::istream& in, const std::string& context) {
    long rows = 0, cols = 0;
    if (!(in >> rows >> cols) || rows < 0 || cols < 0)
        throw ParseError("read_matrix: bad header in " + context);
    Mat m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j)
            if (!(in >> m(i, j)))
                throw ParseError("read_matrix: truncated data at row " + std::to_string(i) +
                                 " in " + context);
    return m;
}

Mat read_matrix(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("read_matrix: cannot open " + path);
    return read_matrix(f, path);
}

}  // namespace orbit
