#pragma once

#include "orbit/common.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace orbit {

/// One observed environment transition: state, action applied, next state.
struct Transition {
    Vec s;
    Vec a;
    Vec s_next;
};

/// Full decomposition R = U * diag(sigma) * V^T of a square matrix.
/// sigma is non-increasing and non-negative; columns of U are sign-normalized
/// so that the largest-magnitude entry of each is positive.
struct SvdResult {
    Mat u;
    Vec sigma;
    Mat v;

    Mat reconstruct() const { return u * sigma.asDiagonal() * v.transpose(); }
};

SvdResult svd(const Mat& m);

/// Unique minimizer of ||R a + s||^2 + lambda ||a||^2, computed via the
/// normal equations (R^T R + lambda I) a = -R^T s. With lambda = 0 the matrix
/// must be nonsingular.
Vec ridge_solve(const Mat& r, const Vec& s, double lambda);

/// Least-squares response matrix from transitions: minimizes
/// mean ||(s_next - s) - R a||^2 over the data. Throws RankError when the
/// stacked actions do not span the action space.
Mat fit_response_lstsq(const std::vector<Transition>& transitions);

/// Text matrix format: header line "rows cols", then rows lines of cols
/// values at full round-trip precision. The stream overloads let several
/// matrices be concatenated into one file (e.g. network checkpoints).
void write_matrix(const std::string& path, const Mat& m);
Mat read_matrix(const std::string& path);
void write_matrix(std::ostream& out, const Mat& m);
Mat read_matrix(std::istream& in, const std::string& context);

void format_value(std::string& out, double v);

}  // namespace orbit
