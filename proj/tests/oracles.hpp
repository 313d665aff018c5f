#pragma once

// Independent reference computations used by the tests. They deliberately use
// different decompositions from the library code they check.

#include "sorscn/random.hpp"
#include "sorscn/types.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using sorscn::Index;
using sorscn::MatrixXd;
using sorscn::VectorXd;

inline MatrixXd random_matrix(Index rows, Index cols, sorscn::Rng& rng, double lo = -1, double hi = 1) {
  MatrixXd m(rows, cols);
  sorscn::fill_uniform(m, lo, hi, rng);
  return m;
}

inline double uniform(sorscn::Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Moore-Penrose pseudoinverse via a full SVD with a relative singular value cutoff.
inline MatrixXd pinv(const MatrixXd& a, double rel_cutoff = 1e-10) {
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const VectorXd& s = svd.singularValues();
  const double cutoff = s.size() ? rel_cutoff * s(0) : 0;
  MatrixXd sinv = MatrixXd::Zero(a.cols(), a.rows());
  for (Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff) sinv(i, i) = 1.0 / s(i);
  }
  return svd.matrixV() * sinv * svd.matrixU().transpose();
}

inline double spectral_radius(const MatrixXd& a) {
  Eigen::EigenSolver<MatrixXd> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Per-output supervisory margin computed with an explicit projector P = X^T (X X^T)^+ X.
inline VectorXd supervisory_margin(const MatrixXd& residual, const MatrixXd& states, double r, double mu) {
  const MatrixXd p = states.transpose() * pinv(states * states.transpose()) * states;
  VectorXd out(residual.rows());
  for (Index q = 0; q < residual.rows(); ++q) {
    const VectorXd e = residual.row(q).transpose();
    out(q) = e.dot(p * e) - (1 - r - mu) * e.squaredNorm();
  }
  return out;
}

inline double pearson(const VectorXd& a, const VectorXd& b) {
  const VectorXd ca = a.array() - a.mean();
  const VectorXd cb = b.array() - b.mean();
  const double den = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  return den > 0 ? ca.dot(cb) / den : 0.0;
}

/// Row-major flattening of a block's states.
inline VectorXd flatten_rows(const MatrixXd& x) {
  VectorXd v(x.size());
  Index at = 0;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) v(at++) = x(i, j);
  }
  return v;
}

struct MsaChoice {
  std::vector<std::size_t> order;
  std::vector<double> curve;
  Index j_m;
};

/// Direct evaluation of the (improved) model scale adaptability curve: rank by S
/// descending (ties by position), sum prefixes and divide by totals.
inline MsaChoice msa(const std::vector<double>& s, const std::vector<double>* c, double alpha, double gamma) {
  const std::size_t j = s.size();
  MsaChoice out;
  out.order.resize(j);
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  std::stable_sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  const double s_total = std::accumulate(s.begin(), s.end(), 0.0);
  const double c_total = c ? std::accumulate(c->begin(), c->end(), 0.0) : 0.0;
  out.j_m = static_cast<Index>(j);
  bool found = false;
  for (std::size_t k = 1; k <= j; ++k) {
    double ps = 0, pc = 0;
    for (std::size_t i = 0; i < k; ++i) {
      ps += s[out.order[i]];
      if (c) pc += (*c)[out.order[i]];
    }
    double m = s_total > 0 ? ps / s_total : static_cast<double>(k) / static_cast<double>(j);
    if (c) m += alpha * (c_total > 0 ? pc / c_total : static_cast<double>(k) / static_cast<double>(j));
    out.curve.push_back(m);
    if (!found && m >= gamma) {
      out.j_m = static_cast<Index>(k);
      found = true;
    }
  }
  return out;
}

}  // namespace oracle
