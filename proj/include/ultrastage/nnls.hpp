#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ultrastage/error.hpp"

namespace ultrastage {

struct NnlsResult {
  Eigen::VectorXd x;
  double residual_norm = 0.0;
  int iterations = 0;
};

// Lawson-Hanson active-set NNLS: minimize ||Ax - b|| subject to x >= 0.
// max_iterations bounds the outer loop (defaults to 3n).
inline NnlsResult nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int max_iterations = 0) {
  const Eigen::Index m = A.rows();
  const Eigen::Index n = A.cols();
  if (m < 1 || n < 1) throw ShapeError("nnls needs a non-empty matrix");
  if (b.size() != m) throw ShapeError("nnls: b has " + std::to_string(b.size()) + " rows, A has " + std::to_string(m));
  if (!A.allFinite() || !b.allFinite()) throw InvariantError("nnls inputs must be finite");
  if (max_iterations <= 0) max_iterations = static_cast<int>(3 * n);

  const double eps = std::numeric_limits<double>::epsilon();
  const double tol = 10.0 * eps * static_cast<double>(std::max(m, n)) *
                     std::max(1.0, A.cwiseAbs().colwise().sum().maxCoeff()) *
                     std::max(1.0, b.cwiseAbs().maxCoeff());

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  Eigen::VectorXd w = A.transpose() * (b - A * x);
  NnlsResult result;

  auto solve_passive = [&](Eigen::VectorXd& z) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (passive[static_cast<std::size_t>(j)]) cols.push_back(j);
    }
    Eigen::MatrixXd Ap(m, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(cols[k]);
    const Eigen::VectorXd zp = Ap.colPivHouseholderQr().solve(b);
    z.setZero(n);
    for (std::size_t k = 0; k < cols.size(); ++k) z[cols[k]] = zp[static_cast<Eigen::Index>(k)];
  };

  for (;;) {
    Eigen::Index t = -1;
    double best = tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && w[j] > best) {
        best = w[j];
        t = j;
      }
    }
    if (t < 0) break;
    if (++result.iterations > max_iterations) {
      throw SolverError("nnls did not converge in " + std::to_string(max_iterations) + " iterations");
    }
    passive[static_cast<std::size_t>(t)] = true;
    const Eigen::VectorXd x_before = x;

    Eigen::VectorXd z(n);
    for (;;) {
      solve_passive(z);
      bool feasible = true;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && z[j] <= 0.0) feasible = false;
      }
      if (feasible) {
        x = z;
        break;
      }
      double alpha = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && z[j] <= 0.0) {
          alpha = std::min(alpha, x[j] / (x[j] - z[j]));
        }
      }
      x += alpha * (z - x);
      bool any_passive = false;
      for (Eigen::Index j = 0; j < n; ++j) {
        auto pj = passive[static_cast<std::size_t>(j)];
        if (pj && x[j] <= tol) {
          passive[static_cast<std::size_t>(j)] = false;
          x[j] = 0.0;
        }
        any_passive = any_passive || passive[static_cast<std::size_t>(j)];
      }
      if (!any_passive) break;
    }
    w = A.transpose() * (b - A * x);
    // The column just added fell straight back out without moving x: its
    // gradient is rounding noise and re-adding it would cycle.
    if (!passive[static_cast<std::size_t>(t)] && x == x_before) break;
  }

  result.x = x;
  result.residual_norm = (A * x - b).norm();
  return result;
}

// Largest KKT violation of a candidate NNLS solution, using the gradient
// g = A^T (Ax - b): |g_j| for x_j > 0, max(0, -g_j) for x_j = 0.
inline double nnls_kkt_violation(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                 const Eigen::VectorXd& x) {
  const Eigen::VectorXd g = A.transpose() * (A * x - b);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (x[j] < 0.0) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, x[j] > 0.0 ? std::abs(g[j]) : std::max(0.0, -g[j]));
  }
  return worst;
}

}  // namespace ultrastage
