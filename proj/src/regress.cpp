#include "prodloom/regress.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace prodloom {

void demean_by_groups(Eigen::MatrixXd& data, const std::vector<std::vector<int>>& groups,
                      double tol, int max_sweeps) {
  if (groups.empty()) return;
  const Eigen::Index n = data.rows();
  std::vector<int> n_groups(groups.size(), 0);
  for (std::size_t d = 0; d < groups.size(); ++d) {
    for (int g : groups[d]) n_groups[d] = std::max(n_groups[d], g + 1);
  }
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_mean = 0.0;
    for (std::size_t d = 0; d < groups.size(); ++d) {
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_groups[d], data.cols());
      Eigen::VectorXd counts = Eigen::VectorXd::Zero(n_groups[d]);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(groups[d][static_cast<std::size_t>(i)]) += data.row(i);
        counts[groups[d][static_cast<std::size_t>(i)]] += 1.0;
      }
      for (int g = 0; g < n_groups[d]; ++g) {
        if (counts[g] > 0.0) sums.row(g) /= counts[g];
      }
      max_mean = std::max(max_mean, sums.cwiseAbs().maxCoeff());
      for (Eigen::Index i = 0; i < n; ++i) {
        data.row(i) -= sums.row(groups[d][static_cast<std::size_t>(i)]);
      }
    }
    if (max_mean < tol) return;
  }
}

Eigen::VectorXd ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  return X.colPivHouseholderQr().solve(y);
}

Eigen::MatrixXd residualize(const Eigen::MatrixXd& A, const Eigen::MatrixXd& X) {
  if (X.cols() == 0) return A;
  auto qr = X.colPivHouseholderQr();
  Eigen::MatrixXd out = A;
  for (Eigen::Index c = 0; c < A.cols(); ++c) {
    out.col(c) = A.col(c) - X * qr.solve(A.col(c));
  }
  return out;
}

Eigen::MatrixXd cluster_meat(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                             const std::vector<int>& cluster) {
  int n_clusters = 0;
  for (int c : cluster) n_clusters = std::max(n_clusters, c + 1);
  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(n_clusters, X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    scores.row(cluster[static_cast<std::size_t>(i)]) += u[i] * X.row(i);
  }
  return scores.transpose() * scores;
}

bool make_psd(Eigen::MatrixXd& V) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (V + V.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  if (ev.minCoeff() >= 0.0) return false;
  Eigen::VectorXd clamped = ev.cwiseMax(0.0);
  V = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
  return true;
}

Eigen::MatrixXd twoway_cluster_vcov(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                                    const Eigen::MatrixXd& A, const std::vector<int>& c1,
                                    const std::vector<int>& c2, bool* repaired) {
  std::vector<int> inter(c1.size());
  std::map<std::pair<int, int>, int> ids;
  for (std::size_t i = 0; i < c1.size(); ++i) {
    inter[i] = ids.emplace(std::make_pair(c1[i], c2[i]), static_cast<int>(ids.size())).first->second;
  }
  Eigen::MatrixXd meat =
      cluster_meat(X, u, c1) + cluster_meat(X, u, c2) - cluster_meat(X, u, inter);
  Eigen::MatrixXd Ainv = A.inverse();
  Eigen::MatrixXd V = Ainv * meat * Ainv.transpose();
  bool rep = make_psd(V);
  if (repaired) *repaired = rep;
  return V;
}

double f_statistic(const Eigen::VectorXd& y, const Eigen::MatrixXd& Z, double num_dof,
                   double den_dof) {
  double ssr0 = y.squaredNorm();
  Eigen::VectorXd resid = y - Z * ols(Z, y);
  double ssr1 = resid.squaredNorm();
  if (den_dof <= 0.0 || ssr1 <= 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return ((ssr0 - ssr1) / num_dof) / (ssr1 / den_dof);
}

int matrix_rank(const Eigen::MatrixXd& A, double rel_tol) {
  auto qr = A.colPivHouseholderQr();
  qr.setThreshold(rel_tol);
  return static_cast<int>(qr.rank());
}

std::vector<std::string> collinear_columns(const Eigen::MatrixXd& A,
                                           const std::vector<std::string>& names,
                                           double rel_tol) {
  std::vector<std::string> out;
  Eigen::MatrixXd kept(A.rows(), 0);
  for (Eigen::Index c = 0; c < A.cols(); ++c) {
    Eigen::MatrixXd trial(A.rows(), kept.cols() + 1);
    if (kept.cols() > 0) trial.leftCols(kept.cols()) = kept;
    trial.col(kept.cols()) = A.col(c);
    if (matrix_rank(trial, rel_tol) == trial.cols()) {
      kept = trial;
    } else {
      out.push_back(names[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

}  // namespace prodloom
