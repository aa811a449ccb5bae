#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace prodloom {

// Removes group means for every fixed-effect dimension by alternating
// projections until the largest remaining cell mean is below tol.
void demean_by_groups(Eigen::MatrixXd& data, const std::vector<std::vector<int>>& groups,
                      double tol = 1e-12, int max_sweeps = 200);

// Least-squares coefficients via column-pivoted QR.
Eigen::VectorXd ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

// Residuals of each column of A after projecting on X.
Eigen::MatrixXd residualize(const Eigen::MatrixXd& A, const Eigen::MatrixXd& X);

// sum over clusters c of (sum_{i in c} x_i u_i)(sum_{i in c} x_i u_i)'
Eigen::MatrixXd cluster_meat(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                             const std::vector<int>& cluster);

// Clamps negative eigenvalues of a symmetric matrix to zero. Returns true
// when a repair was applied.
bool make_psd(Eigen::MatrixXd& V);

// Two-way cluster-robust sandwich by inclusion-exclusion:
//   A^-1 (meat_c1 + meat_c2 - meat_c1x2) A^-T
// with negative eigenvalues clamped to zero (flagged via *repaired). When
// every c2 cluster is a singleton this equals the one-way c1 sandwich.
Eigen::MatrixXd twoway_cluster_vcov(const Eigen::MatrixXd& X, const Eigen::VectorXd& u,
                                    const Eigen::MatrixXd& A, const std::vector<int>& c1,
                                    const std::vector<int>& c2, bool* repaired);

// Classical F statistic for "all columns of Z are zero" in the regression of
// y on Z (controls already partialled out of both), with explicit numerator
// and denominator degrees of freedom.
double f_statistic(const Eigen::VectorXd& y, const Eigen::MatrixXd& Z, double num_dof,
                   double den_dof);

// Column rank via column-pivoted QR; threshold relative to the largest pivot.
int matrix_rank(const Eigen::MatrixXd& A, double rel_tol = 1e-10);

// Names of columns that do not add rank, in order of elimination.
std::vector<std::string> collinear_columns(const Eigen::MatrixXd& A,
                                           const std::vector<std::string>& names,
                                           double rel_tol = 1e-10);

}  // namespace prodloom
