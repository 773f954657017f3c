#pragma once

#include <span>
#include <vector>

#include "metriplector/graph.hpp"
#include "metriplector/tensor.hpp"

namespace mtpl {

struct CgConfig {
  int max_iters = 60;
  /// Stop once ||A psi - b|| / max(||b||, abs_floor) <= rel_tol.
  double rel_tol = 1e-10;
  double abs_floor = 1e-30;
  /// Diagonal (Jacobi) preconditioning.
  bool jacobi = false;

  void validate() const;
};

struct SolveRecord {
  std::vector<double> psi;
  int iterations = 0;
  double rel_residual = 0.0;
  /// A^{-1} upstream, filled in by cg_solve_grad.
  std::vector<double> adjoint;
};

/// Conjugate gradients from a zero initial guess. Throws ConvergenceError
/// after max_iters and NumericError on NaN/Inf.
SolveRecord cg_solve(const ScreenedSystem& sys, std::span<const double> b, const CgConfig& cfg = {});

struct SolveGradients {
  std::vector<double> b;
  std::vector<double> w;
  std::vector<double> lambda;
};

/// Adjoint gradients of a loss through psi* = A^{-1} b, given dL/dpsi*:
///   v = A^{-1} upstream,  dL/db = v,
///   dL/dw_ij = -v_i (psi_i - psi_j) - v_j (psi_j - psi_i),
///   dL/dlambda_i = -v_i psi_i.
/// When `record` is given, its adjoint field receives v.
SolveGradients cg_solve_grad(const ScreenedSystem& sys, std::span<const double> psi, std::span<const double> upstream,
                             const CgConfig& cfg = {}, SolveRecord* record = nullptr);

/// K independent solves over one topology; fields run on independent workers
/// when `parallel` is set. Results are identical either way. Errors are
/// rethrown from the lowest failing field with its index in the message.
std::vector<SolveRecord> solve_k_fields(std::span<const ScreenedSystem> systems,
                                        std::span<const std::vector<double>> b, const CgConfig& cfg = {},
                                        bool parallel = true);

/// Differentiable K-field solve. w is [m,1] (shared by all fields), lambda and
/// b are [n,K]; returns psi [n,K]. Backward runs one adjoint CG per field.
Tensor screened_solve(const TopologyPtr& topology, const Tensor& w, const Tensor& lambda, const Tensor& b,
                      const CgConfig& cfg = {});

}  // namespace mtpl
