#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "metriplector/maze.hpp"

namespace mtpl {

/// Outcome of one property check: the worst observed error against a threshold.
struct CheckReport {
  std::string name;
  std::size_t cases = 0;
  double max_error = 0.0;
  double threshold = 0.0;
  bool pass = false;
  double seconds = 0.0;
  nlohmann::json details = nlohmann::json::object();
};
void to_json(nlohmann::json& j, const CheckReport& r);

/// CG against a dense direct solve on random screened systems.
CheckReport solve_oracle(std::uint64_t seed, std::size_t count = 200, std::size_t max_n = 200, std::size_t max_k = 4);
/// Adjoint gradients of sum(psi^2) wrt b, w, lambda against central differences.
CheckReport gradient_oracle(std::uint64_t seed, std::size_t seeds = 20, std::size_t max_n = 50);
/// Energy at the solution is below the energy at every random perturbation.
CheckReport dirichlet_oracle(std::uint64_t seed, std::size_t systems = 50, std::size_t perturbations = 100);

/// Parallel against sequential scan over the given lengths and seeds.
CheckReport scan_oracle(std::uint64_t seed, const std::vector<std::size_t>& sizes, std::size_t seeds = 20);
/// Perturbing (w, lambda, b) at j leaves every output before j bitwise unchanged.
CheckReport scan_causality(std::uint64_t seed, std::size_t n = 256);

/// Per-step drift under pure advection against its closed form.
CheckReport drift_identity(std::uint64_t seed);
/// Log-log slope of the one-step drift as dt halves.
CheckReport drift_order(std::uint64_t seed);
/// Dirichlet energy never increases under pure dissipation at dt = 1/lambda_max.
CheckReport dissipation_monotone(std::uint64_t seed);
/// J - J^T is exactly antisymmetric.
CheckReport skew_bitwise(std::uint64_t seed);

/// K^2 stress-energy features at K = 32.
CheckReport readout_count();
/// Symmetric plus antisymmetric halves reconstruct the shear products.
CheckReport shear_reconstruction(std::uint64_t seed);
/// Graph dissipation equals twice the forward-difference energy density.
CheckReport dissipation_identity(std::uint64_t seed);

/// Odd K has a Casimir; singular values come in equal pairs.
CheckReport casimir_spectrum(std::uint64_t seed);

/// One element of a gradient check.
struct GradcheckRow {
  std::string suite;
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};
struct GradcheckResult {
  std::vector<GradcheckRow> rows;
  std::vector<CheckReport> parameters;  // normwise relative error per parameter
  bool pass = true;
};
/// Tape gradients against central differences across the differentiable ops
/// (`tol`) and through whole solver-coupled models (`model_tol`).
GradcheckResult gradcheck_suite(std::uint64_t seed, double tol = 1e-4, double model_tol = 1e-3);

/// One trained maze model scored at its train size and at a transfer size.
struct MazeRun {
  std::uint64_t seed = 0;
  bool lambda_over_n = true;
  double final_loss = 0.0;
  double f1_train_size = 0.0;
  double f1_transfer = 0.0;
  double seconds = 0.0;
};
void to_json(nlohmann::json& j, const MazeRun& r);

struct MazeProtocol {
  std::size_t train_mazes = 100;
  std::size_t train_size = 9;
  std::size_t eval_mazes = 50;
  std::size_t transfer_size = 19;
  std::size_t transfer_mazes = 50;
  MazeModelConfig model;
  TrainConfig train;
};

/// Trains on a seeded corpus and evaluates on fresh mazes of both sizes.
MazeRun maze_run(const MazeProtocol& protocol, std::uint64_t seed, bool lambda_over_n);

}  // namespace mtpl
