#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "metriplector/cg.hpp"
#include "metriplector/graph.hpp"
#include "metriplector/multigrid.hpp"
#include "metriplector/params.hpp"
#include "metriplector/tensor.hpp"

namespace mtpl {

/// Which per-node vectors feed the bilinear conductance form.
enum class EdgeFeatures { Input, Hidden };
/// Per-grid dissipation scaling: Max divides by the grid maximum, Standard
/// standardizes, Log standardizes log(d / max + 1e-6).
enum class DissipationNorm { None, Max, Standard, Log };

struct LayerConfig {
  std::size_t input_dim = 4;
  std::size_t classes = 5;
  std::size_t fields = 2;   // K
  std::size_t rounds = 1;   // R
  std::size_t features = 32;  // width of h
  std::vector<std::size_t> hidden = {64, 64};  // hidden widths of every 3-layer MLP
  ObjectConfig objects;                        // objects.objects = K_obj, 0 = off
  double tau_start = 1.0;
  double tau_end = 0.2;
  bool use_scans = true;
  bool use_position = true;
  EdgeFeatures edge_features = EdgeFeatures::Hidden;
  bool lambda_over_n = false;
  double lambda_floor = 1e-6;
  bool neutral_source = false;  // b has zero mean on every grid (net charge 0)
  DissipationNorm dissipation_norm = DissipationNorm::Max;
  double decoder_init_scale = 0.0;  // 0 gives uniform predictions at init
  bool normalize_psi = false;       // decoder sees per-grid standardized psi
  CgConfig cg{200, 1e-8, 1e-30, true};

  void validate() const;
};

void to_json(nlohmann::json& j, const LayerConfig& c);
/// Rejects unknown keys.
void from_json(const nlohmann::json& j, LayerConfig& c);

/// Toy 9x9 Sudoku-shaped configuration: 8-connected lattice, 16 fields,
/// 16 objects, 9 output digits.
LayerConfig sudoku_smoke_config(std::size_t rounds = 32);

/// tau_r = start (1 - r/(R-1)) + end r/(R-1); `start` when R = 1.
double feedback_tau(std::size_t r, std::size_t rounds, double start = 1.0, double end = 0.2);

/// relu((W + W^T) / 2).
Tensor symmetric_form(const Tensor& w_raw);
/// w_ij = softplus(h_i^T W_sym h_j) per edge, [m,1].
Tensor conductances(const GraphTopology& topology, const Tensor& h, const Tensor& w_raw);
/// Normalized fields scanned along the 8 directions; [n, 8K], direction-major.
/// Throws UnsupportedError on a topology without grid layout.
Tensor directional_scans(const Tensor& psi, const GraphTopology& topology);
/// D_k(i) = sum_j w_ij (psi_k(i) - psi_k(j))^2 over the system's conductances.
Tensor dissipation_readout(const ScreenedSystem& sys, const Tensor& psi);

/// State carried between rounds. Fields with a `prev` meaning are zeros (or
/// uniform for `soft`) before the first round.
struct RoundState {
  std::size_t round = 0;   // next round to run
  std::size_t rounds = 1;  // R
  double tau = 1.0;        // temperature used by the last completed round
  Tensor h;
  Tensor psi;
  Tensor scans;
  Tensor soft;
  Tensor u;
  Tensor logits;
  // Quantities of the last completed round, kept for diagnostics.
  Tensor w;
  Tensor lambda;
  Tensor source;
  Tensor dissipation;
  Tensor rho;
};

class PoissonLayer {
 public:
  PoissonLayer() = default;
  static PoissonLayer create(ModelParams& params, Rng& rng, std::string prefix, LayerConfig cfg);
  static std::size_t count(const LayerConfig& cfg);

  RoundState initial_state(const GraphTopology& topology) const;
  /// One round: encoder, conductances, damping/source, K-field solve,
  /// dissipation and scans, object layer, decoder, annealed feedback.
  RoundState run_round(const ModelParams::Bound& p, const RoundState& state, const TopologyPtr& topology,
                       const Tensor& x) const;
  /// All R rounds from the cold start; returns the final state.
  RoundState forward(const ModelParams::Bound& p, const TopologyPtr& topology, const Tensor& x) const;

  const LayerConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }
  const ObjectLayer& objects() const { return objects_; }

 private:
  std::string prefix_;
  LayerConfig cfg_;
  Mlp encoder_, damping_, source_, decoder_;
  ObjectLayer objects_;
};

}  // namespace mtpl
