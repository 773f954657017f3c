#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "metriplector/cg.hpp"
#include "metriplector/graph.hpp"
#include "metriplector/params.hpp"
#include "metriplector/tensor.hpp"

namespace mtpl {

inline constexpr double kMassEps = 1e-8;

/// Soft memberships rho [n, K_obj] (rows on the simplex) and the temperature used.
struct Assignment {
  Tensor rho;
  Tensor tau;  // [1,1]
};

/// Per-segment pooling: rows [g*seg, (g+1)*seg) of f pool into objects
/// [g*K_obj, (g+1)*K_obj) of the result. seg = 0 means one segment.
Tensor segmented_restrict(const Tensor& rho, const Tensor& f, std::size_t segment = 0);
Tensor segmented_prolongate(const Tensor& rho, const Tensor& o, std::size_t segment = 0);

struct RestrictResult {
  Tensor objects;
  std::size_t zero_mass = 0;  // objects whose total membership fell below kMassEps
};

/// o = rho^T f, divided per object by its mass sum_i rho_ia (+eps) when
/// `mass_normalize` is set.
RestrictResult restrict_features(const Tensor& rho, const Tensor& f, bool mass_normalize = true,
                                 std::size_t segment = 0);
/// u = rho o.
Tensor prolongate(const Tensor& rho, const Tensor& o, std::size_t segment = 0);

struct AssignmentReport {
  std::size_t active = 0;  // objects with max membership above 0.5
  double mean_entropy = 0.0;
  std::vector<std::size_t> cluster_map;  // argmax per node, ties to the lower index
};
AssignmentReport assignment_diagnostics(const Tensor& rho);

struct ObjectConfig {
  std::size_t objects = 0;        // K_obj; 0 disables the layer
  std::size_t coarse_fields = 1;  // fields solved on the object graph
  std::vector<std::size_t> hidden = {32, 32};
  bool mass_normalize = true;
  double tau_floor = 0.05;
  double lambda_floor = 1e-6;
};

struct VcycleResult {
  Tensor u;           // [n, coarse_fields]
  Tensor objects;     // pooled features
  Tensor coarse_psi;  // [segments * K_obj, coarse_fields]
  std::size_t zero_mass = 0;
};

/// Assignment head, coarse conductance/damping/source heads and temperature.
class ObjectLayer {
 public:
  ObjectLayer() = default;
  static ObjectLayer create(ModelParams& params, Rng& rng, std::string prefix, std::size_t assign_in,
                            std::size_t pooled_dim, ObjectConfig cfg);
  static std::size_t count(std::size_t assign_in, std::size_t pooled_dim, const ObjectConfig& cfg);

  /// rho = softmax(MLP(input) / tau), tau = softplus(raw) + tau_floor.
  Assignment assign(const ModelParams::Bound& p, const Tensor& input) const;
  /// Restrict -> coarse screened solve on a complete object graph -> prolongate.
  VcycleResult vcycle(const ModelParams::Bound& p, const Tensor& rho, const Tensor& f, std::size_t segment,
                      const CgConfig& cg) const;

  const ObjectConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }
  const Mlp& assign_head() const { return assign_; }
  const Mlp& damping_head() const { return damp_; }
  const Mlp& source_head() const { return source_; }

 private:
  std::string prefix_;
  ObjectConfig cfg_;
  Mlp assign_, pair_, damp_, source_;
};

}  // namespace mtpl
