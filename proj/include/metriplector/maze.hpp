#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "metriplector/graph.hpp"
#include "metriplector/params.hpp"
#include "metriplector/poisson_layer.hpp"

namespace mtpl {

/// Output classes per cell.
enum MazeClass : int { kOffPath = 0, kPath = 1, kSource = 2, kGoal = 3, kWall = 4 };
inline constexpr std::size_t kMazeClasses = 5;
inline constexpr std::size_t kMazeTypes = 4;

/// Generator-private map from roles {wall, corridor, source, goal} to the
/// anonymous indices stored in the grid.
struct TypeMap {
  std::array<int, kMazeTypes> index{0, 1, 2, 3};
  int wall() const { return index[0]; }
  int corridor() const { return index[1]; }
  int source() const { return index[2]; }
  int goal() const { return index[3]; }
  /// Role of an anonymous index (0 wall, 1 corridor, 2 source, 3 goal).
  int role(int idx) const;
};

struct Maze {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> grid;    // anonymous type indices, row-major
  std::vector<int> labels;  // MazeClass per cell
  std::size_t cells() const { return height * width; }
};

/// Randomized depth-first spanning tree over the odd-coordinate lattice;
/// source and goal at two distinct random corridor cells.
Maze generate_maze(std::size_t height, std::size_t width, std::uint64_t seed, const TypeMap& types = {});
std::vector<Maze> generate_corpus(std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed,
                                  const TypeMap& types = {});

/// Recomputes labels from the grid (unique tree path between source and goal).
std::vector<int> path_labels(std::size_t height, std::size_t width, const std::vector<int>& grid,
                             const TypeMap& types = {});

/// "H W" header, then H rows of W digits.
void write_grid(std::ostream& os, std::size_t height, std::size_t width, const std::vector<int>& cells);
Maze read_maze(std::istream& is, const TypeMap& types = {});

struct MazeModelConfig {
  std::size_t embed_dim = 4;
  LayerConfig layer = default_layer();

  static LayerConfig default_layer();
};
void to_json(nlohmann::json& j, const MazeModelConfig& c);
void from_json(const nlohmann::json& j, MazeModelConfig& c);

/// Type embedding feeding a single-round Poisson layer on the 4-connected grid.
class MazeModel {
 public:
  MazeModel() = default;
  static MazeModel create(ModelParams& params, Rng& rng, MazeModelConfig cfg);
  static std::size_t count(const MazeModelConfig& cfg);

  /// All mazes must share one size; they are solved as a disjoint batch.
  RoundState forward(const ModelParams::Bound& p, const std::vector<const Maze*>& batch) const;
  /// Per-cell argmax, ties toward the lower class index.
  std::vector<int> predict(const ModelParams& params, const Maze& maze) const;

  const MazeModelConfig& config() const { return cfg_; }
  const PoissonLayer& layer() const { return layer_; }

 private:
  MazeModelConfig cfg_;
  PoissonLayer layer_;
};

/// Conductances, damping and sources of one maze under the current parameters.
struct MazeSystem {
  std::vector<ScreenedSystem> fields;
  Tensor w;
  Tensor lambda;
  Tensor source;
};
MazeSystem build_system(const MazeModel& model, const ModelParams& params, const Maze& maze);

/// Mean per-cell cross-entropy over a batch.
/// Cross-entropy over every cell of the batch; `class_weights` empty means uniform.
Tensor maze_loss(const MazeModel& model, const ModelParams::Bound& p, const std::vector<const Maze*>& batch,
                 std::span<const double> class_weights = {});

struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t batch = 4;
  AdamConfig adam{1e-2, 0.9, 0.999, 1e-8, 1.0};
  /// Linear warmup over `warmup` steps, then cosine decay to lr * lr_final
  /// when `cosine` is set; constant lr otherwise.
  std::size_t warmup = 0;
  bool cosine = false;
  double lr_final = 0.01;
  std::vector<double> class_weights;  // per MazeClass; empty = unweighted
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> checkpoint;  // last good parameters on abort
};
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
/// Learning rate at `step` under the schedule in `c`.
double scheduled_lr(const TrainConfig& c, std::size_t step);

struct TrainResult {
  ModelParams params;
  MazeModel model;
  std::vector<double> losses;  // per step, before the update
};

/// Adam on per-cell cross-entropy. A non-finite loss aborts with NumericError
/// after writing the last good parameters to `checkpoint` when set.
TrainResult train(const std::vector<Maze>& corpus, const MazeModelConfig& model_cfg, const TrainConfig& cfg);

struct F1Report {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::vector<double> per_maze;
};

/// Micro-averaged binary F1 on the on-path indicator. Source and goal count
/// as positives unless `include_endpoints` is false.
F1Report f1_score(const std::vector<std::vector<int>>& predictions, const std::vector<Maze>& mazes,
                  bool include_endpoints = true);
F1Report evaluate_f1(const MazeModel& model, const ModelParams& params, const std::vector<Maze>& mazes,
                     bool include_endpoints = true);
/// Fresh mazes of `eval_size`, no retraining.
F1Report size_generalization(const MazeModel& model, const ModelParams& params, std::size_t eval_size,
                             std::size_t n_eval, std::uint64_t seed);

/// Hand-set Poisson solution: unit conductance between open cells, +1/-1
/// sources at source/goal; cells with |psi| >= threshold * max|psi| are path.
std::vector<int> harmonic_baseline(const Maze& maze, double threshold = 0.5, const TypeMap& types = {});

}  // namespace mtpl
