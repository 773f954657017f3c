#include "metriplector/maze.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>
#include <set>

#include "metriplector/errors.hpp"
#include "metriplector/ops.hpp"

namespace mtpl {
namespace {

using nlohmann::json;

constexpr int kRoleWall = 0, kRoleCorridor = 1, kRoleSource = 2, kRoleGoal = 3;

TopologyPtr maze_topology(std::size_t h, std::size_t w, std::size_t batch) {
  static std::mutex mu;
  static std::map<std::array<std::size_t, 3>, TopologyPtr> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{h, w, batch}];
  if (!slot) slot = std::make_shared<const GraphTopology>(grid_topology(h, w, 4, batch));
  return slot;
}

void check_type_map(const TypeMap& t) {
  std::array<int, kMazeTypes> sorted = t.index;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < static_cast<int>(kMazeTypes); ++i)
    if (sorted[static_cast<std::size_t>(i)] != i) throw ArgumentError("type map must be a permutation of 0..3");
}

template <class T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ArgumentError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ArgumentError(where + ": unknown key '" + key + "'");
}

}  // namespace

int TypeMap::role(int idx) const {
  for (std::size_t r = 0; r < kMazeTypes; ++r)
    if (index[r] == idx) return static_cast<int>(r);
  throw ArgumentError("type index " + std::to_string(idx) + " is not in the type map");
}

Maze generate_maze(std::size_t height, std::size_t width, std::uint64_t seed, const TypeMap& types) {
  if (height < 5 || width < 5 || height % 2 == 0 || width % 2 == 0)
    throw ArgumentError("maze size must be odd and >= 5, got " + std::to_string(height) + "x" + std::to_string(width));
  check_type_map(types);
  Rng rng(seed);
  std::vector<int> role(height * width, kRoleWall);
  const std::size_t ch = (height - 1) / 2, cw = (width - 1) / 2;
  std::vector<bool> seen(ch * cw, false);
  auto open = [&](std::size_t r, std::size_t c) { role[r * width + c] = kRoleCorridor; };

  std::vector<std::size_t> stack{rng.below(ch * cw)};
  seen[stack.back()] = true;
  open(2 * (stack.back() / cw) + 1, 2 * (stack.back() % cw) + 1);
  static constexpr int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, 1, -1};
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    const long r = static_cast<long>(cur / cw), c = static_cast<long>(cur % cw);
    std::size_t options[4];
    std::size_t count = 0;
    for (std::size_t d = 0; d < 4; ++d) {
      const long nr = r + dr[d], nc = c + dc[d];
      if (nr < 0 || nc < 0 || nr >= static_cast<long>(ch) || nc >= static_cast<long>(cw)) continue;
      if (!seen[static_cast<std::size_t>(nr) * cw + static_cast<std::size_t>(nc)]) options[count++] = d;
    }
    if (count == 0) {
      stack.pop_back();
      continue;
    }
    const std::size_t d = options[rng.below(count)];
    const long nr = r + dr[d], nc = c + dc[d];
    const std::size_t next = static_cast<std::size_t>(nr) * cw + static_cast<std::size_t>(nc);
    seen[next] = true;
    open(static_cast<std::size_t>(2 * r + 1 + dr[d]), static_cast<std::size_t>(2 * c + 1 + dc[d]));
    open(static_cast<std::size_t>(2 * nr + 1), static_cast<std::size_t>(2 * nc + 1));
    stack.push_back(next);
  }

  std::vector<std::size_t> corridors;
  for (std::size_t i = 0; i < role.size(); ++i)
    if (role[i] == kRoleCorridor) corridors.push_back(i);
  const std::size_t a = rng.below(corridors.size());
  std::size_t b = rng.below(corridors.size() - 1);
  if (b >= a) ++b;
  role[corridors[a]] = kRoleSource;
  role[corridors[b]] = kRoleGoal;

  Maze m;
  m.height = height;
  m.width = width;
  m.grid.resize(role.size());
  for (std::size_t i = 0; i < role.size(); ++i) m.grid[i] = types.index[static_cast<std::size_t>(role[i])];
  m.labels = path_labels(height, width, m.grid, types);
  return m;
}

std::vector<Maze> generate_corpus(std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed,
                                  const TypeMap& types) {
  // One generator seed per maze, derived from the corpus seed.
  Rng seeds(seed);
  std::vector<Maze> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_maze(height, width, seeds.next(), types));
  return out;
}

std::vector<int> path_labels(std::size_t height, std::size_t width, const std::vector<int>& grid,
                             const TypeMap& types) {
  if (grid.size() != height * width) throw DimensionError("maze grid size does not match its header");
  std::vector<int> role(grid.size());
  std::size_t src = grid.size(), dst = grid.size(), n_src = 0, n_dst = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    role[i] = types.role(grid[i]);
    if (role[i] == kRoleSource) src = i, ++n_src;
    if (role[i] == kRoleGoal) dst = i, ++n_dst;
  }
  if (n_src != 1 || n_dst != 1) throw ArgumentError("maze needs exactly one source and one goal");

  std::vector<std::size_t> parent(grid.size(), grid.size());
  std::vector<bool> seen(grid.size(), false);
  std::deque<std::size_t> queue{src};
  seen[src] = true;
  while (!queue.empty()) {
    const std::size_t cur = queue.front();
    queue.pop_front();
    const std::size_t r = cur / width, c = cur % width;
    const std::size_t nbr[] = {r > 0 ? cur - width : cur, r + 1 < height ? cur + width : cur,
                               c > 0 ? cur - 1 : cur, c + 1 < width ? cur + 1 : cur};
    for (std::size_t nb : nbr)
      if (nb != cur && !seen[nb] && role[nb] != kRoleWall) {
        seen[nb] = true;
        parent[nb] = cur;
        queue.push_back(nb);
      }
  }
  if (!seen[dst]) throw ArgumentError("goal is not reachable from source");

  std::vector<int> labels(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) labels[i] = role[i] == kRoleWall ? kWall : kOffPath;
  for (std::size_t cur = parent[dst]; cur != src; cur = parent[cur]) labels[cur] = kPath;
  labels[src] = kSource;
  labels[dst] = kGoal;
  return labels;
}

void write_grid(std::ostream& os, std::size_t height, std::size_t width, const std::vector<int>& cells) {
  if (cells.size() != height * width) throw DimensionError("write_grid: cell count does not match size");
  os << height << ' ' << width << '\n';
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const int v = cells[r * width + c];
      if (v < 0 || v > 9) throw ArgumentError("write_grid: cell values must be single digits");
      os << static_cast<char>('0' + v);
    }
    os << '\n';
  }
}

Maze read_maze(std::istream& is, const TypeMap& types) {
  Maze m;
  if (!(is >> m.height >> m.width)) throw ArgumentError("maze file: missing 'H W' header");
  m.grid.reserve(m.height * m.width);
  for (std::size_t r = 0; r < m.height; ++r) {
    std::string row;
    if (!(is >> row) || row.size() != m.width)
      throw ArgumentError("maze file: row " + std::to_string(r) + " must have " + std::to_string(m.width) + " digits");
    for (char ch : row) {
      if (ch < '0' || ch >= '0' + static_cast<int>(kMazeTypes))
        throw ArgumentError(std::string("maze file: invalid cell '") + ch + "'");
      m.grid.push_back(ch - '0');
    }
  }
  m.labels = path_labels(m.height, m.width, m.grid, types);
  return m;
}

LayerConfig MazeModelConfig::default_layer() {
  LayerConfig c;
  c.input_dim = 4;
  c.classes = kMazeClasses;
  c.fields = 2;
  c.rounds = 1;
  c.features = 32;
  c.hidden = {86, 86};
  c.use_scans = false;
  c.use_position = false;
  c.edge_features = EdgeFeatures::Input;
  c.lambda_over_n = true;
  c.dissipation_norm = DissipationNorm::Log;
  c.lambda_floor = 1e-4;
  c.neutral_source = true;
  c.normalize_psi = true;
  c.cg = CgConfig{2000, 1e-8, 1e-30, true};
  return c;
}

void to_json(json& j, const MazeModelConfig& c) {
  LayerConfig layer = c.layer;
  layer.input_dim = c.embed_dim;
  j = json{{"embed_dim", c.embed_dim}, {"layer", layer}};
}

void from_json(const json& j, MazeModelConfig& c) {
  reject_unknown(j, {"embed_dim", "layer"}, "maze model config");
  take(j, "embed_dim", c.embed_dim);
  if (j.contains("layer")) {
    // Layer keys override the maze defaults rather than the generic ones.
    json merged = json(MazeModelConfig::default_layer());
    merged.merge_patch(j.at("layer"));
    c.layer = merged.get<LayerConfig>();
  }
  if (c.embed_dim == 0) throw ArgumentError("embed_dim must be >= 1");
  c.layer.input_dim = c.embed_dim;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"steps", c.steps},
           {"batch", c.batch},
           {"lr", c.adam.lr},
           {"beta1", c.adam.beta1},
           {"beta2", c.adam.beta2},
           {"clip_norm", c.adam.clip_norm},
           {"weight_decay", c.adam.weight_decay},
           {"warmup", c.warmup},
           {"cosine", c.cosine},
           {"lr_final", c.lr_final},
           {"class_weights", c.class_weights}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j, {"steps", "batch", "lr", "beta1", "beta2", "clip_norm", "weight_decay", "warmup", "cosine", "lr_final",
                     "class_weights"},
                 "train config");
  take(j, "steps", c.steps);
  take(j, "batch", c.batch);
  take(j, "lr", c.adam.lr);
  take(j, "beta1", c.adam.beta1);
  take(j, "beta2", c.adam.beta2);
  take(j, "clip_norm", c.adam.clip_norm);
  take(j, "weight_decay", c.adam.weight_decay);
  take(j, "warmup", c.warmup);
  take(j, "cosine", c.cosine);
  take(j, "lr_final", c.lr_final);
  take(j, "class_weights", c.class_weights);
  if (c.batch == 0) throw ArgumentError("batch must be >= 1");
  if (!(c.adam.weight_decay >= 0.0)) throw ArgumentError("weight_decay must be >= 0");
  if (!(c.lr_final >= 0.0 && c.lr_final <= 1.0)) throw ArgumentError("lr_final must lie in [0, 1]");
  if (!c.class_weights.empty() && c.class_weights.size() != kMazeClasses)
    throw ArgumentError("class_weights needs one entry per maze class");
}

double scheduled_lr(const TrainConfig& c, std::size_t step) {
  const double base = c.adam.lr;
  if (step < c.warmup) return base * static_cast<double>(step + 1) / static_cast<double>(c.warmup);
  if (!c.cosine || c.steps <= c.warmup + 1) return base;
  const double t = static_cast<double>(step - c.warmup) / static_cast<double>(c.steps - c.warmup - 1);
  const double floor = base * c.lr_final;
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * std::min(t, 1.0)));
}

std::size_t MazeModel::count(const MazeModelConfig& cfg) {
  LayerConfig layer = cfg.layer;
  layer.input_dim = cfg.embed_dim;
  return kMazeTypes * cfg.embed_dim + PoissonLayer::count(layer);
}

MazeModel MazeModel::create(ModelParams& params, Rng& rng, MazeModelConfig cfg) {
  cfg.layer.input_dim = cfg.embed_dim;
  cfg.layer.classes = kMazeClasses;
  MazeModel m;
  m.cfg_ = cfg;
  std::vector<double> e(kMazeTypes * cfg.embed_dim);
  for (double& v : e) v = rng.normal();
  params.add("maze.embed", Tensor({kMazeTypes, cfg.embed_dim}, std::move(e)));
  m.layer_ = PoissonLayer::create(params, rng, "maze.layer", cfg.layer);
  return m;
}

RoundState MazeModel::forward(const ModelParams::Bound& p, const std::vector<const Maze*>& batch) const {
  if (batch.empty()) throw ArgumentError("maze forward: empty batch");
  const std::size_t h = batch.front()->height, w = batch.front()->width;
  std::vector<std::size_t> idx;
  idx.reserve(batch.size() * h * w);
  for (const Maze* m : batch) {
    if (m->height != h || m->width != w) throw DimensionError("maze forward: mixed sizes in one batch");
    for (int v : m->grid) {
      if (v < 0 || v >= static_cast<int>(kMazeTypes)) throw ArgumentError("maze forward: type index out of range");
      idx.push_back(static_cast<std::size_t>(v));
    }
  }
  const Tensor x = gather_rows(p["maze.embed"], idx);
  return layer_.forward(p, maze_topology(h, w, batch.size()), x);
}

std::vector<int> MazeModel::predict(const ModelParams& params, const Maze& maze) const {
  const Tensor logits = forward(params.constants(), {&maze}).logits;
  std::vector<int> out(maze.cells());
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kMazeClasses; ++c)
      if (logits.at(i, c) > logits.at(i, best)) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

MazeSystem build_system(const MazeModel& model, const ModelParams& params, const Maze& maze) {
  const RoundState s = model.forward(params.constants(), {&maze});
  MazeSystem sys;
  sys.w = s.w;
  sys.lambda = s.lambda;
  sys.source = s.source;
  const TopologyPtr topo = maze_topology(maze.height, maze.width, 1);
  for (std::size_t f = 0; f < s.lambda.cols(); ++f) {
    std::vector<double> lam(maze.cells());
    for (std::size_t i = 0; i < lam.size(); ++i) lam[i] = s.lambda.at(i, f);
    sys.fields.emplace_back(topo, s.w.to_vector(), std::move(lam));
  }
  return sys;
}

Tensor maze_loss(const MazeModel& model, const ModelParams::Bound& p, const std::vector<const Maze*>& batch,
                 std::span<const double> class_weights) {
  std::vector<int> labels;
  for (const Maze* m : batch) labels.insert(labels.end(), m->labels.begin(), m->labels.end());
  return cross_entropy(model.forward(p, batch).logits, labels, class_weights);
}

TrainResult train(const std::vector<Maze>& corpus, const MazeModelConfig& model_cfg, const TrainConfig& cfg) {
  if (corpus.empty()) throw ArgumentError("train: empty corpus");
  TrainResult res{ModelParams(cfg.seed), {}, {}};
  Rng init(cfg.seed);
  res.model = MazeModel::create(res.params, init, model_cfg);
  Adam adam(res.params, cfg.adam);
  Rng sampler(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  res.losses.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<const Maze*> batch;
    for (std::size_t b = 0; b < cfg.batch; ++b) batch.push_back(&corpus[sampler.below(corpus.size())]);
    Tape tape;
    const auto bound = res.params.bind(tape);
    const Tensor loss = maze_loss(res.model, bound, batch, cfg.class_weights);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      if (cfg.checkpoint) res.params.save(*cfg.checkpoint);
      throw NumericError("train: non-finite loss at step " + std::to_string(step));
    }
    res.losses.push_back(value);
    tape.backward(loss);
    res.params.zero_grad();
    res.params.accumulate_gradients(tape, bound);
    adam.set_lr(scheduled_lr(cfg, step));
    adam.step(res.params);
  }
  return res;
}

F1Report f1_score(const std::vector<std::vector<int>>& predictions, const std::vector<Maze>& mazes,
                  bool include_endpoints) {
  if (predictions.size() != mazes.size()) throw DimensionError("f1_score: one prediction per maze required");
  auto positive = [&](int c) { return c == kPath || (include_endpoints && (c == kSource || c == kGoal)); };
  F1Report rep;
  auto f1_of = [](std::size_t tp, std::size_t fp, std::size_t fn) {
    return tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  };
  for (std::size_t m = 0; m < mazes.size(); ++m) {
    if (predictions[m].size() != mazes[m].cells()) throw DimensionError("f1_score: prediction size mismatch");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < mazes[m].cells(); ++i) {
      const bool p = positive(predictions[m][i]), t = positive(mazes[m].labels[i]);
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    rep.tp += tp;
    rep.fp += fp;
    rep.fn += fn;
    rep.per_maze.push_back(f1_of(tp, fp, fn));
  }
  rep.f1 = f1_of(rep.tp, rep.fp, rep.fn);
  rep.precision = rep.tp ? static_cast<double>(rep.tp) / static_cast<double>(rep.tp + rep.fp) : 0.0;
  rep.recall = rep.tp ? static_cast<double>(rep.tp) / static_cast<double>(rep.tp + rep.fn) : 0.0;
  return rep;
}

F1Report evaluate_f1(const MazeModel& model, const ModelParams& params, const std::vector<Maze>& mazes,
                     bool include_endpoints) {
  std::vector<std::vector<int>> preds(mazes.size());
  std::vector<std::exception_ptr> errors(mazes.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(mazes.size()); ++i) {
    try {
      preds[static_cast<std::size_t>(i)] = model.predict(params, mazes[static_cast<std::size_t>(i)]);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return f1_score(preds, mazes, include_endpoints);
}

F1Report size_generalization(const MazeModel& model, const ModelParams& params, std::size_t eval_size,
                             std::size_t n_eval, std::uint64_t seed) {
  return evaluate_f1(model, params, generate_corpus(n_eval, eval_size, eval_size, seed));
}

std::vector<int> harmonic_baseline(const Maze& maze, double threshold, const TypeMap& types) {
  const TopologyPtr topo = maze_topology(maze.height, maze.width, 1);
  std::vector<int> role(maze.cells());
  for (std::size_t i = 0; i < role.size(); ++i) role[i] = types.role(maze.grid[i]);
  std::vector<double> w(topo->n_edges());
  const auto edges = topo->edges();
  for (std::size_t e = 0; e < edges.size(); ++e)
    w[e] = role[edges[e].i] == kRoleWall || role[edges[e].j] == kRoleWall ? 1e-6 : 1.0;
  std::vector<double> lambda(maze.cells(), 1e-4), b(maze.cells(), 0.0);
  for (std::size_t i = 0; i < role.size(); ++i) {
    if (role[i] == kRoleSource) b[i] = 1.0;
    if (role[i] == kRoleGoal) b[i] = -1.0;
  }
  const ScreenedSystem sys(topo, std::move(w), std::move(lambda));
  const auto rec = cg_solve(sys, b, CgConfig{20000, 1e-10, 1e-30, true});
  double peak = 0.0;
  for (std::size_t i = 0; i < role.size(); ++i)
    if (role[i] != kRoleWall) peak = std::max(peak, std::abs(rec.psi[i]));
  std::vector<int> out(maze.cells());
  for (std::size_t i = 0; i < role.size(); ++i) {
    switch (role[i]) {
      case kRoleWall:
        out[i] = kWall;
        break;
      case kRoleSource:
        out[i] = kSource;
        break;
      case kRoleGoal:
        out[i] = kGoal;
        break;
      default:
        out[i] = std::abs(rec.psi[i]) >= threshold * peak ? kPath : kOffPath;
    }
  }
  return out;
}

}  // namespace mtpl
