#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "doctest.h"
#include "metriplector/errors.hpp"
#include "metriplector/maze.hpp"
#include "metriplector/ops.hpp"
#include "test_util.hpp"

using namespace mtpl;

namespace {

MazeModelConfig small_config() {
  MazeModelConfig c;
  c.embed_dim = 3;
  c.layer.features = 4;
  c.layer.hidden = {6, 6};
  c.layer.decoder_init_scale = 1.0;
  c.layer.cg = CgConfig{2000, 1e-13, 1e-30, true};
  return c;
}

// Counts simple corridor paths between source and goal by exhaustive DFS.
std::size_t count_paths(const Maze& m) {
  std::size_t src = 0, dst = 0;
  for (std::size_t i = 0; i < m.cells(); ++i) {
    if (m.grid[i] == 2) src = i;
    if (m.grid[i] == 3) dst = i;
  }
  std::vector<bool> on(m.cells(), false);
  std::size_t found = 0;
  std::function<void(std::size_t)> walk = [&](std::size_t cur) {
    if (cur == dst) {
      ++found;
      return;
    }
    on[cur] = true;
    const std::size_t r = cur / m.width, c = cur % m.width;
    const long dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
    for (int d = 0; d < 4; ++d) {
      const long nr = static_cast<long>(r) + dr[d], nc = static_cast<long>(c) + dc[d];
      if (nr < 0 || nc < 0 || nr >= static_cast<long>(m.height) || nc >= static_cast<long>(m.width)) continue;
      const std::size_t nb = static_cast<std::size_t>(nr) * m.width + static_cast<std::size_t>(nc);
      if (!on[nb] && m.grid[nb] != 0) walk(nb);
    }
    on[cur] = false;
  };
  walk(src);
  return found;
}

}  // namespace

TEST_CASE("maze generation") {
  const Maze a = generate_maze(5, 5, 42), b = generate_maze(5, 5, 42);
  CHECK(a.grid == b.grid);
  CHECK(a.labels == b.labels);
  CHECK(generate_maze(9, 9, 1).grid != generate_maze(9, 9, 2).grid);
  CHECK_THROWS_AS(generate_maze(6, 5, 1), ArgumentError);
  CHECK_THROWS_AS(generate_maze(3, 3, 1), ArgumentError);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Maze m = generate_maze(9, 11, seed);
    CAPTURE(seed);
    std::size_t n_src = 0, n_dst = 0, open = 0;
    for (std::size_t i = 0; i < m.cells(); ++i) {
      n_src += m.grid[i] == 2;
      n_dst += m.grid[i] == 3;
      open += m.grid[i] != 0;
      if (m.grid[i] == 2) CHECK(m.labels[i] == kSource);
      if (m.grid[i] == 3) CHECK(m.labels[i] == kGoal);
      CHECK((m.grid[i] == 0) == (m.labels[i] == kWall));
    }
    CHECK(n_src == 1);
    CHECK(n_dst == 1);
    // Spanning tree on the lattice: (h-1)/2 * (w-1)/2 nodes plus one opening per tree edge.
    CHECK(open == 4 * 5 + (4 * 5 - 1));
    CHECK(count_paths(m) == 1);

    // BFS shortest path length equals the labelled path length.
    std::size_t src = 0;
    for (std::size_t i = 0; i < m.cells(); ++i)
      if (m.grid[i] == 2) src = i;
    std::vector<int> dist(m.cells(), -1);
    std::deque<std::size_t> q{src};
    dist[src] = 0;
    std::size_t dst_dist = 0;
    while (!q.empty()) {
      const auto cur = q.front();
      q.pop_front();
      if (m.grid[cur] == 3) dst_dist = static_cast<std::size_t>(dist[cur]);
      const std::size_t r = cur / m.width, c = cur % m.width;
      for (std::size_t nb : {r > 0 ? cur - m.width : cur, r + 1 < m.height ? cur + m.width : cur, c > 0 ? cur - 1 : cur,
                             c + 1 < m.width ? cur + 1 : cur})
        if (m.grid[nb] != 0 && dist[nb] < 0) {
          dist[nb] = dist[cur] + 1;
          q.push_back(nb);
        }
    }
    std::size_t path_cells = 0;
    for (int l : m.labels) path_cells += l == kPath;
    CHECK(path_cells + 1 == dst_dist);
  }
}

TEST_CASE("type map is private") {
  TypeMap perm;
  perm.index = {2, 0, 3, 1};
  const Maze plain = generate_maze(7, 7, 9), shuffled = generate_maze(7, 7, 9, perm);
  CHECK(plain.labels == shuffled.labels);
  for (std::size_t i = 0; i < plain.cells(); ++i) CHECK(shuffled.grid[i] == perm.index[plain.grid[i]]);
  CHECK(path_labels(7, 7, shuffled.grid, perm) == plain.labels);
  TypeMap bad;
  bad.index = {0, 0, 1, 2};
  CHECK_THROWS_AS(generate_maze(5, 5, 1, bad), ArgumentError);
}

TEST_CASE("maze file round trip") {
  const Maze m = generate_maze(9, 7, 5);
  std::stringstream ss;
  write_grid(ss, m.height, m.width, m.grid);
  const Maze back = read_maze(ss);
  CHECK(back.height == 9);
  CHECK(back.width == 7);
  CHECK(back.grid == m.grid);
  CHECK(back.labels == m.labels);

  std::stringstream bad("2 3\n012\n01\n");
  CHECK_THROWS_AS(read_maze(bad), ArgumentError);
  std::stringstream digit("1 3\n019\n");
  CHECK_THROWS_AS(read_maze(digit), ArgumentError);
  std::stringstream nosrc("1 3\n111\n");
  CHECK_THROWS_AS(read_maze(nosrc), ArgumentError);
  std::stringstream blocked("1 3\n203\n");
  CHECK_THROWS_AS(read_maze(blocked), ArgumentError);
}

TEST_CASE("default model size") {
  const MazeModelConfig cfg;
  const std::size_t n = MazeModel::count(cfg);
  CHECK(n >= 39420);
  CHECK(n <= 48180);
  ModelParams params;
  Rng rng(1);
  MazeModel::create(params, rng, cfg);
  CHECK(params.parameter_count() == n);
  CHECK(cfg.layer.fields == 2);
  CHECK(cfg.layer.rounds == 1);
}

TEST_CASE("build_system contracts") {
  const Maze m = generate_maze(9, 9, 3);
  MazeModelConfig on = small_config(), off = small_config();
  on.layer.lambda_over_n = true;
  off.layer.lambda_over_n = false;
  ModelParams p_on, p_off;
  Rng r1(7), r2(7);
  const auto m_on = MazeModel::create(p_on, r1, on);
  const auto m_off = MazeModel::create(p_off, r2, off);
  CHECK(p_on == p_off);
  const auto s_on = build_system(m_on, p_on, m), s_off = build_system(m_off, p_off, m);
  CHECK(s_on.fields.size() == 2);
  for (std::size_t i = 0; i < m.cells(); ++i)
    for (std::size_t f = 0; f < 2; ++f) {
      const double expect = s_off.lambda.at(i, f) / 81.0;
      CHECK(std::abs(s_on.lambda.at(i, f) - expect) <= 4e-16 * expect);
    }

  // Conductance depends only on the unordered pair of endpoint types.
  const auto topo = grid_topology(9, 9, 4, 1);
  const auto edges = topo.edges();
  std::map<std::pair<int, int>, double> seen;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    int a = m.grid[edges[e].i], b = m.grid[edges[e].j];
    if (a > b) std::swap(a, b);
    const double w = s_on.w.at(e, 0);
    CHECK(w > 0.0);
    auto [it, fresh] = seen.emplace(std::make_pair(a, b), w);
    if (!fresh) CHECK(it->second == w);
  }
  CHECK(seen.size() >= 3);
}

TEST_CASE("uniform predictor at initialization") {
  const auto corpus = generate_corpus(3, 9, 9, 11);
  ModelParams params;
  Rng rng(2);
  const auto model = MazeModel::create(params, rng, MazeModelConfig{});
  std::vector<const Maze*> batch;
  for (const auto& m : corpus) batch.push_back(&m);
  const double loss = maze_loss(model, params.constants(), batch).item();
  CHECK(loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("relabeling symmetry") {
  TypeMap perm;
  perm.index = {3, 1, 0, 2};
  const Maze plain = generate_maze(7, 9, 21), shuffled = generate_maze(7, 9, 21, perm);
  ModelParams params;
  Rng rng(3);
  const auto model = MazeModel::create(params, rng, small_config());
  ModelParams permuted = params;
  const Tensor& e = params.value("maze.embed");
  std::vector<double> rows(e.numel());
  const std::size_t d = e.cols();
  for (std::size_t r = 0; r < kMazeTypes; ++r)
    for (std::size_t c = 0; c < d; ++c)
      rows[static_cast<std::size_t>(perm.index[r]) * d + c] = e.at(r, c);
  permuted.set("maze.embed", Tensor(e.shape(), rows));

  const auto a = model.forward(params.constants(), {&plain}).logits.to_vector();
  const auto b = model.forward(permuted.constants(), {&shuffled}).logits.to_vector();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12 * (1 + std::abs(a[i])));
}

TEST_CASE("end-to-end gradient on a 5x5 maze") {
  const Maze m = generate_maze(5, 5, 4);
  ModelParams params;
  Rng rng(4);
  const auto model = MazeModel::create(params, rng, small_config());
  Tape tape;
  const auto bound = params.bind(tape);
  tape.backward(maze_loss(model, bound, {&m}));
  params.accumulate_gradients(tape, bound);
  for (const auto& name : params.names()) {
    const auto fd = test::finite_diff(
        [&](const std::vector<double>& v) {
          ModelParams local = params;
          local.set(name, Tensor(params.value(name).shape(), v));
          return maze_loss(model, local.constants(), {&m}).item();
        },
        params.value(name).to_vector(), 1e-4);  // damping grads are ~1e-8 under a neutral source; smaller h is roundoff-bound
    CHECK_MESSAGE(test::rel_error(params.grad(name), fd, 1e-8) < 1e-3, name);
  }
}

TEST_CASE("f1 score") {
  const auto mazes = generate_corpus(3, 7, 7, 8);
  std::vector<std::vector<int>> perfect, off, half;
  for (const auto& m : mazes) {
    perfect.push_back(m.labels);
    off.emplace_back(m.cells(), kOffPath);
  }
  CHECK(f1_score(perfect, mazes).f1 == 1.0);
  const auto zero = f1_score(off, mazes);
  CHECK(zero.f1 == 0.0);
  CHECK(zero.recall == 0.0);
  CHECK(zero.per_maze.size() == 3);

  // Hand example: one maze, predictions hit one of two path cells and add one false positive.
  Maze tiny;
  tiny.height = 1;
  tiny.width = 5;
  tiny.labels = {kSource, kPath, kPath, kGoal, kOffPath};
  const std::vector<Maze> one{tiny};
  const auto r = f1_score({{kSource, kPath, kOffPath, kGoal, kPath}}, one);
  CHECK(r.tp == 3);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(r.f1 == doctest::Approx(0.75).epsilon(1e-15));
  const auto inner = f1_score({{kSource, kPath, kOffPath, kGoal, kPath}}, one, false);
  CHECK(inner.tp == 1);
  CHECK(inner.f1 == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(f1_score({}, one), DimensionError);
}

TEST_CASE("evaluation at train size matches evaluate_f1") {
  ModelParams params;
  Rng rng(5);
  const auto model = MazeModel::create(params, rng, small_config());
  const auto fresh = size_generalization(model, params, 9, 4, 77);
  const auto direct = evaluate_f1(model, params, generate_corpus(4, 9, 9, 77));
  CHECK(fresh.f1 == direct.f1);
  CHECK(fresh.per_maze == direct.per_maze);
}

TEST_CASE("harmonic baseline") {
  const auto mazes = generate_corpus(10, 15, 15, 123);
  std::vector<std::vector<int>> preds;
  for (const auto& m : mazes) {
    const auto p = harmonic_baseline(m);
    for (std::size_t i = 0; i < m.cells(); ++i) {
      if (m.labels[i] == kWall || m.labels[i] == kSource || m.labels[i] == kGoal) CHECK(p[i] == m.labels[i]);
    }
    preds.push_back(p);
  }
  const auto r = f1_score(preds, mazes);
  CHECK(r.f1 > 0.0);
  CHECK(r.f1 < 1.0);
  MESSAGE("harmonic baseline F1 on 15x15: " << r.f1);
}

TEST_CASE("training is deterministic and reduces the loss") {
  const auto corpus = generate_corpus(8, 7, 7, 31);
  TrainConfig tc;
  tc.steps = 40;
  tc.batch = 2;
  tc.seed = 9;
  MazeModelConfig mc = small_config();
  mc.layer.decoder_init_scale = 0.0;
  const auto a = train(corpus, mc, tc);
  const auto b = train(corpus, mc, tc);
  CHECK(a.params == b.params);
  CHECK(a.losses == b.losses);
  CHECK(a.losses.size() == 40);
  CHECK(a.losses.front() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(a.losses.back() < a.losses.front());

  const auto path = std::filesystem::temp_directory_path() / "mtpl_maze_ckpt.bin";
  a.params.save(path);
  CHECK(ModelParams::load(path) == a.params);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(train({}, mc, tc), ArgumentError);
}

TEST_CASE("config JSON") {
  MazeModelConfig c = small_config();
  c.layer.lambda_over_n = false;
  const nlohmann::json j = c;
  const auto back = j.get<MazeModelConfig>();
  CHECK(nlohmann::json(back) == j);
  const auto partial = nlohmann::json::parse(R"({"layer": {"features": 8}})").get<MazeModelConfig>();
  CHECK(partial.layer.features == 8);
  CHECK(partial.layer.lambda_over_n);
  CHECK(partial.layer.hidden == MazeModelConfig::default_layer().hidden);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"embed": 3})").get<MazeModelConfig>(), ArgumentError);

  TrainConfig t;
  t.steps = 12;
  t.adam.lr = 0.01;
  const auto t2 = nlohmann::json(t).get<TrainConfig>();
  CHECK(t2.steps == 12);
  CHECK(t2.adam.lr == 0.01);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"step": 3})").get<TrainConfig>(), ArgumentError);
  t.warmup = 3;
  t.cosine = true;
  t.class_weights = {1, 2, 1, 1, 1};
  t.adam.weight_decay = 0.05;
  CHECK(nlohmann::json(nlohmann::json(t).get<TrainConfig>()) == nlohmann::json(t));
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"class_weights": [1, 2]})").get<TrainConfig>(), ArgumentError);
}

TEST_CASE("learning rate schedule") {
  TrainConfig t;
  t.steps = 11;
  t.adam.lr = 0.1;
  CHECK(scheduled_lr(t, 0) == 0.1);
  CHECK(scheduled_lr(t, 10) == 0.1);
  t.warmup = 4;
  CHECK(scheduled_lr(t, 0) == doctest::Approx(0.025));
  CHECK(scheduled_lr(t, 3) == doctest::Approx(0.1));
  t.cosine = true;
  t.lr_final = 0.1;
  CHECK(scheduled_lr(t, 4) == doctest::Approx(0.1));
  CHECK(scheduled_lr(t, 10) == doctest::Approx(0.01));
  double prev = 1.0;
  for (std::size_t s = 4; s < 11; ++s) {
    CHECK(scheduled_lr(t, s) <= prev);
    prev = scheduled_lr(t, s);
  }
}
