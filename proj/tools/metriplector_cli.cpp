#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "metriplector/causal_scan.hpp"
#include "metriplector/errors.hpp"
#include "metriplector/grid_ops.hpp"
#include "metriplector/harness.hpp"
#include "metriplector/maze.hpp"
#include "metriplector/metriplectic.hpp"
#include "metriplector/multigrid.hpp"
#include "metriplector/noether.hpp"
#include "metriplector/ops.hpp"
#include "metriplector/parallel.hpp"
#include "metriplector/poisson_layer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtpl;

namespace {

constexpr int kOk = 0, kCheckFailed = 1, kUsage = 2;

// Thrown when a command ran but one of its checks did not hold.
struct CheckFailure : std::runtime_error {
  json report;
  CheckFailure(std::string msg, json r) : std::runtime_error(std::move(msg)), report(std::move(r)) {}
};

void emit_error(const std::string& type, const std::string& message, const json& extra = json()) {
  json e{{"error", {{"type", type}, {"message", message}}}};
  if (!extra.is_null()) e["error"]["report"] = extra;
  std::cerr << e.dump() << '\n';
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw ArgumentError("cannot write " + path.string());
  os << std::setprecision(17);
  return os;
}

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ArgumentError("cannot read " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ArgumentError(path.string() + ": " + e.what());
  }
}

// Writes CSV to a file, or to stdout for "-".
template <class Fn>
void with_csv(const std::string& path, Fn&& fn) {
  if (path == "-") {
    std::cout << std::setprecision(17);
    fn(std::cout);
  } else {
    auto os = open_out(path);
    fn(os);
  }
}

int default_threads() {
  if (const char* env = std::getenv("MTPL_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (...) {
    }
    throw ArgumentError("MTPL_THREADS must be a positive integer");
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

std::string fmt_index(std::size_t i, std::size_t width = 4) {
  std::ostringstream os;
  os << std::setw(static_cast<int>(width)) << std::setfill('0') << i;
  return os.str();
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::uint64_t seed = 0;
  double tol = 1e-4;
  double model_tol = 1e-3;
  std::string csv = "-";
  std::string summary;
};

int run_gradcheck(const GradcheckArgs& a) {
  const auto res = gradcheck_suite(a.seed, a.tol, a.model_tol);
  with_csv(a.csv, [&](std::ostream& os) {
    os << "suite,parameter,index,analytic,numeric,rel_error\n";
    std::size_t p = 0;
    for (const auto& row : res.rows) {
      const std::string key = row.suite + "/" + row.parameter;
      while (p < res.parameters.size() && res.parameters[p].name != key) ++p;
      os << row.suite << ',' << row.parameter << ',' << row.index << ',' << row.analytic << ',' << row.numeric << ','
         << res.parameters[p].max_error << '\n';
    }
  });
  const json summary{{"pass", res.pass}, {"tolerance", a.tol}, {"model_tolerance", a.model_tol}, {"parameters", res.parameters}};
  if (!a.summary.empty()) {
    auto os = open_out(a.summary);
    os << summary.dump(2) << '\n';
  }
  if (!res.pass) throw CheckFailure("gradient check exceeded tolerance", summary);
  return kOk;
}

// ---------------------------------------------------------------- oracle

struct OracleArgs {
  std::uint64_t seed = 0;
  std::string suite = "all";
  std::size_t count = 200;
  std::size_t max_n = 200;
  std::size_t max_k = 4;
};

int run_oracle(const OracleArgs& a) {
  std::vector<CheckReport> reports;
  const bool all = a.suite == "all";
  if (all || a.suite == "solve") reports.push_back(solve_oracle(a.seed, a.count, a.max_n, a.max_k));
  if (all || a.suite == "gradient") reports.push_back(gradient_oracle(a.seed));
  if (all || a.suite == "dirichlet") reports.push_back(dirichlet_oracle(a.seed));
  bool pass = true;
  for (const auto& r : reports) pass = pass && r.pass;
  const json out{{"pass", pass}, {"checks", reports}};
  print_json(out);
  if (!pass) throw CheckFailure("oracle check failed", out);
  return kOk;
}

// ---------------------------------------------------------------- dynamics-diag

struct DynamicsArgs {
  std::uint64_t seed = 0;
  std::size_t fields = 4;
  std::size_t height = 8;
  std::size_t width = 8;
  int steps = 50;
  double dt = 0.05;
  std::string mode = "advection";
  std::string csv;
};

int run_dynamics(const DynamicsArgs& a) {
  if (a.steps < 1) throw ArgumentError("--steps must be >= 1");
  if (!(a.dt > 0)) throw ArgumentError("--dt must be positive");
  Rng rng(a.seed);
  const std::size_t k = a.fields;
  const GridShape g{a.height, a.width, 1, 4};
  const std::size_t n = g.cells();
  auto topo = std::make_shared<const GraphTopology>(grid_topology(a.height, a.width, 4));
  std::vector<double> wv(topo->n_edges());
  for (auto& w : wv) w = rng.uniform(0.5, 1.5);
  auto rand_t = [&](std::size_t r, std::size_t c, double lo, double hi) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor({r, c}, std::move(v));
  };
  const Tensor j = antisymmetrize(rand_t(k, k, -1, 1));
  OperatorCoeffs c{Tensor::zeros({n, k}), Tensor::zeros({n, k}), Tensor::zeros({n, k}), Tensor::zeros({n, k})};
  bool dissipative = false;
  if (a.mode == "advection") {
    std::vector<double> al(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = rng.uniform(0.2, 1.5);
      for (std::size_t f = 0; f < k; ++f) al[i * k + f] = v;
    }
    c.alpha = Tensor({n, k}, std::move(al));
  } else if (a.mode == "dissipation") {
    c.sigma = Tensor::full({n, k}, 1.0);
    c.gamma = rand_t(n, k, 0.1, 1.0);
    dissipative = true;
  } else if (a.mode == "full") {
    c.sigma = Tensor::full({n, k}, 1.0);
    c.alpha = rand_t(n, k, -1, 1);
    c.gamma = rand_t(n, k, 0.1, 1.0);
    c.source = rand_t(n, k, -0.5, 0.5);
  } else {
    throw ArgumentError("--mode must be advection, dissipation or full");
  }
  std::vector<ScreenedSystem> systems;
  if (dissipative || a.mode == "full")
    for (std::size_t f = 0; f < k; ++f) {
      std::vector<double> lam(n);
      for (std::size_t i = 0; i < n; ++i) lam[i] = c.gamma.at(i, f);
      systems.emplace_back(topo, wv, lam);
    }
  const Diffusion d = Diffusion::graph(topo, Tensor::column(wv));
  std::vector<Tensor> traj;
  evolve(rand_t(n, k, -1, 1), c, j, d, a.dt, a.steps, &traj);
  const auto rep = structure_diagnostics(j, traj, c.alpha, a.dt, systems);

  if (!a.csv.empty())
    with_csv(a.csv, [&](std::ostream& os) {
      os << "step,E_quad,E_dirichlet,drift,predicted_drift\n";
      for (std::size_t s = 0; s < rep.quad_energy.size(); ++s) {
        os << s << ',' << rep.quad_energy[s] << ',';
        if (!rep.dirichlet_energy.empty()) os << rep.dirichlet_energy[s];
        os << ',';
        if (s < rep.drift.size()) os << rep.drift[s] << ',' << rep.predicted_drift[s];
        else os << ',';
        os << '\n';
      }
    });

  bool pass = true;
  if (a.mode == "advection") pass = rep.max_identity_error <= 1e-12;
  if (dissipative) {
    double lmax = 0.0;
    for (const auto& s : systems) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(assemble_dense(s));
      lmax = std::max(lmax, es.eigenvalues().maxCoeff());
    }
    // Monotone decay is only promised inside the stability bound.
    if (a.dt <= 1.0 / lmax) pass = rep.dirichlet_monotone;
  }
  const json out{{"mode", a.mode},
                 {"pass", pass},
                 {"spectrum",
                  {{"singular_values", rep.spectrum.singular_values},
                   {"pair_gaps", rep.spectrum.pair_gaps},
                   {"rank", rep.spectrum.rank},
                   {"casimir_dim", rep.spectrum.casimir_dim},
                   {"skew_residual", rep.spectrum.skew_residual}}},
                 {"max_identity_error", rep.max_identity_error},
                 {"dirichlet_monotone", rep.dirichlet_monotone},
                 {"quad_energy_first", rep.quad_energy.front()},
                 {"quad_energy_last", rep.quad_energy.back()}};
  print_json(out);
  if (!pass) throw CheckFailure("dynamics check failed", out);
  return kOk;
}

// ---------------------------------------------------------------- scan-bench

struct ScanArgs {
  std::uint64_t seed = 0;
  std::vector<std::size_t> sizes{1, 7, 1024, 100000};
  std::size_t seeds = 20;
  std::vector<std::size_t> chunks{16, 16};
  std::string csv = "-";
};

int run_scan_bench(const ScanArgs& a) {
  using Clock = std::chrono::steady_clock;
  double worst = 0.0;
  with_csv(a.csv, [&](std::ostream& os) {
    os << "N,seed,sequential_ms,parallel_ms,pool_ms,max_deviation\n";
    for (std::size_t n : a.sizes) {
      if (n == 0) throw ArgumentError("--sizes entries must be positive");
      for (std::size_t s = 0; s < a.seeds; ++s) {
        Rng rng(a.seed + 7919 * s + n);
        AffineChain c;
        for (std::size_t i = 0; i < n; ++i) {
          c.alpha.push_back(rng.uniform(0.01, 0.99));
          c.beta.push_back(rng.uniform(-1, 1));
        }
        auto t0 = Clock::now();
        const auto seq = scan_sequential(c);
        const double t_seq = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        t0 = Clock::now();
        const auto par = scan_parallel(c);
        const double t_par = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        t0 = Clock::now();
        multiscale_pool(Tensor::column(seq), a.chunks);
        const double t_pool = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          num = std::max(num, std::abs(par[i] - seq[i]));
          den = std::max(den, std::abs(seq[i]));
        }
        const double dev = num / std::max(den, 1e-300);
        worst = std::max(worst, dev);
        os << n << ',' << s << ',' << t_seq << ',' << t_par << ',' << t_pool << ',' << dev << '\n';
      }
    }
  });
  if (worst > 1e-12) throw CheckFailure("parallel scan deviates from the sequential recurrence", {{"max_deviation", worst}});
  return kOk;
}

// ---------------------------------------------------------------- readout-dump

struct ReadoutArgs {
  std::uint64_t seed = 0;
  std::size_t fields = 2;
  std::size_t height = 16;
  std::size_t width = 16;
  std::string kind = "stress";
  std::string out_dir = "readout";
};

std::vector<std::string> feature_names(ReadoutKind kind, std::size_t k) {
  std::vector<std::string> names;
  auto pairs = [&](const std::string& prefix) {
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b) names.push_back(prefix + "_" + std::to_string(a) + "_" + std::to_string(b));
  };
  auto singles = [&](const std::string& prefix) {
    for (std::size_t a = 0; a < k; ++a) names.push_back(prefix + "_" + std::to_string(a));
  };
  switch (kind) {
    case ReadoutKind::StressEnergy:
      singles("e_diag");
      pairs("e_cross");
      pairs("vorticity");
      break;
    case ReadoutKind::Curvature:
      singles("curvature");
      pairs("curvature_anti");
      break;
    case ReadoutKind::Noether:
      for (const char* p : {"px", "py", "angular", "dilation", "e_diag"}) singles(p);
      if (k > 1) {
        pairs("e_cross");
        pairs("vorticity");
        pairs("cross_current");
      }
      break;
  }
  return names;
}

int run_readout(const ReadoutArgs& a) {
  const ReadoutKind kind = parse_readout_kind(a.kind);
  const GridShape g{a.height, a.width, 1, 4};
  const std::size_t n = g.cells(), k = a.fields;
  // Smooth seeded field: a few random plane waves per channel.
  Rng rng(a.seed);
  std::vector<double> v(n * k, 0.0);
  for (std::size_t f = 0; f < k; ++f)
    for (int wave = 0; wave < 3; ++wave) {
      const double kx = rng.uniform(-3, 3), ky = rng.uniform(-3, 3), ph = rng.uniform(0, 6.283185307179586),
                   amp = rng.uniform(0.2, 1.0);
      for (std::size_t r = 0; r < a.height; ++r)
        for (std::size_t c = 0; c < a.width; ++c)
          v[(r * a.width + c) * k + f] +=
              amp * std::sin(kx * static_cast<double>(c) / static_cast<double>(a.width) * 3.14159 +
                             ky * static_cast<double>(r) / static_cast<double>(a.height) * 3.14159 + ph);
    }
  const Tensor psi({n, k}, std::move(v));
  const Tensor feats = readout(kind, psi, g, default_readout_kernels(k));
  const auto names = feature_names(kind, k);
  if (names.size() != feats.cols()) throw ContractError("readout-dump: feature naming out of sync");
  fs::create_directories(a.out_dir);
  auto write_map = [&](const fs::path& path, const Tensor& t, std::size_t col) {
    auto os = open_out(path);
    for (std::size_t r = 0; r < a.height; ++r) {
      for (std::size_t c = 0; c < a.width; ++c) os << (c ? "," : "") << t.at(r * a.width + c, col);
      os << '\n';
    }
  };
  json index{{"kind", readout_name(kind)}, {"fields", k}, {"height", a.height}, {"width", a.width},
             {"features", json::array()}, {"inputs", json::array()}};
  for (std::size_t f = 0; f < k; ++f) {
    const std::string file = "psi_" + std::to_string(f) + ".csv";
    write_map(fs::path(a.out_dir) / file, psi, f);
    index["inputs"].push_back(file);
  }
  for (std::size_t c = 0; c < names.size(); ++c) {
    const std::string file = fmt_index(c, 3) + "_" + names[c] + ".csv";
    write_map(fs::path(a.out_dir) / file, feats, c);
    index["features"].push_back({{"name", names[c]}, {"file", file}});
  }
  auto os = open_out(fs::path(a.out_dir) / "index.json");
  os << index.dump(2) << '\n';
  print_json({{"out_dir", a.out_dir}, {"features", names.size()}});
  return kOk;
}

// ---------------------------------------------------------------- objects-dump

struct ObjectsArgs {
  std::uint64_t seed = 0;
  std::size_t height = 9;
  std::size_t width = 9;
  std::size_t objects = 4;
  std::string out_dir = "objects";
};

int run_objects(const ObjectsArgs& a) {
  if (a.objects == 0) throw ArgumentError("--objects must be >= 1");
  LayerConfig cfg;
  cfg.input_dim = 4;
  cfg.classes = 4;
  cfg.fields = 4;
  cfg.rounds = 2;
  cfg.features = 16;
  cfg.hidden = {24, 24};
  cfg.objects.objects = a.objects;
  cfg.objects.coarse_fields = 2;
  cfg.objects.hidden = {16, 16};
  cfg.decoder_init_scale = 1.0;
  cfg.cg = CgConfig{400, 1e-8, 1e-30, true};
  Rng rng(a.seed);
  ModelParams params(a.seed);
  const auto layer = PoissonLayer::create(params, rng, "layer", cfg);
  const auto topo = std::make_shared<const GraphTopology>(grid_topology(a.height, a.width, 8));
  std::vector<double> x(topo->n_nodes() * cfg.input_dim);
  for (auto& v : x) v = rng.uniform(-1, 1);
  const RoundState s = layer.forward(params.constants(), topo, Tensor({topo->n_nodes(), cfg.input_dim}, x));
  const auto rep = assignment_diagnostics(s.rho);
  fs::create_directories(a.out_dir);
  {
    auto os = open_out(fs::path(a.out_dir) / "clusters.csv");
    for (std::size_t r = 0; r < a.height; ++r) {
      for (std::size_t c = 0; c < a.width; ++c) os << (c ? "," : "") << rep.cluster_map[r * a.width + c];
      os << '\n';
    }
  }
  {
    auto os = open_out(fs::path(a.out_dir) / "assignment.csv");
    os << "node";
    for (std::size_t o = 0; o < a.objects; ++o) os << ",rho_" << o;
    os << '\n';
    for (std::size_t i = 0; i < s.rho.rows(); ++i) {
      os << i;
      for (std::size_t o = 0; o < a.objects; ++o) os << ',' << s.rho.at(i, o);
      os << '\n';
    }
  }
  const Tensor tau_raw = params.value("layer.objects.tau_raw");
  const double tau = std::log1p(std::exp(tau_raw.item())) + cfg.objects.tau_floor;
  const json out{{"objects", a.objects},
                 {"active", rep.active},
                 {"mean_entropy", rep.mean_entropy},
                 {"tau", tau},
                 {"clusters_file", "clusters.csv"},
                 {"assignment_file", "assignment.csv"}};
  auto os = open_out(fs::path(a.out_dir) / "objects.json");
  os << out.dump(2) << '\n';
  print_json(out);
  return kOk;
}

// ---------------------------------------------------------------- maze commands

struct MazeGenArgs {
  std::uint64_t seed = 0;
  std::size_t height = 9;
  std::size_t width = 9;
  std::size_t count = 1;
  std::string out_dir = "mazes";
};

int run_maze_gen(const MazeGenArgs& a) {
  const auto mazes = generate_corpus(a.count, a.height, a.width, a.seed);
  fs::create_directories(a.out_dir);
  for (std::size_t i = 0; i < mazes.size(); ++i) {
    auto grid = open_out(fs::path(a.out_dir) / ("maze_" + fmt_index(i) + ".txt"));
    write_grid(grid, mazes[i].height, mazes[i].width, mazes[i].grid);
    auto labels = open_out(fs::path(a.out_dir) / ("maze_" + fmt_index(i) + ".labels.txt"));
    write_grid(labels, mazes[i].height, mazes[i].width, mazes[i].labels);
  }
  print_json({{"out_dir", a.out_dir}, {"count", mazes.size()}, {"height", a.height}, {"width", a.width}});
  return kOk;
}

// Run configuration for training: model, optimizer and corpus in one file.
struct RunConfig {
  MazeModelConfig model;
  TrainConfig train;
  std::size_t corpus_count = 100;
  std::size_t corpus_size = 9;
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  const json j = read_json_file(path);
  if (!j.is_object()) throw ArgumentError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "model" && key != "train" && key != "corpus") throw ArgumentError("config: unknown key '" + key + "'");
  if (j.contains("model")) rc.model = j.at("model").get<MazeModelConfig>();
  if (j.contains("train")) rc.train = j.at("train").get<TrainConfig>();
  if (j.contains("corpus")) {
    const auto& c = j.at("corpus");
    for (const auto& [key, _] : c.items())
      if (key != "count" && key != "size") throw ArgumentError("config.corpus: unknown key '" + key + "'");
    if (c.contains("count")) rc.corpus_count = c.at("count").get<std::size_t>();
    if (c.contains("size")) rc.corpus_size = c.at("size").get<std::size_t>();
  }
  return rc;
}

fs::path sidecar(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p += ".json";
  return p;
}

struct MazeTrainArgs {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out = "maze.ckpt";
  std::string log;
  std::optional<std::size_t> steps;
};

int run_maze_train(const MazeTrainArgs& a) {
  if (!a.seed) throw ArgumentError("--seed is required");
  RunConfig rc = load_run_config(a.config);
  if (a.steps) rc.train.steps = *a.steps;
  rc.train.seed = *a.seed;
  rc.train.checkpoint = fs::path(a.out);
  Rng seeds(*a.seed);
  const std::uint64_t corpus_seed = seeds.next();
  const auto corpus = generate_corpus(rc.corpus_count, rc.corpus_size, rc.corpus_size, corpus_seed);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult tr = train(corpus, rc.model, rc.train);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  tr.params.save(a.out);
  {
    auto os = open_out(sidecar(a.out));
    os << json{{"model", tr.model.config()}, {"train", rc.train}, {"seed", *a.seed},
               {"corpus", {{"count", rc.corpus_count}, {"size", rc.corpus_size}}}}
              .dump(2)
       << '\n';
  }
  if (!a.log.empty())
    with_csv(a.log, [&](std::ostream& os) {
      os << "step,loss\n";
      for (std::size_t s = 0; s < tr.losses.size(); ++s) os << s << ',' << tr.losses[s] << '\n';
    });
  print_json({{"checkpoint", a.out},
              {"parameters", tr.params.parameter_count()},
              {"steps", tr.losses.size()},
              {"loss_first", tr.losses.front()},
              {"loss_last", tr.losses.back()},
              {"seconds", secs}});
  return kOk;
}

std::vector<Maze> load_mazes(const std::vector<std::string>& files) {
  std::vector<Maze> out;
  for (const auto& f : files) {
    std::ifstream is(f);
    if (!is) throw ArgumentError("cannot read maze " + f);
    out.push_back(read_maze(is));
  }
  return out;
}

struct MazeEvalArgs {
  std::string checkpoint;
  std::size_t size = 39;
  std::size_t count = 50;
  std::uint64_t seed = 0;
  std::vector<std::string> mazes;
  std::string pred_dir;
  bool harmonic = false;
  double threshold = 0.5;
  bool exclude_endpoints = false;
};

int run_maze_eval(const MazeEvalArgs& a) {
  std::vector<Maze> mazes = a.mazes.empty() ? generate_corpus(a.count, a.size, a.size, a.seed) : load_mazes(a.mazes);
  if (mazes.empty()) throw ArgumentError("no mazes to evaluate");
  std::vector<std::vector<int>> preds(mazes.size());
  if (a.harmonic) {
    for (std::size_t i = 0; i < mazes.size(); ++i) preds[i] = harmonic_baseline(mazes[i], a.threshold);
  } else {
    if (a.checkpoint.empty()) throw ArgumentError("--checkpoint is required unless --harmonic is set");
    const json meta = read_json_file(sidecar(a.checkpoint));
    const auto cfg = meta.at("model").get<MazeModelConfig>();
    ModelParams scratch;
    Rng rng(0);
    const MazeModel model = MazeModel::create(scratch, rng, cfg);
    const ModelParams params = ModelParams::load(a.checkpoint);
    if (params.names() != scratch.names()) throw ArgumentError("checkpoint does not match its model config");
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
  }
  if (!a.pred_dir.empty()) {
    fs::create_directories(a.pred_dir);
    for (std::size_t i = 0; i < mazes.size(); ++i) {
      auto grid = open_out(fs::path(a.pred_dir) / ("maze_" + fmt_index(i) + ".txt"));
      write_grid(grid, mazes[i].height, mazes[i].width, mazes[i].grid);
      auto pred = open_out(fs::path(a.pred_dir) / ("maze_" + fmt_index(i) + ".pred.txt"));
      write_grid(pred, mazes[i].height, mazes[i].width, preds[i]);
    }
  }
  const F1Report r = f1_score(preds, mazes, !a.exclude_endpoints);
  print_json({{"mode", a.harmonic ? "harmonic" : "model"},
              {"mazes", mazes.size()},
              {"f1", r.f1},
              {"precision", r.precision},
              {"recall", r.recall},
              {"tp", r.tp},
              {"fp", r.fp},
              {"fn", r.fn},
              {"per_maze", r.per_maze}});
  return kOk;
}

struct MazeTransferArgs {
  std::uint64_t seed = 0;
  std::string config;
  std::size_t train_size = 9;
  std::size_t eval_size = 19;
  std::size_t train_mazes = 100;
  std::size_t eval_mazes = 50;
  std::optional<std::size_t> steps;
};

int run_maze_transfer(const MazeTransferArgs& a) {
  RunConfig rc = load_run_config(a.config);
  MazeProtocol p;
  p.model = rc.model;
  p.train = rc.train;
  if (a.steps) p.train.steps = *a.steps;
  p.train_mazes = a.train_mazes;
  p.train_size = a.train_size;
  p.eval_mazes = a.eval_mazes;
  p.transfer_size = a.eval_size;
  p.transfer_mazes = a.eval_mazes;
  const MazeRun on = maze_run(p, a.seed, true);
  const MazeRun off = maze_run(p, a.seed, false);
  print_json({{"seed", a.seed},
              {"train_size", a.train_size},
              {"eval_size", a.eval_size},
              {"with_lambda_over_n", on},
              {"without_lambda_over_n", off},
              {"lambda_over_n_at_least_as_good", on.f1_transfer >= off.f1_transfer}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metriplector physics-solver harness"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: MTPL_THREADS or all cores)")->check(CLI::PositiveNumber);

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Tape gradients against central differences");
  c_grad->add_option("--seed", gc.seed);
  c_grad->add_option("--tol", gc.tol, "Normwise relative tolerance per op input");
  c_grad->add_option("--model-tol", gc.model_tol, "Tolerance for whole-model parameters");
  c_grad->add_option("--csv", gc.csv, "Per-element CSV path, '-' for stdout");
  c_grad->add_option("--summary", gc.summary, "JSON summary path");

  OracleArgs oa;
  auto* c_oracle = app.add_subcommand("oracle", "Solver, adjoint and energy-minimum oracles");
  c_oracle->add_option("--seed", oa.seed);
  c_oracle->add_option("--suite", oa.suite)->check(CLI::IsMember({"all", "solve", "gradient", "dirichlet"}));
  c_oracle->add_option("--count", oa.count, "Random systems for the solve oracle");
  c_oracle->add_option("--max-n", oa.max_n)->check(CLI::Range(2, 5000));
  c_oracle->add_option("--max-k", oa.max_k)->check(CLI::Range(1, 64));

  DynamicsArgs da;
  auto* c_dyn = app.add_subcommand("dynamics-diag", "Metriplectic Euler structure diagnostics");
  c_dyn->add_option("--seed", da.seed);
  c_dyn->add_option("--fields", da.fields)->check(CLI::Range(1, 256));
  c_dyn->add_option("--height", da.height)->check(CLI::Range(1, 4096));
  c_dyn->add_option("--width", da.width)->check(CLI::Range(1, 4096));
  c_dyn->add_option("--steps", da.steps);
  c_dyn->add_option("--dt", da.dt);
  c_dyn->add_option("--mode", da.mode)->check(CLI::IsMember({"advection", "dissipation", "full"}));
  c_dyn->add_option("--csv", da.csv, "Per-step CSV path, '-' for stdout");

  ScanArgs sa;
  auto* c_scan = app.add_subcommand("scan-bench", "Sequential against parallel causal scan");
  c_scan->add_option("--seed", sa.seed);
  c_scan->add_option("--sizes", sa.sizes)->delimiter(',');
  c_scan->add_option("--seeds", sa.seeds);
  c_scan->add_option("--chunks", sa.chunks)->delimiter(',');
  c_scan->add_option("--csv", sa.csv);

  ReadoutArgs ra;
  auto* c_read = app.add_subcommand("readout-dump", "Write readout feature maps of a seeded field");
  c_read->add_option("--seed", ra.seed);
  c_read->add_option("--fields", ra.fields)->check(CLI::Range(1, 64));
  c_read->add_option("--height", ra.height)->check(CLI::Range(1, 4096));
  c_read->add_option("--width", ra.width)->check(CLI::Range(1, 4096));
  c_read->add_option("--kind", ra.kind, "stress, curvature or noether");
  c_read->add_option("--out-dir", ra.out_dir);

  ObjectsArgs ob;
  auto* c_obj = app.add_subcommand("objects-dump", "Soft object assignment of a seeded layer");
  c_obj->add_option("--seed", ob.seed);
  c_obj->add_option("--height", ob.height)->check(CLI::Range(1, 1024));
  c_obj->add_option("--width", ob.width)->check(CLI::Range(1, 1024));
  c_obj->add_option("--objects", ob.objects);
  c_obj->add_option("--out-dir", ob.out_dir);

  MazeGenArgs mg;
  auto* c_gen = app.add_subcommand("maze-gen", "Generate tree mazes");
  c_gen->add_option("--seed", mg.seed)->required();
  c_gen->add_option("--height", mg.height);
  c_gen->add_option("--width", mg.width);
  c_gen->add_option("--count", mg.count);
  c_gen->add_option("--out-dir", mg.out_dir);

  MazeTrainArgs mt;
  auto* c_train = app.add_subcommand("maze-train", "Train the maze model");
  c_train->add_option("--seed", mt.seed)->required();
  c_train->add_option("--config", mt.config, "JSON with model, train and corpus sections")->check(CLI::ExistingFile);
  c_train->add_option("--out", mt.out, "Checkpoint path; model config is written next to it");
  c_train->add_option("--log", mt.log, "Per-step loss CSV");
  c_train->add_option("--steps", mt.steps, "Override train.steps");

  MazeEvalArgs me;
  auto* c_eval = app.add_subcommand("maze-eval", "F1 of a checkpoint or the harmonic baseline");
  c_eval->add_option("--checkpoint", me.checkpoint);
  c_eval->add_option("--size", me.size);
  c_eval->add_option("--count", me.count);
  c_eval->add_option("--seed", me.seed);
  c_eval->add_option("--maze", me.mazes, "Maze files instead of fresh ones")->check(CLI::ExistingFile);
  c_eval->add_option("--pred-dir", me.pred_dir, "Write grids and predictions here");
  c_eval->add_flag("--harmonic", me.harmonic, "Score the hand-set Poisson baseline");
  c_eval->add_option("--threshold", me.threshold, "Baseline threshold as a fraction of max |psi|");
  c_eval->add_flag("--exclude-endpoints", me.exclude_endpoints, "Do not count source and goal as positives");

  MazeTransferArgs mx;
  auto* c_transfer = app.add_subcommand("maze-transfer", "Size transfer with and without lambda/N");
  c_transfer->add_option("--seed", mx.seed)->required();
  c_transfer->add_option("--config", mx.config)->check(CLI::ExistingFile);
  c_transfer->add_option("--train-size", mx.train_size);
  c_transfer->add_option("--eval-size", mx.eval_size);
  c_transfer->add_option("--train-mazes", mx.train_mazes);
  c_transfer->add_option("--eval-mazes", mx.eval_mazes);
  c_transfer->add_option("--steps", mx.steps);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    return kUsage;
  }

  try {
    set_thread_count(threads > 0 ? threads : default_threads());
    if (*c_grad) return run_gradcheck(gc);
    if (*c_oracle) return run_oracle(oa);
    if (*c_dyn) return run_dynamics(da);
    if (*c_scan) return run_scan_bench(sa);
    if (*c_read) return run_readout(ra);
    if (*c_obj) return run_objects(ob);
    if (*c_gen) return run_maze_gen(mg);
    if (*c_train) return run_maze_train(mt);
    if (*c_eval) return run_maze_eval(me);
    if (*c_transfer) return run_maze_transfer(mx);
  } catch (const CheckFailure& e) {
    emit_error("check_failed", e.what(), e.report);
    return kCheckFailed;
  } catch (const ArgumentError& e) {
    emit_error("usage", e.what());
    return kUsage;
  } catch (const DimensionError& e) {
    emit_error("usage", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    emit_error("runtime", e.what());
    return kCheckFailed;
  }
  emit_error("usage", "no subcommand");
  return kUsage;
}
