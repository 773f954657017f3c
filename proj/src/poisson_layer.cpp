#include "metriplector/poisson_layer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "metriplector/errors.hpp"
#include "metriplector/grid_ops.hpp"
#include "metriplector/ops.hpp"

namespace mtpl {
namespace {

using nlohmann::json;

std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

struct Dims {
  std::size_t pos, scans, obj, enc_in, rich_in, edge, assign_in, pooled, dec_in;
};

Dims dims_of(const LayerConfig& c) {
  Dims d{};
  const std::size_t k = c.fields;
  d.pos = c.use_position ? 2 : 0;
  d.scans = c.use_scans ? 8 * k : 0;
  d.obj = c.objects.objects ? c.objects.coarse_fields : 0;
  d.enc_in = c.input_dim + c.classes + d.pos + 1;
  d.rich_in = c.features + d.pos + k + d.scans + 2 + d.obj;
  d.edge = c.edge_features == EdgeFeatures::Input ? c.input_dim : c.features;
  d.assign_in = k + 2;
  d.pooled = 2 * k + c.features;
  d.dec_in = 2 * k + c.features + d.pos + d.scans + d.obj;
  return d;
}

// Per-grid segment size: cells of one grid, or the whole graph.
std::size_t segment_of(const GraphTopology& t) {
  return t.grid() ? t.grid()->cells() : t.n_nodes();
}

const char* dissipation_norm_name(DissipationNorm n) {
  switch (n) {
    case DissipationNorm::None:
      return "none";
    case DissipationNorm::Max:
      return "max";
    case DissipationNorm::Standard:
      return "standard";
    case DissipationNorm::Log:
      return "log";
  }
  return "none";
}

GridShape segment_grid(const GraphTopology& t) {
  if (t.grid()) return *t.grid();
  return GridShape{t.n_nodes(), 1, 1, 4};
}

Tensor positions_of(const GraphTopology& t) {
  std::vector<double> v(t.n_nodes() * 2, 0.0);
  const auto pos = t.positions();
  for (std::size_t i = 0; i < pos.size() && i < t.n_nodes(); ++i) {
    v[2 * i] = pos[i][0];
    v[2 * i + 1] = pos[i][1];
  }
  return Tensor({t.n_nodes(), 2}, std::move(v));
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

void LayerConfig::validate() const {
  if (input_dim == 0 || classes < 2 || fields == 0 || rounds == 0 || features == 0)
    throw ArgumentError("layer config: input_dim, fields, rounds, features must be >= 1 and classes >= 2");
  if (hidden.empty()) throw ArgumentError("layer config: hidden widths must be nonempty");
  if (!(tau_start > 0) || !(tau_end > 0)) throw ArgumentError("layer config: feedback temperatures must be positive");
  if (!(lambda_floor > 0)) throw ArgumentError("layer config: lambda_floor must be positive");
  cg.validate();
}

void to_json(json& j, const LayerConfig& c) {
  j = json{{"input_dim", c.input_dim},
           {"classes", c.classes},
           {"fields", c.fields},
           {"rounds", c.rounds},
           {"features", c.features},
           {"hidden", c.hidden},
           {"objects", c.objects.objects},
           {"object_fields", c.objects.coarse_fields},
           {"object_hidden", c.objects.hidden},
           {"mass_normalize", c.objects.mass_normalize},
           {"feedback", {{"tau_start", c.tau_start}, {"tau_end", c.tau_end}}},
           {"scans", c.use_scans},
           {"position", c.use_position},
           {"edge_features", c.edge_features == EdgeFeatures::Input ? "input" : "hidden"},
           {"lambda_over_n", c.lambda_over_n},
           {"lambda_floor", c.lambda_floor},
           {"neutral_source", c.neutral_source},
           {"dissipation_norm", dissipation_norm_name(c.dissipation_norm)},
           {"decoder_init_scale", c.decoder_init_scale},
           {"normalize_psi", c.normalize_psi},
           {"cg", {{"max_iters", c.cg.max_iters}, {"rel_tol", c.cg.rel_tol}, {"jacobi", c.cg.jacobi}}}};
}

void from_json(const json& j, LayerConfig& c) {
  reject_unknown(j,
                 {"input_dim", "classes", "fields", "rounds", "features", "hidden", "objects", "object_fields",
                  "object_hidden", "mass_normalize", "feedback", "scans", "position", "edge_features",
                  "lambda_over_n", "lambda_floor", "neutral_source", "dissipation_norm", "decoder_init_scale", "normalize_psi", "cg"},
                 "layer config");
  take(j, "input_dim", c.input_dim);
  take(j, "classes", c.classes);
  take(j, "fields", c.fields);
  take(j, "rounds", c.rounds);
  take(j, "features", c.features);
  take(j, "hidden", c.hidden);
  take(j, "objects", c.objects.objects);
  take(j, "object_fields", c.objects.coarse_fields);
  take(j, "object_hidden", c.objects.hidden);
  take(j, "mass_normalize", c.objects.mass_normalize);
  take(j, "scans", c.use_scans);
  take(j, "position", c.use_position);
  take(j, "lambda_over_n", c.lambda_over_n);
  take(j, "lambda_floor", c.lambda_floor);
  take(j, "neutral_source", c.neutral_source);
  take(j, "decoder_init_scale", c.decoder_init_scale);
  take(j, "normalize_psi", c.normalize_psi);
  if (j.contains("feedback")) {
    const auto& f = j.at("feedback");
    reject_unknown(f, {"tau_start", "tau_end"}, "feedback");
    take(f, "tau_start", c.tau_start);
    take(f, "tau_end", c.tau_end);
  }
  if (j.contains("edge_features")) {
    const auto s = j.at("edge_features").get<std::string>();
    if (s == "input") c.edge_features = EdgeFeatures::Input;
    else if (s == "hidden") c.edge_features = EdgeFeatures::Hidden;
    else throw ArgumentError("edge_features must be 'input' or 'hidden'");
  }
  if (j.contains("dissipation_norm")) {
    const auto s = j.at("dissipation_norm").get<std::string>();
    if (s == "max") c.dissipation_norm = DissipationNorm::Max;
    else if (s == "none") c.dissipation_norm = DissipationNorm::None;
    else if (s == "standard") c.dissipation_norm = DissipationNorm::Standard;
    else if (s == "log") c.dissipation_norm = DissipationNorm::Log;
    else throw ArgumentError("dissipation_norm must be 'none', 'max', 'standard' or 'log'");
  }
  if (j.contains("cg")) {
    const auto& g = j.at("cg");
    reject_unknown(g, {"max_iters", "rel_tol", "jacobi"}, "cg");
    take(g, "max_iters", c.cg.max_iters);
    take(g, "rel_tol", c.cg.rel_tol);
    take(g, "jacobi", c.cg.jacobi);
  }
  c.validate();
}

LayerConfig sudoku_smoke_config(std::size_t rounds) {
  LayerConfig c;
  c.input_dim = 10;  // blank plus nine anonymous digit indices
  c.classes = 9;
  c.fields = 16;
  c.rounds = rounds;
  c.features = 32;
  c.hidden = {48, 48};
  c.objects.objects = 16;
  c.objects.coarse_fields = 4;
  c.objects.hidden = {24, 24};
  c.cg = CgConfig{60, 1e-8, 1e-30, true};
  return c;
}

double feedback_tau(std::size_t r, std::size_t rounds, double start, double end) {
  if (rounds <= 1) return start;
  const double t = static_cast<double>(r) / static_cast<double>(rounds - 1);
  return start * (1.0 - t) + end * t;
}

Tensor symmetric_form(const Tensor& w_raw) { return relu(scale(add(w_raw, transpose(w_raw)), 0.5)); }

Tensor conductances(const GraphTopology& topology, const Tensor& h, const Tensor& w_raw) {
  if (h.rows() != topology.n_nodes())
    throw DimensionError("conductances: " + std::to_string(h.rows()) + " feature rows for " +
                         std::to_string(topology.n_nodes()) + " nodes");
  if (w_raw.rows() != h.cols() || w_raw.cols() != h.cols())
    throw DimensionError("conductances: W_raw must be " + std::to_string(h.cols()) + "x" + std::to_string(h.cols()));
  if (topology.n_edges() == 0) return Tensor::zeros({0, 1});
  const Tensor hi = gather_rows(h, topology.sources());
  const Tensor hj = gather_rows(h, topology.targets());
  return softplus(rowwise_dot(matmul(hi, symmetric_form(w_raw)), hj));
}

Tensor directional_scans(const Tensor& psi, const GraphTopology& topology) {
  if (!topology.grid()) throw UnsupportedError("directional_scans: topology has no grid layout");
  const GridShape& g = *topology.grid();
  const Tensor z = normalize_fields(psi, g);
  std::vector<Tensor> parts;
  for (const Direction& d : scan_directions()) parts.push_back(directional_scan(z, g, d));
  return concat_cols(parts);
}

Tensor dissipation_readout(const ScreenedSystem& sys, const Tensor& psi) {
  const auto w = sys.w();
  return dissipation_readout(sys.topology(), Tensor({w.size(), 1}, std::vector<double>(w.begin(), w.end())), psi);
}

std::size_t PoissonLayer::count(const LayerConfig& c) {
  const Dims d = dims_of(c);
  std::size_t total = d.edge * d.edge;
  total += Mlp::count(widths(d.enc_in, c.hidden, c.features));
  total += 2 * Mlp::count(widths(d.rich_in, c.hidden, c.fields));
  total += Mlp::count(widths(d.dec_in, c.hidden, c.classes));
  total += ObjectLayer::count(d.assign_in, d.pooled, c.objects);
  return total;
}

PoissonLayer PoissonLayer::create(ModelParams& params, Rng& rng, std::string prefix, LayerConfig cfg) {
  cfg.validate();
  PoissonLayer l;
  l.prefix_ = std::move(prefix);
  l.cfg_ = cfg;
  const Dims d = dims_of(cfg);
  std::vector<double> w(d.edge * d.edge);
  for (double& v : w) v = rng.uniform(-0.5, 0.5);
  params.add(l.prefix_ + ".w_raw", Tensor({d.edge, d.edge}, std::move(w)));
  l.encoder_ = Mlp::create(params, rng, l.prefix_ + ".encoder", widths(d.enc_in, cfg.hidden, cfg.features));
  l.damping_ = Mlp::create(params, rng, l.prefix_ + ".damping", widths(d.rich_in, cfg.hidden, cfg.fields));
  l.source_ = Mlp::create(params, rng, l.prefix_ + ".source", widths(d.rich_in, cfg.hidden, cfg.fields));
  l.decoder_ = Mlp::create(params, rng, l.prefix_ + ".decoder", widths(d.dec_in, cfg.hidden, cfg.classes),
                           Activation::Silu, cfg.decoder_init_scale);
  if (cfg.objects.objects > 0)
    l.objects_ = ObjectLayer::create(params, rng, l.prefix_ + ".objects", d.assign_in, d.pooled, cfg.objects);
  return l;
}

RoundState PoissonLayer::initial_state(const GraphTopology& topology) const {
  const std::size_t n = topology.n_nodes();
  const Dims d = dims_of(cfg_);
  RoundState s;
  s.rounds = cfg_.rounds;
  s.tau = cfg_.tau_start;
  s.soft = Tensor::full({n, cfg_.classes}, 1.0 / static_cast<double>(cfg_.classes));
  s.psi = Tensor::zeros({n, cfg_.fields});
  if (d.scans) s.scans = Tensor::zeros({n, d.scans});
  if (d.obj) s.u = Tensor::zeros({n, d.obj});
  return s;
}

RoundState PoissonLayer::run_round(const ModelParams::Bound& p, const RoundState& state, const TopologyPtr& topology,
                                   const Tensor& x) const {
  if (!topology) throw ArgumentError("run_round: null topology");
  const GraphTopology& topo = *topology;
  const std::size_t n = topo.n_nodes(), k = cfg_.fields;
  if (x.rows() != n || x.cols() != cfg_.input_dim)
    throw DimensionError("run_round: input is " + shape_str(x.shape()) + ", expected [" + std::to_string(n) + "," +
                         std::to_string(cfg_.input_dim) + "]");
  if (state.round >= state.rounds) throw ArgumentError("run_round: all rounds already completed");
  if (cfg_.use_scans && !topo.grid()) throw UnsupportedError("run_round: scans need a grid topology");
  const std::size_t seg = segment_of(topo);
  const Tensor pos = positions_of(topo);
  const std::size_t r = state.round, rounds = state.rounds;
  const double frac = rounds > 1 ? static_cast<double>(r) / static_cast<double>(rounds - 1) : 0.0;

  std::vector<Tensor> enc{x, state.soft};
  if (cfg_.use_position) enc.push_back(pos);
  enc.push_back(Tensor::full({n, 1}, frac));
  RoundState next;
  next.round = r + 1;
  next.rounds = rounds;
  next.h = encoder_.forward(p, concat_cols(enc));

  const Tensor edge_in = cfg_.edge_features == EdgeFeatures::Input ? x : next.h;
  next.w = conductances(topo, edge_in, p[prefix_ + ".w_raw"]);

  const double inv_k = 1.0 / static_cast<double>(k);
  const Tensor mean_k = scale(sum_cols(state.psi), inv_k);
  const Tensor var_k = scale(sum_cols(square(sub(state.psi, mean_k))), inv_k);
  std::vector<Tensor> rich{next.h};
  if (cfg_.use_position) rich.push_back(pos);
  rich.push_back(state.psi);
  if (cfg_.use_scans) rich.push_back(state.scans);
  rich.push_back(mean_k);
  rich.push_back(var_k);
  if (cfg_.objects.objects) rich.push_back(state.u);
  const Tensor rich_in = concat_cols(rich);

  next.lambda = add_scalar(softplus(damping_.forward(p, rich_in)), cfg_.lambda_floor);
  if (cfg_.lambda_over_n) next.lambda = scale(next.lambda, 1.0 / static_cast<double>(seg));
  next.source = source_.forward(p, rich_in);
  if (cfg_.neutral_source) next.source = center_fields(next.source, segment_grid(topo));
  next.psi = screened_solve(topology, next.w, next.lambda, next.source, cfg_.cg);

  const Tensor raw_d = mtpl::dissipation_readout(topo, next.w, next.psi);
  switch (cfg_.dissipation_norm) {
    case DissipationNorm::None:
      next.dissipation = raw_d;
      break;
    case DissipationNorm::Max:
      next.dissipation = segment_max_normalize(raw_d, seg);
      break;
    case DissipationNorm::Standard:
      next.dissipation = normalize_fields(raw_d, segment_grid(topo));
      break;
    case DissipationNorm::Log:
      next.dissipation = normalize_fields(log(add_scalar(segment_max_normalize(raw_d, seg), 1e-6)), segment_grid(topo));
      break;
  }
  if (cfg_.use_scans) next.scans = directional_scans(next.psi, topo);

  if (cfg_.objects.objects) {
    const Assignment a = objects_.assign(p, concat_cols({normalize_fields(next.psi, segment_grid(topo)), pos}));
    next.rho = a.rho;
    next.u = objects_.vcycle(p, a.rho, concat_cols({next.psi, next.dissipation, next.h}), seg, cfg_.cg).u;
  }

  const Tensor psi_out = cfg_.normalize_psi ? normalize_fields(next.psi, segment_grid(topo)) : next.psi;
  std::vector<Tensor> dec{psi_out, next.dissipation, next.h};
  if (cfg_.use_position) dec.push_back(pos);
  if (cfg_.use_scans) dec.push_back(next.scans);
  if (cfg_.objects.objects) dec.push_back(next.u);
  next.logits = decoder_.forward(p, concat_cols(dec));
  next.tau = feedback_tau(r, rounds, cfg_.tau_start, cfg_.tau_end);
  next.soft = softmax_rows(next.logits, next.tau);
  return next;
}

RoundState PoissonLayer::forward(const ModelParams::Bound& p, const TopologyPtr& topology, const Tensor& x) const {
  RoundState s = initial_state(*topology);
  for (std::size_t r = 0; r < cfg_.rounds; ++r) s = run_round(p, s, topology, x);
  return s;
}

}  // namespace mtpl
