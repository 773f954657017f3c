#include "metriplector/multigrid.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "metriplector/errors.hpp"
#include "metriplector/ops.hpp"

namespace mtpl {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

std::size_t segments_of(std::size_t n, std::size_t& segment) {
  if (segment == 0) segment = n;
  if (segment == 0 || n % segment != 0)
    throw DimensionError("segment size " + std::to_string(segment) + " does not divide " + std::to_string(n) +
                         " rows");
  return n / segment;
}

// Complete object graphs are rebuilt rarely; cache by (objects, segments).
TopologyPtr object_topology(std::size_t objects, std::size_t segments) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, std::size_t>, TopologyPtr> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{objects, segments}];
  if (!slot) slot = std::make_shared<const GraphTopology>(complete_topology(objects, segments));
  return slot;
}

}  // namespace

Tensor segmented_restrict(const Tensor& rho, const Tensor& f, std::size_t segment) {
  const std::size_t n = rho.rows(), ko = rho.cols(), d = f.cols();
  if (f.rows() != n) throw DimensionError("restrict: rho and f row counts differ");
  const std::size_t groups = segments_of(n, segment);
  std::vector<double> out(groups * ko * d);
  for (std::size_t g = 0; g < groups; ++g)
    Map(out.data() + g * ko * d, ko, d).noalias() =
        CMap(rho.values().data() + g * segment * ko, segment, ko).transpose() *
        CMap(f.values().data() + g * segment * d, segment, d);
  Tensor value(Shape{groups * ko, d}, std::move(out));
  const Tensor inputs[] = {rho, f};
  return Tape::record(value, inputs, [rho = rho.detach(), f = f.detach(), segment, groups, ko, d](
                                         std::span<const double> up, Tape::GradRefs& grads) {
    for (std::size_t g = 0; g < groups; ++g) {
      const CMap gu(up.data() + g * ko * d, ko, d);
      const CMap r(rho.values().data() + g * segment * ko, segment, ko);
      const CMap x(f.values().data() + g * segment * d, segment, d);
      if (grads[0]) Map(grads[0]->data() + g * segment * ko, segment, ko).noalias() += x * gu.transpose();
      if (grads[1]) Map(grads[1]->data() + g * segment * d, segment, d).noalias() += r * gu;
    }
  });
}

Tensor segmented_prolongate(const Tensor& rho, const Tensor& o, std::size_t segment) {
  const std::size_t n = rho.rows(), ko = rho.cols(), d = o.cols();
  const std::size_t groups = segments_of(n, segment);
  if (o.rows() != groups * ko)
    throw DimensionError("prolongate: expected " + std::to_string(groups * ko) + " object rows, got " +
                         std::to_string(o.rows()));
  std::vector<double> out(n * d);
  for (std::size_t g = 0; g < groups; ++g)
    Map(out.data() + g * segment * d, segment, d).noalias() =
        CMap(rho.values().data() + g * segment * ko, segment, ko) * CMap(o.values().data() + g * ko * d, ko, d);
  Tensor value(Shape{n, d}, std::move(out));
  const Tensor inputs[] = {rho, o};
  return Tape::record(value, inputs, [rho = rho.detach(), o = o.detach(), segment, groups, ko, d](
                                         std::span<const double> up, Tape::GradRefs& grads) {
    for (std::size_t g = 0; g < groups; ++g) {
      const CMap gu(up.data() + g * segment * d, segment, d);
      const CMap r(rho.values().data() + g * segment * ko, segment, ko);
      const CMap ob(o.values().data() + g * ko * d, ko, d);
      if (grads[0]) Map(grads[0]->data() + g * segment * ko, segment, ko).noalias() += gu * ob.transpose();
      if (grads[1]) Map(grads[1]->data() + g * ko * d, ko, d).noalias() += r.transpose() * gu;
    }
  });
}

RestrictResult restrict_features(const Tensor& rho, const Tensor& f, bool mass_normalize, std::size_t segment) {
  RestrictResult r;
  r.objects = segmented_restrict(rho, f, segment);
  if (!mass_normalize) return r;
  const Tensor mass = segmented_restrict(rho, Tensor::full({rho.rows(), 1}, 1.0), segment);
  for (double m : mass.values())
    if (m < kMassEps) ++r.zero_mass;
  r.objects = div(r.objects, add_scalar(mass, kMassEps));
  return r;
}

Tensor prolongate(const Tensor& rho, const Tensor& o, std::size_t segment) {
  return segmented_prolongate(rho, o, segment);
}

AssignmentReport assignment_diagnostics(const Tensor& rho) {
  const std::size_t n = rho.rows(), ko = rho.cols();
  AssignmentReport rep;
  std::vector<double> col_max(ko, 0.0);
  double entropy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t a = 0; a < ko; ++a) {
      const double p = rho.at(i, a);
      if (p > 0.0) entropy -= p * std::log(p);
      if (p > rho.at(i, best)) best = a;
      col_max[a] = std::max(col_max[a], p);
    }
    rep.cluster_map.push_back(best);
  }
  for (double m : col_max)
    if (m > 0.5) ++rep.active;
  rep.mean_entropy = n ? entropy / static_cast<double>(n) : 0.0;
  return rep;
}

namespace {

std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

std::size_t ObjectLayer::count(std::size_t assign_in, std::size_t pooled_dim, const ObjectConfig& cfg) {
  if (cfg.objects == 0) return 0;
  return 1 + Mlp::count(widths(assign_in, cfg.hidden, cfg.objects)) +
         Mlp::count(widths(2 * pooled_dim, cfg.hidden, 1)) +
         2 * Mlp::count(widths(pooled_dim, cfg.hidden, cfg.coarse_fields));
}

ObjectLayer ObjectLayer::create(ModelParams& params, Rng& rng, std::string prefix, std::size_t assign_in,
                                std::size_t pooled_dim, ObjectConfig cfg) {
  if (cfg.objects == 0) throw ArgumentError("ObjectLayer: objects must be >= 1");
  if (cfg.coarse_fields == 0) throw ArgumentError("ObjectLayer: coarse_fields must be >= 1");
  ObjectLayer l;
  l.prefix_ = std::move(prefix);
  l.cfg_ = cfg;
  l.assign_ = Mlp::create(params, rng, l.prefix_ + ".assign", widths(assign_in, cfg.hidden, cfg.objects));
  l.pair_ = Mlp::create(params, rng, l.prefix_ + ".pair", widths(2 * pooled_dim, cfg.hidden, 1));
  l.damp_ = Mlp::create(params, rng, l.prefix_ + ".damp", widths(pooled_dim, cfg.hidden, cfg.coarse_fields));
  l.source_ = Mlp::create(params, rng, l.prefix_ + ".source", widths(pooled_dim, cfg.hidden, cfg.coarse_fields));
  // softplus(raw) + floor = 1 at init.
  params.add(l.prefix_ + ".tau_raw", Tensor::matrix(1, 1, {std::log(std::expm1(1.0 - cfg.tau_floor))}));
  return l;
}

Assignment ObjectLayer::assign(const ModelParams::Bound& p, const Tensor& input) const {
  Assignment a;
  a.tau = add_scalar(softplus(p[prefix_ + ".tau_raw"]), cfg_.tau_floor);
  a.rho = softmax_rows(div(assign_.forward(p, input), a.tau));
  return a;
}

VcycleResult ObjectLayer::vcycle(const ModelParams::Bound& p, const Tensor& rho, const Tensor& f,
                                 std::size_t segment, const CgConfig& cg) const {
  if (rho.cols() != cfg_.objects)
    throw DimensionError("vcycle: rho has " + std::to_string(rho.cols()) + " columns for " +
                         std::to_string(cfg_.objects) + " objects");
  VcycleResult out;
  auto pooled = restrict_features(rho, f, cfg_.mass_normalize, segment);
  out.objects = pooled.objects;
  out.zero_mass = pooled.zero_mass;
  const std::size_t groups = out.objects.rows() / cfg_.objects;
  const TopologyPtr topo = object_topology(cfg_.objects, groups);

  Tensor w = Tensor::zeros({0, 1});
  if (topo->n_edges() > 0) {
    const Tensor oa = gather_rows(out.objects, topo->sources());
    const Tensor ob = gather_rows(out.objects, topo->targets());
    // Sum and product are symmetric in (a, b), so w_ab = w_ba by construction.
    w = softplus(pair_.forward(p, concat_cols({add(oa, ob), mul(oa, ob)})));
  }
  const Tensor lambda = add_scalar(softplus(damp_.forward(p, out.objects)), cfg_.lambda_floor);
  const Tensor b = source_.forward(p, out.objects);
  out.coarse_psi = screened_solve(topo, w, lambda, b, cg);
  out.u = prolongate(rho, out.coarse_psi, segment);
  return out;
}

}  // namespace mtpl
