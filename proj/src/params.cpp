#include "metriplector/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>

#include "metriplector/errors.hpp"
#include "metriplector/ops.hpp"

namespace mtpl {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  has_spare_ = true;
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

const Tensor& ModelParams::Bound::operator[](const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

void ModelParams::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ArgumentError("duplicate parameter '" + name + "'");
  order_.push_back(name);
  auto n = value.numel();
  index_.emplace(name, Entry{value.detach(), std::vector<double>(n, 0.0)});
}

const Tensor& ModelParams::value(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second.value;
}

void ModelParams::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  if (value.shape() != it->second.value.shape())
    throw DimensionError("set '" + name + "': shape " + shape_str(value.shape()) + " != " +
                         shape_str(it->second.value.shape()));
  it->second.value = value.detach();
}

const std::vector<double>& ModelParams::grad(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second.grad;
}

std::vector<double>& ModelParams::grad(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second.grad;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : index_) n += e.value.numel();
  return n;
}

ModelParams::Bound ModelParams::bind(Tape& tape) const {
  Bound b;
  for (const auto& name : order_) b.entries_.emplace(name, tape.watch(index_.at(name).value));
  return b;
}

ModelParams::Bound ModelParams::constants() const {
  Bound b;
  for (const auto& name : order_) b.entries_.emplace(name, index_.at(name).value);
  return b;
}

void ModelParams::accumulate_gradients(const Tape& tape, const Bound& bound) {
  for (const auto& [name, t] : bound.entries_) {
    if (!t.tracked()) continue;
    const Tensor g = tape.grad(t);
    auto& slot = index_.at(name).grad;
    const auto gv = g.values();
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += gv[i];
  }
}

void ModelParams::zero_grad() {
  for (auto& [name, e] : index_) std::fill(e.grad.begin(), e.grad.end(), 0.0);
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ArgumentError("checkpoint truncated");
  return v;
}

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void ModelParams::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("cannot write checkpoint " + path.string());
  os.write("MTPL", 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(order_.size()));
  for (const auto& name : order_) {
    const auto& t = index_.at(name).value;
    put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(os, e);
    for (double v : t.values()) put<double>(os, v);
  }
}

ModelParams ModelParams::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArgumentError("cannot read checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MTPL", 4) != 0) throw ArgumentError("bad checkpoint magic");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw ArgumentError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint32_t>(is);
  ModelParams params;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get<std::uint16_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw ArgumentError("checkpoint truncated");
    const auto rank = get<std::uint8_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(is));
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = get<double>(is);
    params.add(name, Tensor(shape, std::move(values)));
  }
  return params;
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (order_ != other.order_) return false;
  for (const auto& name : order_) {
    const auto& a = index_.at(name).value;
    const auto& b = other.index_.at(name).value;
    if (a.shape() != b.shape() || a.storage() != b.storage()) return false;
  }
  return true;
}

Adam::Adam(const ModelParams& params, AdamConfig cfg, std::vector<ParamGroup> groups)
    : cfg_(cfg), groups_(std::move(groups)) {
  if (groups_.empty()) groups_.push_back(ParamGroup{params.names(), 1.0});
  std::set<std::string> seen;
  for (const auto& g : groups_)
    for (const auto& n : g.names) {
      if (!params.contains(n)) throw ArgumentError("optimizer group names unknown parameter '" + n + "'");
      if (!seen.insert(n).second) throw ArgumentError("parameter '" + n + "' is in more than one optimizer group");
    }
  for (const auto& n : params.names())
    if (!seen.count(n)) throw ArgumentError("parameter '" + n + "' is in no optimizer group");
  for (const auto& n : params.names()) {
    m_[n].assign(params.value(n).numel(), 0.0);
    v_[n].assign(params.value(n).numel(), 0.0);
  }
}

void Adam::step(ModelParams& params) {
  ++t_;
  double clip = 1.0;
  if (cfg_.clip_norm > 0) {
    double sq = 0.0;
    for (const auto& n : params.names())
      for (double g : params.grad(n)) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& group : groups_) {
    const double lr = cfg_.lr * group.lr_scale;
    for (const auto& n : group.names) {
      const auto& g = params.grad(n);
      auto& m = m_[n];
      auto& v = v_[n];
      std::vector<double> w = params.value(n).to_vector();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * clip;
        m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi;
        w[i] -= lr * ((m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps) + cfg_.weight_decay * w[i]);
      }
      params.set(n, Tensor(params.value(n).shape(), std::move(w)));
    }
  }
}

Tensor init_uniform(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(Shape{rows, cols}, std::move(v));
}

Mlp Mlp::create(ModelParams& params, Rng& rng, std::string prefix, std::vector<std::size_t> widths, Activation act,
                double out_scale) {
  if (widths.size() < 2) throw ArgumentError("MLP '" + prefix + "' needs at least input and output widths");
  Mlp m;
  m.prefix_ = std::move(prefix);
  m.widths_ = std::move(widths);
  m.act_ = act;
  for (std::size_t k = 0; k + 1 < m.widths_.size(); ++k) {
    const auto fan_in = m.widths_[k], fan_out = m.widths_[k + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    if (k + 2 == m.widths_.size()) bound *= out_scale;
    params.add(m.prefix_ + ".w" + std::to_string(k), init_uniform(rng, fan_in, fan_out, bound));
    params.add(m.prefix_ + ".b" + std::to_string(k), Tensor::zeros(Shape{1, fan_out}));
  }
  return m;
}

std::size_t Mlp::count(const std::vector<std::size_t>& widths) {
  std::size_t n = 0;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) n += widths[k] * widths[k + 1] + widths[k + 1];
  return n;
}

Tensor Mlp::forward(const ModelParams::Bound& p, const Tensor& x) const {
  if (x.cols() != widths_.front())
    throw DimensionError("MLP '" + prefix_ + "' expects " + std::to_string(widths_.front()) + " inputs, got " +
                         std::to_string(x.cols()));
  Tensor h = x;
  for (std::size_t k = 0; k + 1 < widths_.size(); ++k) {
    h = add(matmul(h, p[prefix_ + ".w" + std::to_string(k)]), p[prefix_ + ".b" + std::to_string(k)]);
    if (k + 2 < widths_.size()) h = act_ == Activation::Relu ? relu(h) : silu(h);
  }
  return h;
}

}  // namespace mtpl
