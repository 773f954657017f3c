#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "metriplector/tensor.hpp"

namespace mtpl {

/// Seeded generator whose draws are reproducible across standard libraries
/// (the std distributions are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Named, ordered parameter registry with one gradient slot per entry.
class ModelParams {
 public:
  /// Parameters viewed through one tape (or as constants).
  class Bound {
   public:
    const Tensor& operator[](const std::string& name) const;
    const std::map<std::string, Tensor>& entries() const { return entries_; }

   private:
    friend class ModelParams;
    std::map<std::string, Tensor> entries_;
  };

  explicit ModelParams(std::uint64_t seed = 0) : seed_(seed) {}

  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& value(const std::string& name) const;
  void set(const std::string& name, Tensor value);
  const std::vector<double>& grad(const std::string& name) const;
  std::vector<double>& grad(const std::string& name);
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  std::size_t parameter_count() const;
  std::uint64_t seed() const { return seed_; }

  Bound bind(Tape& tape) const;
  Bound constants() const;
  /// Adds the tape gradients of every bound entry into the gradient slots.
  void accumulate_gradients(const Tape& tape, const Bound& bound);
  void zero_grad();

  /// Binary checkpoint: "MTPL", u32 version, u32 count, then per entry u16
  /// name length, name bytes, u8 rank, u64 extents, f64 values (little endian).
  void save(const std::filesystem::path& path) const;
  static ModelParams load(const std::filesystem::path& path);

  bool operator==(const ModelParams& other) const;

 private:
  struct Entry {
    Tensor value;
    std::vector<double> grad;
  };
  std::uint64_t seed_;
  std::vector<std::string> order_;
  std::map<std::string, Entry> index_;
};

struct AdamConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  /// Decoupled (AdamW) decay: w -= lr * weight_decay * w each step.
  double weight_decay = 0.0;
};

struct ParamGroup {
  std::vector<std::string> names;
  double lr_scale = 1.0;
};

/// Adam over explicit parameter groups; every entry must belong to exactly
/// one group.
class Adam {
 public:
  Adam(const ModelParams& params, AdamConfig cfg, std::vector<ParamGroup> groups = {});
  void step(ModelParams& params);
  long steps() const { return t_; }
  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::vector<ParamGroup> groups_;
  std::map<std::string, std::vector<double>> m_, v_;
  long t_ = 0;
};

enum class Activation { Relu, Silu };

/// Fully connected stack with the activation between layers and a linear
/// output layer. Weights live in ModelParams as "<prefix>.w<k>", "<prefix>.b<k>".
class Mlp {
 public:
  Mlp() = default;
  /// Registers parameters. The output layer is drawn with `out_scale` times
  /// the usual fan-in bound (0 gives a zero-initialized output layer).
  static Mlp create(ModelParams& params, Rng& rng, std::string prefix, std::vector<std::size_t> widths,
                    Activation act = Activation::Silu, double out_scale = 1.0);
  static std::size_t count(const std::vector<std::size_t>& widths);

  Tensor forward(const ModelParams::Bound& p, const Tensor& x) const;
  std::size_t in_width() const { return widths_.front(); }
  std::size_t out_width() const { return widths_.back(); }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  std::vector<std::size_t> widths_;
  Activation act_ = Activation::Silu;
};

/// Uniform fan-in initialization of a [rows, cols] matrix.
Tensor init_uniform(Rng& rng, std::size_t rows, std::size_t cols, double bound);

}  // namespace mtpl
