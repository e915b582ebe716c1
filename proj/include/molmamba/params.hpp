#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "molmamba/rng.hpp"
#include "molmamba/tensor.hpp"

namespace molmamba {

/// A named learnable array. Storage is shared so that per-tape leaves can
/// alias it without copying.
struct Parameter {
  std::string name;
  Shape shape;
  std::shared_ptr<std::vector<double>> value;
};

/// Flat gradient buffers, one per parameter, in store order.
using GradientSet = std::vector<std::vector<double>>;

/// Ordered collection of every learnable parameter of a model (ModelState).
class ParamStore {
 public:
  /// Throws ValidationError on a duplicate name or a size mismatch.
  std::size_t add(std::string name, Shape shape, std::vector<double> init);

  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const { return by_name_.count(std::string(name)) != 0; }

  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t total_elements() const noexcept;
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::span<double> values(std::size_t i) { return *params_[i].value; }
  std::span<const double> values(std::size_t i) const { return *params_[i].value; }

  /// Deep copy: the clone owns fresh storage.
  ParamStore clone() const;
  /// Copy values from a store with the same names and shapes.
  void assign_from(const ParamStore& other);

  /// Copy values of every parameter of `other` whose name also exists here;
  /// shapes must agree. Returns the number copied.
  std::size_t assign_shared(const ParamStore& other);

  GradientSet zero_gradients() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

/// Per-tape view of a ParamStore: each parameter becomes a gradient-tracking
/// leaf that aliases the store's storage. One binding per thread.
class Binding {
 public:
  explicit Binding(const ParamStore& store) : store_(&store), leaves_(store.size()) {}

  Tensor operator()(std::size_t index) const;
  const ParamStore& store() const { return *store_; }

  /// Adds this tape's parameter gradients into `into`.
  void accumulate_into(GradientSet& into) const;

 private:
  const ParamStore* store_;
  mutable std::vector<Tensor> leaves_;
};

// Initialization schemes.
/// U(-a, a) with a = sqrt(3 / fan_in), i.e. variance 1/fan_in.
std::vector<double> init_fan_in_uniform(Rng& rng, std::size_t fan_in, std::size_t count);
std::vector<double> init_constant(std::size_t count, double value);

// Checkpoint file: "MMCKPT1", u64 count, then per parameter u64 name length,
// name bytes, u64 rank, u64 extents, little-endian float64 data.
std::string serialize_checkpoint(const ParamStore& store);
/// Loads into an existing store whose names and shapes must match exactly.
void deserialize_checkpoint(std::string_view bytes, ParamStore& store);
/// Every parameter stored in a checkpoint, in file order.
ParamStore checkpoint_contents(std::string_view bytes);
std::string read_checkpoint_bytes(const std::filesystem::path& path);
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
void load_checkpoint(const std::filesystem::path& path, ParamStore& store);

}  // namespace molmamba
