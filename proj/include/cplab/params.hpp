#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cplab/ndarray.hpp"

namespace cplab {

class SeededRng;

struct ParamEntry {
  NdArray value;
  NdArray m;  // Adam first moment
  NdArray v;  // Adam second moment
  std::uint64_t step = 0;
};

// Named parameters plus per-entry optimizer state. Iteration order is the
// lexicographic order of names, which fixes the checkpoint byte layout.
class ParameterStore {
 public:
  NdArray& add(const std::string& name, NdArray init);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const NdArray& value(const std::string& name) const;
  // Overwrites values in place; the shape must not change.
  void set_value(const std::string& name, const NdArray& value);
  std::span<double> mutable_values(const std::string& name);

  const ParamEntry& entry(const std::string& name) const;
  ParamEntry& entry(const std::string& name);
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }
  std::map<std::string, ParamEntry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  std::map<std::string, ParamEntry> entries_;
};

// Glorot-uniform weight in +-sqrt(6 / (fan_in + fan_out)).
NdArray glorot_uniform(std::size_t fan_in, std::size_t fan_out, SeededRng& rng);

struct AdamHyper {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using GradMap = std::map<std::string, NdArray>;

// Bias-corrected Adam update. Entries without a gradient are left untouched.
void adam_step(ParameterStore& store, const GradMap& grads, const AdamHyper& hyper);

double grad_norm(const GradMap& grads);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'C', 'P', 'L', 'A', 'B', '0', '1', '\0'};

std::vector<std::uint8_t> serialize_checkpoint(const ParameterStore& store);
ParameterStore deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
// Writes to `path`.tmp then renames over `path`.
void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);
ParameterStore load_checkpoint(const std::filesystem::path& path);

}  // namespace cplab
