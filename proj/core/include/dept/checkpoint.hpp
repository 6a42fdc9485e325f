#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dept/model.hpp"

namespace dept {

// Versioned checkpoint container: header "dept-ckpt v1", an architecture
// record, then named tensors as (name, shape, row-major 64-bit
// little-endian floats). Entries beyond the model parameters (optimizer
// moments, private source embeddings, counters) are plain named tensors.
struct Checkpoint {
  Architecture arch;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(std::string name, Tensor t) {
    tensors.emplace_back(std::move(name), std::move(t));
  }
  void add_scalar(std::string name, double v) {
    Tensor t(1, 1);
    t.data[0] = v;
    add(std::move(name), std::move(t));
  }
  const Tensor* find(const std::string& name) const;
  double scalar(const std::string& name) const;
  bool has(const std::string& name) const { return find(name) != nullptr; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// Pack/unpack model parameters with a name prefix ("" for the global model).
void pack_params(Checkpoint& ckpt, const std::string& prefix,
                 const ModelParams& params);
ModelParams unpack_params(const Checkpoint& ckpt, const std::string& prefix,
                          const Architecture& arch);

}  // namespace dept
