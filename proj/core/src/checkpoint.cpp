#include "dept/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace dept {

namespace {

void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

double Checkpoint::scalar(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t || t->size() != 1)
    throw std::runtime_error("missing checkpoint scalar: " + name);
  return t->data[0];
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f << "dept-ckpt v1\n";
  write_u64(f, arch.num_blocks);
  write_u64(f, arch.d_model);
  write_u64(f, arch.num_heads);
  write_u64(f, arch.expansion_ratio);
  write_u64(f, arch.seq_len);
  write_u64(f, arch.vocab_size);
  write_u64(f, tensors.size());
  for (const auto& [name, t] : tensors) {
    write_u64(f, name.size());
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(f, t.rows);
    write_u64(f, t.cols);
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  std::string magic;
  std::getline(f, magic);
  if (magic != "dept-ckpt v1")
    throw std::runtime_error("bad checkpoint header in " + path);
  Checkpoint c;
  c.arch.num_blocks = read_u64(f);
  c.arch.d_model = read_u64(f);
  c.arch.num_heads = read_u64(f);
  c.arch.expansion_ratio = read_u64(f);
  c.arch.seq_len = read_u64(f);
  c.arch.vocab_size = read_u64(f);
  const std::uint64_t count = read_u64(f);
  c.tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = read_u64(f);
    std::string name(name_len, '\0');
    f.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rows = read_u64(f);
    const std::uint64_t cols = read_u64(f);
    Tensor t(rows, cols);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!f) throw std::runtime_error("truncated checkpoint: " + path);
  return c;
}

void pack_params(Checkpoint& ckpt, const std::string& prefix,
                 const ModelParams& params) {
  for_each_tensor(const_cast<ModelParams&>(params),
                  [&](const std::string& name, Tensor& t, TensorGroup) {
                    ckpt.add(prefix + name, t);
                  });
}

ModelParams unpack_params(const Checkpoint& ckpt, const std::string& prefix,
                          const Architecture& arch) {
  ModelParams p = init_params(arch, 0);
  for_each_tensor(p, [&](const std::string& name, Tensor& t, TensorGroup) {
    const Tensor* src = ckpt.find(prefix + name);
    if (!src) throw std::runtime_error("checkpoint missing tensor: " + name);
    if (!src->same_shape(t))
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    t = *src;
  });
  return p;
}

}  // namespace dept
