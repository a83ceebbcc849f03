#pragma once

// Named parameter registry and the "PXG1" binary checkpoint format:
//
//   "PXG1"
//   repeated until EOF:
//     u64 name length, name bytes,
//     u64 rank, rank x u64 extents,
//     numel x f64 values
//
// All integers and floats are 64-bit little-endian.

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pfseg/tensor.hpp"

namespace pfseg {

struct NamedTensor {
  std::string name;
  Tensor value;
};

class ParameterStore {
 public:
  /// Registers `value` as a trainable leaf under `name`.
  Tensor& add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    value.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(value)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].value;
  }
  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ParameterStore&>(*this).get(name));
  }

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<NamedTensor>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& e : entries_) out.push_back(e.value);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
  }

  /// Overwrites every parameter from `records`. Names and shapes must match
  /// exactly; otherwise a ConfigError lists the differences.
  void assign(const std::vector<NamedTensor>& records) {
    std::map<std::string, const NamedTensor*> incoming;
    for (const auto& r : records) incoming[r.name] = &r;
    std::ostringstream diff;
    for (const auto& e : entries_) {
      auto it = incoming.find(e.name);
      if (it == incoming.end()) {
        diff << "\n  missing in checkpoint: " << e.name << ' ' << to_string(e.value.shape());
      } else if (it->second->value.shape() != e.value.shape()) {
        diff << "\n  shape mismatch: " << e.name << " model " << to_string(e.value.shape()) << " checkpoint "
             << to_string(it->second->value.shape());
      }
    }
    for (const auto& r : records) {
      if (!contains(r.name)) diff << "\n  unexpected in checkpoint: " << r.name << ' ' << to_string(r.value.shape());
    }
    if (!diff.str().empty()) throw ConfigError("checkpoint/config mismatch:" + diff.str());
    for (auto& e : entries_) {
      const auto src = incoming[e.name]->value.data();
      std::copy(src.begin(), src.end(), e.value.mutable_data().begin());
    }
  }

 private:
  std::vector<NamedTensor> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos));
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& params) {
  std::string out = "PXG1";
  for (const auto& p : params) {
    detail::put_u64(out, p.name.size());
    out += p.name;
    detail::put_u64(out, p.value.rank());
    for (auto e : p.value.shape()) detail::put_u64(out, e);
    for (double v : p.value.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "PXG1") != 0) throw FormatError("checkpoint: bad magic at byte 0");
  std::vector<NamedTensor> out;
  std::size_t pos = 4;
  while (pos < bytes.size()) {
    const std::size_t record_start = pos;
    const auto name_len = detail::get_u64(bytes, pos);
    if (name_len == 0 || pos + name_len > bytes.size()) {
      throw FormatError("checkpoint: bad name length at byte " + std::to_string(record_start));
    }
    std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    const auto rank = detail::get_u64(bytes, pos);
    if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad rank for '" + name + "' at byte " + std::to_string(pos - 8));
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(detail::get_u64(bytes, pos));
    std::vector<double> data(numel(shape));
    if (pos + 8 * data.size() > bytes.size()) {
      throw FormatError("checkpoint: data of '" + name + "' truncated at byte " + std::to_string(pos));
    }
    for (double& v : data) v = std::bit_cast<double>(detail::get_u64(bytes, pos));
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const ParameterStore& store) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint for writing: " + path);
  const std::string bytes = encode_checkpoint(store.entries());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("failed writing checkpoint: " + path);
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

inline void load_checkpoint(const std::string& path, ParameterStore& store) { store.assign(read_checkpoint(path)); }

}  // namespace pfseg
