#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fedsn/field.hpp"

namespace fedsn {

/// Ordered collection of named parameter tensors.
template <std::floating_point T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Field<T> field;
  };

  Field<T>& add(std::string name, Field<T> field) {
    if (index_.contains(name)) throw std::invalid_argument("ParameterSet: duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(field)});
    return entries_.back().field;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Field<T>& at(const std::string& name) { return entries_[position(name)].field; }
  const Field<T>& at(const std::string& name) const { return entries_[position(name)].field; }

  std::size_t position(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParameterSet: no parameter '" + name + "'");
    return it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.field.size();
    return n;
  }

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  /// Same names, order and shapes.
  bool congruent(const ParameterSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name ||
          entries_[i].field.shape() != other.entries_[i].field.shape()) {
        return false;
      }
    }
    return true;
  }

  /// Bitwise equality of names, shapes and values.
  bool same_values(const ParameterSet& other) const {
    if (!congruent(other)) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!entries_[i].field.same_values(other.entries_[i].field)) return false;
    }
    return true;
  }

  void set_requires_grad(bool on) {
    for (auto& e : entries_) e.field.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& e : entries_) e.field.zero_grad();
  }
  void clear_grad() {
    for (auto& e : entries_) e.field.clear_grad();
  }

  /// Values only; requires_grad flags and gradients are dropped.
  ParameterSet detached() const {
    ParameterSet out;
    for (const auto& e : entries_) out.add(e.name, Field<T>(e.field.shape(), std::vector<T>(e.field.values().begin(), e.field.values().end())));
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   "FEDSNCKP"  u32 version  u32 count
//   count x { u32 name_len, name bytes, u32 rank, u64 dims[rank], f64 values[prod(dims)] }

inline constexpr char kCheckpointMagic[8] = {'F', 'E', 'D', 'S', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& is, const char* what) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) {
    throw std::runtime_error(std::string("truncated stream while reading ") + what);
  }
  return v;
}

}  // namespace io

template <std::floating_point T>
void write_checkpoint(std::ostream& os, const ParameterSet<T>& params) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  io::put<std::uint32_t>(os, kCheckpointVersion);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.field.rank()));
    for (std::size_t d : e.field.shape()) io::put<std::uint64_t>(os, d);
    for (T v : e.field.values()) io::put<double>(os, static_cast<double>(v));
  }
  if (!os) throw std::runtime_error("write_checkpoint: stream error");
}

template <std::floating_point T>
ParameterSet<T> read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("read_checkpoint: bad magic");
  }
  const auto version = io::get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("read_checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = io::get<std::uint32_t>(is, "entry count");
  ParameterSet<T> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::get<std::uint32_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("read_checkpoint: truncated name");
    const auto rank = io::get<std::uint32_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(io::get<std::uint64_t>(is, "dims"));
    std::vector<T> values(shape_volume(shape));
    for (auto& v : values) v = static_cast<T>(io::get<double>(is, "values"));
    out.add(std::move(name), Field<T>(std::move(shape), std::move(values)));
  }
  return out;
}

template <std::floating_point T>
void save_checkpoint(const std::string& path, const ParameterSet<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(os, params);
}

template <std::floating_point T>
ParameterSet<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_checkpoint<T>(is);
}

}  // namespace fedsn
