// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedcache/parameter_set.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "fedcache/error.hpp"

namespace fedcache {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'P', 'M'};

template <class T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
bool get_le(std::istream& in, T& value) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) return false;
  value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return true;
}

template <class T>
T require_le(std::istream& in, const char* what) {
  T value;
  if (!get_le(in, value)) throw FormatError(std::string("truncated parameter file while reading ") + what);
  return value;
}

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
}

}  // namespace

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Tensor grad(value.shape());
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), std::move(grad)});
  return entries_.size() - 1;
}

std::size_t ParameterSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? entries_.size() : it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  const auto i = index_of(name);
  if (i == size()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[i];
}

const Parameter& ParameterSet::at(const std::string& name) const {
  const auto i = index_of(name);
  if (i == size()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[i];
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.grad.fill(Real(0));
}

bool ParameterSet::same_structure(const ParameterSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].value.shape() != other.entries_[i].value.shape()) {
      return false;
    }
  }
  return true;
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& e : entries_) {
    fnv_mix(h, e.name.data(), e.name.size());
    for (auto d : e.value.shape()) {
      const std::uint64_t d64 = d;
      fnv_mix(h, &d64, sizeof d64);
    }
    fnv_mix(h, e.value.raw(), e.value.size() * sizeof(Real));
  }
  return h;
}

bool ParameterSet::values_equal(const ParameterSet& other) const {
  if (!same_structure(other)) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = entries_[i].value;
    const auto& b = other.entries_[i].value;
    if (std::memcmp(a.raw(), b.raw(), a.size() * sizeof(Real)) != 0) return false;
  }
  return true;
}

std::string checksum_hex(std::uint64_t checksum) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[checksum & 0xF];
    checksum >>= 4;
  }
  return out;
}

void write_parameters(const ParameterSet& params, std::ostream& out) {
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kParameterFormatVersion);
  for (const auto& e : params.entries()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) put_le<std::uint64_t>(out, d);
    for (Real v : e.value.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  }
  if (!out) throw IoError("failed writing parameter stream");
}

ParameterSet read_parameters(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not a parameter file (bad magic)");
  }
  const auto version = require_le<std::uint32_t>(in, "version");
  if (version != kParameterFormatVersion) {
    throw FormatError("unsupported parameter format version " + std::to_string(version));
  }
  ParameterSet params;
  for (;;) {
    std::uint32_t name_len;
    if (!get_le(in, name_len)) break;
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("truncated parameter name");
    const auto rank = require_le<std::uint32_t>(in, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(require_le<std::uint64_t>(in, "dimension"));
    Tensor value(shape);
    for (auto& v : value.values()) v = static_cast<Real>(std::bit_cast<double>(require_le<std::uint64_t>(in, "value")));
    params.add(std::move(name), std::move(value));
  }
  return params;
}

void save_parameters(const ParameterSet& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_parameters(params, out);
}

ParameterSet load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_parameters(in);
}

}  // namespace fedcache
