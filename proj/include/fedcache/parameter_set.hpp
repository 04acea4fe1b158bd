// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedcache/tensor.hpp"

namespace fedcache {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Ordered, uniquely named collection of trainable tensors with their
/// accumulated gradients. Copying a set deep-copies every tensor, which is
/// how clients obtain private replicas of the broadcast model.
class ParameterSet {
 public:
  /// Appends a parameter; its gradient starts at zero. Names must be unique.
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const noexcept;

  /// Index of `name`, or size() when absent.
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_of(name) != size(); }

  Parameter& at(std::size_t i) { return entries_.at(i); }
  const Parameter& at(std::size_t i) const { return entries_.at(i); }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  std::span<Parameter> entries() noexcept { return entries_; }
  std::span<const Parameter> entries() const noexcept { return entries_; }

  void zero_grad();

  /// Same names, order and shapes.
  bool same_structure(const ParameterSet& other) const;

  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const;

  /// Bitwise equality of names, shapes and values; gradients ignored.
  bool values_equal(const ParameterSet& other) const;

 private:
  std::vector<Parameter> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::string checksum_hex(std::uint64_t checksum);

// Binary layout, all integers little-endian:
//   "FLPM" | u32 version
//   repeated until EOF:
//     u32 name length | name bytes | u32 rank | u64 dim x rank | f64 value x numel
inline constexpr std::uint32_t kParameterFormatVersion = 1;

void write_parameters(const ParameterSet& params, std::ostream& out);
ParameterSet read_parameters(std::istream& in);
void save_parameters(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet load_parameters(const std::filesystem::path& path);

}  // namespace fedcache
