#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "dragtraffic/nn/tensor.hpp"

namespace dragtraffic::nn {

struct Parameter {
  Tensor value;
  std::string group;
};

/// Gradients keyed by parameter name. Frozen parameters never appear.
using Gradients = std::map<std::string, Tensor, std::less<>>;

/// Named parameter tensors organised in groups. A frozen group keeps its
/// values: it gets no gradients and the optimizer skips it.
class ParamStore {
 public:
  void add(std::string name, std::string group, Tensor value);

  bool contains(std::string_view name) const { return params_.find(name) != params_.end(); }
  const Tensor& value(std::string_view name) const;
  Tensor& value(std::string_view name);
  const std::string& group(std::string_view name) const;

  void set_frozen(const std::string& group, bool frozen);
  bool group_frozen(const std::string& group) const { return frozen_.count(group) != 0; }
  bool frozen(std::string_view name) const { return group_frozen(group(name)); }
  const std::set<std::string>& frozen_groups() const { return frozen_; }

  const std::map<std::string, Parameter, std::less<>>& entries() const { return params_; }
  std::set<std::string> groups() const;
  std::size_t scalar_count() const;

  /// FNV-1a over names and raw bytes; restricted to one group when given.
  std::uint64_t checksum(const std::optional<std::string>& group = std::nullopt) const;

 private:
  std::map<std::string, Parameter, std::less<>> params_;
  std::set<std::string> frozen_;
};

}  // namespace dragtraffic::nn
