#include "dragtraffic/nn/params.hpp"

#include <cstring>

#include "dragtraffic/error.hpp"

namespace dragtraffic::nn {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
}

}  // namespace

void ParamStore::add(std::string name, std::string group, Tensor value) {
  if (contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
  params_.emplace(std::move(name), Parameter{std::move(value), std::move(group)});
}

const Tensor& ParamStore::value(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw NotFoundError("unknown parameter '" + std::string(name) + "'");
  return it->second.value;
}

Tensor& ParamStore::value(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw NotFoundError("unknown parameter '" + std::string(name) + "'");
  return it->second.value;
}

const std::string& ParamStore::group(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw NotFoundError("unknown parameter '" + std::string(name) + "'");
  return it->second.group;
}

void ParamStore::set_frozen(const std::string& group, bool frozen) {
  if (frozen) {
    frozen_.insert(group);
  } else {
    frozen_.erase(group);
  }
}

std::set<std::string> ParamStore::groups() const {
  std::set<std::string> out;
  for (const auto& [_, p] : params_) out.insert(p.group);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

std::uint64_t ParamStore::checksum(const std::optional<std::string>& group) const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, p] : params_) {
    if (group && p.group != *group) continue;
    fnv_mix(h, name.data(), name.size());
    fnv_mix(h, p.value.raw(), p.value.size() * sizeof(double));
  }
  return h;
}

}  // namespace dragtraffic::nn
