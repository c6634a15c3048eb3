#include "pvmlab/params.h"

#include "pvmlab/error.h"

namespace pvmlab {

Tensor& ParameterStore::add(const std::string& name, Tensor tensor) {
  auto [it, inserted] = params_.emplace(name, std::move(tensor));
  if (!inserted) fail("DUPLICATE_PARAMETER", "parameter '" + name + "' already registered");
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail("UNKNOWN_PARAMETER", "no parameter named '" + name + "'");
  return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) fail("UNKNOWN_PARAMETER", "no parameter named '" + name + "'");
  return it->second;
}

std::size_t ParameterStore::erase_prefix(std::string_view prefix) {
  return std::erase_if(params_, [&](const auto& kv) { return kv.first.starts_with(prefix); });
}

void ParameterStore::set_trainable(std::string_view prefix, bool trainable) {
  for (auto& [name, t] : params_)
    if (name.starts_with(prefix)) t.set_requires_grad(trainable);
}

std::size_t ParameterStore::scalar_count() const { return scalar_count(""); }

std::size_t ParameterStore::scalar_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_)
    if (name.starts_with(prefix)) n += t.size();
  return n;
}

}  // namespace pvmlab
