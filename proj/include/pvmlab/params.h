#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>

#include "pvmlab/tensor.h"

namespace pvmlab {

// Named parameters, iterated in sorted-name order so checkpoints and
// optimizer state are laid out deterministically.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::size_t erase_prefix(std::string_view prefix);
  void set_trainable(std::string_view prefix, bool trainable);

  std::size_t scalar_count() const;
  std::size_t scalar_count(std::string_view prefix) const;

  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all() { return params_; }

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace pvmlab
