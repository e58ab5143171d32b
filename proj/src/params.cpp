#include "slotgen/model/params.hpp"

#include "slotgen/core/image.hpp"

#include <cmath>
#include <stdexcept>

namespace slotgen::model {

ag::Var ParamStore::create(const std::string& name, Tensor init, Group group,
                           bool trainable, bool cross_attention_kvo) {
  if (map_.count(name)) throw std::runtime_error("duplicate parameter: " + name);
  ParamInfo info;
  info.var = ag::leaf(std::move(init), trainable, name);
  info.group = group;
  info.trainable = trainable;
  info.cross_attention_kvo = cross_attention_kvo;
  order_.push_back(name);
  map_.emplace(name, info);
  return map_.at(name).var;
}

ag::Var ParamStore::get(const std::string& name) const {
  const auto it = map_.find(name);
  if (it == map_.end()) throw std::runtime_error("unknown parameter: " + name);
  return it->second.var;
}

ag::Var ParamStore::get(const std::string& name, bool detached) const {
  const ag::Var v = get(name);
  return detached ? ag::detach(v) : v;
}

const ParamInfo& ParamStore::info(const std::string& name) const {
  const auto it = map_.find(name);
  if (it == map_.end()) throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

ParamInfo& ParamStore::info(const std::string& name) {
  const auto it = map_.find(name);
  if (it == map_.end()) throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (const auto& name : order_) map_.at(name).var->zero_grad();
}

uint64_t ParamStore::checksum() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& name : order_) {
    const auto& t = map_.at(name).var->value;
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.v.data(), t.v.size() * sizeof(real), h);
  }
  return h;
}

Tensor normal_init(std::vector<int> shape, real stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.v) x = rng.normal() * stddev;
  return t;
}

Tensor kaiming_conv_init(int out_c, int in_c, int kh, int kw, Rng& rng) {
  const real stddev = std::sqrt(real(2) / (in_c * kh * kw));
  return normal_init({out_c, in_c, kh, kw}, stddev, rng);
}

Tensor linear_init(int out_f, int in_f, Rng& rng) {
  const real stddev = std::sqrt(real(1) / in_f);
  return normal_init({out_f, in_f}, stddev, rng);
}

}  // namespace slotgen::model
