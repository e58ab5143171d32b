#include "slotgen/harness/checkpoint.hpp"

#include "slotgen/core/errors.hpp"

#include <cstring>
#include <fstream>

namespace slotgen::harness {

namespace {

constexpr char kMagic[8] = {'S', 'G', 'C', 'P', '0', '0', '0', '1'};

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_string(std::istream& is) {
  const uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}
void write_tensor(std::ostream& os, const Tensor& t) {
  write_u64(os, t.shape.size());
  for (int d : t.shape) write_u64(os, static_cast<uint64_t>(d));
  os.write(reinterpret_cast<const char*>(t.v.data()),
           static_cast<std::streamsize>(t.v.size() * sizeof(real)));
}
Tensor read_tensor(std::istream& is) {
  const uint64_t nd = read_u64(is);
  std::vector<int> shape(nd);
  for (auto& d : shape) d = static_cast<int>(read_u64(is));
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.v.data()),
          static_cast<std::streamsize>(t.v.size() * sizeof(real)));
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const ExperimentConfig& config, int step,
                     uint64_t train_seed, const model::Pipeline& pipe,
                     const std::map<std::string, train::AdamSlot>& adam,
                     int64_t adam_steps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_string(os, serialize_config(config));
  write_u64(os, static_cast<uint64_t>(step));
  write_u64(os, train_seed);
  write_u64(os, static_cast<uint64_t>(adam_steps));

  const auto& names = pipe.store.names();
  write_u64(os, names.size());
  for (const auto& name : names) {
    write_string(os, name);
    write_tensor(os, pipe.store.get(name)->value);
  }
  write_u64(os, adam.size());
  for (const auto& [name, slot] : adam) {
    write_string(os, name);
    write_tensor(os, slot.m);
    write_tensor(os, slot.v);
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ValidationError("not a checkpoint file: " + path);

  Checkpoint ck;
  ck.config = parse_config_string(read_string(is));
  ck.step = static_cast<int>(read_u64(is));
  ck.train_seed = read_u64(is);
  ck.adam_steps = static_cast<int64_t>(read_u64(is));

  model::ModelConfig mc = ck.config.to_model_config();
  mc.init_seed = mix_seed(ck.train_seed, ck.config.model.init_seed);
  ck.pipeline = std::make_unique<model::Pipeline>(mc);

  const uint64_t n_params = read_u64(is);
  for (uint64_t i = 0; i < n_params; ++i) {
    const std::string name = read_string(is);
    Tensor t = read_tensor(is);
    if (!ck.pipeline->store.has(name))
      throw ValidationError("checkpoint parameter not in model: " + name);
    auto var = ck.pipeline->store.get(name);
    if (var->value.shape != t.shape)
      throw ValidationError("checkpoint shape mismatch for " + name);
    var->value = std::move(t);
  }
  const uint64_t n_adam = read_u64(is);
  for (uint64_t i = 0; i < n_adam; ++i) {
    const std::string name = read_string(is);
    train::AdamSlot slot;
    slot.m = read_tensor(is);
    slot.v = read_tensor(is);
    ck.adam.emplace(name, std::move(slot));
  }
  if (!is) throw ValidationError("truncated checkpoint: " + path);
  return ck;
}

}  // namespace slotgen::harness
