#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "masrc/binary_io.hpp"
#include "masrc/error.hpp"
#include "masrc/random.hpp"
#include "masrc/tensor.hpp"

namespace masrc {

using SlotId = std::size_t;

// One gradient tensor per slot, in slot order. Workers use these to compute
// per-window gradients that are later reduced in a fixed order.
template <typename S>
using GradBuffer = std::vector<Tensor<S>>;

template <typename S>
class ParamStore {
 public:
  SlotId add(std::string name, Shape shape) {
    require(!index_.contains(name), "duplicate parameter slot '" + name + "'");
    const SlotId id = names_.size();
    index_.emplace(name, id);
    names_.push_back(std::move(name));
    grads_.emplace_back(shape);
    values_.emplace_back(std::move(shape));
    return id;
  }

  std::size_t slot_count() const { return names_.size(); }
  const std::string& name(SlotId id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<SlotId> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  Tensor<S>& value(SlotId id) { return values_.at(id); }
  const Tensor<S>& value(SlotId id) const { return values_.at(id); }
  Tensor<S>& grad(SlotId id) { return grads_.at(id); }
  const Tensor<S>& grad(SlotId id) const { return grads_.at(id); }

  GradBuffer<S>& grads() { return grads_; }
  const GradBuffer<S>& grads() const { return grads_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  GradBuffer<S> make_grad_buffer() const {
    GradBuffer<S> buf;
    buf.reserve(values_.size());
    for (const auto& v : values_) buf.emplace_back(v.shape());
    return buf;
  }

  void zero_grad() {
    for (auto& g : grads_) g.fill(S{0});
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (SlotId id = 0; id < slot_count(); ++id) {
      out.add(names_[id], values_[id].shape());
      out.value(id) = values_[id].template cast<U>();
    }
    return out;
  }

  // Same slot names and shapes, in the same order.
  bool same_layout(const ParamStore& other) const {
    if (names_ != other.names_) return false;
    for (SlotId id = 0; id < slot_count(); ++id)
      if (values_[id].shape() != other.values_[id].shape()) return false;
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, SlotId> index_;
  std::vector<Tensor<S>> values_;
  std::vector<Tensor<S>> grads_;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <typename S>
void glorot_uniform(Tensor<S>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = static_cast<S>(rng.uniform(-bound, bound));
}

// Checkpoint layout (little-endian):
//   "MSCK" | u32 version=1 | u64 meta length | meta bytes (JSON text)
//   | u64 slot count | per slot: u32 name length, name bytes, u32 rank,
//   rank x u64 extents, numel x f32 values
inline constexpr char kCheckpointMagic[4] = {'M', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<S>& store,
                     const std::string& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write checkpoint '" + path.string() + "'");
  out.write(kCheckpointMagic, 4);
  binary::write_u32(out, kCheckpointVersion);
  binary::write_u64(out, meta.size());
  binary::write_bytes(out, meta);
  binary::write_u64(out, store.slot_count());
  for (SlotId id = 0; id < store.slot_count(); ++id) {
    const auto& name = store.name(id);
    const auto& value = store.value(id);
    binary::write_u32(out, static_cast<std::uint32_t>(name.size()));
    binary::write_bytes(out, name);
    binary::write_u32(out, static_cast<std::uint32_t>(value.rank()));
    for (auto e : value.shape()) binary::write_u64(out, e);
    for (auto v : value.values()) binary::write_f32(out, static_cast<float>(v));
  }
  if (!out) throw ValidationError("failed writing checkpoint '" + path.string() + "'");
}

struct CheckpointRecord {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  std::string meta;
  std::vector<CheckpointRecord> records;
};

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing checkpoint file '" + path.string() + "'");
  const std::string magic = binary::read_string(in, 4, "checkpoint magic");
  if (magic != std::string_view(kCheckpointMagic, 4))
    throw ValidationError("bad magic in checkpoint '" + path.string() + "'");
  const auto version = binary::read_u32(in, "checkpoint version");
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.meta = binary::read_string(in, binary::read_u64(in, "meta length"), "meta");
  const auto count = binary::read_u64(in, "slot count");
  for (std::uint64_t s = 0; s < count; ++s) {
    CheckpointRecord rec;
    rec.name = binary::read_string(in, binary::read_u32(in, "slot name length"), "slot name");
    const auto rank = binary::read_u32(in, "slot rank");
    Shape shape(rank);
    for (auto& e : shape) e = binary::read_u64(in, "slot extent");
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = binary::read_f32(in, "slot values");
    rec.value = Tensor<float>(std::move(shape), std::move(data));
    ck.records.push_back(std::move(rec));
  }
  return ck;
}

// Copies checkpoint values into a store whose layout was already built from
// the model configuration; any difference in slot names or shapes is an error
// naming the slot.
template <typename S>
void load_into(const Checkpoint& ck, ParamStore<S>& store) {
  if (ck.records.size() != store.slot_count())
    throw ValidationError("checkpoint has " + std::to_string(ck.records.size()) +
                          " slots, model expects " + std::to_string(store.slot_count()));
  for (SlotId id = 0; id < store.slot_count(); ++id) {
    const auto& rec = ck.records[id];
    if (rec.name != store.name(id))
      throw ValidationError("checkpoint slot " + std::to_string(id) + " is '" + rec.name +
                            "', model expects '" + store.name(id) + "'");
    if (rec.value.shape() != store.value(id).shape())
      throw ValidationError("shape mismatch for slot '" + rec.name + "': checkpoint has " +
                            shape_string(rec.value.shape()) + ", model expects " +
                            shape_string(store.value(id).shape()));
    store.value(id) = rec.value.template cast<S>();
  }
}

}  // namespace masrc
