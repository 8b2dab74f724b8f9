#pragma once

// Binary checkpoints.
//
//   "MKDCKPT1"                       8-byte magic
//   u32 version
//   u32 record count
//   record*:
//     u32 name length, name bytes
//     u8 kind                        0 = f64 array, 1 = text
//     array: u32 ndim, u64 dims[ndim], f64 values[prod(dims)]
//     text:  u64 length, bytes
//
// Integers and floats are little-endian. Records keep insertion order, so
// save -> load -> save reproduces the file byte for byte.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mkd/errors.hpp"
#include "mkd/models.hpp"
#include "mkd/optim.hpp"
#include "mkd/tensor.hpp"

namespace mkd {

inline constexpr char kCheckpointMagic[8] = {'M', 'K', 'D', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  bool text = false;
  Shape shape;
  std::vector<double> values;
  std::string str;
};

class Checkpoint {
 public:
  void put(const std::string& name, const Tensor& t) { put(name, t.shape(), t.values()); }

  void put(const std::string& name, Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) throw DimensionError("checkpoint '" + name + "': shape/size mismatch");
    CheckpointRecord& r = slot(name);
    r.text = false;
    r.shape = std::move(shape);
    r.values = std::move(values);
    r.str.clear();
  }

  void put_scalar(const std::string& name, double v) { put(name, Shape{}, {v}); }

  void put_text(const std::string& name, std::string s) {
    CheckpointRecord& r = slot(name);
    r.text = true;
    r.shape.clear();
    r.values.clear();
    r.str = std::move(s);
  }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  const CheckpointRecord& record(const std::string& name) const {
    const CheckpointRecord* r = find(name);
    if (!r) throw FormatError("checkpoint: missing record '" + name + "'");
    return *r;
  }

  Tensor tensor(const std::string& name) const {
    const auto& r = record(name);
    if (r.text) throw FormatError("checkpoint: record '" + name + "' is text, expected an array");
    return Tensor(r.shape, r.values);
  }

  double scalar(const std::string& name) const {
    const auto& r = record(name);
    if (r.text || r.values.size() != 1) throw FormatError("checkpoint: record '" + name + "' is not a scalar");
    return r.values[0];
  }

  const std::string& text(const std::string& name) const {
    const auto& r = record(name);
    if (!r.text) throw FormatError("checkpoint: record '" + name + "' is not text");
    return r.str;
  }

  const std::vector<CheckpointRecord>& records() const { return records_; }

  std::vector<unsigned char> serialize() const;
  static Checkpoint deserialize(const std::vector<unsigned char>& bytes, const std::string& origin = "buffer");

 private:
  CheckpointRecord& slot(const std::string& name) {
    for (auto& r : records_)
      if (r.name == name) return r;
    records_.push_back({name, false, {}, {}, {}});
    return records_.back();
  }
  const CheckpointRecord* find(const std::string& name) const {
    for (const auto& r : records_)
      if (r.name == name) return &r;
    return nullptr;
  }

  std::vector<CheckpointRecord> records_;
};

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
  }
  void bytes(const void* p, std::size_t n) {
    auto c = static_cast<const unsigned char*>(p);
    out.insert(out.end(), c, c + n);
  }
  std::vector<unsigned char> out;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& b, std::string origin) : b_(b), origin_(std::move(origin)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &b_[pos_], sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(&b_[pos_]), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) {
    if (b_.size() - pos_ < n) {
      throw LengthError("checkpoint " + origin_ + ": truncated at byte " + std::to_string(pos_));
    }
  }
  const std::vector<unsigned char>& b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> Checkpoint::serialize() const {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 8);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(records_.size()));
  for (const auto& r : records_) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.put<std::uint8_t>(r.text ? 1 : 0);
    if (r.text) {
      w.put<std::uint64_t>(r.str.size());
      w.bytes(r.str.data(), r.str.size());
    } else {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(r.shape.size()));
      for (auto d : r.shape) w.put<std::uint64_t>(d);
      for (double v : r.values) w.put<double>(v);
    }
  }
  return std::move(w.out);
}

inline Checkpoint Checkpoint::deserialize(const std::vector<unsigned char>& bytes, const std::string& origin) {
  detail::ByteReader r(bytes, origin);
  if (r.str(8) != std::string(kCheckpointMagic, 8)) throw FormatError("checkpoint " + origin + ": bad magic");
  auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + origin + ": unsupported version " + std::to_string(version));
  }
  auto count = r.get<std::uint32_t>();
  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    rec.name = r.str(r.get<std::uint32_t>());
    auto kind = r.get<std::uint8_t>();
    if (kind == 1) {
      rec.text = true;
      rec.str = r.str(r.get<std::uint64_t>());
    } else if (kind == 0) {
      auto ndim = r.get<std::uint32_t>();
      for (std::uint32_t k = 0; k < ndim; ++k) rec.shape.push_back(r.get<std::uint64_t>());
      rec.values.resize(shape_numel(rec.shape));
      for (double& v : rec.values) v = r.get<double>();
    } else {
      throw FormatError("checkpoint " + origin + ": unknown record kind " + std::to_string(kind));
    }
    if (c.contains(rec.name)) throw FormatError("checkpoint " + origin + ": duplicate record '" + rec.name + "'");
    c.records_.push_back(std::move(rec));
  }
  if (!r.done()) throw FormatError("checkpoint " + origin + ": trailing bytes after last record");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  auto bytes = c.serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error while writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return Checkpoint::deserialize(bytes, "'" + path + "'");
}

// Model and optimizer helpers --------------------------------------------

inline std::string describe_mlp(const MlpConfig& c) {
  std::string s = "mlp input=" + std::to_string(c.input_dim) + " hidden=";
  for (std::size_t i = 0; i < c.hidden_dims.size(); ++i) s += (i ? "," : "") + std::to_string(c.hidden_dims[i]);
  return s + " output=" + std::to_string(c.output_dim);
}

inline void put_mlp(Checkpoint& c, const std::string& prefix, const MlpParams& p) {
  c.put_text(prefix + ".config", describe_mlp(p.config));
  std::vector<double> widths;
  for (auto w : p.config.widths()) widths.push_back(static_cast<double>(w));
  c.put(prefix + ".widths", Shape{widths.size()}, widths);
  auto names = p.names();
  for (std::size_t i = 0; i < p.tensors.size(); ++i) c.put(prefix + "." + names[i], p.tensors[i]);
}

inline MlpParams get_mlp(const Checkpoint& c, const std::string& prefix, bool trainable) {
  Tensor w = c.tensor(prefix + ".widths");
  if (w.numel() < 2) throw FormatError("checkpoint: '" + prefix + ".widths' needs at least 2 entries");
  MlpConfig cfg;
  cfg.input_dim = static_cast<std::size_t>(w[0]);
  cfg.output_dim = static_cast<std::size_t>(w[w.numel() - 1]);
  for (std::size_t i = 1; i + 1 < w.numel(); ++i) cfg.hidden_dims.push_back(static_cast<std::size_t>(w[i]));
  cfg.validate();
  MlpParams p;
  p.config = cfg;
  auto names = MlpParams{cfg, std::vector<Tensor>(2 * (cfg.hidden_dims.size() + 1))}.names();
  auto widths = cfg.widths();
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    Tensor weight = c.tensor(prefix + "." + names[2 * k]);
    Tensor bias = c.tensor(prefix + "." + names[2 * k + 1]);
    if (weight.shape() != Shape{widths[k], widths[k + 1]} || bias.shape() != Shape{widths[k + 1]}) {
      throw FormatError("checkpoint: layer " + std::to_string(k) + " of '" + prefix + "' has wrong shape");
    }
    if (trainable) {
      weight.requires_grad_();
      bias.requires_grad_();
    }
    p.tensors.push_back(weight);
    p.tensors.push_back(bias);
  }
  return p;
}

inline void put_meta(Checkpoint& c, const MetaParams& m) {
  c.put_scalar("meta.tau_init", m.tau_init);
  auto names = MetaParams::names();
  auto ts = m.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) c.put(names[i], ts[i]);
}

inline MetaParams get_meta(const Checkpoint& c) {
  MetaParams m = meta_init(c.scalar("meta.tau_init"), 0);
  auto names = MetaParams::names();
  Tensor* slots[] = {&m.embedding, &m.w1, &m.b1, &m.w2, &m.b2};
  for (std::size_t i = 0; i < names.size(); ++i) {
    Tensor t = c.tensor(names[i]);
    if (t.shape() != slots[i]->shape()) throw FormatError("checkpoint: '" + names[i] + "' has wrong shape");
    *slots[i] = t.requires_grad_();
  }
  return m;
}

inline void put_buffers(Checkpoint& c, const std::string& prefix, const std::vector<std::vector<double>>& bufs) {
  c.put_scalar(prefix + ".count", static_cast<double>(bufs.size()));
  for (std::size_t i = 0; i < bufs.size(); ++i) c.put(prefix + "." + std::to_string(i), Shape{bufs[i].size()}, bufs[i]);
}

inline std::vector<std::vector<double>> get_buffers(const Checkpoint& c, const std::string& prefix) {
  auto n = static_cast<std::size_t>(c.scalar(prefix + ".count"));
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(c.record(prefix + "." + std::to_string(i)).values);
  return out;
}

inline void put_sgd(Checkpoint& c, const std::string& prefix, const SgdState& s) {
  c.put(prefix + ".hyper", Shape{3}, {s.lr, s.momentum, s.weight_decay});
  put_buffers(c, prefix + ".velocity", s.velocity);
}

inline SgdState get_sgd(const Checkpoint& c, const std::string& prefix) {
  Tensor h = c.tensor(prefix + ".hyper");
  SgdState s{h[0], h[1], h[2], get_buffers(c, prefix + ".velocity")};
  return s;
}

inline void put_adamw(Checkpoint& c, const std::string& prefix, const AdamWState& a) {
  c.put(prefix + ".hyper", Shape{5}, {a.lr, a.beta1, a.beta2, a.eps, a.weight_decay});
  c.put_scalar(prefix + ".t", static_cast<double>(a.t));
  put_buffers(c, prefix + ".m", a.m);
  put_buffers(c, prefix + ".v", a.v);
}

inline AdamWState get_adamw(const Checkpoint& c, const std::string& prefix) {
  Tensor h = c.tensor(prefix + ".hyper");
  AdamWState a;
  a.lr = h[0];
  a.beta1 = h[1];
  a.beta2 = h[2];
  a.eps = h[3];
  a.weight_decay = h[4];
  a.t = static_cast<std::uint64_t>(c.scalar(prefix + ".t"));
  a.m = get_buffers(c, prefix + ".m");
  a.v = get_buffers(c, prefix + ".v");
  return a;
}

inline void put_student_optimizer(Checkpoint& c, const std::string& prefix, const StudentOptimizer& opt) {
  if (const auto* a = std::get_if<AdamWState>(&opt)) {
    c.put_text(prefix + ".kind", "adamw");
    put_adamw(c, prefix, *a);
  } else {
    c.put_text(prefix + ".kind", "sgd");
    put_sgd(c, prefix, std::get<SgdState>(opt));
  }
}

inline StudentOptimizer get_student_optimizer(const Checkpoint& c, const std::string& prefix) {
  const std::string& kind = c.text(prefix + ".kind");
  if (kind == "sgd") return get_sgd(c, prefix);
  if (kind == "adamw") return get_adamw(c, prefix);
  throw FormatError("checkpoint: unknown optimizer kind '" + kind + "'");
}

inline void put_meta_optimizer(Checkpoint& c, const MetaOptimizer& opt) {
  if (const auto* a = std::get_if<AdamWState>(&opt)) {
    c.put_text("meta_opt.kind", "adamw");
    put_adamw(c, "meta_opt", *a);
  } else {
    c.put_text("meta_opt.kind", "gd");
    c.put_scalar("meta_opt.lr", std::get<PlainGradientState>(opt).lr);
  }
}

inline MetaOptimizer get_meta_optimizer(const Checkpoint& c) {
  if (c.text("meta_opt.kind") == "gd") return PlainGradientState{c.scalar("meta_opt.lr")};
  return get_adamw(c, "meta_opt");
}

}  // namespace mkd
