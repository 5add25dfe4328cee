#include "cdd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cdd/error.hpp"

namespace cdd {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at offset " + std::to_string(pos_) + " while reading " + what + " (need " +
                        std::to_string(n) + " bytes, " + std::to_string(b_.size() - pos_) + " left)");
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(std::size_t n) {
    need(n, "tensor name");
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void put_tensor(Writer& w, const std::string& name, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.values()) w.f64(v);
}

}  // namespace

std::vector<std::uint8_t> save_checkpoint(const AdaptedModel& model, std::uint64_t config_hash) {
  for (const auto& [name, t] : model.params) {
    if (!t.all_finite()) throw NumericError("refusing to save non-finite parameter '" + name + "'");
  }
  const Arch& a = model.arch;
  Tensor arch({8}, {static_cast<double>(a.data_dim), static_cast<double>(a.cond_dim), static_cast<double>(a.hidden),
                    static_cast<double>(a.layers), static_cast<double>(a.encoder_layers),
                    static_cast<double>(a.time_freqs), a.activation == Activation::silu ? 0.0 : 1.0,
                    a.per_level_gate ? 1.0 : 0.0});
  Tensor frozen({std::max<std::size_t>(model.params.size(), 1)}, 0.0);
  std::size_t i = 0;
  for (const auto& [name, _] : model.params) frozen[i++] = model.frozen.count(name) ? 1.0 : 0.0;

  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.params.size() + 2));
  put_tensor(w, "meta.arch", arch);
  put_tensor(w, "meta.frozen", frozen);
  for (const auto& [name, t] : model.params) put_tensor(w, name, t);
  w.u64(config_hash);
  return w.take();
}

Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint: expected magic \"CDDK\"");
  }
  r.str(4);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32("tensor count");
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = r.u32("name length");
    std::string name = r.str(len);
    const std::uint32_t ndim = r.u32("ndim");
    if (ndim == 0 || ndim > 2) {
      throw FormatError("tensor '" + name + "' has unsupported rank " + std::to_string(ndim) + " at offset " +
                        std::to_string(r.offset()));
    }
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(r.u32("dims"));
      numel *= shape.back();
    }
    if (numel == 0) throw FormatError("tensor '" + name + "' has a zero dimension");
    r.need(numel * 8, "payload");
    std::vector<double> data(numel);
    for (auto& v : data) v = r.f64("payload");
    if (!tensors.emplace(name, Tensor(shape, std::move(data))).second) {
      throw FormatError("duplicate tensor '" + name + "' in checkpoint");
    }
  }
  Checkpoint ck;
  ck.config_hash = r.u64("config hash");
  if (!r.done()) throw FormatError("trailing bytes after config hash at offset " + std::to_string(r.offset()));

  auto arch_it = tensors.find("meta.arch");
  auto frozen_it = tensors.find("meta.frozen");
  if (arch_it == tensors.end() || frozen_it == tensors.end() || arch_it->second.size() != 8) {
    throw FormatError("checkpoint lacks meta.arch / meta.frozen");
  }
  const Tensor& a = arch_it->second;
  Arch& arch = ck.model.arch;
  arch.data_dim = static_cast<std::size_t>(a[0]);
  arch.cond_dim = static_cast<std::size_t>(a[1]);
  arch.hidden = static_cast<std::size_t>(a[2]);
  arch.layers = static_cast<std::size_t>(a[3]);
  arch.encoder_layers = static_cast<std::size_t>(a[4]);
  arch.time_freqs = static_cast<std::size_t>(a[5]);
  arch.activation = a[6] == 0.0 ? Activation::silu : Activation::tanh;
  arch.per_level_gate = a[7] != 0.0;
  const Tensor frozen = frozen_it->second;
  tensors.erase("meta.arch");
  tensors.erase("meta.frozen");
  ck.model.params = std::move(tensors);
  if (frozen.size() != std::max<std::size_t>(ck.model.params.size(), 1)) {
    throw FormatError("meta.frozen has " + std::to_string(frozen.size()) + " flags for " +
                      std::to_string(ck.model.params.size()) + " parameters");
  }
  std::size_t i = 0;
  for (const auto& [name, _] : ck.model.params) {
    if (frozen[i++] != 0.0) ck.model.frozen.insert(name);
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const AdaptedModel& model, std::uint64_t config_hash) {
  const auto bytes = save_checkpoint(model, config_hash);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return load_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace cdd
