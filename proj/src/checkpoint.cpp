#include "posecl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "posecl/errors.hpp"

namespace posecl {

namespace {

constexpr char kMagic[8] = {'P', 'O', 'S', 'E', 'C', 'L', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

class Writer {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void i32(std::int32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (auto d : t.shape()) u64(d);
    raw(t.data().data(), t.size() * sizeof(double));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  void raw(void* p, std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_)
      throw FormatError("checkpoint truncated at byte offset " + std::to_string(pos_) + " while reading " + what);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8(const char* what) { std::uint8_t v; raw(&v, 1, what); return v; }
  std::uint32_t u32(const char* what) { std::uint32_t v; raw(&v, 4, what); return v; }
  std::int32_t i32(const char* what) { std::int32_t v; raw(&v, 4, what); return v; }
  std::uint64_t u64(const char* what) { std::uint64_t v; raw(&v, 8, what); return v; }
  double f64(const char* what) { double v; raw(&v, 8, what); return v; }

  /// A length prefix that cannot exceed the remaining bytes.
  std::uint64_t count(const char* what, std::size_t unit = 1) {
    const auto at = pos_;
    const auto n = u64(what);
    if (unit && n > (bytes_.size() - pos_) / unit)
      throw FormatError("checkpoint length " + std::to_string(n) + " at byte offset " + std::to_string(at) +
                        " exceeds the file (" + what + ")");
    return n;
  }
  std::string str(const char* what) {
    const auto n = count(what);
    std::string s(n, '\0');
    raw(s.data(), n, what);
    return s;
  }
  Tensor tensor(const char* what) {
    const auto rank = count(what, 8);
    Shape shape(rank);
    for (auto& d : shape) d = u64(what);
    std::size_t n = 1;
    for (auto d : shape) {
      if (d != 0 && n > (bytes_.size() - pos_) / 8 / d)
        throw FormatError("checkpoint tensor at byte offset " + std::to_string(pos_) + " exceeds the file");
      n *= d;
    }
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double), what);
    return Tensor(std::move(shape), std::move(v));
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.i32(ckpt.experience);
  w.str(ckpt.schema.id());
  w.u64(ckpt.schema.size());
  for (const auto& n : ckpt.schema.names()) w.str(n);

  const Model& m = ckpt.model;
  w.u64(m.grid().rows);
  w.u64(m.grid().cols);
  w.u64(m.keypoint_count());
  w.u64(m.layers().size());
  for (const auto& l : m.layers()) {
    w.str(l.spec.name);
    w.u8(static_cast<std::uint8_t>(l.spec.kind));
    w.u8(static_cast<std::uint8_t>(l.spec.group));
    w.u64(l.spec.in_dim);
    w.u64(l.spec.out_dim);
    w.u8(l.trainable ? 1 : 0);
  }
  const auto params = m.parameter_values();
  w.u64(params.size());
  for (const auto& [name, t] : params) {
    w.str(name);
    w.tensor(t);
  }

  w.u8(ckpt.fisher ? 1 : 0);
  if (ckpt.fisher) {
    const auto& f = *ckpt.fisher;
    w.u64(f.sample_count);
    w.u64(f.per_layer.size());
    for (const auto& [name, v] : f.per_layer) {
      w.str(name);
      w.f64(v);
    }
    w.u64(f.per_param.size());
    for (const auto& [name, t] : f.per_param) {
      w.str(name);
      w.tensor(t);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw FormatError("not a checkpoint: bad magic at byte offset 0");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at byte offset 8");
  const int experience = r.i32("experience");
  std::string schema_id = r.str("schema id");
  std::vector<std::string> names(r.count("schema names", 8));
  for (auto& n : names) n = r.str("schema name");

  HeatmapGrid grid;
  grid.rows = r.u64("grid rows");
  grid.cols = r.u64("grid cols");
  const auto keypoints = r.u64("keypoint count");
  std::vector<Layer> layers(r.count("layer count", 26));
  for (auto& l : layers) {
    l.spec.name = r.str("layer name");
    const auto kind = r.u8("layer kind");
    const auto group = r.u8("layer group");
    if (kind > 1 || group > 1)
      throw FormatError("invalid layer tag at byte offset " + std::to_string(r.offset() - 2));
    l.spec.kind = static_cast<LayerKind>(kind);
    l.spec.group = static_cast<LayerGroup>(group);
    l.spec.in_dim = r.u64("layer in_dim");
    l.spec.out_dim = r.u64("layer out_dim");
    l.trainable = r.u8("layer trainable") != 0;
  }

  std::map<std::string, Tensor> params;
  const auto n_params = r.count("parameter count", 16);
  for (std::uint64_t i = 0; i < n_params; ++i) {
    auto name = r.str("parameter name");
    params[name] = r.tensor("parameter tensor");
  }
  for (auto& l : layers) {
    if (!l.has_params()) continue;
    auto w = params.find(l.spec.name + ".weight");
    auto b = params.find(l.spec.name + ".bias");
    if (w == params.end() || b == params.end())
      throw FormatError("checkpoint lacks parameters for layer " + l.spec.name);
    l.weight = w->second;
    l.bias = b->second;
  }

  std::optional<FisherState> fisher;
  if (r.u8("fisher flag")) {
    FisherState f;
    f.sample_count = r.u64("fisher samples");
    const auto n_layers = r.count("fisher layers", 16);
    for (std::uint64_t i = 0; i < n_layers; ++i) {
      auto name = r.str("fisher layer");
      f.per_layer[name] = r.f64("fisher layer value");
    }
    const auto n = r.count("fisher params", 16);
    for (std::uint64_t i = 0; i < n; ++i) {
      auto name = r.str("fisher parameter");
      f.per_param[name] = r.tensor("fisher tensor");
    }
    fisher = std::move(f);
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint at byte offset " + std::to_string(r.offset()));

  try {
    return Checkpoint{Model(std::move(layers), keypoints, grid), KeypointSchema(std::move(schema_id), std::move(names)),
                      experience, std::move(fisher)};
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint content is inconsistent: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace posecl
