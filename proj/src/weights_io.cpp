#include "endopoint/weights_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "endopoint/file_util.hpp"

namespace endopoint {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'W', 'T'};
constexpr std::size_t kArchValues = 5;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) { out_ += s; }

  void record(const std::string& name, LayerKind kind, const Shape& shape,
              std::span<const double> values) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name);
    u8(static_cast<std::uint8_t>(kind));
    u8(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) u32(static_cast<std::uint32_t>(d));
    for (double v : values) f32(static_cast<float>(v));
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) {
      throw WeightsError(WeightsError::Kind::Truncated,
                         "weights file truncated at byte " +
                             std::to_string(in_.size()) + " (needed " +
                             std::to_string(pos_ + n) + ")");
    }
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(in_[pos_++]))
           << (8 * i);
    }
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  struct Record {
    std::string name;
    LayerKind kind;
    Shape shape;
    std::vector<double> values;
  };

  Record record() {
    Record r;
    r.name = bytes(u32());
    r.kind = static_cast<LayerKind>(u8());
    const std::uint8_t rank = u8();
    for (std::uint8_t i = 0; i < rank; ++i) r.shape.push_back(u32());
    const std::size_t n = shape_volume(r.shape);
    need(4 * n);
    r.values.resize(n);
    for (double& v : r.values) v = f32();
    return r;
  }

  bool at_end() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

Tensor expect_record(Reader& reader, const std::string& name,
                     const Shape& shape) {
  Reader::Record r = reader.record();
  if (r.name != name || r.kind != LayerKind::Conv) {
    throw WeightsError(WeightsError::Kind::Layout,
                       "expected conv record '" + name + "', found '" +
                           r.name + "'");
  }
  if (r.shape != shape) {
    throw WeightsError(WeightsError::Kind::ShapeMismatch,
                       "layer '" + name + "' has shape " +
                           shape_string(r.shape) + ", architecture expects " +
                           shape_string(shape));
  }
  return Tensor(std::move(r.shape), std::move(r.values));
}

}  // namespace

std::string encode_weights(const NetworkParams& params) {
  params.validate();
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(1 + 2 * params.layers.size()));
  const auto& a = params.arch;
  const std::vector<double> arch{
      static_cast<double>(a.encoder_widths[0]),
      static_cast<double>(a.encoder_widths[1]),
      static_cast<double>(a.encoder_widths[2]),
      static_cast<double>(a.encoder_widths[3]),
      static_cast<double>(a.head_width)};
  w.record("architecture", LayerKind::Architecture, {kArchValues}, arch);
  for (const ConvLayer& l : params.layers) {
    w.record(l.name + ".weight", LayerKind::Conv, l.kernel.shape(),
             l.kernel.data());
    w.record(l.name + ".bias", LayerKind::Conv, l.bias.shape(), l.bias.data());
  }
  return w.take();
}

NetworkParams decode_weights(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string(kMagic, 4)) {
    throw WeightsError(WeightsError::Kind::Version,
                       "not a weights file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion) {
    throw WeightsError(WeightsError::Kind::Version,
                       "unsupported weights version " +
                           std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  Reader::Record arch_rec = r.record();
  if (arch_rec.kind != LayerKind::Architecture ||
      arch_rec.shape != Shape{kArchValues}) {
    throw WeightsError(WeightsError::Kind::Layout,
                       "first record must describe the architecture");
  }
  for (double v : arch_rec.values) {
    if (!(v >= 1.0 && v <= 65536.0) || v != std::floor(v)) {
      throw WeightsError(WeightsError::Kind::Layout,
                         "architecture widths must be positive integers");
    }
  }
  NetworkParams p;
  for (std::size_t i = 0; i < 4; ++i) {
    p.arch.encoder_widths[i] = static_cast<std::size_t>(arch_rec.values[i]);
  }
  p.arch.head_width = static_cast<std::size_t>(arch_rec.values[4]);
  const auto specs = layer_specs(p.arch);
  if (count != 1 + 2 * specs.size()) {
    throw WeightsError(WeightsError::Kind::Layout,
                       "record count " + std::to_string(count) +
                           " does not match architecture");
  }
  for (const LayerSpec& s : specs) {
    ConvLayer l;
    l.name = s.name;
    l.padding = s.kernel / 2;
    l.kernel = expect_record(
        r, s.name + ".weight",
        {s.kernel, s.kernel, s.in_channels, s.out_channels});
    l.bias = expect_record(r, s.name + ".bias", {s.out_channels});
    p.layers.push_back(std::move(l));
  }
  if (!r.at_end()) {
    throw WeightsError(WeightsError::Kind::Layout,
                       "trailing bytes after last record");
  }
  return p;
}

void save_weights(const NetworkParams& params,
                  const std::filesystem::path& path) {
  write_file_atomic(path, encode_weights(params));
}

NetworkParams load_weights(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw WeightsError(WeightsError::Kind::Io, e.what());
  }
  return decode_weights(bytes);
}

}  // namespace endopoint
