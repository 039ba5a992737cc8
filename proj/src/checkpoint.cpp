#include "redae/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <fmt/format.h>
#include <zlib.h>

#include "redae/errors.hpp"
#include "redae/image_io.hpp"

namespace redae::checkpoint {

namespace {

constexpr char kMagic[5] = {'R', 'E', 'D', 'A', 'E'};

struct Entry {
  std::string name;
  Shape shape;
  std::span<double> values;
};

// Parameters first, then running statistics, in a fixed order.
std::vector<Entry> entries(model::Network& net) {
  std::vector<Entry> out;
  for (auto& p : net.parameters()) {
    out.push_back({p.name, p.tensor.shape(), p.tensor.mutable_data()});
  }
  auto bns = net.batch_norms();
  for (std::size_t i = 0; i < bns.size(); ++i) {
    const std::size_t c = bns[i]->channels();
    out.push_back({fmt::format("bn{}.running_mean", i + 1), {1, c, 1, 1}, bns[i]->running_mean});
    out.push_back({fmt::format("bn{}.running_var", i + 1), {1, c, 1, 1}, bns[i]->running_var});
  }
  return out;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    static_assert(std::endian::native == std::endian::little);
    bytes(&v, sizeof v);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end, const std::string& name)
      : b_(b), end_(end), name_(name) {}

  void bytes(void* out, std::size_t n) {
    if (end_ - pos_ < n) {
      throw DataError(DataErrorKind::kMalformedHeader,
                      fmt::format("{}: checkpoint truncated at byte {}", name_, pos_));
    }
    std::memcpy(out, b_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T le() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  const std::string& name_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> encode(model::Network& net) {
  const model::Topology& t = net.topology;
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint16_t>(kFormatVersion);
  w.le<std::uint8_t>(static_cast<std::uint8_t>(t.variant));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(t.in_channels));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(t.widths.size()));
  for (std::size_t width : t.widths) w.le<std::uint32_t>(static_cast<std::uint32_t>(width));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(t.kernel));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(t.classes));
  for (std::size_t c = 0; c < t.classes; ++c) {
    w.le<double>(c < net.class_weights.size() ? net.class_weights.w[c] : 1.0);
  }
  const auto list = entries(net);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
  for (const auto& e : list) {
    w.le<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    for (std::size_t d : {e.shape.n, e.shape.c, e.shape.h, e.shape.w}) {
      w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    }
    for (std::size_t i = 0; i < e.values.size(); ++i) {
      const float f = static_cast<float>(e.values[i]);
      if (!std::isfinite(f)) {
        throw NumericError(fmt::format("{}[{}] = {} is not representable as a 32-bit float",
                                       e.name, i, e.values[i]));
      }
      w.le<float>(f);
    }
  }
  auto& buf = w.buffer();
  w.le<std::uint32_t>(crc(buf.data(), buf.size()));
  return std::move(buf);
}

model::Network decode(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  if (bytes.size() < sizeof kMagic + 2 + 4 ||
      std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError(DataErrorKind::kMalformedHeader,
                    fmt::format("{}: not a checkpoint (bad magic)", name));
  }
  Reader r(bytes, bytes.size() - 4, name);
  char magic[sizeof kMagic];
  r.bytes(magic, sizeof magic);
  const auto version = r.le<std::uint16_t>();
  if (version != kFormatVersion) {
    throw DataError(DataErrorKind::kVersion,
                    fmt::format("{}: checkpoint version {} (this build reads {})", name, version,
                                kFormatVersion));
  }
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (stored != crc(bytes.data(), bytes.size() - 4)) {
    throw DataError(DataErrorKind::kChecksum, fmt::format("{}: CRC-32 mismatch", name));
  }

  model::Topology t;
  const auto tag = r.le<std::uint8_t>();
  if (tag > static_cast<std::uint8_t>(model::Variant::kAvgOnly)) {
    throw DataError(DataErrorKind::kMalformedHeader,
                    fmt::format("{}: unknown variant tag {}", name, tag));
  }
  t.variant = static_cast<model::Variant>(tag);
  t.in_channels = r.le<std::uint32_t>();
  const auto depth = r.le<std::uint32_t>();
  if (depth > 16) {
    throw DataError(DataErrorKind::kMalformedHeader, fmt::format("{}: depth {}", name, depth));
  }
  t.widths.resize(depth);
  for (auto& width : t.widths) width = r.le<std::uint32_t>();
  t.kernel = r.le<std::uint32_t>();
  t.classes = r.le<std::uint32_t>();
  if (t.classes > 256) {
    throw DataError(DataErrorKind::kMalformedHeader,
                    fmt::format("{}: {} classes", name, t.classes));
  }
  nn::ClassWeights weights{std::vector<double>(t.classes)};
  for (auto& v : weights.w) v = r.le<double>();

  model::Network net;
  try {
    Rng unused(0);
    net = model::build(t, unused);
    nn::validate(weights);
  } catch (const Error& e) {
    throw DataError(DataErrorKind::kMalformedHeader,
                    fmt::format("{}: invalid topology: {}", name, e.what()));
  }
  net.class_weights = weights;

  auto list = entries(net);
  const auto count = r.le<std::uint32_t>();
  if (count != list.size()) {
    throw DataError(DataErrorKind::kMalformedHeader,
                    fmt::format("{}: {} tensors, topology needs {}", name, count, list.size()));
  }
  for (auto& e : list) {
    std::string got(r.le<std::uint16_t>(), '\0');
    r.bytes(got.data(), got.size());
    Shape s;
    s.n = r.le<std::uint32_t>();
    s.c = r.le<std::uint32_t>();
    s.h = r.le<std::uint32_t>();
    s.w = r.le<std::uint32_t>();
    if (got != e.name || s != e.shape) {
      throw DataError(DataErrorKind::kMalformedHeader,
                      fmt::format("{}: tensor '{}' {} where '{}' {} was expected", name, got,
                                  s.str(), e.name, e.shape.str()));
    }
    for (double& v : e.values) v = static_cast<double>(r.le<float>());
    check_finite(e.values, e.name.c_str());
  }
  if (!r.done()) {
    throw DataError(DataErrorKind::kMalformedHeader, fmt::format("{}: trailing bytes", name));
  }
  net.set_mode(nn::BnMode::kEval);
  return net;
}

void save(const std::filesystem::path& path, model::Network& net) {
  io::write_file(path, encode(net));
}

model::Network load(const std::filesystem::path& path) {
  return decode(io::read_file(path), path.string());
}

}  // namespace redae::checkpoint
