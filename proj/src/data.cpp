#include "redae/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "redae/errors.hpp"

namespace redae::data {

namespace fs = std::filesystem;

Image to_image(const io::Raster& r) {
  Image img{r.h, r.w, r.channels, std::vector<double>(r.bytes.size())};
  for (std::size_t y = 0; y < r.h; ++y) {
    for (std::size_t x = 0; x < r.w; ++x) {
      for (std::size_t c = 0; c < r.channels; ++c) {
        img.values[(c * r.h + y) * r.w + x] =
            r.bytes[(y * r.w + x) * r.channels + c] / 255.0;
      }
    }
  }
  return img;
}

io::Raster to_raster(const Image& img) {
  io::Raster r{img.h, img.w, img.channels, std::vector<std::uint8_t>(img.values.size())};
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.h; ++y) {
      for (std::size_t x = 0; x < img.w; ++x) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        r.bytes[(y * img.w + x) * img.channels + c] =
            static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
      }
    }
  }
  return r;
}

Mask to_mask(const io::Raster& r, const std::string& name) {
  if (r.channels != 1) {
    throw DataError(DataErrorKind::kMalformedHeader,
                    fmt::format("{}: masks must be single-channel PGM (P5)", name));
  }
  for (std::size_t i = 0; i < r.bytes.size(); ++i) {
    if (r.bytes[i] >= kClassCount) {
      throw DataError(DataErrorKind::kIllegalLabel,
                      fmt::format("{}: illegal label {} at row {}, col {} (allowed 0, 1, 2)",
                                  name, r.bytes[i], i / r.w, i % r.w));
    }
  }
  return Mask{r.h, r.w, r.bytes};
}

io::Raster to_raster(const Mask& m) { return io::Raster{m.h, m.w, 1, m.labels}; }

void validate(const Sample& s) {
  if (s.image.h != s.mask.h || s.image.w != s.mask.w) {
    throw DataError(DataErrorKind::kDimensionMismatch,
                    fmt::format("{}: image is {}x{} but mask is {}x{}", s.id, s.image.h,
                                s.image.w, s.mask.h, s.mask.w));
  }
  if (s.image.values.size() != s.image.h * s.image.w * s.image.channels ||
      s.mask.labels.size() != s.mask.h * s.mask.w) {
    throw DataError(DataErrorKind::kDimensionMismatch,
                    fmt::format("{}: buffer sizes do not match dimensions", s.id));
  }
  for (std::size_t i = 0; i < s.mask.labels.size(); ++i) {
    if (s.mask.labels[i] >= kClassCount) {
      throw DataError(DataErrorKind::kIllegalLabel,
                      fmt::format("{}: illegal label {} at row {}, col {}", s.id,
                                  s.mask.labels[i], i / s.mask.w, i % s.mask.w));
    }
  }
}

Sample load_sample(const fs::path& image_path, const fs::path& mask_path) {
  Sample s;
  s.id = image_path.stem().string();
  s.image = to_image(io::read_pnm(image_path));
  s.mask = to_mask(io::read_pnm(mask_path), mask_path.string());
  validate(s);
  return s;
}

void save_image(const fs::path& path, const Image& image) {
  io::write_pnm(path, to_raster(image));
}

void save_mask(const fs::path& path, const Mask& mask) {
  io::write_pnm(path, to_raster(mask));
}

std::vector<std::uint8_t> hist_equalize(std::span<const std::uint8_t> plane) {
  std::array<std::uint64_t, 256> hist{};
  for (std::uint8_t v : plane) ++hist[v];
  std::array<std::uint64_t, 256> cdf{};
  std::uint64_t running = 0;
  std::uint64_t cdf_min = 0;
  for (std::size_t v = 0; v < 256; ++v) {
    running += hist[v];
    cdf[v] = running;
    if (cdf_min == 0 && running > 0) cdf_min = running;
  }
  const std::uint64_t total = plane.size();
  if (total == cdf_min) return {plane.begin(), plane.end()};

  // Exact round-half-up of (cdf - cdf_min) * 255 / (total - cdf_min).
  const std::uint64_t den = total - cdf_min;
  std::array<std::uint8_t, 256> lut{};
  for (std::size_t v = 0; v < 256; ++v) {
    if (hist[v] == 0) continue;
    const std::uint64_t num = (cdf[v] - cdf_min) * 255;
    lut[v] = static_cast<std::uint8_t>((2 * num + den) / (2 * den));
  }
  std::vector<std::uint8_t> out(plane.size());
  for (std::size_t i = 0; i < plane.size(); ++i) out[i] = lut[plane[i]];
  return out;
}

Image hist_equalize(const Image& image) {
  const io::Raster r = to_raster(image);
  io::Raster out = r;
  std::vector<std::uint8_t> plane(r.h * r.w);
  for (std::size_t c = 0; c < r.channels; ++c) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = r.bytes[i * r.channels + c];
    const auto eq = hist_equalize(plane);
    for (std::size_t i = 0; i < plane.size(); ++i) out.bytes[i * r.channels + c] = eq[i];
  }
  return to_image(out);
}

AugmentParams sample_augment(const AugmentSpec& spec, Rng& rng) {
  AugmentParams p;
  p.rotation_deg = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg);
  p.scale = rng.uniform(spec.min_scale, spec.max_scale);
  const bool fh = rng.bernoulli(0.5);
  const bool fv = rng.bernoulli(0.5);
  p.flip_horizontal = spec.flip_horizontal && fh;
  p.flip_vertical = spec.flip_vertical && fv;
  return p;
}

namespace {

Sample warp(const Sample& s, double rotation_deg, double scale) {
  const double theta = rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double cx = (static_cast<double>(s.image.w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(s.image.h) - 1.0) / 2.0;
  const auto H = static_cast<std::ptrdiff_t>(s.image.h);
  const auto W = static_cast<std::ptrdiff_t>(s.image.w);

  Sample out = s;
  std::fill(out.image.values.begin(), out.image.values.end(), 0.0);
  std::fill(out.mask.labels.begin(), out.mask.labels.end(), kBackground);
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      // Inverse map: destination pixel -> source coordinates.
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      const double sx = (cos_t * dx + sin_t * dy) / scale + cx;
      const double sy = (-sin_t * dx + cos_t * dy) / scale + cy;

      const auto nx = static_cast<std::ptrdiff_t>(std::floor(sx + 0.5));
      const auto ny = static_cast<std::ptrdiff_t>(std::floor(sy + 0.5));
      if (nx >= 0 && nx < W && ny >= 0 && ny < H) {
        out.mask.labels[y * W + x] = s.mask.labels[ny * W + nx];
      }

      const auto x0 = static_cast<std::ptrdiff_t>(std::floor(sx));
      const auto y0 = static_cast<std::ptrdiff_t>(std::floor(sy));
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t c = 0; c < s.image.channels; ++c) {
        double acc = 0.0;
        for (int j = 0; j < 2; ++j) {
          for (int i = 0; i < 2; ++i) {
            const std::ptrdiff_t px = x0 + i;
            const std::ptrdiff_t py = y0 + j;
            if (px < 0 || px >= W || py < 0 || py >= H) continue;
            const double wgt = (i ? fx : 1.0 - fx) * (j ? fy : 1.0 - fy);
            acc += wgt * s.image.at(c, static_cast<std::size_t>(py),
                                    static_cast<std::size_t>(px));
          }
        }
        out.image.values[(c * s.image.h + static_cast<std::size_t>(y)) * s.image.w +
                         static_cast<std::size_t>(x)] = acc;
      }
    }
  }
  return out;
}

void flip(Sample& s, bool horizontal) {
  const std::size_t h = s.image.h;
  const std::size_t w = s.image.w;
  auto mirror = [&](auto& buf, std::size_t planes) {
    for (std::size_t c = 0; c < planes; ++c) {
      auto* base = buf.data() + c * h * w;
      if (horizontal) {
        for (std::size_t y = 0; y < h; ++y) std::reverse(base + y * w, base + (y + 1) * w);
      } else {
        for (std::size_t y = 0; y < h / 2; ++y) {
          std::swap_ranges(base + y * w, base + (y + 1) * w, base + (h - 1 - y) * w);
        }
      }
    }
  };
  mirror(s.image.values, s.image.channels);
  mirror(s.mask.labels, 1);
}

}  // namespace

Sample apply_augment(const Sample& sample, const AugmentParams& p) {
  validate(sample);
  if (!(p.scale > 0.0)) {
    throw ConfigError(fmt::format("augmentation scale must be positive, got {}", p.scale));
  }
  Sample out = (p.rotation_deg == 0.0 && p.scale == 1.0) ? sample
                                                        : warp(sample, p.rotation_deg, p.scale);
  if (p.flip_horizontal) flip(out, true);
  if (p.flip_vertical) flip(out, false);
  return out;
}

Sample augment(const Sample& sample, const AugmentSpec& spec, Rng& rng) {
  return apply_augment(sample, sample_augment(spec, rng));
}

std::vector<std::string> SplitManifest::ids(Role role) const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.role == role) out.push_back(e.id);
  }
  return out;
}

SplitManifest split(std::span<const std::string> ids, double ratio, std::uint64_t seed) {
  if (ids.size() < 2) {
    throw DataError(DataErrorKind::kManifest,
                    fmt::format("split needs at least 2 samples, got {}", ids.size()));
  }
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError(fmt::format("split ratio must lie in (0, 1), got {}", ratio));
  }
  std::set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) {
    throw DataError(DataErrorKind::kManifest, "split: duplicate sample ids");
  }
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  const auto n_train = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(ids.size()) + 0.5));
  SplitManifest m{seed, ratio, {}};
  m.entries.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) m.entries[i].id = ids[i];
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    m.entries[order[rank]].role = rank < n_train ? Role::kTrain : Role::kTest;
  }
  return m;
}

std::string format_manifest(const SplitManifest& m) {
  std::string out = fmt::format("seed={} ratio={}\n", m.seed, m.ratio);
  for (const auto& e : m.entries) {
    out += fmt::format("{}\t{}", e.id, e.role == Role::kTrain ? "train" : "test");
    if (!e.group.empty()) out += fmt::format("\t{}", e.group);
    out += '\n';
  }
  return out;
}

SplitManifest parse_manifest(const std::string& text) {
  auto fail = [](const std::string& why) {
    throw DataError(DataErrorKind::kManifest, "split.manifest: " + why);
  };
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail("empty file");
  SplitManifest m;
  {
    std::istringstream header(line);
    std::string seed_tok, ratio_tok;
    header >> seed_tok >> ratio_tok;
    if (seed_tok.rfind("seed=", 0) != 0 || ratio_tok.rfind("ratio=", 0) != 0) {
      fail("header must read 'seed=<u64> ratio=<real>'");
    }
    const std::string seed_str = seed_tok.substr(5);
    auto [p, ec] = std::from_chars(seed_str.data(), seed_str.data() + seed_str.size(), m.seed);
    if (ec != std::errc() || p != seed_str.data() + seed_str.size()) fail("bad seed");
    try {
      std::size_t used = 0;
      m.ratio = std::stod(ratio_tok.substr(6), &used);
      if (used != ratio_tok.size() - 6) fail("bad ratio");
    } catch (const std::logic_error&) {
      fail("bad ratio");
    }
  }
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty()) {
      fail(fmt::format("line {}: expected '<id>\\t<train|test>[\\t<group>]'", line_no));
    }
    ManifestEntry e;
    e.id = fields[0];
    if (fields[1] == "train") {
      e.role = Role::kTrain;
    } else if (fields[1] == "test") {
      e.role = Role::kTest;
    } else {
      fail(fmt::format("line {}: role '{}' is neither train nor test", line_no, fields[1]));
    }
    if (fields.size() == 3) e.group = fields[2];
    if (!seen.insert(e.id).second) fail(fmt::format("duplicate id '{}'", e.id));
    m.entries.push_back(std::move(e));
  }
  return m;
}

Image pad_image(const Image& image, std::size_t m) {
  if (m == 0) throw ConfigError("pad multiple must be at least 1");
  const std::size_t h = (image.h + m - 1) / m * m;
  const std::size_t w = (image.w + m - 1) / m * m;
  if (h == image.h && w == image.w) return image;
  Image out{h, w, image.channels, std::vector<double>(h * w * image.channels, 0.0)};
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < image.h; ++y) {
      for (std::size_t x = 0; x < image.w; ++x) {
        out.values[(c * h + y) * w + x] = image.at(c, y, x);
      }
    }
  }
  return out;
}

PaddedSample pad_to_multiple(const Sample& sample, std::size_t m) {
  validate(sample);
  PaddedSample out{sample, {sample.image.h, sample.image.w}};
  out.sample.image = pad_image(sample.image, m);
  const std::size_t h = out.sample.image.h;
  const std::size_t w = out.sample.image.w;
  if (h != sample.mask.h || w != sample.mask.w) {
    out.sample.mask = Mask{h, w, std::vector<std::uint8_t>(h * w, kBackground)};
    for (std::size_t y = 0; y < sample.mask.h; ++y) {
      for (std::size_t x = 0; x < sample.mask.w; ++x) {
        out.sample.mask.labels[y * w + x] = sample.mask.at(y, x);
      }
    }
  }
  return out;
}

Mask crop_mask(const Mask& mask, const CropRecord& crop) {
  if (crop.h > mask.h || crop.w > mask.w) {
    throw DataError(DataErrorKind::kDimensionMismatch,
                    fmt::format("cannot crop {}x{} mask to {}x{}", mask.h, mask.w, crop.h,
                                crop.w));
  }
  Mask out{crop.h, crop.w, std::vector<std::uint8_t>(crop.h * crop.w)};
  for (std::size_t y = 0; y < crop.h; ++y) {
    for (std::size_t x = 0; x < crop.w; ++x) out.labels[y * crop.w + x] = mask.at(y, x);
  }
  return out;
}

namespace {

struct Ellipse {
  double cx, cy, a, b, cos_t, sin_t;

  // Coordinates in the ellipse frame (u along the major axis).
  std::pair<double, double> frame(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    return {cos_t * dx + sin_t * dy, -sin_t * dx + cos_t * dy};
  }
  double radius2(double x, double y, double grow = 0.0) const {
    const auto [u, v] = frame(x, y);
    return (u * u) / ((a + grow) * (a + grow)) + (v * v) / ((b + grow) * (b + grow));
  }
  bool contains(double x, double y, double grow = 0.0) const {
    return radius2(x, y, grow) <= 1.0;
  }
};

Sample make_phantom(std::size_t h, std::size_t w, Rng& rng, double tear_fraction,
                    std::string id) {
  const double H = static_cast<double>(h);
  const double W = static_cast<double>(w);
  const double angle = rng.uniform(-30.0, 30.0) * std::numbers::pi / 180.0;
  const Ellipse muscle{W * rng.uniform(0.42, 0.58), H * rng.uniform(0.42, 0.58),
                       W * rng.uniform(0.28, 0.38), H * rng.uniform(0.12, 0.17),
                       std::cos(angle), std::sin(angle)};

  const double area = tear_fraction * H * W * rng.uniform(0.7, 1.3);
  Ellipse tear{};
  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    const double rb = std::min({std::sqrt(area / std::numbers::pi) * rng.uniform(0.7, 1.0),
                                0.55 * muscle.b, muscle.b - 2.5});
    if (rb < 0.5) continue;
    const double ra = area / (std::numbers::pi * rb);
    if (ra + 2.0 >= muscle.a || rb + 2.0 >= muscle.b) continue;
    const double u = rng.uniform(-1.0, 1.0) * (muscle.a - ra - 2.0) * 0.8;
    const double v = rng.uniform(-1.0, 1.0) * (muscle.b - rb - 2.0) * 0.5;
    tear = Ellipse{muscle.cx + muscle.cos_t * u - muscle.sin_t * v,
                   muscle.cy + muscle.sin_t * u + muscle.cos_t * v,
                   ra, rb, muscle.cos_t, muscle.sin_t};
    // Every pixel within one pixel of the tear must be muscle, and the tear
    // must cover at least one pixel centre.
    bool inside = true;
    bool any = false;
    for (std::size_t y = 0; y < h && inside; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double px = static_cast<double>(x);
        const double py = static_cast<double>(y);
        if (tear.contains(px, py)) any = true;
        if (tear.contains(px, py, 1.0) && !muscle.contains(px, py)) {
          inside = false;
          break;
        }
      }
    }
    placed = inside && any;
  }
  if (!placed) {
    throw DataError(DataErrorKind::kGeneration,
                    fmt::format("{}: tear of area {:.1f} px does not fit inside the muscle "
                                "after 100 attempts",
                                id, area));
  }

  const double background = rng.uniform(0.08, 0.16);
  const double muscle_lo = rng.uniform(0.50, 0.60);
  const double muscle_hi = rng.uniform(0.72, 0.85);
  const double tear_level = rng.uniform(0.26, 0.36);
  const double noise = 0.04;

  Sample s;
  s.id = std::move(id);
  s.image = Image{h, w, 1, std::vector<double>(h * w)};
  s.mask = Mask{h, w, std::vector<std::uint8_t>(h * w, kBackground)};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x);
      const double py = static_cast<double>(y);
      double level = background;
      std::uint8_t label = kBackground;
      if (tear.contains(px, py)) {
        level = tear_level;
        label = kTear;
      } else if (muscle.contains(px, py)) {
        const double t = std::clamp((muscle.frame(px, py).first / muscle.a + 1.0) / 2.0, 0.0, 1.0);
        level = muscle_lo + (muscle_hi - muscle_lo) * t;
        label = kMuscle;
      }
      const double v = std::clamp(level + rng.normal(0.0, noise), 0.0, 1.0);
      s.image.values[y * w + x] = std::floor(v * 255.0 + 0.5) / 255.0;
      s.mask.labels[y * w + x] = label;
    }
  }
  return s;
}

}  // namespace

std::vector<Sample> generate_phantoms(std::size_t count, std::size_t h, std::size_t w,
                                      Rng& rng, double tear_fraction) {
  if (h < 32 || w < 32) {
    throw ConfigError(fmt::format("phantoms need at least 32x32 pixels, got {}x{}", h, w));
  }
  if (!(tear_fraction > 0.0 && tear_fraction < 1.0)) {
    throw ConfigError(fmt::format("tear fraction must lie in (0, 1), got {}", tear_fraction));
  }
  const std::uint64_t base = rng.next_u64();
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng local = Rng::derive(base, i);
    out.push_back(make_phantom(h, w, local, tear_fraction, fmt::format("phantom_{:04d}", i)));
  }
  return out;
}

std::vector<Sample> Dataset::subset(Role role) const {
  std::vector<Sample> out;
  std::vector<std::string> ids = manifest.ids(role);
  std::set<std::string> wanted(ids.begin(), ids.end());
  for (const auto& s : samples) {
    if (wanted.count(s.id)) out.push_back(s);
  }
  return out;
}

fs::path image_path(const fs::path& dir, const std::string& id, std::size_t channels) {
  return dir / "images" / (id + (channels == 1 ? ".pgm" : ".ppm"));
}

fs::path mask_path(const fs::path& dir, const std::string& id) {
  return dir / "masks" / (id + ".pgm");
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_file = dir / "split.manifest";
  const auto bytes = io::read_file(manifest_file);
  Dataset ds;
  ds.manifest = parse_manifest(std::string(bytes.begin(), bytes.end()));
  for (const auto& e : ds.manifest.entries) {
    fs::path img = image_path(dir, e.id, 1);
    if (!fs::exists(img)) img = image_path(dir, e.id, 3);
    if (!fs::exists(img)) {
      throw DataError(DataErrorKind::kIo,
                      fmt::format("no image for '{}' under {}", e.id, (dir / "images").string()));
    }
    Sample s = load_sample(img, mask_path(dir, e.id));
    s.id = e.id;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const fs::path& dir, const std::vector<Sample>& samples,
                  const SplitManifest& manifest) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) {
    throw DataError(DataErrorKind::kIo,
                    fmt::format("cannot create dataset directory {}: {}", dir.string(),
                                ec.message()));
  }
  for (const auto& s : samples) {
    validate(s);
    save_image(image_path(dir, s.id, s.image.channels), s.image);
    save_mask(mask_path(dir, s.id), s.mask);
  }
  const std::string text = format_manifest(manifest);
  io::write_file(dir / "split.manifest", std::vector<std::uint8_t>(text.begin(), text.end()));
}

Dataset preprocess(const Dataset& in, const PreprocessOptions& options) {
  if (in.samples.size() != in.manifest.entries.size()) {
    throw DataError(DataErrorKind::kManifest,
                    fmt::format("dataset has {} samples but {} manifest entries",
                                in.samples.size(), in.manifest.entries.size()));
  }
  Dataset out;
  out.manifest.seed = in.manifest.seed;
  out.manifest.ratio = in.manifest.ratio;
  for (std::size_t i = 0; i < in.samples.size(); ++i) {
    const ManifestEntry& e = in.manifest.entries[i];
    Sample s = in.samples[i];
    if (s.id != e.id) {
      throw DataError(DataErrorKind::kManifest,
                      fmt::format("sample '{}' does not match manifest entry '{}'", s.id, e.id));
    }
    if (options.equalize) s.image = hist_equalize(s.image);
    out.samples.push_back(s);
    out.manifest.entries.push_back(e);
    if (e.role != Role::kTrain || options.augment == 0) continue;
    Rng rng = Rng::derive(options.seed, i);
    for (std::size_t k = 1; k <= options.augment; ++k) {
      Sample copy = augment(s, options.spec, rng);
      copy.id = fmt::format("{}_aug{}", e.id, k);
      out.samples.push_back(std::move(copy));
      out.manifest.entries.push_back(ManifestEntry{out.samples.back().id, Role::kTrain,
                                                   e.group_key()});
    }
  }
  return out;
}

Tensor4 image_tensor(const Image& image) {
  return Tensor4::from_values({1, image.channels, image.h, image.w}, image.values);
}

Tensor4 stack_images(std::span<const Sample* const> samples) {
  if (samples.empty()) throw DataError(DataErrorKind::kDimensionMismatch, "empty batch");
  const Image& first = samples.front()->image;
  std::vector<double> v;
  v.reserve(samples.size() * first.values.size());
  for (const Sample* s : samples) {
    if (s->image.h != first.h || s->image.w != first.w || s->image.channels != first.channels) {
      throw DataError(DataErrorKind::kDimensionMismatch,
                      fmt::format("batch mixes image sizes ({} is {}x{}x{}, expected {}x{}x{})",
                                  s->id, s->image.channels, s->image.h, s->image.w,
                                  first.channels, first.h, first.w));
    }
    v.insert(v.end(), s->image.values.begin(), s->image.values.end());
  }
  return Tensor4::from_values({samples.size(), first.channels, first.h, first.w}, std::move(v));
}

nn::LabelMask stack_masks(std::span<const Sample* const> samples) {
  if (samples.empty()) throw DataError(DataErrorKind::kDimensionMismatch, "empty batch");
  const Mask& first = samples.front()->mask;
  nn::LabelMask out{samples.size(), first.h, first.w, {}};
  out.labels.reserve(samples.size() * first.labels.size());
  for (const Sample* s : samples) {
    if (s->mask.h != first.h || s->mask.w != first.w) {
      throw DataError(DataErrorKind::kDimensionMismatch, "batch mixes mask sizes");
    }
    out.labels.insert(out.labels.end(), s->mask.labels.begin(), s->mask.labels.end());
  }
  return out;
}

std::vector<double> class_frequencies(std::span<const Sample> samples) {
  std::vector<std::uint64_t> counts(kClassCount, 0);
  std::uint64_t total = 0;
  for (const auto& s : samples) {
    for (std::uint8_t l : s.mask.labels) {
      if (l < kClassCount) ++counts[l];
      ++total;
    }
  }
  std::vector<double> freq(kClassCount, 0.0);
  if (total == 0) return freq;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    freq[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
  }
  return freq;
}

nn::ClassWeights median_frequency_weights(std::span<const Sample> samples) {
  const std::vector<double> freq = class_frequencies(samples);
  std::vector<double> present;
  for (double f : freq) {
    if (f > 0.0) present.push_back(f);
  }
  nn::ClassWeights w = nn::ClassWeights::unit(kClassCount);
  if (present.size() < 2) return w;
  std::sort(present.begin(), present.end());
  const std::size_t mid = present.size() / 2;
  const double median = present.size() % 2 == 1 ? present[mid]
                                                 : 0.5 * (present[mid - 1] + present[mid]);
  for (std::size_t c = 0; c < kClassCount; ++c) {
    if (freq[c] > 0.0) w.w[c] = median / freq[c];
  }
  return w;
}

}  // namespace redae::data
