#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <string>

#include "doctest.h"
#include "redae/data.hpp"
#include "redae/errors.hpp"
#include "redae/image_io.hpp"

using namespace redae;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("redae_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> bytes(const std::string& s) { return {s.begin(), s.end()}; }

DataErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.kind();
  }
  FAIL("expected a DataError");
  return DataErrorKind::kIo;
}

data::Sample random_sample(Rng& rng, std::size_t h, std::size_t w, std::size_t channels = 1) {
  data::Sample s;
  s.id = "r";
  s.image = data::Image{h, w, channels, std::vector<double>(h * w * channels)};
  for (auto& v : s.image.values) v = static_cast<double>(rng.below(256)) / 255.0;
  s.mask = data::Mask{h, w, std::vector<std::uint8_t>(h * w)};
  for (auto& l : s.mask.labels) l = static_cast<std::uint8_t>(rng.below(3));
  return s;
}

std::vector<std::uint8_t> plane_of(const data::Image& im) { return data::to_raster(im).bytes; }

}  // namespace

TEST_CASE("pnm parsing") {
  const auto r = io::parse_pnm(bytes("P5\n# comment\n3 2\n255\n\x01\x02\x03\x04\x05\x06"), "a");
  CHECK(r.h == 2);
  CHECK(r.w == 3);
  CHECK(r.channels == 1);
  CHECK(r.bytes == std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6});
  const auto c = io::parse_pnm(bytes("P6 1 1 255\n\x0a\x0b\x0c"), "b");
  CHECK(c.channels == 3);
  CHECK(io::encode_pnm(r) == bytes("P5\n3 2\n255\n\x01\x02\x03\x04\x05\x06"));

  for (const char* bad : {"P2\n1 1\n255\n0", "P5\n1 1\n65535\n\x00\x00", "P5\n1\n", "P5\n0 1\n255\n",
                          "XX"}) {
    CHECK(kind_of([&] { io::parse_pnm(bytes(bad), "x"); }) == DataErrorKind::kMalformedHeader);
  }
  CHECK(kind_of([&] { io::parse_pnm(bytes("P5\n2 2\n255\n\x01"), "x"); }) ==
        DataErrorKind::kMalformedHeader);
  CHECK(kind_of([] { io::read_pnm("/nonexistent/redae.pgm"); }) == DataErrorKind::kIo);
}

TEST_CASE("normalisation endpoints and quantisation") {
  const io::Raster r{1, 3, 1, {0, 128, 255}};
  const auto im = data::to_image(r);
  CHECK(im.values == std::vector<double>{0.0, 128.0 / 255.0, 1.0});
  CHECK(data::to_raster(im).bytes == r.bytes);
  const data::Image clamped{1, 3, 1, {-0.5, 0.5 / 255.0, 7.0}};
  CHECK(data::to_raster(clamped).bytes == std::vector<std::uint8_t>{0, 1, 255});
}

TEST_CASE("masks reject illegal labels at the first offending pixel") {
  const io::Raster r{2, 3, 1, {0, 1, 2, 1, 0, 3}};
  try {
    data::to_mask(r, "m.pgm");
    FAIL("expected illegal label");
  } catch (const DataError& e) {
    CHECK(e.kind() == DataErrorKind::kIllegalLabel);
    CHECK(std::string(e.what()).find("row 1, col 2") != std::string::npos);
  }
  CHECK(kind_of([] { data::to_mask(io::Raster{1, 1, 3, {0, 0, 0}}, "rgb"); }) ==
        DataErrorKind::kMalformedHeader);
}

TEST_CASE("load_sample and the save/load round trip") {
  TempDir dir("io");
  Rng rng(3);
  for (std::size_t channels : {1u, 3u}) {
    const auto s = random_sample(rng, 7, 5, channels);
    const auto ip = dir.path / (channels == 1 ? "a.pgm" : "a.ppm");
    const auto mp = dir.path / "a_mask.pgm";
    data::save_image(ip, s.image);
    data::save_mask(mp, s.mask);
    const auto first_image = io::read_file(ip), first_mask = io::read_file(mp);
    const auto back = data::load_sample(ip, mp);
    CHECK(back.image.values == s.image.values);
    CHECK(back.mask.labels == s.mask.labels);
    CHECK(back.image.channels == channels);
    data::save_image(ip, back.image);
    data::save_mask(mp, back.mask);
    CHECK(io::read_file(ip) == first_image);
    CHECK(io::read_file(mp) == first_mask);
  }
  data::save_mask(dir.path / "small.pgm", data::Mask{4, 5, std::vector<std::uint8_t>(20)});
  CHECK(kind_of([&] { data::load_sample(dir.path / "a.pgm", dir.path / "small.pgm"); }) ==
        DataErrorKind::kDimensionMismatch);
  io::write_pnm(dir.path / "bad.pgm", io::Raster{7, 5, 1, std::vector<std::uint8_t>(35, 9)});
  CHECK(kind_of([&] { data::load_sample(dir.path / "a.pgm", dir.path / "bad.pgm"); }) ==
        DataErrorKind::kIllegalLabel);
  io::write_file(dir.path / "junk.pgm", bytes("P5\n7 5\n"));
  CHECK(kind_of([&] { data::load_sample(dir.path / "junk.pgm", dir.path / "a_mask.pgm"); }) ==
        DataErrorKind::kMalformedHeader);
}

TEST_CASE("histogram equalisation") {
  const std::vector<std::uint8_t> in{52, 52, 154, 205};
  CHECK(data::hist_equalize(in) == std::vector<std::uint8_t>{0, 0, 128, 255});
  const std::vector<std::uint8_t> flat(9, 77);
  CHECK(data::hist_equalize(flat) == flat);

  // Direct CDF oracle with rational round-half-up.
  auto oracle = [](const std::vector<std::uint8_t>& p) {
    std::vector<std::uint64_t> cdf(256, 0);
    for (auto v : p) ++cdf[v];
    for (int i = 1; i < 256; ++i) cdf[i] += cdf[i - 1];
    std::uint64_t cmin = 0;
    for (auto c : cdf)
      if (c > 0) {
        cmin = c;
        break;
      }
    const std::uint64_t n = p.size();
    std::vector<std::uint8_t> out;
    for (auto v : p) {
      if (n == cmin) {
        out.push_back(v);
        continue;
      }
      // floor(x + 1/2) with x = (cdf - cmin) * 255 / (n - cmin)
      const std::uint64_t num = (cdf[v] - cmin) * 255 * 2 + (n - cmin);
      out.push_back(static_cast<std::uint8_t>(num / (2 * (n - cmin))));
    }
    return out;
  };

  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::uint8_t> p(1 + rng.below(300));
    const std::uint64_t lo = rng.below(200), span = 1 + rng.below(56);
    for (auto& v : p) v = static_cast<std::uint8_t>(lo + rng.below(span));
    const auto out = data::hist_equalize(p);
    CHECK(out == oracle(p));
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = 0; j < p.size(); ++j)
        if (p[i] <= p[j]) REQUIRE(out[i] <= out[j]);
  }
}

TEST_CASE("equalisation is idempotent on equalised images") {
  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::uint8_t> p(1 + rng.below(4096));
    const std::uint64_t lo = rng.below(128), span = 1 + rng.below(128);
    for (auto& v : p) v = static_cast<std::uint8_t>(lo + rng.below(span));
    const auto once = data::hist_equalize(p);
    CHECK(data::hist_equalize(once) == once);
  }
}

TEST_CASE("image equalisation is per channel") {
  Rng rng(7);
  auto s = random_sample(rng, 6, 4, 3);
  const auto eq = data::hist_equalize(s.image);
  const auto raster = data::to_raster(s.image);
  const auto out = data::to_raster(eq);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<std::uint8_t> plane, expect;
    for (std::size_t i = 0; i < 24; ++i) plane.push_back(raster.bytes[i * 3 + c]);
    for (std::size_t i = 0; i < 24; ++i) expect.push_back(out.bytes[i * 3 + c]);
    CHECK(data::hist_equalize(plane) == expect);
  }
}

TEST_CASE("augmentation") {
  Rng rng(9);
  const auto s = random_sample(rng, 12, 10);

  const auto same = data::apply_augment(s, {});
  CHECK(same.image.values == s.image.values);
  CHECK(same.mask.labels == s.mask.labels);

  for (auto flip : {data::AugmentParams{0, 1, true, false}, data::AugmentParams{0, 1, false, true}}) {
    const auto twice = data::apply_augment(data::apply_augment(s, flip), flip);
    CHECK(twice.mask.labels == s.mask.labels);
    CHECK(twice.image.values == s.image.values);
  }
  const auto h = data::apply_augment(s, {0, 1, true, false});
  const auto v = data::apply_augment(s, {0, 1, false, true});
  for (std::size_t y = 0; y < 12; ++y)
    for (std::size_t x = 0; x < 10; ++x) {
      CHECK(h.mask.at(y, x) == s.mask.at(y, 9 - x));
      CHECK(v.mask.at(y, x) == s.mask.at(11 - y, x));
    }

  // A half turn about the centre is the composition of both flips.
  const auto half = data::apply_augment(s, {180, 1, false, false});
  const auto both = data::apply_augment(s, {0, 1, true, true});
  CHECK(half.mask.labels == both.mask.labels);
  for (std::size_t i = 0; i < s.image.values.size(); ++i)
    CHECK(std::abs(half.image.values[i] - both.image.values[i]) <= 1e-9);

  // Shrinking leaves the corners outside the source frame.
  data::Sample ones = s;
  std::fill(ones.image.values.begin(), ones.image.values.end(), 1.0);
  std::fill(ones.mask.labels.begin(), ones.mask.labels.end(), 1);
  const auto small = data::apply_augment(ones, {0, 0.5, false, false});
  CHECK(small.image.at(0, 0, 0) == 0.0);
  CHECK(small.mask.at(0, 0) == 0);
  CHECK(small.image.at(0, 6, 5) == 1.0);
  CHECK(small.mask.at(6, 5) == 1);

  data::AugmentSpec spec;
  Rng draws(10);
  bool saw_h = false, saw_v = false;
  for (int i = 0; i < 2000; ++i) {
    const auto p = data::sample_augment(spec, draws);
    CHECK(std::abs(p.rotation_deg) <= 10.0);
    CHECK(p.scale >= 0.5);
    CHECK(p.scale <= 1.0);
    saw_h = saw_h || p.flip_horizontal;
    saw_v = saw_v || p.flip_vertical;
  }
  CHECK(saw_h);
  CHECK(saw_v);
  spec.flip_horizontal = spec.flip_vertical = false;
  for (int i = 0; i < 100; ++i) {
    const auto p = data::sample_augment(spec, draws);
    CHECK_FALSE(p.flip_horizontal);
    CHECK_FALSE(p.flip_vertical);
  }

  Rng a(11), b(11);
  for (int i = 0; i < 20; ++i) {
    const auto x = data::augment(s, data::AugmentSpec{}, a);
    const auto y = data::augment(s, data::AugmentSpec{}, b);
    CHECK(data::to_raster(x.image).bytes == data::to_raster(y.image).bytes);
    CHECK(x.mask.labels == y.mask.labels);
    CHECK(x.image.h == 12);
    CHECK(x.image.w == 10);
    CHECK(x.mask.h == 12);
    CHECK(x.mask.w == 10);
    for (auto l : x.mask.labels) CHECK(l < 3);
    for (double px : x.image.values) CHECK((px >= 0.0 && px <= 1.0));
  }
}

TEST_CASE("split sizes and determinism") {
  auto ids_of = [](std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
    return ids;
  };
  const auto ten = ids_of(10), fifteen = ids_of(15);
  CHECK(data::split(ten, 0.8, 1).ids(data::Role::kTrain).size() == 8);
  CHECK(data::split(ten, 0.8, 1).ids(data::Role::kTest).size() == 2);
  CHECK(data::split(fifteen, 0.8, 1).ids(data::Role::kTrain).size() == 12);
  CHECK(data::split(fifteen, 0.8, 1).ids(data::Role::kTest).size() == 3);
  CHECK(data::format_manifest(data::split(fifteen, 0.8, 77)) ==
        data::format_manifest(data::split(fifteen, 0.8, 77)));
  CHECK(data::format_manifest(data::split(fifteen, 0.8, 77)) !=
        data::format_manifest(data::split(fifteen, 0.8, 78)));

  for (std::size_t n = 2; n <= 80; ++n) {
    const auto ids = ids_of(n);
    const auto m = data::split(ids, 0.8, n);
    const auto tr = m.ids(data::Role::kTrain), te = m.ids(data::Role::kTest);
    CHECK(tr.size() == static_cast<std::size_t>(std::floor(0.8 * n + 0.5)));
    std::set<std::string> all(tr.begin(), tr.end());
    for (const auto& t : te) CHECK(all.insert(t).second);
    CHECK(all == std::set<std::string>(ids.begin(), ids.end()));
  }
  const std::vector<std::string> one{"a"}, dup{"a", "a"};
  CHECK_THROWS_AS(data::split(one, 0.8, 0), DataError);
  CHECK_THROWS_AS(data::split(dup, 0.8, 0), DataError);
}

TEST_CASE("manifest text format") {
  data::SplitManifest m;
  m.seed = 18446744073709551615ull;
  m.entries = {{"a", data::Role::kTrain, ""}, {"b", data::Role::kTest, ""},
               {"a_aug1", data::Role::kTrain, "a"}};
  const auto text = data::format_manifest(m);
  CHECK(text == "seed=18446744073709551615 ratio=0.8\na\ttrain\nb\ttest\na_aug1\ttrain\ta\n");
  const auto back = data::parse_manifest(text);
  CHECK(back.seed == m.seed);
  CHECK(back.ratio == 0.8);
  REQUIRE(back.entries.size() == 3);
  CHECK(back.entries[2].group_key() == "a");
  CHECK(back.entries[1].group_key() == "b");
  CHECK(data::format_manifest(back) == text);
  for (const char* bad : {"", "seed=1\n", "seed=x ratio=0.8\n", "seed=1 ratio=0.8\na\tvalid\n",
                          "seed=1 ratio=0.8\na\ttrain\na\ttest\n"}) {
    CHECK(kind_of([&] { data::parse_manifest(bad); }) == DataErrorKind::kManifest);
  }
}

TEST_CASE("padding and cropping") {
  Rng rng(12);
  const auto s64 = random_sample(rng, 64, 64);
  const auto p64 = data::pad_to_multiple(s64, 4);
  CHECK(p64.sample.image.values == s64.image.values);
  CHECK(p64.crop.h == 64);

  const auto s65 = random_sample(rng, 65, 65);
  const auto p65 = data::pad_to_multiple(s65, 4);
  CHECK(p65.sample.image.h == 68);
  CHECK(p65.sample.image.w == 68);
  CHECK(p65.sample.mask.h == 68);
  CHECK(p65.crop.h == 65);
  CHECK(p65.crop.w == 65);
  for (std::size_t y = 0; y < 68; ++y)
    for (std::size_t x = 0; x < 68; ++x) {
      if (y < 65 && x < 65) {
        CHECK(p65.sample.image.at(0, y, x) == s65.image.at(0, y, x));
      } else {
        CHECK(p65.sample.image.at(0, y, x) == 0.0);
        CHECK(p65.sample.mask.at(y, x) == 0);
      }
    }
  CHECK(data::crop_mask(p65.sample.mask, p65.crop).labels == s65.mask.labels);
  CHECK(data::pad_image(s65.image, 1).values == s65.image.values);
  CHECK_THROWS(data::pad_to_multiple(s65, 0));
}

TEST_CASE("phantom generator") {
  Rng rng(42);
  const auto phantoms = data::generate_phantoms(200, 64, 64, rng, 0.02);
  REQUIRE(phantoms.size() == 200);
  double tear_share = 0.0, muscle_share = 0.0;
  std::set<std::string> ids;
  for (const auto& s : phantoms) {
    CHECK(ids.insert(s.id).second);
    data::validate(s);
    std::size_t counts[3] = {0, 0, 0};
    for (auto l : s.mask.labels) ++counts[l];
    CHECK(counts[0] > 0);
    CHECK(counts[1] > 0);
    CHECK(counts[2] > 0);
    CHECK(counts[0] > counts[1]);
    CHECK(counts[1] > counts[2]);
    tear_share += counts[2] / 4096.0;
    muscle_share += counts[1] / 4096.0;
    // Tears sit strictly inside the muscle: no tear pixel touches background
    // or the frame.
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        if (s.mask.at(y, x) != 2) continue;
        REQUIRE((y > 0 && x > 0 && y < 63 && x < 63));
        CHECK(s.mask.at(y - 1, x) != 0);
        CHECK(s.mask.at(y + 1, x) != 0);
        CHECK(s.mask.at(y, x - 1) != 0);
        CHECK(s.mask.at(y, x + 1) != 0);
      }
  }
  tear_share /= 200.0;
  muscle_share /= 200.0;
  CHECK(tear_share >= 0.01);
  CHECK(tear_share <= 0.04);
  CHECK(muscle_share > tear_share);

  // Muscle is brighter than background on average.
  const auto& s = phantoms.front();
  double sum[3] = {0, 0, 0}, n[3] = {0, 0, 0};
  for (std::size_t i = 0; i < s.mask.labels.size(); ++i) {
    sum[s.mask.labels[i]] += s.image.values[i];
    ++n[s.mask.labels[i]];
  }
  CHECK(sum[1] / n[1] > sum[2] / n[2]);
  CHECK(sum[2] / n[2] > sum[0] / n[0]);

  Rng again(42);
  const auto twin = data::generate_phantoms(200, 64, 64, again, 0.02);
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(data::to_raster(twin[i].image).bytes == data::to_raster(phantoms[i].image).bytes);
    CHECK(twin[i].mask.labels == phantoms[i].mask.labels);
  }

  for (auto [gh, gw] : {std::pair{32, 32}, std::pair{32, 96}, std::pair{96, 32}}) {
    Rng small(gh * 1000 + gw);
    CHECK(data::generate_phantoms(300, gh, gw, small, 0.02).size() == 300);
  }

  Rng bad(1);
  CHECK_THROWS_AS(data::generate_phantoms(1, 31, 64, bad, 0.02), ConfigError);
  CHECK(kind_of([&] { data::generate_phantoms(1, 64, 64, bad, 0.9); }) ==
        DataErrorKind::kGeneration);
}

TEST_CASE("dataset files and preprocessing") {
  TempDir dir("ds");
  Rng rng(13);
  const auto samples = data::generate_phantoms(6, 32, 32, rng, 0.02);
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  const auto manifest = data::split(ids, 0.8, 13);
  data::save_dataset(dir.path, samples, manifest);
  CHECK(fs::exists(dir.path / "split.manifest"));
  CHECK(fs::exists(dir.path / "images" / (ids[0] + ".pgm")));
  CHECK(fs::exists(dir.path / "masks" / (ids[0] + ".pgm")));
  const auto ds = data::load_dataset(dir.path);
  REQUIRE(ds.samples.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(ds.samples[i].mask.labels == samples[i].mask.labels);
    CHECK(data::to_raster(ds.samples[i].image).bytes == data::to_raster(samples[i].image).bytes);
  }
  CHECK(ds.subset(data::Role::kTrain).size() == 5);
  CHECK(ds.subset(data::Role::kTest).size() == 1);

  data::PreprocessOptions opt;
  opt.augment = 3;
  opt.seed = 21;
  const auto pre = data::preprocess(ds, opt);
  CHECK(pre.samples.size() == 5 * 4 + 1);
  CHECK(pre.subset(data::Role::kTest).size() == 1);
  std::size_t copies = 0;
  for (const auto& e : pre.manifest.entries) {
    const auto pos = e.id.find("_aug");
    if (pos == std::string::npos) continue;
    ++copies;
    CHECK(e.role == data::Role::kTrain);
    CHECK(e.group_key() == e.id.substr(0, pos));
  }
  CHECK(copies == 15);
  const auto pre2 = data::preprocess(ds, opt);
  for (std::size_t i = 0; i < pre.samples.size(); ++i) {
    CHECK(pre.samples[i].id == pre2.samples[i].id);
    CHECK(data::to_raster(pre.samples[i].image).bytes ==
          data::to_raster(pre2.samples[i].image).bytes);
  }
  // Test images are equalised but never augmented.
  const auto test_in = ds.subset(data::Role::kTest).front();
  const auto test_out = pre.subset(data::Role::kTest).front();
  CHECK(plane_of(test_out.image) == data::hist_equalize(plane_of(test_in.image)));
  CHECK(test_out.mask.labels == test_in.mask.labels);

  fs::remove(dir.path / "masks" / (ids[2] + ".pgm"));
  CHECK(kind_of([&] { data::load_dataset(dir.path); }) == DataErrorKind::kIo);
}

TEST_CASE("batches and class weights") {
  data::Sample a{"a", data::Image{1, 4, 1, {0.1, 0.2, 0.3, 0.4}}, data::Mask{1, 4, {0, 0, 0, 1}}};
  data::Sample b{"b", data::Image{1, 4, 1, {0.5, 0.6, 0.7, 0.8}}, data::Mask{1, 4, {0, 0, 1, 2}}};
  const data::Sample* both[] = {&a, &b};
  const auto x = data::stack_images(both);
  CHECK(x.shape() == Shape{2, 1, 1, 4});
  CHECK(x.at(1, 0, 0, 2) == 0.7);
  const auto m = data::stack_masks(both);
  CHECK(m.labels == std::vector<std::uint8_t>{0, 0, 0, 1, 0, 0, 1, 2});
  data::Sample c{"c", data::Image{2, 2, 1, std::vector<double>(4)}, data::Mask{2, 2, {0, 0, 0, 0}}};
  const data::Sample* mixed[] = {&a, &c};
  CHECK_THROWS(data::stack_images(mixed));

  const std::vector<data::Sample> set{a, b};
  const auto f = data::class_frequencies(set);
  CHECK(f == std::vector<double>{5.0 / 8, 2.0 / 8, 1.0 / 8});
  const auto w = data::median_frequency_weights(set);
  CHECK(w.w[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(w.w[1] == 1.0);
  CHECK(w.w[2] == doctest::Approx(2.0).epsilon(1e-15));

  // Classes that never occur keep unit weight; median over present classes.
  const std::vector<data::Sample> no_tear{a};
  const auto w2 = data::median_frequency_weights(no_tear);
  CHECK(w2.w[2] == 1.0);
  CHECK(w2.w[0] == doctest::Approx((0.5 * (0.75 + 0.25)) / 0.75));
  CHECK(w2.w[1] == doctest::Approx((0.5 * (0.75 + 0.25)) / 0.25));
}
