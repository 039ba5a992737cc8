#include "redae/cli.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "redae/checkpoint.hpp"
#include "redae/config.hpp"
#include "redae/errors.hpp"
#include "redae/metrics.hpp"
#include "redae/train.hpp"

namespace redae::cli {

namespace fs = std::filesystem;

namespace {

// Stream for the initial weights, kept apart from the shuffling streams.
constexpr std::uint64_t kInitStream = 0x1417;

void report_error(std::ostream& err, const char* category, const std::string& kind,
                  const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = category;
  j["kind"] = kind;
  j["message"] = message;
  err << j.dump() << '\n';
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
  const auto comma = text.find(',');
  auto num = [&](const std::string& s) -> std::size_t {
    if (s.empty() || s.size() > 6 ||
        !std::all_of(s.begin(), s.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
      throw ConfigError(fmt::format("--size expects H,W, got '{}'", text));
    }
    return std::stoul(s);
  };
  if (comma == std::string::npos) throw ConfigError(fmt::format("--size expects H,W, got '{}'", text));
  return {num(text.substr(0, comma)), num(text.substr(comma + 1))};
}

std::map<std::string, std::string> groups(const data::SplitManifest& m) {
  std::map<std::string, std::string> out;
  for (const auto& e : m.entries) out[e.id] = e.group_key();
  return out;
}

std::vector<data::Sample> padded(std::vector<data::Sample> samples, std::size_t multiple) {
  for (auto& s : samples) s = data::pad_to_multiple(s, multiple).sample;
  return samples;
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

struct GenerateArgs {
  std::string out;
  std::size_t count = 200;
  std::string size = "304,304";
  std::uint64_t seed = 42;
  double tear_frac = 0.02;
  double ratio = 0.8;
};

void cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const auto [h, w] = parse_size(a.size);
  if (a.count < 2) throw ConfigError("--count must be at least 2");
  Rng rng(a.seed);
  auto samples = data::generate_phantoms(a.count, h, w, rng, a.tear_frac);
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  const auto manifest = data::split(ids, a.ratio, a.seed);
  data::save_dataset(a.out, samples, manifest);
  out << fmt::format("generated {} phantoms ({}x{}) in {}: {} train, {} test\n", a.count, h, w,
                     a.out, manifest.ids(data::Role::kTrain).size(),
                     manifest.ids(data::Role::kTest).size());
}

struct PreprocessArgs {
  std::string in;
  std::string out;
  bool equalize = false;
  bool no_equalize = false;
  std::optional<std::size_t> augment;
  std::optional<std::uint64_t> seed;
  std::string config;
};

void cmd_preprocess(const PreprocessArgs& a, std::ostream& out) {
  const data::Dataset ds = data::load_dataset(a.in);
  const RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  data::PreprocessOptions opt;
  opt.spec = cfg.augment;
  opt.equalize = a.no_equalize ? false : (a.equalize || cfg.equalize);
  opt.augment = a.augment.value_or(cfg.augment_copies);
  opt.seed = a.seed.value_or(ds.manifest.seed);
  const data::Dataset result = data::preprocess(ds, opt);
  data::save_dataset(a.out, result.samples, result.manifest);
  out << fmt::format("preprocessed {} -> {}: {} train, {} test (equalize={}, augment={})\n",
                     a.in, a.out, result.manifest.ids(data::Role::kTrain).size(),
                     result.manifest.ids(data::Role::kTest).size(), opt.equalize, opt.augment);
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string variant;
  std::string out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> val_fraction;
  bool online_augment = false;
};

fs::path sibling(const fs::path& ckpt, const std::string& suffix) {
  return ckpt.parent_path() / (ckpt.stem().string() + suffix);
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (!a.variant.empty()) cfg.variant = model::parse_variant(a.variant);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.val_fraction) cfg.train.val_fraction = *a.val_fraction;
  if (a.online_augment || cfg.online_augment) cfg.train.online_augment = cfg.augment;
  if (!a.data.empty()) cfg.data = a.data;
  if (!a.out.empty()) cfg.checkpoint = a.out;
  if (cfg.data.empty()) throw ConfigError("no dataset: pass --data or set data in the config");
  if (cfg.checkpoint.empty()) {
    throw ConfigError("no output: pass --out or set checkpoint in the config");
  }
  cfg.train.validate();

  const data::Dataset ds = data::load_dataset(cfg.data);
  auto split = train::carve_validation(ds.subset(data::Role::kTrain), groups(ds.manifest),
                                       cfg.train.val_fraction, cfg.train.seed);
  if (split.train.empty()) {
    throw DataError(DataErrorKind::kManifest, "dataset has no training samples");
  }
  model::Topology topo;
  topo.variant = cfg.variant;
  topo.in_channels = split.train.front().image.channels;
  topo.widths = cfg.widths;
  topo.kernel = cfg.kernel;
  topo.classes = data::kClassCount;
  Rng init = Rng::derive(cfg.train.seed, kInitStream);
  model::Network net = model::build(topo, init);
  const auto train_set = padded(std::move(split.train), topo.spatial_multiple());
  const auto val_set = padded(std::move(split.val), topo.spatial_multiple());

  out << fmt::format("training {} on {} samples ({} validation), {} epochs\n",
                     display_name(cfg.variant), train_set.size(), val_set.size(),
                     cfg.train.epochs);
  train::Callbacks cb;
  cb.on_step = [&](const train::StepRecord& s) {
    out << fmt::format("  epoch {} step {} loss {:.6f}\n", s.epoch, s.step, s.loss);
  };
  cb.on_epoch = [&](const train::EpochRecord& e) {
    std::string line = fmt::format("epoch {}/{} loss {:.6f}", e.epoch, cfg.train.epochs,
                                   e.mean_loss);
    if (e.validation) {
      line += fmt::format(" val DS muscle {:.2f} tear {:.2f}", e.validation->classes[1].dice,
                          e.validation->classes[2].dice);
    }
    out << line << '\n' << std::flush;
  };

  const fs::path ckpt = cfg.checkpoint;
  train::TrainLog log;
  try {
    log = train::train(net, train_set, val_set, cfg.train, cb);
  } catch (const NumericError& e) {
    const fs::path last = sibling(ckpt, ".lastgood.ckpt");
    try {
      checkpoint::save(last, net);
    } catch (const NumericError& unsaved) {
      throw NumericError(fmt::format("{}; last good state not saved: {}", e.what(), unsaved.what()));
    }
    throw NumericError(fmt::format("{}; last good state saved to {}", e.what(), last.string()));
  }
  checkpoint::save(ckpt, net);
  write_text(sibling(ckpt, ".loss.csv"), log.loss_csv());
  write_text(sibling(ckpt, ".metrics.csv"), log.metrics_csv());
  out << fmt::format("wrote {}\n", ckpt.string());
  (void)err;
  return kOk;
}

struct EvalArgs {
  std::string data;
  std::vector<std::string> ckpts;
  std::string split = "test";
  bool oracle = false;
  std::string out_dir = ".";
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.ckpts.empty() && !a.oracle) throw ConfigError("pass --ckpt or --oracle");
  const data::Dataset ds = data::load_dataset(a.data);
  std::vector<data::Sample> samples;
  if (a.split == "test") {
    samples = ds.subset(data::Role::kTest);
  } else if (a.split == "train") {
    samples = ds.subset(data::Role::kTrain);
  } else if (a.split == "all") {
    samples = ds.samples;
  } else {
    throw ConfigError(fmt::format("--split must be test, train or all, got '{}'", a.split));
  }
  if (samples.empty()) {
    throw DataError(DataErrorKind::kManifest, fmt::format("split '{}' is empty", a.split));
  }

  std::vector<metrics::MetricsReport> reports;
  if (a.oracle) {
    metrics::ConfusionCounts k;
    for (const auto& s : samples) k.accumulate(s.mask, s.mask);
    reports.push_back(metrics::make_report(k, "ORACLE"));
  }
  for (const auto& path : a.ckpts) {
    model::Network net = checkpoint::load(path);
    if (net.topology.in_channels != samples.front().image.channels) {
      throw DataError(DataErrorKind::kDimensionMismatch,
                      fmt::format("{} expects {} channels, images have {}", path,
                                  net.topology.in_channels, samples.front().image.channels));
    }
    std::string name = display_name(net.topology.variant);
    if (a.ckpts.size() > 1) name += fmt::format(" [{}]", fs::path(path).stem().string());
    reports.push_back(train::evaluate(net, samples, name, train::thread_budget()));
  }

  for (const auto& r : reports) out << metrics::render_table(r) << '\n';
  fs::create_directories(a.out_dir);
  write_text(fs::path(a.out_dir) / "metrics.csv", metrics::metrics_csv(reports));
  std::string json;
  if (reports.size() == 1) {
    json = metrics::to_json(reports.front());
  } else {
    json = "[\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      json += metrics::to_json(reports[i]);
      if (i + 1 < reports.size()) json.insert(json.size() - 1, ",");
    }
    json += "]\n";
  }
  write_text(fs::path(a.out_dir) / "metrics.json", json);
}

struct PredictArgs {
  std::string ckpt;
  std::string image;
  std::string out;
  bool equalize = false;
};

void cmd_predict(const PredictArgs& a, std::ostream& out) {
  model::Network net = checkpoint::load(a.ckpt);
  const data::Image raw = data::to_image(io::read_pnm(a.image));
  if (raw.channels != net.topology.in_channels) {
    throw DataError(DataErrorKind::kDimensionMismatch,
                    fmt::format("{} expects {} channels, {} has {}", a.ckpt,
                                net.topology.in_channels, a.image, raw.channels));
  }
  const data::Image input = a.equalize ? data::hist_equalize(raw) : raw;
  const data::Mask mask = train::predict_mask(net, input);
  const fs::path mask_file = a.out + "_mask.pgm";
  const fs::path overlay_file = a.out + "_overlay.ppm";
  data::save_mask(mask_file, mask);
  io::write_pnm(overlay_file, overlay(raw, mask));
  out << fmt::format("wrote {} and {}\n", mask_file.string(), overlay_file.string());
}

}  // namespace

io::Raster overlay(const data::Image& image, const data::Mask& mask) {
  if (image.h != mask.h || image.w != mask.w) {
    throw DataError(DataErrorKind::kDimensionMismatch, "overlay: image and mask differ in size");
  }
  const io::Raster src = data::to_raster(image);
  io::Raster r{image.h, image.w, 3, std::vector<std::uint8_t>(image.h * image.w * 3)};
  for (std::size_t i = 0; i < image.h * image.w; ++i) {
    const Rgb& color = mask.labels[i] == data::kTear     ? kTearColor
                       : mask.labels[i] == data::kMuscle ? kMuscleColor
                                                         : kBackgroundColor;
    for (std::size_t c = 0; c < 3; ++c) {
      const unsigned s = src.bytes[i * src.channels + (src.channels == 3 ? c : 0)];
      r.bytes[i * 3 + c] = static_cast<std::uint8_t>((s + color[c] + 1) / 2);
    }
  }
  return r;
}

std::string display_name(model::Variant v) {
  std::string s(model::to_string(v));
  for (char& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Region-and-edge fused encoder-decoder segmentation", "redae"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic phantom dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--count", gen.count, "Number of phantoms")->capture_default_str();
  g->add_option("--size", gen.size, "Image size H,W")->capture_default_str();
  g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  g->add_option("--tear-frac", gen.tear_frac, "Target tear pixel share")->capture_default_str();
  g->add_option("--ratio", gen.ratio, "Training share of the split")->capture_default_str();

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Equalise and augment a dataset");
  p->add_option("--in", pre.in, "Input dataset")->required();
  p->add_option("--out", pre.out, "Output dataset")->required();
  auto* eq = p->add_flag("--equalize", pre.equalize, "Histogram-equalise images (default)");
  p->add_flag("--no-equalize", pre.no_equalize, "Skip equalisation")->excludes(eq);
  p->add_option("--augment", pre.augment,
                "Augmented copies per training image (default 4, or augment_copies)");
  p->add_option("--seed", pre.seed, "Augmentation seed (default: the manifest seed)");
  p->add_option("--config", pre.config,
                "Run config supplying augmentation ranges, augment_copies and equalize");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a network");
  t->add_option("--data", tr.data, "Preprocessed dataset");
  t->add_option("--config", tr.config, "Run config file");
  t->add_option("--variant", tr.variant, "sa-re-dae | re-dae | max-only | avg-only");
  t->add_option("--out", tr.out, "Checkpoint path");
  t->add_option("--epochs", tr.epochs, "Override the configured epoch count");
  t->add_option("--seed", tr.seed, "Override the configured seed");
  t->add_option("--val-fraction", tr.val_fraction, "Validation share (0 disables)");
  t->add_flag("--online-augment", tr.online_augment, "Also redraw every batch through the augment spec");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score checkpoints on a dataset split");
  e->add_option("--data", ev.data, "Dataset")->required();
  e->add_option("--ckpt", ev.ckpts, "Checkpoint (repeatable)");
  e->add_option("--split", ev.split, "test | train | all")->capture_default_str();
  e->add_flag("--oracle", ev.oracle, "Score the ground truth against itself");
  e->add_option("--out-dir", ev.out_dir, "Where metrics.csv/json go")->capture_default_str();

  PredictArgs pr;
  auto* d = app.add_subcommand("predict", "Segment one image");
  d->add_option("--ckpt", pr.ckpt, "Checkpoint")->required();
  d->add_option("--image", pr.image, "PGM/PPM image")->required();
  d->add_option("--out", pr.out, "Output prefix")->required();
  d->add_flag("--equalize", pr.equalize, "Equalise the image before prediction");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::Success& s) {
    app.exit(s, out, err);
    return kOk;
  } catch (const CLI::ParseError& pe) {
    report_error(err, "usage", pe.get_name(), pe.what());
    return kUsage;
  }

  try {
    if (g->parsed()) cmd_generate(gen, out);
    if (p->parsed()) cmd_preprocess(pre, out);
    if (t->parsed()) return cmd_train(tr, out, err);
    if (e->parsed()) cmd_eval(ev, out);
    if (d->parsed()) cmd_predict(pr, out);
  } catch (const ConfigError& x) {
    report_error(err, "usage", "config", x.what());
    return kUsage;
  } catch (const DataError& x) {
    report_error(err, "data", to_string(x.kind()), x.what());
    return kData;
  } catch (const NumericError& x) {
    report_error(err, "numeric", "non_finite", x.what());
    return kNumeric;
  } catch (const ShapeError& x) {
    report_error(err, "data", "shape", x.what());
    return kData;
  } catch (const std::filesystem::filesystem_error& x) {
    report_error(err, "data", "io", x.what());
    return kData;
  } catch (const std::exception& x) {
    report_error(err, "internal", "exception", x.what());
    return 1;
  }
  return kOk;
}

}  // namespace redae::cli
