#include "redae/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "redae/errors.hpp"
#include "redae/image_io.hpp"

namespace redae {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, v));
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, v));
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, v));
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError(fmt::format("{}: empty list", key));
  return out;
}

std::vector<double> parse_weights(const std::string& key, const std::string& v) {
  if (v == "auto") return {};
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_real(key, trim(item)));
  if (out.empty()) throw ConfigError(fmt::format("{}: empty list", key));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"learning_rate", [](RunConfig& c, auto& k, auto& v) { c.train.learning_rate = parse_real(k, v); }},
      {"momentum", [](RunConfig& c, auto& k, auto& v) { c.train.momentum = parse_real(k, v); }},
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = parse_number<std::size_t>(k, v); }},
      {"epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = parse_number<std::size_t>(k, v); }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = parse_number<std::uint64_t>(k, v); }},
      {"shuffle", [](RunConfig& c, auto& k, auto& v) { c.train.shuffle = parse_bool(k, v); }},
      {"log_every", [](RunConfig& c, auto& k, auto& v) { c.train.log_every = parse_number<std::size_t>(k, v); }},
      {"val_fraction", [](RunConfig& c, auto& k, auto& v) { c.train.val_fraction = parse_real(k, v); }},
      {"class_weights", [](RunConfig& c, auto& k, auto& v) { c.train.class_weights = parse_weights(k, v); }},
      {"rotation_deg", [](RunConfig& c, auto& k, auto& v) { c.augment.max_rotation_deg = parse_real(k, v); }},
      {"min_scale", [](RunConfig& c, auto& k, auto& v) { c.augment.min_scale = parse_real(k, v); }},
      {"max_scale", [](RunConfig& c, auto& k, auto& v) { c.augment.max_scale = parse_real(k, v); }},
      {"flip_horizontal", [](RunConfig& c, auto& k, auto& v) { c.augment.flip_horizontal = parse_bool(k, v); }},
      {"flip_vertical", [](RunConfig& c, auto& k, auto& v) { c.augment.flip_vertical = parse_bool(k, v); }},
      {"augment_copies", [](RunConfig& c, auto& k, auto& v) { c.augment_copies = parse_number<std::size_t>(k, v); }},
      {"online_augment", [](RunConfig& c, auto& k, auto& v) { c.online_augment = parse_bool(k, v); }},
      {"equalize", [](RunConfig& c, auto& k, auto& v) { c.equalize = parse_bool(k, v); }},
      {"variant", [](RunConfig& c, auto&, auto& v) { c.variant = model::parse_variant(v); }},
      {"widths", [](RunConfig& c, auto& k, auto& v) { c.widths = parse_list(k, v); }},
      {"kernel", [](RunConfig& c, auto& k, auto& v) { c.kernel = parse_number<std::size_t>(k, v); }},
      {"data", [](RunConfig& c, auto&, auto& v) { c.data = v; }},
      {"checkpoint", [](RunConfig& c, auto&, auto& v) { c.checkpoint = v; }},
  };
  return table;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& name) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected key = value", name, line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError(fmt::format("{}:{}: unknown key '{}'", name, line_no, key));
    }
    if (!seen.insert(key).second) {
      throw ConfigError(fmt::format("{}:{}: key '{}' given twice", name, line_no, key));
    }
    try {
      it->second(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", name, line_no, e.what()));
    }
  }
  cfg.train.validate();
  if (cfg.augment.min_scale <= 0 || cfg.augment.min_scale > cfg.augment.max_scale) {
    throw ConfigError(fmt::format("{}: need 0 < min_scale <= max_scale", name));
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_run_config(std::string(bytes.begin(), bytes.end()), path.string());
}

std::string format_run_config(const RunConfig& c) {
  auto b = [](bool v) { return v ? "true" : "false"; };
  std::string widths;
  for (std::size_t i = 0; i < c.widths.size(); ++i) {
    widths += (i ? "," : "") + std::to_string(c.widths[i]);
  }
  std::string out;
  out += fmt::format("learning_rate = {}\n", c.train.learning_rate);
  out += fmt::format("momentum = {}\n", c.train.momentum);
  out += fmt::format("batch_size = {}\n", c.train.batch_size);
  out += fmt::format("epochs = {}\n", c.train.epochs);
  out += fmt::format("seed = {}\n", c.train.seed);
  out += fmt::format("shuffle = {}\n", b(c.train.shuffle));
  out += fmt::format("log_every = {}\n", c.train.log_every);
  out += fmt::format("val_fraction = {}\n", c.train.val_fraction);
  if (c.train.class_weights.empty()) {
    out += "class_weights = auto\n";
  } else {
    out += fmt::format("class_weights = {}\n", fmt::join(c.train.class_weights, ","));
  }
  out += fmt::format("rotation_deg = {}\n", c.augment.max_rotation_deg);
  out += fmt::format("min_scale = {}\n", c.augment.min_scale);
  out += fmt::format("max_scale = {}\n", c.augment.max_scale);
  out += fmt::format("flip_horizontal = {}\n", b(c.augment.flip_horizontal));
  out += fmt::format("flip_vertical = {}\n", b(c.augment.flip_vertical));
  out += fmt::format("augment_copies = {}\n", c.augment_copies);
  out += fmt::format("online_augment = {}\n", b(c.online_augment));
  out += fmt::format("equalize = {}\n", b(c.equalize));
  out += fmt::format("variant = {}\n", model::to_string(c.variant));
  out += fmt::format("widths = {}\n", widths);
  out += fmt::format("kernel = {}\n", c.kernel);
  out += fmt::format("data = {}\n", c.data.string());
  out += fmt::format("checkpoint = {}\n", c.checkpoint.string());
  return out;
}

}  // namespace redae
