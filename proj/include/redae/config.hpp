#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "redae/data.hpp"
#include "redae/model.hpp"
#include "redae/train.hpp"

namespace redae {

/// Flat `key = value` settings. Blank lines and `#` comments are ignored;
/// unknown or repeated keys are errors.
struct RunConfig {
  train::TrainConfig train = [] {
    train::TrainConfig t;
    t.seed = 42;
    return t;
  }();
  data::AugmentSpec augment;
  std::size_t augment_copies = 4;
  /// Redraw each training batch through `augment` as well.
  bool online_augment = false;
  bool equalize = true;
  model::Variant variant = model::Variant::kSaReDae;
  std::vector<std::size_t> widths{16, 32};
  std::size_t kernel = 3;
  std::filesystem::path data;
  std::filesystem::path checkpoint;
};

RunConfig parse_run_config(const std::string& text, const std::string& name);
RunConfig load_run_config(const std::filesystem::path& path);
/// Every key with its current value; parse_run_config inverts it.
std::string format_run_config(const RunConfig& cfg);

}  // namespace redae
