#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "redae/data.hpp"
#include "redae/image_io.hpp"
#include "redae/model.hpp"

namespace redae::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

using Rgb = std::array<std::uint8_t, 3>;
inline constexpr Rgb kBackgroundColor{255, 0, 255};  // magenta
inline constexpr Rgb kMuscleColor{218, 112, 214};    // orchid
inline constexpr Rgb kTearColor{0, 255, 0};          // green

/// 50 % blend of the class colour over the (grey-expanded) image, rounded
/// half up.
io::Raster overlay(const data::Image& image, const data::Mask& mask);

/// "SA-RE-DAE", "RE-DAE", ...
std::string display_name(model::Variant v);

/// Runs one command line (without the program name). Failures print one
/// JSON line on `err` and return a nonzero ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace redae::cli
