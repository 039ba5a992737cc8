#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "redae/data.hpp"

namespace redae::metrics {

using Rational = boost::multiprecision::cpp_rational;

struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  bool operator==(const ClassCounts&) const = default;
};

/// One-vs-rest pixel tallies for every class.
struct ConfusionCounts {
  std::vector<ClassCounts> per_class;
  std::uint64_t total = 0;

  explicit ConfusionCounts(std::size_t classes = data::kClassCount)
      : per_class(classes) {}

  std::size_t classes() const { return per_class.size(); }
  std::uint64_t truth_pixels(std::size_t c) const { return per_class[c].tp + per_class[c].fn; }
  std::uint64_t predicted_pixels(std::size_t c) const {
    return per_class[c].tp + per_class[c].fp;
  }

  void accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);
  void accumulate(const data::Mask& pred, const data::Mask& truth);
  void merge(const ConfusionCounts& other);

  bool operator==(const ConfusionCounts&) const = default;
};

// Exact fractions in [0, 1]. Empty denominators score 1.
Rational accuracy_ovr(const ConfusionCounts& k, std::size_t c);
Rational recall(const ConfusionCounts& k, std::size_t c);
Rational iou(const ConfusionCounts& k, std::size_t c);
Rational dice(const ConfusionCounts& k, std::size_t c);
Rational global_accuracy(const ConfusionCounts& k);
Rational mean_accuracy(const ConfusionCounts& k);
Rational weighted_iou(const ConfusionCounts& k);

double percent(const Rational& r);

struct ClassReport {
  std::string name;
  double dice = 0;
  double accuracy_ovr = 0;
  double recall = 0;
  double iou = 0;
  std::uint64_t truth_pixels = 0;
  std::uint64_t predicted_pixels = 0;

  bool operator==(const ClassReport&) const = default;
};

/// All values in percent.
struct MetricsReport {
  std::string model;
  std::vector<ClassReport> classes;
  double global_accuracy = 0;
  double mean_accuracy = 0;
  double weighted_iou = 0;
  std::uint64_t total_pixels = 0;

  bool operator==(const MetricsReport&) const = default;
};

inline constexpr const char* kTableHeader =
    "Region | DS % | Accuracy % | IOU % | Global Acc% | Weighed IOU%";

std::string class_name(std::size_t c);

MetricsReport make_report(const ConfusionCounts& counts, const std::string& model);

/// Muscle and Tear rows under the fixed header. The Accuracy % column shows
/// class recall; the literal one-vs-rest accuracy is in the JSON record.
std::string render_table(const MetricsReport& report);

std::string to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);

/// One row per class per report.
std::string metrics_csv(std::span<const MetricsReport> reports);
/// The first column is `key` (the model name, or the epoch in training logs).
std::string csv_header(const std::string& key = "model");
std::string csv_rows(const MetricsReport& report, const std::string& key_value);

}  // namespace redae::metrics
