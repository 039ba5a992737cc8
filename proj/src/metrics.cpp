#include "redae/metrics.hpp"

#include <fmt/format.h>

#include "json.hpp"
#include "redae/errors.hpp"

namespace redae::metrics {

namespace {

Rational ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return Rational(1);
  return Rational(num) / Rational(den);
}

void require_pixels(const ConfusionCounts& k) {
  if (k.total == 0) throw Error("metrics need at least one accumulated pixel");
}

}  // namespace

void ConfusionCounts::accumulate(std::span<const std::uint8_t> pred,
                                 std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) {
    throw DataError(DataErrorKind::kDimensionMismatch,
                    fmt::format("prediction has {} pixels but truth has {}", pred.size(),
                                truth.size()));
  }
  const std::size_t n = classes();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t p = pred[i];
    const std::size_t t = truth[i];
    if (p >= n || t >= n) {
      throw DataError(DataErrorKind::kIllegalLabel,
                      fmt::format("label {} at pixel {} exceeds class count {}",
                                  p >= n ? p : t, i, n));
    }
    if (p == t) {
      ++per_class[p].tp;
    } else {
      ++per_class[p].fp;
      ++per_class[t].fn;
    }
  }
  // Every class that is neither the prediction nor the truth gets a TN.
  for (std::size_t c = 0; c < n; ++c) {
    auto& k = per_class[c];
    k.tn = total + pred.size() - (k.tp + k.fp + k.fn);
  }
  total += pred.size();
}

void ConfusionCounts::accumulate(const data::Mask& pred, const data::Mask& truth) {
  if (pred.h != truth.h || pred.w != truth.w) {
    throw DataError(DataErrorKind::kDimensionMismatch,
                    fmt::format("prediction is {}x{} but truth is {}x{}", pred.h, pred.w,
                                truth.h, truth.w));
  }
  accumulate(pred.labels, truth.labels);
}

void ConfusionCounts::merge(const ConfusionCounts& other) {
  if (other.classes() != classes()) {
    throw ConfigError(fmt::format("cannot merge counts over {} and {} classes", classes(),
                                  other.classes()));
  }
  for (std::size_t c = 0; c < classes(); ++c) {
    per_class[c].tp += other.per_class[c].tp;
    per_class[c].fp += other.per_class[c].fp;
    per_class[c].fn += other.per_class[c].fn;
    per_class[c].tn += other.per_class[c].tn;
  }
  total += other.total;
}

Rational accuracy_ovr(const ConfusionCounts& k, std::size_t c) {
  require_pixels(k);
  const auto& p = k.per_class.at(c);
  return ratio(p.tp + p.tn, p.tp + p.fp + p.fn + p.tn);
}

Rational recall(const ConfusionCounts& k, std::size_t c) {
  const auto& p = k.per_class.at(c);
  return ratio(p.tp, p.tp + p.fn);
}

Rational iou(const ConfusionCounts& k, std::size_t c) {
  const auto& p = k.per_class.at(c);
  return ratio(p.tp, p.tp + p.fp + p.fn);
}

Rational dice(const ConfusionCounts& k, std::size_t c) {
  const auto& p = k.per_class.at(c);
  return ratio(2 * p.tp, 2 * p.tp + p.fp + p.fn);
}

Rational global_accuracy(const ConfusionCounts& k) {
  require_pixels(k);
  std::uint64_t correct = 0;
  for (const auto& p : k.per_class) correct += p.tp;
  return ratio(correct, k.total);
}

Rational mean_accuracy(const ConfusionCounts& k) {
  Rational sum(0);
  for (std::size_t c = 0; c < k.classes(); ++c) sum += recall(k, c);
  return sum / Rational(k.classes());
}

Rational weighted_iou(const ConfusionCounts& k) {
  require_pixels(k);
  Rational sum(0);
  for (std::size_t c = 0; c < k.classes(); ++c) {
    sum += ratio(k.truth_pixels(c), k.total) * iou(k, c);
  }
  return sum;
}

double percent(const Rational& r) {
  return static_cast<double>(boost::multiprecision::numerator(r) * 100) /
         static_cast<double>(boost::multiprecision::denominator(r));
}

std::string class_name(std::size_t c) {
  switch (c) {
    case data::kBackground: return "Background";
    case data::kMuscle: return "Muscle";
    case data::kTear: return "Tear";
    default: return fmt::format("Class{}", c);
  }
}

MetricsReport make_report(const ConfusionCounts& k, const std::string& model) {
  require_pixels(k);
  MetricsReport r;
  r.model = model;
  r.total_pixels = k.total;
  for (std::size_t c = 0; c < k.classes(); ++c) {
    r.classes.push_back(ClassReport{class_name(c), percent(dice(k, c)),
                                    percent(accuracy_ovr(k, c)), percent(recall(k, c)),
                                    percent(iou(k, c)), k.truth_pixels(c),
                                    k.predicted_pixels(c)});
  }
  r.global_accuracy = percent(global_accuracy(k));
  r.mean_accuracy = percent(mean_accuracy(k));
  r.weighted_iou = percent(weighted_iou(k));
  return r;
}

std::string render_table(const MetricsReport& r) {
  std::string out = fmt::format("Model: {}\n{}\n", r.model, kTableHeader);
  bool first = true;
  for (std::size_t c : {std::size_t{data::kMuscle}, std::size_t{data::kTear}}) {
    if (c >= r.classes.size()) continue;
    const auto& k = r.classes[c];
    if (first) {
      out += fmt::format("{} | {:.2f} | {:.2f} | {:.2f} | {:.2f} | {:.2f}\n", k.name, k.dice,
                         k.recall, k.iou, r.global_accuracy, r.weighted_iou);
      first = false;
    } else {
      out += fmt::format("{} | {:.2f} | {:.2f} | {:.2f} |  | \n", k.name, k.dice, k.recall,
                         k.iou);
    }
  }
  return out;
}

std::string to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["total_pixels"] = r.total_pixels;
  j["global_accuracy"] = r.global_accuracy;
  j["mean_accuracy"] = r.mean_accuracy;
  j["weighted_iou"] = r.weighted_iou;
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& k : r.classes) {
    j["classes"].push_back({{"name", k.name},
                            {"dice", k.dice},
                            {"accuracy_ovr", k.accuracy_ovr},
                            {"recall", k.recall},
                            {"iou", k.iou},
                            {"truth_pixels", k.truth_pixels},
                            {"predicted_pixels", k.predicted_pixels}});
  }
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    MetricsReport r;
    r.model = j.at("model").get<std::string>();
    r.total_pixels = j.at("total_pixels").get<std::uint64_t>();
    r.global_accuracy = j.at("global_accuracy").get<double>();
    r.mean_accuracy = j.at("mean_accuracy").get<double>();
    r.weighted_iou = j.at("weighted_iou").get<double>();
    for (const auto& k : j.at("classes")) {
      r.classes.push_back(ClassReport{
          k.at("name").get<std::string>(), k.at("dice").get<double>(),
          k.at("accuracy_ovr").get<double>(), k.at("recall").get<double>(),
          k.at("iou").get<double>(), k.at("truth_pixels").get<std::uint64_t>(),
          k.at("predicted_pixels").get<std::uint64_t>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataErrorKind::kMalformedHeader,
                    fmt::format("metrics JSON: {}", e.what()));
  }
}

std::string csv_header(const std::string& key) {
  return key +
         ",class,dice,accuracy_ovr,recall,iou,global_accuracy,mean_accuracy,weighted_iou,"
         "truth_pixels,predicted_pixels\n";
}

std::string csv_rows(const MetricsReport& r, const std::string& key_value) {
  std::string out;
  for (const auto& k : r.classes) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", key_value, k.name, k.dice,
                       k.accuracy_ovr, k.recall, k.iou, r.global_accuracy, r.mean_accuracy,
                       r.weighted_iou, k.truth_pixels, k.predicted_pixels);
  }
  return out;
}

std::string metrics_csv(std::span<const MetricsReport> reports) {
  std::string out = csv_header();
  for (const auto& r : reports) out += csv_rows(r, r.model);
  return out;
}

}  // namespace redae::metrics
