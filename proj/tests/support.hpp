#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "redae/autodiff.hpp"
#include "redae/errors.hpp"
#include "redae/layers.hpp"
#include "redae/model.hpp"
#include "redae/rng.hpp"
#include "redae/tensor.hpp"

namespace testing {

using redae::Rng;
using redae::Shape;
using redae::Tensor4;

inline Tensor4 random_tensor(const Shape& s, Rng& rng, double sd = 1.0) {
  std::vector<double> v(s.numel());
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor4::from_values(s, std::move(v));
}

inline redae::nn::LabelMask random_labels(std::size_t n, std::size_t h, std::size_t w,
                                          std::size_t classes, Rng& rng) {
  redae::nn::LabelMask m{n, h, w, std::vector<std::uint8_t>(n * h * w)};
  for (auto& l : m.labels) l = static_cast<std::uint8_t>(rng.below(classes));
  return m;
}

inline bool near_zero(const Tensor4& t, double margin) {
  const auto d = t.data();
  return std::any_of(d.begin(), d.end(), [&](double v) { return std::abs(v) < margin; });
}

// True if some k x k window's two largest entries are closer than margin.
// Windows whose maximum is exactly zero are skipped: after ReLU those entries
// are clamped, so a small perturbation cannot move the argmax.
inline bool near_pool_tie(const Tensor4& t, std::size_t k, double margin) {
  const Shape s = t.shape();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y + k <= s.h; y += k)
        for (std::size_t x = 0; x + k <= s.w; x += k) {
          std::vector<double> win;
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) win.push_back(t.at(n, c, y + i, x + j));
          std::sort(win.rbegin(), win.rend());
          if (win[0] != 0.0 && win[0] - win[1] < margin) return true;
        }
  return false;
}

// A random shape no larger than (2, 3, 8, 8) with even spatial extents.
inline Shape random_small_shape(Rng& rng) {
  return Shape{1 + rng.below(2), 1 + rng.below(3), 2 * (1 + rng.below(4)),
               2 * (1 + rng.below(4))};
}

// Kind of the DataError thrown by f, or nullopt if it returns normally.
inline std::optional<redae::DataErrorKind> data_error_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const redae::DataError& e) {
    return e.kind();
  }
  return std::nullopt;
}

inline constexpr double kKinkMargin = 1e-4;

// Weighted sum with fixed random coefficients, so that every output element
// contributes a distinct slope.
inline Tensor4 probe(const Tensor4& y, const Tensor4& coeff) {
  return redae::sum(redae::mul(y, coeff));
}

// Number of violated pooling laws for one input x (even h, w) and one
// half-size tensor y:
//   avg_pool(avg_upsample(y)) == y
//   unpool(pool(x)) keeps exactly the window maximum, at its index, and zeros
//   pool(unpool(pool(relu x))) == pool(relu x), with the same indices
//   avg_pool(x) <= max_pool(x), equal exactly on constant windows
inline std::size_t pooling_violations(const Tensor4& x, const Tensor4& y) {
  namespace nn = redae::nn;
  const Shape s = x.shape();
  std::size_t bad = 0;
  const auto round = nn::avg_pool(nn::avg_upsample(y, {2}), {2});
  for (std::size_t i = 0; i < y.numel(); ++i) bad += round.data()[i] != y.data()[i];

  const auto mp = nn::max_pool(x, {2});
  const auto up = nn::max_unpool(mp.values, mp.indices, {2});
  const auto ap = nn::avg_pool(x, {2});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t a = 0; a < s.h / 2; ++a)
        for (std::size_t b = 0; b < s.w / 2; ++b) {
          const std::size_t idx =
              mp.indices.offsets[((n * s.c + c) * (s.h / 2) + a) * (s.w / 2) + b];
          bool constant = true;
          double window_max = x.at(n, c, 2 * a, 2 * b);
          for (std::size_t o = 0; o < 4; ++o) {
            const double orig = x.at(n, c, 2 * a + o / 2, 2 * b + o % 2);
            const double v = up.at(n, c, 2 * a + o / 2, 2 * b + o % 2);
            constant = constant && orig == x.at(n, c, 2 * a, 2 * b);
            window_max = std::max(window_max, orig);
            bad += o == idx ? v != orig : v != 0.0;
          }
          bad += mp.values.at(n, c, a, b) != window_max;
          bad += !(ap.at(n, c, a, b) <= mp.values.at(n, c, a, b));
          bad += (ap.at(n, c, a, b) == mp.values.at(n, c, a, b)) != constant;
        }

  const auto act = nn::max_pool(nn::relu(x), {2});
  const auto again = nn::max_pool(nn::max_unpool(act.values, act.indices, {2}), {2});
  for (std::size_t i = 0; i < act.values.numel(); ++i) {
    bad += again.values.data()[i] != act.values.data()[i];
    bad += again.indices.offsets[i] != act.indices.offsets[i];
  }
  return bad;
}

struct GradCase {
  std::string name;
  // One seeded trial; returns the max relative error.
  std::function<double(Rng&)> trial;
};

inline std::vector<GradCase> layer_grad_cases() {
  namespace nn = redae::nn;
  using redae::grad_check;
  std::vector<GradCase> cases;

  cases.push_back({"conv2d", [](Rng& rng) {
    const Shape s = random_small_shape(rng);
    const std::size_t c_out = 1 + rng.below(3);
    const std::size_t k = rng.bernoulli(0.5) ? 3 : 1;
    nn::ConvParams p = nn::make_conv(s.c, c_out, k);
    p.filters = random_tensor(p.filters.shape(), rng);
    p.bias = random_tensor(p.bias.shape(), rng);
    const Tensor4 x = random_tensor(s, rng);
    const Tensor4 coeff = random_tensor({s.n, c_out, s.h, s.w}, rng);
    double err = grad_check([&](const Tensor4& v) { return probe(nn::conv2d(v, p), coeff); }, x);
    err = std::max(err, grad_check([&](const Tensor4& f) {
      nn::ConvParams q = p;
      q.filters = f;
      return probe(nn::conv2d(x, q), coeff);
    }, p.filters));
    err = std::max(err, grad_check([&](const Tensor4& b) {
      nn::ConvParams q = p;
      q.bias = b;
      return probe(nn::conv2d(x, q), coeff);
    }, p.bias));
    return err;
  }});

  auto bn_case = [](nn::BnMode mode) {
    return [mode](Rng& rng) {
      Shape s = random_small_shape(rng);
      nn::BatchNormParams p = nn::make_batch_norm(s.c);
      p.mode = mode;
      p.gamma = random_tensor(p.gamma.shape(), rng);
      p.beta = random_tensor(p.beta.shape(), rng);
      for (auto& m : p.running_mean) m = rng.normal();
      for (auto& v : p.running_var) v = rng.uniform(0.5, 2.0);
      const Tensor4 x = random_tensor(s, rng);
      const Tensor4 coeff = random_tensor(s, rng);
      auto run = [&](const Tensor4& in, const Tensor4& gamma, const Tensor4& beta) {
        nn::BatchNormParams q = p;
        q.gamma = gamma;
        q.beta = beta;
        return probe(nn::batch_norm(in, q), coeff);
      };
      double err = grad_check([&](const Tensor4& v) { return run(v, p.gamma, p.beta); }, x);
      err = std::max(err, grad_check([&](const Tensor4& g) { return run(x, g, p.beta); }, p.gamma));
      err = std::max(err, grad_check([&](const Tensor4& b) { return run(x, p.gamma, b); }, p.beta));
      return err;
    };
  };
  cases.push_back({"batch_norm(train)", bn_case(nn::BnMode::kTrain)});
  cases.push_back({"batch_norm(eval)", bn_case(nn::BnMode::kEval)});

  cases.push_back({"relu", [](Rng& rng) {
    const Shape s = random_small_shape(rng);
    Tensor4 x = random_tensor(s, rng);
    while (near_zero(x, kKinkMargin)) x = random_tensor(s, rng);
    const Tensor4 coeff = random_tensor(s, rng);
    return grad_check([&](const Tensor4& v) { return probe(nn::relu(v), coeff); }, x);
  }});

  cases.push_back({"max_pool", [](Rng& rng) {
    const Shape s = random_small_shape(rng);
    Tensor4 x = random_tensor(s, rng);
    while (near_pool_tie(x, 2, kKinkMargin)) x = random_tensor(s, rng);
    const Tensor4 coeff = random_tensor({s.n, s.c, s.h / 2, s.w / 2}, rng);
    return grad_check([&](const Tensor4& v) { return probe(nn::max_pool(v, {2}).values, coeff); },
                      x);
  }});

  cases.push_back({"max_unpool", [](Rng& rng) {
    const Shape s = random_small_shape(rng);
    const auto idx = nn::max_pool(random_tensor(s, rng), {2}).indices;
    const Tensor4 y = random_tensor(idx.shape, rng);
    const Tensor4 coeff = random_tensor(s, rng);
    return grad_check([&](const Tensor4& v) { return probe(nn::max_unpool(v, idx, {2}), coeff); },
                      y);
  }});

  cases.push_back({"avg_pool", [](Rng& rng) {
    const Shape s = random_small_shape(rng);
    const Tensor4 x = random_tensor(s, rng);
    const Tensor4 coeff = random_tensor({s.n, s.c, s.h / 2, s.w / 2}, rng);
    return grad_check([&](const Tensor4& v) { return probe(nn::avg_pool(v, {2}), coeff); }, x);
  }});

  cases.push_back({"avg_upsample", [](Rng& rng) {
    Shape s = random_small_shape(rng);
    s.h /= 2;
    s.w /= 2;
    const Tensor4 y = random_tensor(s, rng);
    const Tensor4 coeff = random_tensor({s.n, s.c, s.h * 2, s.w * 2}, rng);
    return grad_check([&](const Tensor4& v) { return probe(nn::avg_upsample(v, {2}), coeff); },
                      y);
  }});

  cases.push_back({"concat_channels", [](Rng& rng) {
    const Shape sa = random_small_shape(rng);
    const Shape sb{sa.n, 1 + rng.below(2), sa.h, sa.w};
    const Tensor4 a = random_tensor(sa, rng);
    const Tensor4 b = random_tensor(sb, rng);
    const Tensor4 coeff = random_tensor({sa.n, sa.c + sb.c, sa.h, sa.w}, rng);
    return std::max(
        grad_check([&](const Tensor4& v) { return probe(nn::concat_channels(v, b), coeff); }, a),
        grad_check([&](const Tensor4& v) { return probe(nn::concat_channels(a, v), coeff); }, b));
  }});

  cases.push_back({"softmax+weighted_ce", [](Rng& rng) {
    Shape s = random_small_shape(rng);
    s.c = 3;
    const Tensor4 logits = random_tensor(s, rng, 2.0);
    const auto labels = random_labels(s.n, s.h, s.w, 3, rng);
    const nn::ClassWeights w{{rng.uniform(0.1, 1.0), rng.uniform(0.5, 2.0), rng.uniform(1.0, 8.0)}};
    return grad_check([&](const Tensor4& v) {
      return nn::weighted_cross_entropy(nn::softmax_pixels(v), labels, w);
    }, logits);
  }});

  cases.push_back({"sa-re-dae forward+loss", [](Rng& rng) {
    const Shape s{1 + rng.below(2), 1 + rng.below(3), 8, 8};
    Rng init = Rng::derive(rng.next_u64(), 1);
    redae::model::Topology t;
    t.variant = redae::model::Variant::kSaReDae;
    t.in_channels = s.c;
    t.widths = {4, 6};
    redae::model::Network net = redae::model::build(t, init);
    net.class_weights = nn::ClassWeights{{0.2, 1.0, 5.0}};
    // Non-trivial affine parameters so every path carries signal.
    for (auto& p : net.parameters()) {
      if (p.name.find(".bias") != std::string::npos || p.name.find(".beta") != std::string::npos) {
        auto d = p.tensor.mutable_data();
        for (auto& v : d) v = rng.normal(0.0, 0.3);
      }
    }
    const auto labels = random_labels(s.n, s.h, s.w, 3, rng);
    Tensor4 x;
    for (;;) {
      x = random_tensor(s, rng);
      redae::model::ForwardTrace trace;
      {
        redae::NoGradGuard ng;
        redae::model::forward(net, x, {&trace});
      }
      bool kink = false;
      for (const auto& r : trace.relu_inputs) kink = kink || near_zero(r, kKinkMargin);
      for (const auto& p : trace.pool_inputs) kink = kink || near_pool_tie(p, 2, kKinkMargin);
      if (!kink) break;
    }
    return grad_check([&](const Tensor4& v) { return redae::model::loss(net, v, labels); }, x);
  }});

  return cases;
}

using Rational = boost::multiprecision::cpp_rational;

// Brute-force per-pixel recount, independent of ConfusionCounts.
struct OracleMetrics {
  std::vector<Rational> accuracy_ovr, recall, iou, dice;
  Rational global, mean, weighted_iou;
};

inline OracleMetrics oracle_metrics(const std::vector<std::uint8_t>& pred,
                                    const std::vector<std::uint8_t>& truth,
                                    std::size_t classes) {
  OracleMetrics m;
  const std::int64_t total = static_cast<std::int64_t>(pred.size());
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  m.global = Rational(correct) / total;
  m.weighted_iou = 0;
  m.mean = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::int64_t both = 0, only_pred = 0, only_truth = 0, neither = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == c, t = truth[i] == c;
      both += p && t;
      only_pred += p && !t;
      only_truth += !p && t;
      neither += !p && !t;
    }
    auto frac = [](std::int64_t a, std::int64_t b) { return b == 0 ? Rational(1) : Rational(a) / b; };
    m.accuracy_ovr.push_back(frac(both + neither, total));
    m.recall.push_back(frac(both, both + only_truth));
    m.iou.push_back(frac(both, both + only_pred + only_truth));
    m.dice.push_back(frac(2 * both, 2 * both + only_pred + only_truth));
    m.mean += m.recall.back();
    m.weighted_iou += Rational(both + only_truth) / total * m.iou.back();
  }
  m.mean /= static_cast<std::int64_t>(classes);
  return m;
}

}  // namespace testing
