#include "redae/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "redae/errors.hpp"

namespace redae {

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::push(const char* name, Tensor4 output, BackwardFn backward) {
  entries_.push_back(Entry{name, std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor4& loss) {
  if (!loss.defined() || loss.shape() != Shape{1, 1, 1, 1}) {
    throw TapeError(fmt::format("backward needs a (1,1,1,1) loss, got {}",
                                loss.defined() ? loss.shape().str() : "undefined"));
  }
  if (entries_.empty()) {
    throw TapeError("backward called on an empty tape (no forward pass recorded)");
  }
  const auto found = std::find_if(
      entries_.begin(), entries_.end(),
      [&](const Entry& e) { return e.output.same_storage(loss); });
  if (found == entries_.end()) {
    throw TapeError("loss was not produced on the current tape");
  }

  for (Entry& e : entries_) e.output.clear_grad();
  Tensor4 seed = loss;
  seed.mutable_grad()[0] = 1.0;

  // Entries after the loss cannot influence it.
  const auto last = static_cast<std::size_t>(found - entries_.begin());
  for (std::size_t i = last + 1; i-- > 0;) {
    Entry& e = entries_[i];
    if (!e.output.has_grad()) continue;  // not reachable from the loss
    e.backward();
  }
  entries_.clear();
}

namespace autodiff {

bool should_record(std::initializer_list<const Tensor4*> inputs) {
  if (!Tape::current().recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor4* t) { return t->requires_grad(); });
}

Tensor4 make_output(const Shape& shape, std::vector<double>&& values,
                    const char* op) {
  check_finite(values, op);
  return Tensor4::from_values(shape, std::move(values));
}

void record(const char* op, Tensor4& output, Tape::BackwardFn backward) {
  output.set_requires_grad(true);
  Tape::current().push(op, output, std::move(backward));
}

void accumulate_grad(const Tensor4& t, std::span<const double> delta) {
  if (!t.requires_grad()) return;
  auto g = t.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace autodiff

void backward(const Tensor4& loss) { Tape::current().backward(loss); }

namespace {

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op,
                                 a.shape().str(), b.shape().str()));
  }
}

}  // namespace

Tensor4 add(const Tensor4& a, const Tensor4& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + y[i];
  Tensor4 out = autodiff::make_output(a.shape(), std::move(v), "add");
  if (autodiff::should_record({&a, &b})) {
    autodiff::record("add", out, [a, b, out]() {
      autodiff::accumulate_grad(a, out.grad());
      autodiff::accumulate_grad(b, out.grad());
    });
  }
  return out;
}

Tensor4 add(const Tensor4& a, double b) {
  const auto x = a.data();
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + b;
  Tensor4 out = autodiff::make_output(a.shape(), std::move(v), "add_scalar");
  if (autodiff::should_record({&a})) {
    autodiff::record("add_scalar", out, [a, out]() {
      autodiff::accumulate_grad(a, out.grad());
    });
  }
  return out;
}

Tensor4 sub(const Tensor4& a, const Tensor4& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] - y[i];
  Tensor4 out = autodiff::make_output(a.shape(), std::move(v), "sub");
  if (autodiff::should_record({&a, &b})) {
    autodiff::record("sub", out, [a, b, out]() {
      autodiff::accumulate_grad(a, out.grad());
      if (b.requires_grad()) {
        auto g = b.mutable_grad();
        const auto go = out.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= go[i];
      }
    });
  }
  return out;
}

Tensor4 mul(const Tensor4& a, const Tensor4& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * y[i];
  Tensor4 out = autodiff::make_output(a.shape(), std::move(v), "mul");
  if (autodiff::should_record({&a, &b})) {
    autodiff::record("mul", out, [a, b, out]() {
      const auto go = out.grad();
      if (a.requires_grad()) {
        auto g = a.mutable_grad();
        const auto y = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * y[i];
      }
      if (b.requires_grad()) {
        auto g = b.mutable_grad();
        const auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * x[i];
      }
    });
  }
  return out;
}

Tensor4 scale(const Tensor4& a, double s) {
  const auto x = a.data();
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * s;
  Tensor4 out = autodiff::make_output(a.shape(), std::move(v), "scale");
  if (autodiff::should_record({&a})) {
    autodiff::record("scale", out, [a, s, out]() {
      auto g = a.mutable_grad();
      const auto go = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * s;
    });
  }
  return out;
}

Tensor4 sum(const Tensor4& a) {
  // Neumaier compensated summation.
  double total = 0.0;
  double carry = 0.0;
  for (double v : a.data()) {
    const double t = total + v;
    carry += std::abs(total) >= std::abs(v) ? (total - t) + v : (v - t) + total;
    total = t;
  }
  Tensor4 out = autodiff::make_output({1, 1, 1, 1}, {total + carry}, "sum");
  if (autodiff::should_record({&a})) {
    autodiff::record("sum", out, [a, out]() {
      const double go = out.grad()[0];
      for (double& g : a.mutable_grad()) g += go;
    });
  }
  return out;
}

Tensor4 reshape(const Tensor4& a, const Shape& shape) {
  validate_shape(shape);
  if (shape.numel() != a.numel()) {
    throw ShapeError(fmt::format("reshape: cannot view {} as {}",
                                 a.shape().str(), shape.str()));
  }
  const auto x = a.data();
  Tensor4 out = autodiff::make_output(
      shape, std::vector<double>(x.begin(), x.end()), "reshape");
  if (autodiff::should_record({&a})) {
    autodiff::record("reshape", out, [a, out]() {
      autodiff::accumulate_grad(a, out.grad());
    });
  }
  return out;
}

Tensor4 slice_channels(const Tensor4& a, std::size_t begin, std::size_t count) {
  const Shape in = a.shape();
  if (count == 0 || begin + count > in.c) {
    throw ShapeError(fmt::format("slice_channels: [{}, {}) outside {} channels",
                                 begin, begin + count, in.c));
  }
  const Shape os{in.n, count, in.h, in.w};
  const std::size_t plane = in.plane();
  const auto x = a.data();
  std::vector<double> v(os.numel());
  for (std::size_t n = 0; n < in.n; ++n) {
    const auto* src = x.data() + (n * in.c + begin) * plane;
    std::copy(src, src + count * plane, v.data() + n * count * plane);
  }
  Tensor4 out = autodiff::make_output(os, std::move(v), "slice_channels");
  if (autodiff::should_record({&a})) {
    autodiff::record("slice_channels", out, [a, out, begin, count, plane]() {
      auto g = a.mutable_grad();
      const auto go = out.grad();
      const Shape s = a.shape();
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < count * plane; ++i) {
          g[(n * s.c + begin) * plane + i] += go[n * count * plane + i];
        }
      }
    });
  }
  return out;
}

double grad_check(const ScalarFn& f, const Tensor4& x, double eps) {
  Tape& tape = Tape::current();
  tape.clear();

  Tensor4 probe = x.clone();
  probe.set_requires_grad(true);
  const Tensor4 loss = f(probe);
  if (loss.shape() != Shape{1, 1, 1, 1}) {
    throw ShapeError("grad_check: function must return a (1,1,1,1) tensor");
  }
  backward(loss);
  std::vector<double> analytic(x.numel(), 0.0);
  if (probe.has_grad()) {
    const auto g = probe.grad();
    std::copy(g.begin(), g.end(), analytic.begin());
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor4 plus = x.clone();
    Tensor4 minus = x.clone();
    plus.mutable_data()[i] += eps;
    minus.mutable_data()[i] -= eps;
    // The realised step, which differs from 2 * eps by rounding.
    const double step = plus.data()[i] - minus.data()[i];
    const double fp = f(plus).item();
    const double fm = f(minus).item();
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError(fmt::format("grad_check: non-finite probe at element {}", i));
    }
    const double numeric = (fp - fm) / step;
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace redae
