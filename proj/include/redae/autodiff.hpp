#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "redae/tensor.hpp"

namespace redae {

/// Define-by-run record of the primitive operations of one forward pass.
///
/// Each thread owns one tape (Tape::current()). An operation is recorded when
/// recording is enabled and at least one of its inputs requires a gradient;
/// its output then requires a gradient too. backward() replays the entries in
/// reverse, each exactly once, and clears the tape.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  static Tape& current();

  bool recording() const { return no_grad_depth_ == 0; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  void push(const char* name, Tensor4 output, BackwardFn backward);

  /// Populates gradients of every tracked tensor reachable from `loss`.
  /// Leaf tensors (parameters, inputs) accumulate into their existing
  /// gradient buffer; call zero_grad() between steps.
  void backward(const Tensor4& loss);

 private:
  friend class NoGradGuard;

  struct Entry {
    const char* name;
    Tensor4 output;
    BackwardFn backward;
  };

  std::vector<Entry> entries_;
  int no_grad_depth_ = 0;
};

/// Disables recording on the current thread's tape for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() { ++Tape::current().no_grad_depth_; }
  ~NoGradGuard() { --Tape::current().no_grad_depth_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace autodiff {

/// True when an op over `inputs` must be recorded on the current tape.
bool should_record(std::initializer_list<const Tensor4*> inputs);

/// Wraps freshly computed values as an op result, rejecting non-finite values.
Tensor4 make_output(const Shape& shape, std::vector<double>&& values,
                    const char* op);

/// Records `output` on the current tape and marks it as tracked.
void record(const char* op, Tensor4& output, Tape::BackwardFn backward);

/// Adds `delta` into the gradient of `t` when `t` is tracked.
void accumulate_grad(const Tensor4& t, std::span<const double> delta);

}  // namespace autodiff

/// Gradient of `loss` (shape (1,1,1,1)) w.r.t. all tracked tensors.
void backward(const Tensor4& loss);

Tensor4 add(const Tensor4& a, const Tensor4& b);
Tensor4 add(const Tensor4& a, double b);
Tensor4 sub(const Tensor4& a, const Tensor4& b);
Tensor4 mul(const Tensor4& a, const Tensor4& b);
Tensor4 scale(const Tensor4& a, double s);
/// Sum of all elements as a (1,1,1,1) tensor.
Tensor4 sum(const Tensor4& a);
/// Same values under a new shape of equal element count.
Tensor4 reshape(const Tensor4& a, const Shape& shape);
/// Channels [begin, begin + count) of `a`.
Tensor4 slice_channels(const Tensor4& a, std::size_t begin, std::size_t count);

using ScalarFn = std::function<Tensor4(const Tensor4&)>;

/// Largest |analytic - numeric| / max(1, |numeric|) over the elements of `x`,
/// where the numeric derivative is the central difference with step `eps`.
/// Discards anything pending on the current thread's tape.
double grad_check(const ScalarFn& f, const Tensor4& x, double eps = 1e-5);

}  // namespace redae
