#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace redae {

/// Extents of a rank-4 (batch, channel, rows, cols) array.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Throws ShapeError when a dimension is zero or the element count overflows.
void validate_shape(const Shape& shape);

/// Dense rank-4 array of doubles in row-major (n, c, h, w) order with an
/// optional gradient buffer.
///
/// Tensor4 is a handle: copies alias the same storage, which is what lets the
/// tape write gradients into parameters owned elsewhere. Use clone() for an
/// independent deep copy. Values are treated as immutable once an operation
/// has produced them; only parameters are updated in place (by optimizers and
/// checkpoint loading) through mutable_data().
class Tensor4 {
 public:
  Tensor4() = default;

  static Tensor4 zeros(const Shape& shape);
  static Tensor4 full(const Shape& shape, double value);
  static Tensor4 from_values(const Shape& shape, std::vector<double> values);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  std::span<const double> data() const;
  std::span<double> mutable_data();

  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;
  std::size_t offset(std::size_t n, std::size_t c, std::size_t h,
                     std::size_t w) const;

  /// The single value of a (1,1,1,1) tensor.
  double item() const;

  bool requires_grad() const;
  Tensor4& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient buffer, allocated (zero-filled) on first access. The gradient
  /// slot is the one mutable part of a shared handle.
  std::span<double> mutable_grad() const;
  void zero_grad() const;
  void clear_grad() const;

  /// Deep copy of the values; the copy does not track gradients.
  Tensor4 clone() const;

  /// True when both handles refer to the same storage.
  bool same_storage(const Tensor4& other) const {
    return storage_ == other.storage_;
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool has_grad = false;
    bool requires_grad = false;
  };

  explicit Tensor4(std::shared_ptr<Storage> storage)
      : storage_(std::move(storage)) {}

  Storage& storage() const;

  std::shared_ptr<Storage> storage_;
};

/// Throws NumericError naming `what` if any value is NaN or infinite.
void check_finite(std::span<const double> values, const char* what);

}  // namespace redae
