#include "redae/tensor.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include <fmt/format.h>

#include "redae/errors.hpp"

namespace redae {

const char* to_string(DataErrorKind kind) {
  switch (kind) {
    case DataErrorKind::kIo:
      return "io";
    case DataErrorKind::kMalformedHeader:
      return "malformed_header";
    case DataErrorKind::kDimensionMismatch:
      return "dimension_mismatch";
    case DataErrorKind::kIllegalLabel:
      return "illegal_label";
    case DataErrorKind::kManifest:
      return "manifest";
    case DataErrorKind::kGeneration:
      return "generation";
    case DataErrorKind::kChecksum:
      return "checksum";
    case DataErrorKind::kVersion:
      return "version";
  }
  return "unknown";
}

std::string Shape::str() const {
  return fmt::format("({},{},{},{})", n, c, h, w);
}

void validate_shape(const Shape& shape) {
  if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
    throw ShapeError(fmt::format("tensor shape {} has a zero dimension",
                                 shape.str()));
  }
  constexpr auto kMax = std::numeric_limits<std::size_t>::max() / sizeof(double);
  std::size_t total = 1;
  for (std::size_t d : {shape.n, shape.c, shape.h, shape.w}) {
    if (total > kMax / d) {
      throw ShapeError(fmt::format("tensor shape {} overflows", shape.str()));
    }
    total *= d;
  }
}

void check_finite(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(
          fmt::format("non-finite value {} at element {} of {}", values[i], i,
                      what));
    }
  }
}

Tensor4 Tensor4::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor4 Tensor4::full(const Shape& shape, double value) {
  validate_shape(shape);
  check_finite(std::span<const double>(&value, 1), "fill value");
  auto s = std::make_shared<Storage>();
  s->shape = shape;
  s->data.assign(shape.numel(), value);
  return Tensor4(std::move(s));
}

Tensor4 Tensor4::from_values(const Shape& shape, std::vector<double> values) {
  validate_shape(shape);
  if (values.size() != shape.numel()) {
    throw ShapeError(fmt::format("{} values given for shape {} ({} expected)",
                                 values.size(), shape.str(), shape.numel()));
  }
  check_finite(values, "tensor construction");
  auto s = std::make_shared<Storage>();
  s->shape = shape;
  s->data = std::move(values);
  return Tensor4(std::move(s));
}

Tensor4::Storage& Tensor4::storage() const {
  if (!storage_) throw Error("use of an undefined Tensor4");
  return *storage_;
}

const Shape& Tensor4::shape() const { return storage().shape; }

std::span<const double> Tensor4::data() const { return storage().data; }

std::span<double> Tensor4::mutable_data() { return storage().data; }

std::size_t Tensor4::offset(std::size_t n, std::size_t c, std::size_t h,
                            std::size_t w) const {
  const Shape& s = shape();
  return ((n * s.c + c) * s.h + h) * s.w + w;
}

double Tensor4::at(std::size_t n, std::size_t c, std::size_t h,
                   std::size_t w) const {
  const Shape& s = shape();
  if (n >= s.n || c >= s.c || h >= s.h || w >= s.w) {
    throw ShapeError(fmt::format("index ({},{},{},{}) outside shape {}", n, c,
                                 h, w, s.str()));
  }
  return storage().data[offset(n, c, h, w)];
}

double Tensor4::item() const {
  if (shape() != Shape{1, 1, 1, 1}) {
    throw ShapeError(
        fmt::format("item() needs shape (1,1,1,1), got {}", shape().str()));
  }
  return storage().data[0];
}

bool Tensor4::requires_grad() const {
  return storage_ && storage_->requires_grad;
}

Tensor4& Tensor4::set_requires_grad(bool on) {
  storage().requires_grad = on;
  return *this;
}

bool Tensor4::has_grad() const { return storage_ && storage_->has_grad; }

std::span<const double> Tensor4::grad() const {
  Storage& s = storage();
  if (!s.has_grad) throw TapeError("tensor has no gradient");
  return s.grad;
}

std::span<double> Tensor4::mutable_grad() const {
  Storage& s = storage();
  if (!s.has_grad) {
    s.grad.assign(s.data.size(), 0.0);
    s.has_grad = true;
  }
  return s.grad;
}

void Tensor4::zero_grad() const {
  Storage& s = storage();
  if (s.has_grad) std::fill(s.grad.begin(), s.grad.end(), 0.0);
}

void Tensor4::clear_grad() const {
  Storage& s = storage();
  s.grad.clear();
  s.grad.shrink_to_fit();
  s.has_grad = false;
}

Tensor4 Tensor4::clone() const {
  auto s = std::make_shared<Storage>();
  s->shape = shape();
  s->data = storage().data;
  return Tensor4(std::move(s));
}

}  // namespace redae
