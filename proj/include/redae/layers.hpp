#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "redae/tensor.hpp"

namespace redae::nn {

enum class Padding { kSame, kValid };

/// Stride-1 convolution parameters. filters: (c_out, c_in, kh, kw);
/// bias: (1, c_out, 1, 1).
struct ConvParams {
  Tensor4 filters;
  Tensor4 bias;
  Padding padding = Padding::kSame;

  std::size_t in_channels() const { return filters.shape().c; }
  std::size_t out_channels() const { return filters.shape().n; }
};

/// Zero-initialised parameters of the given geometry (not tracked).
ConvParams make_conv(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                     Padding padding = Padding::kSame);

Tensor4 conv2d(const Tensor4& x, const ConvParams& p);

/// max(0, x); the subgradient at exactly 0 is 0.
Tensor4 relu(const Tensor4& x);

enum class BnMode { kTrain, kEval };

struct BatchNormParams {
  Tensor4 gamma;  // (1, c, 1, 1)
  Tensor4 beta;   // (1, c, 1, 1)
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;
  BnMode mode = BnMode::kTrain;

  std::size_t channels() const { return running_mean.size(); }
};

/// gamma = 1, beta = 0, running mean 0, running variance 1.
BatchNormParams make_batch_norm(std::size_t channels);

/// Per-channel normalisation. In train mode the batch statistics are used and
/// the running statistics are updated (unbiased variance); in eval mode only
/// the running statistics are read.
Tensor4 batch_norm(const Tensor4& x, BatchNormParams& p);

/// Non-overlapping k x k window (stride == k).
struct PoolSpec {
  std::size_t k = 2;
};

/// Row-major offset (0 .. k*k-1) of each pooled element's window maximum.
struct PoolIndices {
  Shape shape;
  std::size_t k = 2;
  std::vector<std::uint16_t> offsets;
};

struct MaxPoolResult {
  Tensor4 values;
  PoolIndices indices;
};

/// Window maximum; ties go to the lowest row-major offset.
MaxPoolResult max_pool(const Tensor4& x, PoolSpec spec);

/// Writes each value of `y` to its memorised window position; zeros elsewhere.
Tensor4 max_unpool(const Tensor4& y, const PoolIndices& indices, PoolSpec spec);

Tensor4 avg_pool(const Tensor4& x, PoolSpec spec);

/// Replicates each value across its k x k output window.
Tensor4 avg_upsample(const Tensor4& y, PoolSpec spec);

/// Channels of `a` followed by channels of `b`.
Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);

/// Per-pixel softmax over the channel axis.
Tensor4 softmax_pixels(const Tensor4& logits);

/// Per-pixel class labels of a batch, (n, h, w) row-major.
struct LabelMask {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(std::size_t b, std::size_t r, std::size_t c) const {
    return labels[(b * h + r) * w + c];
  }
};

struct ClassWeights {
  std::vector<double> w;

  static ClassWeights unit(std::size_t classes) {
    return ClassWeights{std::vector<double>(classes, 1.0)};
  }
  std::size_t size() const { return w.size(); }
};

/// Throws unless every weight is finite and strictly positive.
void validate(const ClassWeights& weights);

/// -(sum_p w[l_p] ln prob[l_p]) / (sum_p w[l_p]).
Tensor4 weighted_cross_entropy(const Tensor4& probs, const LabelMask& labels,
                               const ClassWeights& weights);

}  // namespace redae::nn
