#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "redae/layers.hpp"
#include "redae/rng.hpp"
#include "redae/tensor.hpp"

namespace redae::model {

/// RE-DAE fuses max- and average-pool branches; SA-RE-DAE additionally trains
/// with class-weighted loss. MAX-ONLY and AVG-ONLY keep a single branch and
/// have no fusion convolutions.
enum class Variant { kReDae, kSaReDae, kMaxOnly, kAvgOnly };

std::string_view to_string(Variant v);
/// Accepts "re-dae", "sa-re-dae", "max-only", "avg-only".
Variant parse_variant(std::string_view text);

bool uses_max_branch(Variant v);
bool uses_avg_branch(Variant v);

struct Topology {
  Variant variant = Variant::kReDae;
  std::size_t in_channels = 1;
  std::vector<std::size_t> widths{16, 32};
  std::size_t kernel = 3;
  std::size_t classes = 3;

  /// Spatial dims of the input must be multiples of this.
  std::size_t spatial_multiple() const;
};

/// conv -> BN -> ReLU -> {max_pool, avg_pool} -> concat(avg, max) -> 1x1 fuse
struct EncoderBlock {
  nn::ConvParams conv;
  nn::BatchNormParams bn;
  nn::PoolSpec pool;
  std::optional<nn::ConvParams> fuse;
};

/// {max_unpool, avg_upsample} -> concat(unpool, upsample) -> 1x1 fuse
/// -> conv -> BN -> ReLU
struct DecoderBlock {
  std::optional<nn::ConvParams> fuse;
  nn::ConvParams conv;
  nn::BatchNormParams bn;
  nn::PoolSpec pool;
};

struct NamedParam {
  std::string name;
  Tensor4 tensor;
};

class Network {
 public:
  Topology topology;
  /// decoders[i] mirrors encoders[i]; decoders run deepest first.
  std::vector<EncoderBlock> encoders;
  std::vector<DecoderBlock> decoders;
  nn::ConvParams head;
  nn::ClassWeights class_weights;

  /// Trainable tensors in a fixed order (handles alias the network).
  std::vector<NamedParam> parameters();
  std::vector<nn::BatchNormParams*> batch_norms();
  std::size_t parameter_count();

  void set_mode(nn::BnMode mode);
  nn::BnMode mode() const;

  /// Independent deep copy.
  Network clone() const;
};

/// He-normal filters (std = sqrt(2 / fan_in)), zero biases, unit gamma, zero
/// beta, unit class weights.
Network build(Variant variant, std::span<const std::size_t> widths,
              std::size_t classes, Rng& rng, std::size_t in_channels = 1,
              std::size_t kernel = 3);
Network build(const Topology& topology, Rng& rng);

/// Intermediate values kept for inspection by tests and tools.
struct ForwardTrace {
  std::vector<nn::PoolIndices> encoder_indices;
  std::vector<Tensor4> relu_inputs;
  std::vector<Tensor4> pool_inputs;
};

struct ForwardOptions {
  ForwardTrace* trace = nullptr;
  /// Replaces the indices each decoder would take from its mirror encoder
  /// (indexed by encoder).
  const std::vector<nn::PoolIndices>* decoder_indices = nullptr;
};

/// Class logits at the input resolution, shape (n, classes, h, w).
Tensor4 forward(Network& net, const Tensor4& x, const ForwardOptions& options = {});

/// Per-pixel argmax over channels; ties go to the lowest class index.
nn::LabelMask argmax_pixels(const Tensor4& scores);

/// Label mask of softmax(forward(x)), evaluated without recording.
nn::LabelMask predict(Network& net, const Tensor4& x);

/// Weighted cross-entropy of softmax(forward(x)) with the network's weights.
Tensor4 loss(Network& net, const Tensor4& x, const nn::LabelMask& labels);

}  // namespace redae::model
