#include "redae/model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "redae/autodiff.hpp"
#include "redae/errors.hpp"

namespace redae::model {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kReDae:
      return "re-dae";
    case Variant::kSaReDae:
      return "sa-re-dae";
    case Variant::kMaxOnly:
      return "max-only";
    case Variant::kAvgOnly:
      return "avg-only";
  }
  return "unknown";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : {Variant::kReDae, Variant::kSaReDae, Variant::kMaxOnly,
                    Variant::kAvgOnly}) {
    if (text == to_string(v)) return v;
  }
  throw ConfigError(fmt::format(
      "unknown variant '{}' (expected re-dae, sa-re-dae, max-only, avg-only)", text));
}

bool uses_max_branch(Variant v) { return v != Variant::kAvgOnly; }
bool uses_avg_branch(Variant v) { return v != Variant::kMaxOnly; }

std::size_t Topology::spatial_multiple() const {
  return std::size_t{1} << widths.size();
}

namespace {

void he_init(nn::ConvParams& conv, Rng& rng) {
  const Shape f = conv.filters.shape();
  const double stddev = std::sqrt(2.0 / static_cast<double>(f.c * f.h * f.w));
  for (double& v : conv.filters.mutable_data()) v = rng.normal(0.0, stddev);
  conv.filters.set_requires_grad(true);
  conv.bias.set_requires_grad(true);
}

nn::ConvParams init_conv(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                         Rng& rng) {
  nn::ConvParams conv = nn::make_conv(c_in, c_out, kernel, nn::Padding::kSame);
  he_init(conv, rng);
  return conv;
}

nn::BatchNormParams init_bn(std::size_t channels) {
  nn::BatchNormParams bn = nn::make_batch_norm(channels);
  bn.gamma.set_requires_grad(true);
  bn.beta.set_requires_grad(true);
  return bn;
}

bool fused(Variant v) { return uses_max_branch(v) && uses_avg_branch(v); }

nn::ConvParams clone_conv(const nn::ConvParams& c) {
  nn::ConvParams out{c.filters.clone(), c.bias.clone(), c.padding};
  out.filters.set_requires_grad(true);
  out.bias.set_requires_grad(true);
  return out;
}

nn::BatchNormParams clone_bn(const nn::BatchNormParams& b) {
  nn::BatchNormParams out = b;
  out.gamma = b.gamma.clone().set_requires_grad(true);
  out.beta = b.beta.clone().set_requires_grad(true);
  return out;
}

}  // namespace

Network build(const Topology& topology, Rng& rng) {
  if (topology.widths.size() != 2) {
    throw ConfigError(fmt::format("RE-DAE needs exactly 2 encoder widths, got {}",
                                  topology.widths.size()));
  }
  if (topology.classes < 2) {
    throw ConfigError(fmt::format("need at least 2 classes, got {}", topology.classes));
  }
  if (topology.in_channels == 0 || topology.kernel % 2 == 0) {
    throw ConfigError("input channels must be positive and the kernel size odd");
  }
  for (std::size_t w : topology.widths) {
    if (w == 0) throw ConfigError("encoder widths must be positive");
  }

  Network net;
  net.topology = topology;
  const Variant v = topology.variant;
  const std::size_t k = topology.kernel;
  std::size_t c_prev = topology.in_channels;
  for (std::size_t width : topology.widths) {
    EncoderBlock e;
    e.conv = init_conv(c_prev, width, k, rng);
    e.bn = init_bn(width);
    if (fused(v)) e.fuse = init_conv(2 * width, width, 1, rng);
    net.encoders.push_back(std::move(e));
    c_prev = width;
  }
  for (std::size_t i = 0; i < topology.widths.size(); ++i) {
    const std::size_t width = topology.widths[i];
    const std::size_t out = i == 0 ? topology.widths[0] : topology.widths[i - 1];
    DecoderBlock d;
    if (fused(v)) d.fuse = init_conv(2 * width, width, 1, rng);
    d.conv = init_conv(width, out, k, rng);
    d.bn = init_bn(out);
    net.decoders.push_back(std::move(d));
  }
  net.head = init_conv(topology.widths[0], topology.classes, 1, rng);
  net.class_weights = nn::ClassWeights::unit(topology.classes);
  return net;
}

Network build(Variant variant, std::span<const std::size_t> widths,
              std::size_t classes, Rng& rng, std::size_t in_channels,
              std::size_t kernel) {
  Topology t;
  t.variant = variant;
  t.in_channels = in_channels;
  t.widths.assign(widths.begin(), widths.end());
  t.kernel = kernel;
  t.classes = classes;
  return build(t, rng);
}

std::vector<NamedParam> Network::parameters() {
  std::vector<NamedParam> out;
  auto add_conv = [&](const std::string& prefix, nn::ConvParams& c) {
    out.push_back({prefix + ".filters", c.filters});
    out.push_back({prefix + ".bias", c.bias});
  };
  auto add_bn = [&](const std::string& prefix, nn::BatchNormParams& b) {
    out.push_back({prefix + ".gamma", b.gamma});
    out.push_back({prefix + ".beta", b.beta});
  };
  for (std::size_t i = 0; i < encoders.size(); ++i) {
    const std::string p = fmt::format("encoder{}", i + 1);
    add_conv(p + ".conv", encoders[i].conv);
    add_bn(p + ".bn", encoders[i].bn);
    if (encoders[i].fuse) add_conv(p + ".fuse", *encoders[i].fuse);
  }
  for (std::size_t i = 0; i < decoders.size(); ++i) {
    const std::string p = fmt::format("decoder{}", i + 1);
    if (decoders[i].fuse) add_conv(p + ".fuse", *decoders[i].fuse);
    add_conv(p + ".conv", decoders[i].conv);
    add_bn(p + ".bn", decoders[i].bn);
  }
  add_conv("head", head);
  return out;
}

std::vector<nn::BatchNormParams*> Network::batch_norms() {
  std::vector<nn::BatchNormParams*> out;
  for (auto& e : encoders) out.push_back(&e.bn);
  for (auto& d : decoders) out.push_back(&d.bn);
  return out;
}

std::size_t Network::parameter_count() {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

void Network::set_mode(nn::BnMode mode) {
  for (auto* bn : batch_norms()) bn->mode = mode;
}

nn::BnMode Network::mode() const {
  return encoders.empty() ? nn::BnMode::kEval : encoders.front().bn.mode;
}

Network Network::clone() const {
  Network out;
  out.topology = topology;
  for (const auto& e : encoders) {
    EncoderBlock c{clone_conv(e.conv), clone_bn(e.bn), e.pool, std::nullopt};
    if (e.fuse) c.fuse = clone_conv(*e.fuse);
    out.encoders.push_back(std::move(c));
  }
  for (const auto& d : decoders) {
    DecoderBlock c{std::nullopt, clone_conv(d.conv), clone_bn(d.bn), d.pool};
    if (d.fuse) c.fuse = clone_conv(*d.fuse);
    out.decoders.push_back(std::move(c));
  }
  out.head = clone_conv(head);
  out.class_weights = class_weights;
  return out;
}

Tensor4 forward(Network& net, const Tensor4& x, const ForwardOptions& options) {
  const Topology& t = net.topology;
  const Shape s = x.shape();
  if (s.c != t.in_channels) {
    throw ShapeError(fmt::format("network expects {} input channels, got {}",
                                 t.in_channels, s.c));
  }
  const std::size_t m = t.spatial_multiple();
  if (s.h % m != 0 || s.w % m != 0) {
    throw ShapeError(fmt::format(
        "input {}x{} is not a multiple of {}; pad it with pad_to_multiple first",
        s.h, s.w, m));
  }
  const bool use_max = uses_max_branch(t.variant);
  const bool use_avg = uses_avg_branch(t.variant);
  if (options.decoder_indices && options.decoder_indices->size() != net.encoders.size()) {
    throw ShapeError("decoder index override must hold one entry per encoder");
  }

  std::vector<nn::PoolIndices> indices(net.encoders.size());
  Tensor4 h = x;
  for (std::size_t i = 0; i < net.encoders.size(); ++i) {
    EncoderBlock& e = net.encoders[i];
    const Tensor4 pre = nn::batch_norm(nn::conv2d(h, e.conv), e.bn);
    const Tensor4 act = nn::relu(pre);
    if (options.trace) {
      options.trace->relu_inputs.push_back(pre);
      options.trace->pool_inputs.push_back(act);
    }
    Tensor4 edge, region;
    if (use_max) {
      nn::MaxPoolResult mp = nn::max_pool(act, e.pool);
      edge = mp.values;
      indices[i] = std::move(mp.indices);
    }
    if (use_avg) region = nn::avg_pool(act, e.pool);
    if (use_max && use_avg) {
      h = nn::conv2d(nn::concat_channels(region, edge), *e.fuse);
    } else {
      h = use_max ? edge : region;
    }
  }
  if (options.trace) options.trace->encoder_indices = indices;

  for (std::size_t i = net.decoders.size(); i-- > 0;) {
    DecoderBlock& d = net.decoders[i];
    Tensor4 sparse, smooth;
    if (use_max) {
      const auto& idx = options.decoder_indices ? (*options.decoder_indices)[i] : indices[i];
      sparse = nn::max_unpool(h, idx, d.pool);
    }
    if (use_avg) smooth = nn::avg_upsample(h, d.pool);
    if (use_max && use_avg) {
      h = nn::conv2d(nn::concat_channels(sparse, smooth), *d.fuse);
    } else {
      h = use_max ? sparse : smooth;
    }
    const Tensor4 pre = nn::batch_norm(nn::conv2d(h, d.conv), d.bn);
    if (options.trace) options.trace->relu_inputs.push_back(pre);
    h = nn::relu(pre);
  }
  return nn::conv2d(h, net.head);
}

nn::LabelMask argmax_pixels(const Tensor4& scores) {
  const Shape s = scores.shape();
  const auto v = scores.data();
  nn::LabelMask mask{s.n, s.h, s.w, std::vector<std::uint8_t>(s.n * s.plane())};
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      std::size_t best = 0;
      double best_v = v[n * s.c * s.plane() + i];
      for (std::size_t c = 1; c < s.c; ++c) {
        const double cand = v[(n * s.c + c) * s.plane() + i];
        if (cand > best_v) {
          best_v = cand;
          best = c;
        }
      }
      mask.labels[n * s.plane() + i] = static_cast<std::uint8_t>(best);
    }
  }
  return mask;
}

nn::LabelMask predict(Network& net, const Tensor4& x) {
  NoGradGuard no_grad;
  return argmax_pixels(nn::softmax_pixels(forward(net, x)));
}

Tensor4 loss(Network& net, const Tensor4& x, const nn::LabelMask& labels) {
  return nn::weighted_cross_entropy(nn::softmax_pixels(forward(net, x)), labels,
                                    net.class_weights);
}

}  // namespace redae::model
