#include "redae/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Core>
#include <fmt/format.h>

#include "redae/autodiff.hpp"
#include "redae/errors.hpp"

namespace redae::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  std::size_t c_in, c_out, kh, kw;
  std::size_t h, w;        // input
  std::size_t oh, ow;      // output
  std::ptrdiff_t pad_h, pad_w;

  std::size_t patch() const { return c_in * kh * kw; }
  bool pointwise() const { return kh == 1 && kw == 1 && pad_h == 0 && pad_w == 0; }
};

ConvGeometry conv_geometry(const Shape& x, const ConvParams& p) {
  const Shape f = p.filters.shape();
  if (x.c != f.c) {
    throw ShapeError(fmt::format(
        "conv2d: input has {} channels, filters expect {}", x.c, f.c));
  }
  if (p.bias.shape() != Shape{1, f.n, 1, 1}) {
    throw ShapeError(fmt::format("conv2d: bias shape {} does not match {} filters",
                                 p.bias.shape().str(), f.n));
  }
  ConvGeometry g{f.c, f.n, f.h, f.w, x.h, x.w, 0, 0, 0, 0};
  if (p.padding == Padding::kSame) {
    if (f.h % 2 == 0 || f.w % 2 == 0) {
      throw ShapeError(fmt::format("conv2d: same padding needs odd kernel, got {}x{}",
                                   f.h, f.w));
    }
    g.pad_h = static_cast<std::ptrdiff_t>(f.h / 2);
    g.pad_w = static_cast<std::ptrdiff_t>(f.w / 2);
    g.oh = x.h;
    g.ow = x.w;
  } else {
    if (f.h > x.h || f.w > x.w) {
      throw ShapeError(fmt::format("conv2d: {}x{} kernel larger than {}x{} input",
                                   f.h, f.w, x.h, x.w));
    }
    g.oh = x.h - f.h + 1;
    g.ow = x.w - f.w + 1;
  }
  return g;
}

// Column matrix (patch, oh*ow) of one image; out-of-frame taps read zero.
void im2col(const double* img, const ConvGeometry& g, double* col) {
  const std::size_t out_plane = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    const double* chan = img + ci * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((ci * g.kh + ki) * g.kw + kj) * out_plane;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki) - g.pad_h;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj) - g.pad_w;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(
            static_cast<std::ptrdiff_t>(g.ow), static_cast<std::ptrdiff_t>(g.w) - dx);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          double* dst = row + oy * g.ow;
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) + dy;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) || lo >= hi) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          std::fill(dst, dst + lo, 0.0);
          const double* src = chan + iy * static_cast<std::ptrdiff_t>(g.w) + dx;
          std::copy(src + lo, src + hi, dst + lo);
          std::fill(dst + hi, dst + g.ow, 0.0);
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* img) {
  const std::size_t out_plane = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    double* chan = img + ci * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((ci * g.kh + ki) * g.kw + kj) * out_plane;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki) - g.pad_h;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj) - g.pad_w;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(
            static_cast<std::ptrdiff_t>(g.ow), static_cast<std::ptrdiff_t>(g.w) - dx);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) + dy;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const double* src = row + oy * g.ow;
          double* dst = chan + iy * static_cast<std::ptrdiff_t>(g.w) + dx;
          for (std::ptrdiff_t ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
        }
      }
    }
  }
}

void require_divisible(const Shape& s, std::size_t k, const char* op) {
  if (k == 0) throw ShapeError(fmt::format("{}: window size must be positive", op));
  if (s.h % k != 0 || s.w % k != 0) {
    throw ShapeError(fmt::format(
        "{}: spatial size {}x{} not divisible by window {} (pad the input first)",
        op, s.h, s.w, k));
  }
}

}  // namespace

ConvParams make_conv(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                     Padding padding) {
  return ConvParams{Tensor4::zeros({c_out, c_in, kernel, kernel}),
                    Tensor4::zeros({1, c_out, 1, 1}), padding};
}

Tensor4 conv2d(const Tensor4& x, const ConvParams& p) {
  const Shape xs = x.shape();
  const ConvGeometry g = conv_geometry(xs, p);
  const std::size_t in_plane = g.h * g.w;
  const std::size_t out_plane = g.oh * g.ow;
  const bool track = autodiff::should_record({&x, &p.filters, &p.bias});

  ConstMapMat weights(p.filters.data().data(), g.c_out, g.patch());
  const auto bias = p.bias.data();
  const auto xd = x.data();

  std::vector<double> out(xs.n * g.c_out * out_plane);
  // Column buffers are kept for the backward pass when recording.
  auto cols = std::make_shared<std::vector<std::vector<double>>>();
  std::vector<double> scratch;
  for (std::size_t n = 0; n < xs.n; ++n) {
    const double* img = xd.data() + n * g.c_in * in_plane;
    const double* col = img;
    if (!g.pointwise()) {
      std::vector<double>& buf = track ? cols->emplace_back() : scratch;
      buf.resize(g.patch() * out_plane);
      im2col(img, g, buf.data());
      col = buf.data();
    }
    MapMat o(out.data() + n * g.c_out * out_plane, g.c_out, out_plane);
    o.noalias() = weights * ConstMapMat(col, g.patch(), out_plane);
    for (std::size_t co = 0; co < g.c_out; ++co) o.row(co).array() += bias[co];
  }

  Tensor4 result =
      autodiff::make_output({xs.n, g.c_out, g.oh, g.ow}, std::move(out), "conv2d");
  if (track) {
    Tensor4 filters = p.filters;
    Tensor4 bias_t = p.bias;
    autodiff::record("conv2d", result, [x, filters, bias_t, result, g, cols]() {
      const auto go = result.grad();
      const std::size_t in_plane = g.h * g.w;
      const std::size_t out_plane = g.oh * g.ow;
      const std::size_t n_batch = x.shape().n;
      ConstMapMat w(filters.data().data(), g.c_out, g.patch());
      if (filters.requires_grad()) {
        MapMat gw(filters.mutable_grad().data(), g.c_out, g.patch());
        for (std::size_t n = 0; n < n_batch; ++n) {
          ConstMapMat gout(go.data() + n * g.c_out * out_plane, g.c_out, out_plane);
          const double* col = g.pointwise() ? x.data().data() + n * g.c_in * in_plane
                                            : (*cols)[n].data();
          gw.noalias() += gout * ConstMapMat(col, g.patch(), out_plane).transpose();
        }
      }
      if (bias_t.requires_grad()) {
        auto gb = bias_t.mutable_grad();
        for (std::size_t n = 0; n < n_batch; ++n) {
          for (std::size_t co = 0; co < g.c_out; ++co) {
            const double* row = go.data() + (n * g.c_out + co) * out_plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < out_plane; ++i) acc += row[i];
            gb[co] += acc;
          }
        }
      }
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        RowMat dcol(g.patch(), out_plane);
        for (std::size_t n = 0; n < n_batch; ++n) {
          ConstMapMat gout(go.data() + n * g.c_out * out_plane, g.c_out, out_plane);
          double* dst = gx.data() + n * g.c_in * in_plane;
          if (g.pointwise()) {
            MapMat(dst, g.c_in, in_plane).noalias() += w.transpose() * gout;
          } else {
            dcol.noalias() = w.transpose() * gout;
            col2im(dcol.data(), g, dst);
          }
        }
      }
    });
  }
  return result;
}

Tensor4 relu(const Tensor4& x) {
  const auto xd = x.data();
  std::vector<double> v(xd.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  Tensor4 out = autodiff::make_output(x.shape(), std::move(v), "relu");
  if (autodiff::should_record({&x})) {
    autodiff::record("relu", out, [x, out]() {
      auto g = x.mutable_grad();
      const auto go = out.grad();
      const auto xd = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xd[i] > 0.0) g[i] += go[i];
      }
    });
  }
  return out;
}

BatchNormParams make_batch_norm(std::size_t channels) {
  BatchNormParams p;
  p.gamma = Tensor4::full({1, channels, 1, 1}, 1.0);
  p.beta = Tensor4::zeros({1, channels, 1, 1});
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  return p;
}

Tensor4 batch_norm(const Tensor4& x, BatchNormParams& p) {
  const Shape s = x.shape();
  if (p.gamma.shape() != Shape{1, s.c, 1, 1} || p.beta.shape() != Shape{1, s.c, 1, 1} ||
      p.running_mean.size() != s.c || p.running_var.size() != s.c) {
    throw ShapeError(fmt::format("batch_norm: parameters for {} channels, input {}",
                                 p.channels(), s.str()));
  }
  const std::size_t plane = s.plane();
  const std::size_t count = s.n * plane;
  const bool train = p.mode == BnMode::kTrain;
  if (train && count < 2) {
    throw NumericError(fmt::format(
        "batch_norm: train mode needs at least 2 values per channel, input {}", s.str()));
  }

  const auto xd = x.data();
  const auto gamma = p.gamma.data();
  const auto beta = p.beta.data();
  std::vector<double> mean(s.c), inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    if (train) {
      double acc = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* src = xd.data() + (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
      }
      const double m = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* src = xd.data() + (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (src[i] - m) * (src[i] - m);
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + p.epsilon);
      const double unbiased = sq / static_cast<double>(count - 1);
      p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * m;
      p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * unbiased;
    } else {
      mean[c] = p.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(p.running_var[c] + p.epsilon);
    }
  }

  std::vector<double> xhat(xd.size());
  std::vector<double> out(xd.size());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (xd[base + i] - mean[c]) * inv_std[c];
        xhat[base + i] = h;
        out[base + i] = gamma[c] * h + beta[c];
      }
    }
  }

  Tensor4 result = autodiff::make_output(s, std::move(out), "batch_norm");
  if (autodiff::should_record({&x, &p.gamma, &p.beta})) {
    Tensor4 g_t = p.gamma;
    Tensor4 b_t = p.beta;
    autodiff::record("batch_norm", result,
                     [x, g_t, b_t, result, train, inv_std = std::move(inv_std),
                      xhat = std::move(xhat)]() {
      const Shape s = x.shape();
      const std::size_t plane = s.plane();
      const double count = static_cast<double>(s.n * plane);
      const auto go = result.grad();
      const auto gamma = g_t.data();
      std::vector<double> sum_dy(s.c, 0.0), sum_dy_xhat(s.c, 0.0);
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
          const std::size_t base = (n * s.c + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy[c] += go[base + i];
            sum_dy_xhat[c] += go[base + i] * xhat[base + i];
          }
        }
      }
      if (g_t.requires_grad()) {
        auto gg = g_t.mutable_grad();
        for (std::size_t c = 0; c < s.c; ++c) gg[c] += sum_dy_xhat[c];
      }
      if (b_t.requires_grad()) {
        auto gb = b_t.mutable_grad();
        for (std::size_t c = 0; c < s.c; ++c) gb[c] += sum_dy[c];
      }
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t n = 0; n < s.n; ++n) {
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t base = (n * s.c + c) * plane;
            const double k = gamma[c] * inv_std[c];
            for (std::size_t i = 0; i < plane; ++i) {
              if (train) {
                gx[base + i] += k * (go[base + i] - sum_dy[c] / count -
                                     xhat[base + i] * sum_dy_xhat[c] / count);
              } else {
                gx[base + i] += k * go[base + i];
              }
            }
          }
        }
      }
    });
  }
  return result;
}

MaxPoolResult max_pool(const Tensor4& x, PoolSpec spec) {
  const Shape s = x.shape();
  const std::size_t k = spec.k;
  require_divisible(s, k, "max_pool");
  if (k * k > std::numeric_limits<std::uint16_t>::max()) {
    throw ShapeError("max_pool: window too large");
  }
  const Shape os{s.n, s.c, s.h / k, s.w / k};
  const auto xd = x.data();
  std::vector<double> v(os.numel());
  PoolIndices idx{os, k, std::vector<std::uint16_t>(os.numel())};
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const double* src = xd.data() + nc * s.plane();
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        const double* win = src + oy * k * s.w + ox * k;
        double best = win[0];
        std::uint16_t arg = 0;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            if (win[i * s.w + j] > best) {
              best = win[i * s.w + j];
              arg = static_cast<std::uint16_t>(i * k + j);
            }
          }
        }
        const std::size_t o = nc * os.plane() + oy * os.w + ox;
        v[o] = best;
        idx.offsets[o] = arg;
      }
    }
  }
  Tensor4 out = autodiff::make_output(os, std::move(v), "max_pool");
  if (autodiff::should_record({&x})) {
    autodiff::record("max_pool", out, [x, out, offsets = idx.offsets, k]() {
      const Shape s = x.shape();
      const Shape os = out.shape();
      auto g = x.mutable_grad();
      const auto go = out.grad();
      for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
        for (std::size_t oy = 0; oy < os.h; ++oy) {
          for (std::size_t ox = 0; ox < os.w; ++ox) {
            const std::size_t o = nc * os.plane() + oy * os.w + ox;
            const std::size_t i = offsets[o] / k;
            const std::size_t j = offsets[o] % k;
            g[nc * s.plane() + (oy * k + i) * s.w + ox * k + j] += go[o];
          }
        }
      }
    });
  }
  return {out, std::move(idx)};
}

Tensor4 max_unpool(const Tensor4& y, const PoolIndices& indices, PoolSpec spec) {
  const Shape s = y.shape();
  const std::size_t k = spec.k;
  if (s != indices.shape || indices.offsets.size() != s.numel()) {
    throw ShapeError(fmt::format("max_unpool: values {} but indices {}", s.str(),
                                 indices.shape.str()));
  }
  if (indices.k != k) {
    throw ShapeError(fmt::format("max_unpool: indices recorded for window {}, unpooling with {}",
                                 indices.k, k));
  }
  const Shape os{s.n, s.c, s.h * k, s.w * k};
  validate_shape(os);
  const auto yd = y.data();
  std::vector<std::size_t> target(s.numel());
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    for (std::size_t oy = 0; oy < s.h; ++oy) {
      for (std::size_t ox = 0; ox < s.w; ++ox) {
        const std::size_t o = nc * s.plane() + oy * s.w + ox;
        const std::size_t off = indices.offsets[o];
        if (off >= k * k) {
          throw ShapeError(fmt::format("max_unpool: offset {} outside a {}x{} window",
                                       off, k, k));
        }
        target[o] = nc * os.plane() + (oy * k + off / k) * os.w + ox * k + off % k;
      }
    }
  }
  std::vector<double> v(os.numel(), 0.0);
  for (std::size_t o = 0; o < target.size(); ++o) v[target[o]] = yd[o];
  Tensor4 out = autodiff::make_output(os, std::move(v), "max_unpool");
  if (autodiff::should_record({&y})) {
    autodiff::record("max_unpool", out, [y, out, target = std::move(target)]() {
      auto g = y.mutable_grad();
      const auto go = out.grad();
      for (std::size_t o = 0; o < target.size(); ++o) g[o] += go[target[o]];
    });
  }
  return out;
}

Tensor4 avg_pool(const Tensor4& x, PoolSpec spec) {
  const Shape s = x.shape();
  const std::size_t k = spec.k;
  require_divisible(s, k, "avg_pool");
  const Shape os{s.n, s.c, s.h / k, s.w / k};
  const double inv = 1.0 / static_cast<double>(k * k);
  const auto xd = x.data();
  std::vector<double> v(os.numel());
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const double* src = xd.data() + nc * s.plane();
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) acc += src[(oy * k + i) * s.w + ox * k + j];
        }
        v[nc * os.plane() + oy * os.w + ox] = acc * inv;
      }
    }
  }
  Tensor4 out = autodiff::make_output(os, std::move(v), "avg_pool");
  if (autodiff::should_record({&x})) {
    autodiff::record("avg_pool", out, [x, out, k, inv]() {
      const Shape s = x.shape();
      const Shape os = out.shape();
      auto g = x.mutable_grad();
      const auto go = out.grad();
      for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
        for (std::size_t yy = 0; yy < s.h; ++yy) {
          for (std::size_t xx = 0; xx < s.w; ++xx) {
            g[nc * s.plane() + yy * s.w + xx] +=
                go[nc * os.plane() + (yy / k) * os.w + xx / k] * inv;
          }
        }
      }
    });
  }
  return out;
}

Tensor4 avg_upsample(const Tensor4& y, PoolSpec spec) {
  const Shape s = y.shape();
  const std::size_t k = spec.k;
  if (k == 0) throw ShapeError("avg_upsample: window size must be positive");
  const Shape os{s.n, s.c, s.h * k, s.w * k};
  validate_shape(os);
  const auto yd = y.data();
  std::vector<double> v(os.numel());
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    for (std::size_t yy = 0; yy < os.h; ++yy) {
      for (std::size_t xx = 0; xx < os.w; ++xx) {
        v[nc * os.plane() + yy * os.w + xx] = yd[nc * s.plane() + (yy / k) * s.w + xx / k];
      }
    }
  }
  Tensor4 out = autodiff::make_output(os, std::move(v), "avg_upsample");
  if (autodiff::should_record({&y})) {
    autodiff::record("avg_upsample", out, [y, out, k]() {
      const Shape s = y.shape();
      const Shape os = out.shape();
      auto g = y.mutable_grad();
      const auto go = out.grad();
      for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
        for (std::size_t yy = 0; yy < os.h; ++yy) {
          for (std::size_t xx = 0; xx < os.w; ++xx) {
            g[nc * s.plane() + (yy / k) * s.w + xx / k] +=
                go[nc * os.plane() + yy * os.w + xx];
          }
        }
      }
    });
  }
  return out;
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError(fmt::format("concat_channels: {} and {} differ outside the channel axis",
                                 sa.str(), sb.str()));
  }
  const Shape os{sa.n, sa.c + sb.c, sa.h, sa.w};
  const std::size_t plane = sa.plane();
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> v(os.numel());
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::copy_n(ad.data() + n * sa.c * plane, sa.c * plane, v.data() + n * os.c * plane);
    std::copy_n(bd.data() + n * sb.c * plane, sb.c * plane,
                v.data() + (n * os.c + sa.c) * plane);
  }
  Tensor4 out = autodiff::make_output(os, std::move(v), "concat_channels");
  if (autodiff::should_record({&a, &b})) {
    autodiff::record("concat_channels", out, [a, b, out]() {
      const Shape sa = a.shape();
      const Shape sb = b.shape();
      const std::size_t plane = sa.plane();
      const std::size_t oc = sa.c + sb.c;
      const auto go = out.grad();
      for (std::size_t n = 0; n < sa.n; ++n) {
        if (a.requires_grad()) {
          auto g = a.mutable_grad();
          for (std::size_t i = 0; i < sa.c * plane; ++i) {
            g[n * sa.c * plane + i] += go[n * oc * plane + i];
          }
        }
        if (b.requires_grad()) {
          auto g = b.mutable_grad();
          for (std::size_t i = 0; i < sb.c * plane; ++i) {
            g[n * sb.c * plane + i] += go[(n * oc + sa.c) * plane + i];
          }
        }
      }
    });
  }
  return out;
}

Tensor4 softmax_pixels(const Tensor4& logits) {
  const Shape s = logits.shape();
  const std::size_t plane = s.plane();
  const auto z = logits.data();
  std::vector<double> p(z.size());
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::size_t base = n * s.c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      double top = z[base + i];
      for (std::size_t c = 1; c < s.c; ++c) top = std::max(top, z[base + c * plane + i]);
      double total = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double e = std::exp(z[base + c * plane + i] - top);
        p[base + c * plane + i] = e;
        total += e;
      }
      for (std::size_t c = 0; c < s.c; ++c) p[base + c * plane + i] /= total;
    }
  }
  Tensor4 out = autodiff::make_output(s, std::move(p), "softmax_pixels");
  if (autodiff::should_record({&logits})) {
    autodiff::record("softmax_pixels", out, [logits, out]() {
      const Shape s = logits.shape();
      const std::size_t plane = s.plane();
      const auto p = out.data();
      const auto go = out.grad();
      auto g = logits.mutable_grad();
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t base = n * s.c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          double dot = 0.0;
          for (std::size_t c = 0; c < s.c; ++c) {
            dot += p[base + c * plane + i] * go[base + c * plane + i];
          }
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t j = base + c * plane + i;
            g[j] += p[j] * (go[j] - dot);
          }
        }
      }
    });
  }
  return out;
}

void validate(const ClassWeights& weights) {
  if (weights.w.empty()) throw ConfigError("class weights are empty");
  for (std::size_t c = 0; c < weights.w.size(); ++c) {
    if (!std::isfinite(weights.w[c]) || weights.w[c] <= 0.0) {
      throw ConfigError(fmt::format("class weight {} = {} must be finite and positive",
                                    c, weights.w[c]));
    }
  }
}

Tensor4 weighted_cross_entropy(const Tensor4& probs, const LabelMask& labels,
                               const ClassWeights& weights) {
  const Shape s = probs.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w ||
      labels.labels.size() != s.n * s.plane()) {
    throw ShapeError(fmt::format("weighted_cross_entropy: probabilities {} vs labels ({},{},{})",
                                 s.str(), labels.n, labels.h, labels.w));
  }
  if (weights.size() != s.c) {
    throw ShapeError(fmt::format("weighted_cross_entropy: {} class weights for {} classes",
                                 weights.size(), s.c));
  }
  validate(weights);
  const std::size_t plane = s.plane();
  const auto p = probs.data();
  double num = 0.0;
  double total_weight = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t label = labels.labels[n * plane + i];
      if (label >= s.c) {
        throw DataError(DataErrorKind::kIllegalLabel,
                        fmt::format("label {} at (n={}, row={}, col={}) not below {} classes",
                                    label, n, i / s.w, i % s.w, s.c));
      }
      const double wl = weights.w[label];
      num += wl * std::log(p[(n * s.c + label) * plane + i]);
      total_weight += wl;
    }
  }
  Tensor4 out = autodiff::make_output({1, 1, 1, 1}, {-num / total_weight},
                                      "weighted_cross_entropy");
  if (autodiff::should_record({&probs})) {
    autodiff::record("weighted_cross_entropy", out,
                     [probs, out, labels, weights, total_weight]() {
      const Shape s = probs.shape();
      const std::size_t plane = s.plane();
      const double go = out.grad()[0];
      const auto p = probs.data();
      auto g = probs.mutable_grad();
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t label = labels.labels[n * plane + i];
          const std::size_t j = (n * s.c + label) * plane + i;
          g[j] -= go * weights.w[label] / (total_weight * p[j]);
        }
      }
    });
  }
  return out;
}

}  // namespace redae::nn
