#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sigmma/cell_graph.hpp"
#include "sigmma/dataset.hpp"
#include "sigmma/tensor.hpp"

namespace sigmma {

// Multi-crop image branch: a tile is partitioned into 4x4 / 2x2 / 1x1 patch
// grids, every patch is resized to one unified side length and pushed through
// a single shared backbone, and patch embeddings are mean-pooled per scale.

inline int scale_grid(Scale s) { return scale_subdivisions(s); }

struct PatchGrid {
  Scale scale = Scale::micro;
  int grid = 4;
  std::size_t patch_side = 0;
  std::size_t channels = 0;
  // row-major patch order (index = by * grid + bx), each patch flattened
  // position-major: (y * patch_side + x) * channels + c
  std::vector<std::vector<double>> patches;
};

inline PatchGrid partition_tile(const TilePair& tile, std::size_t m,
                                Scale scale) {
  if (!tile.has_image())
    throw std::invalid_argument("partition_tile: tile " + tile.id +
                                " carries no pixel data");
  if (m % 4 != 0)
    throw std::invalid_argument("partition_tile: tile side " +
                                std::to_string(m) +
                                " is not divisible by 4");
  if (tile.image_rows != m || tile.image_cols != m)
    throw std::invalid_argument("partition_tile: image of tile " + tile.id +
                                " does not match tile side " +
                                std::to_string(m));
  PatchGrid pg;
  pg.scale = scale;
  pg.grid = scale_grid(scale);
  pg.patch_side = m / pg.grid;
  pg.channels = tile.image_channels;
  pg.patches.reserve(pg.grid * pg.grid);
  for (int by = 0; by < pg.grid; ++by)
    for (int bx = 0; bx < pg.grid; ++bx) {
      std::vector<double> patch(pg.patch_side * pg.patch_side * pg.channels);
      for (std::size_t y = 0; y < pg.patch_side; ++y) {
        const std::size_t sy = by * pg.patch_side + y;
        for (std::size_t x = 0; x < pg.patch_side; ++x) {
          const std::size_t sx = bx * pg.patch_side + x;
          for (std::size_t c = 0; c < pg.channels; ++c)
            patch[(y * pg.patch_side + x) * pg.channels + c] =
                tile.image[(sy * m + sx) * pg.channels + c];
        }
      }
      pg.patches.push_back(std::move(patch));
    }
  return pg;
}

// Bilinear resample of a square position-major patch to side `out`, corners
// aligned (corner pixels map exactly onto corners).
inline std::vector<double> bilinear_resize(const std::vector<double>& src,
                                           std::size_t in_side,
                                           std::size_t channels,
                                           std::size_t out) {
  if (in_side == 0 || out == 0)
    throw std::invalid_argument("bilinear_resize: empty input or output");
  std::vector<double> dst(out * out * channels);
  const double scale = out > 1
                           ? static_cast<double>(in_side - 1) /
                                 static_cast<double>(out - 1)
                           : 0.0;
  const double center = static_cast<double>(in_side - 1) / 2.0;
  for (std::size_t oy = 0; oy < out; ++oy) {
    const double fy = out > 1 ? oy * scale : center;
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, in_side - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out; ++ox) {
      const double fx = out > 1 ? ox * scale : center;
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, in_side - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < channels; ++c) {
        const double v00 = src[(y0 * in_side + x0) * channels + c];
        const double v01 = src[(y0 * in_side + x1) * channels + c];
        const double v10 = src[(y1 * in_side + x0) * channels + c];
        const double v11 = src[(y1 * in_side + x1) * channels + c];
        dst[(oy * out + ox) * channels + c] =
            (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
            wy * ((1.0 - wx) * v10 + wx * v11);
      }
    }
  }
  return dst;
}

// ---------------------------------------------------------------------------
// backbone
// ---------------------------------------------------------------------------

struct ImageEncoderConfig {
  enum class Backbone { toy_conv, passthrough };
  Backbone backbone = Backbone::toy_conv;
  std::size_t unified_side = 32;  // r: every patch is resized to r x r
  std::size_t embed_dim = 64;     // d
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t in_channels = 3;
};

// cached im2col gather plan for valid 3x3 stride-2 convolutions over
// position-major feature maps
struct ConvPlan {
  std::shared_ptr<std::vector<std::int64_t>> idx;
  std::size_t out_side = 0;
  std::size_t cols = 0;  // k*k*channels
};

inline ConvPlan make_im2col_plan(std::size_t side, std::size_t channels,
                                 std::size_t k, std::size_t stride) {
  if (side < k)
    throw std::invalid_argument("make_im2col_plan: input side " +
                                std::to_string(side) +
                                " smaller than kernel " + std::to_string(k));
  ConvPlan plan;
  plan.out_side = (side - k) / stride + 1;
  plan.cols = k * k * channels;
  plan.idx = std::make_shared<std::vector<std::int64_t>>();
  plan.idx->reserve(plan.out_side * plan.out_side * plan.cols);
  for (std::size_t oy = 0; oy < plan.out_side; ++oy)
    for (std::size_t ox = 0; ox < plan.out_side; ++ox)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx)
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t iy = oy * stride + ky;
            const std::size_t ix = ox * stride + kx;
            plan.idx->push_back(
                static_cast<std::int64_t>((iy * side + ix) * channels + c));
          }
  return plan;
}

struct ImageEncoderParams {
  ImageEncoderConfig cfg;
  Tensor conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b;
  ConvPlan plan1, plan2;

  static ImageEncoderParams init(const ImageEncoderConfig& cfg, Rng& rng) {
    ImageEncoderParams p;
    p.cfg = cfg;
    if (cfg.backbone == ImageEncoderConfig::Backbone::passthrough) return p;
    const std::size_t k = 3, stride = 2;
    p.plan1 = make_im2col_plan(cfg.unified_side, cfg.in_channels, k, stride);
    p.plan2 = make_im2col_plan(p.plan1.out_side, cfg.conv1_channels, k, stride);
    const std::size_t fan1 = k * k * cfg.in_channels;
    const std::size_t fan2 = k * k * cfg.conv1_channels;
    p.conv1_w = Tensor::randn(fan1, cfg.conv1_channels, rng,
                              std::sqrt(2.0 / fan1), true);
    p.conv1_b = Tensor(1, cfg.conv1_channels, true);
    p.conv2_w = Tensor::randn(fan2, cfg.conv2_channels, rng,
                              std::sqrt(2.0 / fan2), true);
    p.conv2_b = Tensor(1, cfg.conv2_channels, true);
    p.head_w = Tensor::randn(cfg.conv2_channels, cfg.embed_dim, rng,
                             std::sqrt(1.0 / cfg.conv2_channels), true);
    p.head_b = Tensor(1, cfg.embed_dim, true);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    if (cfg.backbone == ImageEncoderConfig::Backbone::passthrough) return {};
    return {{"image.conv1.w", conv1_w}, {"image.conv1.b", conv1_b},
            {"image.conv2.w", conv2_w}, {"image.conv2.b", conv2_b},
            {"image.head.w", head_w},   {"image.head.b", head_b}};
  }
};

// one resized patch [r*r x C] -> [1 x d]
inline Tensor encode_patch(const Tensor& patch, const ImageEncoderParams& p) {
  if (p.cfg.backbone != ImageEncoderConfig::Backbone::toy_conv)
    throw std::invalid_argument("encode_patch: backbone has no conv weights");
  const std::size_t r = p.cfg.unified_side;
  if (patch.rows() != r * r || patch.cols() != p.cfg.in_channels)
    throw std::invalid_argument(
        "encode_patch: patch shape " +
        detail::shape_str(patch.rows(), patch.cols()) + " does not match r=" +
        std::to_string(r) + " channels=" + std::to_string(p.cfg.in_channels));
  Tensor col1 = gather_pad(patch, p.plan1.idx,
                           p.plan1.out_side * p.plan1.out_side, p.plan1.cols);
  Tensor h1 = relu(add_row_bias(matmul(col1, p.conv1_w), p.conv1_b));
  Tensor col2 = gather_pad(h1, p.plan2.idx,
                           p.plan2.out_side * p.plan2.out_side, p.plan2.cols);
  Tensor h2 = relu(add_row_bias(matmul(col2, p.conv2_w), p.conv2_b));
  Tensor pooled = mean_rows(h2);
  return add_row_bias(matmul(pooled, p.head_w), p.head_b);
}

// grid-wise mean pooling over patch embeddings
inline Tensor pool_image_scale(const std::vector<Tensor>& vectors) {
  if (vectors.empty())
    throw std::invalid_argument("pool_image_scale: no patch vectors to pool");
  if (vectors.size() == 1) return vectors[0];
  return mean_rows(concat_rows(vectors));
}

// ---------------------------------------------------------------------------
// per-tile preprocessing + scale embeddings
// ---------------------------------------------------------------------------

// Patch inputs are constant per tile, so they are prepared once: resized
// pixel patches for the conv backbone, or stored micro features mean-composed
// for coarser scales in passthrough mode.
struct TilePatchInputs {
  std::array<std::vector<Tensor>, 3> per_scale;  // indexed by Scale
  bool passthrough = false;
};

inline TilePatchInputs prepare_tile_patches(const TilePair& tile,
                                            std::size_t m,
                                            const ImageEncoderConfig& cfg) {
  TilePatchInputs out;
  if (cfg.backbone == ImageEncoderConfig::Backbone::passthrough) {
    if (!tile.has_features())
      throw std::invalid_argument(
          "prepare_tile_patches: passthrough backbone needs stored micro "
          "patch features (tile " + tile.id + ")");
    out.passthrough = true;
    const std::size_t fd = tile.feature_dim;
    auto micro_vec = [&](int r) {
      std::vector<double> v(tile.patch_features.begin() + r * fd,
                            tile.patch_features.begin() + (r + 1) * fd);
      return Tensor::row(std::move(v));
    };
    for (int r = 0; r < 16; ++r)
      out.per_scale[0].push_back(micro_vec(r));
    for (int by = 0; by < 2; ++by)
      for (int bx = 0; bx < 2; ++bx) {
        std::vector<Tensor> children;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            children.push_back(
                out.per_scale[0][(2 * by + dy) * 4 + (2 * bx + dx)]);
        out.per_scale[1].push_back(mean_rows(concat_rows(children)));
      }
    out.per_scale[2].push_back(mean_rows(concat_rows(out.per_scale[0])));
    return out;
  }

  for (Scale scale : {Scale::micro, Scale::meso, Scale::macro}) {
    PatchGrid pg = partition_tile(tile, m, scale);
    for (auto& patch : pg.patches) {
      auto resized = bilinear_resize(patch, pg.patch_side, pg.channels,
                                     cfg.unified_side);
      out.per_scale[static_cast<int>(scale)].push_back(Tensor::from(
          cfg.unified_side * cfg.unified_side, pg.channels, std::move(resized)));
    }
  }
  return out;
}

// encode + pool one scale -> [1 x d] (un-normalized; alignment normalizes)
inline Tensor image_scale_embedding(const TilePatchInputs& inputs, Scale scale,
                                    const ImageEncoderParams& params) {
  const auto& patches = inputs.per_scale[static_cast<int>(scale)];
  if (inputs.passthrough) return pool_image_scale(patches);
  std::vector<Tensor> encoded;
  encoded.reserve(patches.size());
  for (const auto& patch : patches)
    encoded.push_back(encode_patch(patch, params));
  return pool_image_scale(encoded);
}

}  // namespace sigmma
