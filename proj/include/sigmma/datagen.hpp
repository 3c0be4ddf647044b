#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "sigmma/dataset.hpp"
#include "sigmma/log.hpp"
#include "sigmma/rng.hpp"

namespace sigmma {

// Synthetic paired tiles with a planted cross-modal correspondence: each of
// the 16 micro regions of a tile carries a latent vector; pixel colors,
// precomputed patch features and cell expression are all (different) noisy
// nonlinear functions of that latent, so HE<->ST alignment is learnable.
struct GenConfig {
  std::size_t height = 0;  // pixels; 0 -> derived from `tiles`
  std::size_t width = 0;
  std::size_t tiles = 96;  // used only when height/width are 0
  std::size_t m = 256;
  std::size_t genes = 60;
  std::size_t cells_min = 40;
  std::size_t cells_max = 120;
  std::size_t latent_dim = 8;
  double noise = 0.1;
  double nuisance = 0.15;  // per-tile brightness/gain jitter (image side only)
  std::size_t feature_dim = 32;
  enum class ImageMode { pixels, features, both } image_mode = ImageMode::pixels;
  double train_ratio = 0.7;
  double val_ratio = 0.1;
};

namespace detail {

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

// Cross-modal maps shared by every tile of a dataset.
struct GenMaps {
  std::vector<double> gene_w;   // [G x L]
  std::vector<double> gene_b;   // [G]
  std::vector<double> color_w;  // [3 x L]
  std::vector<double> color_b;  // [3]
  std::vector<double> feat_w;   // [F x L]
};

inline GenMaps make_maps(const GenConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "maps"));
  const double inv_sqrt_l = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
  GenMaps maps;
  maps.gene_w.resize(cfg.genes * cfg.latent_dim);
  for (auto& v : maps.gene_w) v = rng.normal() * inv_sqrt_l;
  maps.gene_b.resize(cfg.genes);
  for (auto& v : maps.gene_b) v = rng.normal() * 0.5;
  maps.color_w.resize(3 * cfg.latent_dim);
  for (auto& v : maps.color_w) v = rng.normal() * 0.8 * inv_sqrt_l;
  maps.color_b.resize(3);
  for (auto& v : maps.color_b) v = rng.normal() * 0.3;
  maps.feat_w.resize(cfg.feature_dim * cfg.latent_dim);
  for (auto& v : maps.feat_w) v = rng.normal() * 0.9 * inv_sqrt_l;
  return maps;
}

// i.i.d. region latents smoothed over 4-neighbouring micro regions of the
// 4x4 grid, rescaled back to roughly unit variance
inline std::vector<double> tile_latents(Rng& rng, std::size_t latent_dim) {
  std::vector<double> raw(16 * latent_dim);
  for (auto& v : raw) v = rng.normal();
  std::vector<double> smooth(16 * latent_dim, 0.0);
  constexpr double alpha = 0.5;
  for (int by = 0; by < 4; ++by)
    for (int bx = 0; bx < 4; ++bx) {
      const int r = by * 4 + bx;
      int deg = 0;
      std::vector<double> acc(latent_dim, 0.0);
      auto add = [&](int nx, int ny) {
        if (nx < 0 || nx >= 4 || ny < 0 || ny >= 4) return;
        ++deg;
        const int nr = ny * 4 + nx;
        for (std::size_t k = 0; k < latent_dim; ++k)
          acc[k] += raw[nr * latent_dim + k];
      };
      add(bx - 1, by);
      add(bx + 1, by);
      add(bx, by - 1);
      add(bx, by + 1);
      const double scale =
          1.0 / std::sqrt(1.0 + alpha * alpha * static_cast<double>(deg));
      for (std::size_t k = 0; k < latent_dim; ++k)
        smooth[r * latent_dim + k] =
            (raw[r * latent_dim + k] + alpha * acc[k]) * scale;
    }
  return smooth;
}

}  // namespace detail

// The per-region cell expression profile: softplus of a linear map of the
// latent, scaled to counts-like magnitudes. Exposed so tests can recompute
// the generative map directly.
inline std::vector<double> datagen_region_expression(
    const std::vector<double>& latent, const std::vector<double>& gene_w,
    const std::vector<double>& gene_b) {
  const std::size_t genes = gene_b.size();
  const std::size_t latent_dim = latent.size();
  std::vector<double> out(genes);
  for (std::size_t g = 0; g < genes; ++g) {
    double a = gene_b[g];
    for (std::size_t k = 0; k < latent_dim; ++k)
      a += gene_w[g * latent_dim + k] * latent[k];
    out[g] = 4.0 * detail::softplus(a);
  }
  return out;
}

inline Dataset generate_dataset(const GenConfig& cfg, std::uint64_t seed) {
  if (cfg.m % 4 != 0)
    throw std::invalid_argument(
        "generate_dataset: tile side m=" + std::to_string(cfg.m) +
        " must be divisible by 4 (4x4 micro grid)");
  if (cfg.genes < 50)
    log_warn("generate_dataset: G=" + std::to_string(cfg.genes) +
             " < 50; expression prediction uses the top 50 variable genes");
  if (cfg.cells_min > cfg.cells_max)
    throw std::invalid_argument("generate_dataset: cells_min > cells_max");
  if (cfg.latent_dim == 0)
    throw std::invalid_argument("generate_dataset: latent_dim must be >= 1");

  std::size_t height = cfg.height, width = cfg.width;
  if (height == 0 || width == 0) {
    std::size_t rows = static_cast<std::size_t>(
        std::sqrt(static_cast<double>(std::max<std::size_t>(cfg.tiles, 1))));
    while (rows > 1 && cfg.tiles % rows != 0) --rows;
    height = rows * cfg.m;
    width = (cfg.tiles / std::max<std::size_t>(rows, 1)) * cfg.m;
  }
  const std::size_t tiles_y = height / cfg.m;
  const std::size_t tiles_x = width / cfg.m;
  const std::size_t n_tiles = tiles_y * tiles_x;

  const auto maps = detail::make_maps(cfg, seed);

  Dataset ds;
  ds.m = cfg.m;
  ds.height = height;
  ds.width = width;
  ds.gene_names.reserve(cfg.genes);
  for (std::size_t g = 0; g < cfg.genes; ++g) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "g%03zu", g);
    ds.gene_names.push_back(buf);
  }

  const std::size_t micro_side = cfg.m / 4;
  const double md = static_cast<double>(cfg.m);

  for (std::size_t t = 0; t < n_tiles; ++t) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "tile_%04zu", t);

    TilePair tile;
    tile.id = idbuf;
    tile.split = split_of(tile.id, seed, cfg.train_ratio, cfg.val_ratio);

    Rng rng(derive_seed(seed, "tile", t));
    const auto latents = detail::tile_latents(rng, cfg.latent_dim);

    // per-tile image nuisance, uncorrelated with expression
    const double brightness = rng.normal() * cfg.nuisance * 0.6;
    double gain[3];
    for (double& g : gain) g = 1.0 + rng.normal() * cfg.nuisance * 0.5;

    // cells: uniform positions, expression from the region latent
    const std::size_t n_cells =
        cfg.cells_min + rng.uniform_index(cfg.cells_max - cfg.cells_min + 1);
    tile.cells.reserve(n_cells);
    for (std::size_t c = 0; c < n_cells; ++c) {
      Cell cell;
      char cbuf[24];
      std::snprintf(cbuf, sizeof(cbuf), "c%04zu", c);
      cell.id = cbuf;
      cell.x = rng.uniform01() * md;
      cell.y = rng.uniform01() * md;
      const std::size_t bx = static_cast<std::size_t>(cell.x) / micro_side;
      const std::size_t by = static_cast<std::size_t>(cell.y) / micro_side;
      const std::size_t region = by * 4 + bx;
      std::vector<double> latent(latents.begin() + region * cfg.latent_dim,
                                 latents.begin() + (region + 1) * cfg.latent_dim);
      cell.expression =
          datagen_region_expression(latent, maps.gene_w, maps.gene_b);
      for (auto& e : cell.expression)
        e *= std::exp(cfg.noise * rng.normal() - 0.5 * cfg.noise * cfg.noise);
      tile.cells.push_back(std::move(cell));
    }

    const bool want_pixels = cfg.image_mode != GenConfig::ImageMode::features;
    const bool want_features = cfg.image_mode != GenConfig::ImageMode::pixels;

    if (want_pixels) {
      // base color per region, then pixel-level texture + nuisance + noise
      double base[16][3];
      for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t ch = 0; ch < 3; ++ch) {
          double a = maps.color_b[ch];
          for (std::size_t k = 0; k < cfg.latent_dim; ++k)
            a += maps.color_w[ch * cfg.latent_dim + k] *
                 latents[r * cfg.latent_dim + k];
          base[r][ch] = 0.5 + 0.35 * std::tanh(a);
        }
      tile.image_rows = cfg.m;
      tile.image_cols = cfg.m;
      tile.image_channels = 3;
      tile.image.resize(cfg.m * cfg.m * 3);
      const double pixel_noise = 0.25 * cfg.noise;
      for (std::size_t py = 0; py < cfg.m; ++py) {
        const std::size_t by = py / micro_side;
        for (std::size_t px = 0; px < cfg.m; ++px) {
          const std::size_t bx = px / micro_side;
          const std::size_t r = by * 4 + bx;
          const double tex = 0.03 *
                             std::sin(6.0 * 3.14159265358979 * px / md) *
                             std::sin(6.0 * 3.14159265358979 * py / md);
          for (std::size_t ch = 0; ch < 3; ++ch) {
            double v = gain[ch] * (base[r][ch] + tex) + brightness +
                       pixel_noise * rng.normal();
            v = std::min(1.0, std::max(0.0, v));
            tile.image[(py * cfg.m + px) * 3 + ch] = static_cast<float>(v);
          }
        }
      }
    }

    if (want_features) {
      tile.feature_dim = cfg.feature_dim;
      tile.patch_features.resize(16 * cfg.feature_dim);
      const double feat_noise = 0.25 * cfg.noise;
      for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t f = 0; f < cfg.feature_dim; ++f) {
          double a = 0.0;
          for (std::size_t k = 0; k < cfg.latent_dim; ++k)
            a += maps.feat_w[f * cfg.latent_dim + k] *
                 latents[r * cfg.latent_dim + k];
          tile.patch_features[r * cfg.feature_dim + f] =
              std::tanh(a) + feat_noise * rng.normal();
        }
    }

    ds.tiles.push_back(std::move(tile));
  }
  return ds;
}

}  // namespace sigmma
