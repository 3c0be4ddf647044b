#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sigmma/binio.hpp"
#include "sigmma/log.hpp"
#include "sigmma/rng.hpp"
#include "sigmma/tensor.hpp"

namespace sigmma {

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::runtime_error("dataset: unknown split label '" + s + "'");
}

struct Cell {
  std::string id;
  double x = 0.0;  // pixels within the tile
  double y = 0.0;
  std::vector<double> expression;  // length G, non-negative counts-like

  bool operator==(const Cell&) const = default;
};

struct TilePair {
  std::string id;
  Split split = Split::train;
  std::vector<Cell> cells;

  // HE side: either raw pixels (rows x cols x channels, values in [0,1]) ...
  std::vector<float> image;
  std::size_t image_rows = 0, image_cols = 0, image_channels = 0;
  // ... or precomputed features for the 16 micro patches (16 x feature_dim)
  std::vector<double> patch_features;
  std::size_t feature_dim = 0;

  bool has_image() const { return !image.empty(); }
  bool has_features() const { return !patch_features.empty(); }

  bool operator==(const TilePair&) const = default;
};

struct Dataset {
  std::size_t m = 0;       // tile side in pixels
  std::size_t height = 0;  // section extent
  std::size_t width = 0;
  std::vector<std::string> gene_names;
  std::vector<TilePair> tiles;

  std::size_t gene_count() const { return gene_names.size(); }

  std::vector<std::size_t> split_indices(Split s) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < tiles.size(); ++i)
      if (tiles[i].split == s) idx.push_back(i);
    return idx;
  }

  bool operator==(const Dataset&) const = default;
};

// Split assignment is a pure function of (tile_id, seed, ratios).
inline Split split_of(const std::string& tile_id, std::uint64_t seed,
                      double train_ratio, double val_ratio) {
  const std::uint64_t h =
      mix64(hash_combine(derive_seed(seed, "split"), std::string_view(tile_id)));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  if (u < train_ratio) return Split::train;
  if (u < train_ratio + val_ratio) return Split::val;
  return Split::test;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

// On-disk layout:
//   <dir>/manifest.json
//   <dir>/tiles/<tile_id>/cells.csv                 (cell_id,x,y,<genes...>)
//   <dir>/tiles/<tile_id>/image.bin                 (SIGI, optional)
//   <dir>/tiles/<tile_id>/patch_features.bin        (SIGF, optional)
inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  fs::create_directories(fs::path(dir) / "tiles");

  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["m"] = ds.m;
  manifest["H"] = ds.height;
  manifest["W"] = ds.width;
  manifest["gene_names"] = ds.gene_names;
  auto& tiles = manifest["tiles"] = nlohmann::json::array();

  for (const auto& tile : ds.tiles) {
    const fs::path tdir = fs::path(dir) / "tiles" / tile.id;
    fs::create_directories(tdir);

    {
      std::ofstream csv(tdir / "cells.csv");
      if (!csv) throw std::runtime_error("dataset: cannot write " + (tdir / "cells.csv").string());
      csv << "cell_id,x,y";
      for (const auto& g : ds.gene_names) csv << ',' << g;
      csv << '\n';
      for (const auto& cell : tile.cells) {
        csv << cell.id << ',' << detail::format_double(cell.x) << ','
            << detail::format_double(cell.y);
        for (double e : cell.expression) csv << ',' << detail::format_double(e);
        csv << '\n';
      }
    }

    if (tile.has_image()) {
      std::ofstream img(tdir / "image.bin", std::ios::binary);
      binio::write_magic(img, "SIGI");
      binio::write_u32(img, static_cast<std::uint32_t>(tile.image_rows));
      binio::write_u32(img, static_cast<std::uint32_t>(tile.image_cols));
      binio::write_u32(img, static_cast<std::uint32_t>(tile.image_channels));
      binio::write_f32_array(img, tile.image.data(), tile.image.size());
    }
    if (tile.has_features()) {
      std::ofstream feat(tdir / "patch_features.bin", std::ios::binary);
      binio::write_magic(feat, "SIGF");
      binio::write_u32(feat, 16);
      binio::write_u32(feat, static_cast<std::uint32_t>(tile.feature_dim));
      for (double v : tile.patch_features)
        binio::write_f32(feat, static_cast<float>(v));
    }

    nlohmann::json entry;
    entry["id"] = tile.id;
    entry["split"] = split_name(tile.split);
    entry["n_cells"] = tile.cells.size();
    entry["image"] = tile.has_image();
    entry["features"] = tile.has_features();
    tiles.push_back(entry);
  }

  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("dataset: cannot write manifest.json in " + dir);
  mf << manifest.dump(2) << '\n';
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream mf(mpath);
  if (!mf)
    throw std::runtime_error("dataset: missing manifest " + mpath.string());
  nlohmann::json manifest;
  mf >> manifest;

  Dataset ds;
  ds.m = manifest.at("m").get<std::size_t>();
  ds.height = manifest.at("H").get<std::size_t>();
  ds.width = manifest.at("W").get<std::size_t>();
  ds.gene_names = manifest.at("gene_names").get<std::vector<std::string>>();
  const std::size_t genes = ds.gene_names.size();

  for (const auto& entry : manifest.at("tiles")) {
    TilePair tile;
    tile.id = entry.at("id").get<std::string>();
    tile.split = split_from_name(entry.at("split").get<std::string>());
    const fs::path tdir = fs::path(dir) / "tiles" / tile.id;

    {
      std::ifstream csv(tdir / "cells.csv");
      if (!csv)
        throw std::runtime_error("dataset: tile " + tile.id +
                                 ": missing cells.csv");
      std::string line;
      if (!std::getline(csv, line))
        throw std::runtime_error("dataset: tile " + tile.id +
                                 ": empty cells.csv");
      const auto header = detail::split_csv_line(line);
      if (header.size() != 3 + genes)
        throw std::runtime_error(
            "dataset: tile " + tile.id + ": cells.csv has " +
            std::to_string(header.size() > 3 ? header.size() - 3 : 0) +
            " gene columns, manifest lists " + std::to_string(genes));
      while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 3 + genes)
          throw std::runtime_error("dataset: tile " + tile.id +
                                   ": row has wrong field count");
        Cell cell;
        cell.id = fields[0];
        cell.x = std::stod(fields[1]);
        cell.y = std::stod(fields[2]);
        if (cell.x < 0.0 || cell.x >= static_cast<double>(ds.m) ||
            cell.y < 0.0 || cell.y >= static_cast<double>(ds.m))
          throw std::runtime_error("dataset: tile " + tile.id + ": cell " +
                                   cell.id + " outside tile bounds");
        cell.expression.reserve(genes);
        for (std::size_t g = 0; g < genes; ++g)
          cell.expression.push_back(std::stod(fields[3 + g]));
        tile.cells.push_back(std::move(cell));
      }
    }

    if (entry.value("image", false)) {
      std::ifstream img(tdir / "image.bin", std::ios::binary);
      if (!img)
        throw std::runtime_error("dataset: tile " + tile.id +
                                 ": missing image.bin");
      binio::expect_magic(img, "SIGI", "dataset: tile " + tile.id);
      tile.image_rows = binio::read_u32(img);
      tile.image_cols = binio::read_u32(img);
      tile.image_channels = binio::read_u32(img);
      tile.image.resize(tile.image_rows * tile.image_cols * tile.image_channels);
      binio::read_f32_array(img, tile.image.data(), tile.image.size());
    }
    if (entry.value("features", false)) {
      std::ifstream feat(tdir / "patch_features.bin", std::ios::binary);
      if (!feat)
        throw std::runtime_error("dataset: tile " + tile.id +
                                 ": missing patch_features.bin");
      binio::expect_magic(feat, "SIGF", "dataset: tile " + tile.id);
      const std::uint32_t n_patches = binio::read_u32(feat);
      if (n_patches != 16)
        throw std::runtime_error("dataset: tile " + tile.id +
                                 ": patch_features.bin must hold 16 patches");
      tile.feature_dim = binio::read_u32(feat);
      tile.patch_features.resize(16 * tile.feature_dim);
      for (auto& v : tile.patch_features) v = binio::read_f32(feat);
    }

    if (!tile.has_image() && !tile.has_features() && !tile.cells.empty())
      log_warn("dataset: tile " + tile.id + " has no HE-side data");
    ds.tiles.push_back(std::move(tile));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// expression preprocessing
// ---------------------------------------------------------------------------

// Per-gene mean/std of log1p-transformed cell-level expression over the train
// split; applied before encoding.
struct ExprStats {
  std::vector<double> mean;
  std::vector<double> stdev;
};

inline ExprStats compute_expr_stats(const Dataset& ds) {
  const std::size_t genes = ds.gene_count();
  ExprStats stats;
  stats.mean.assign(genes, 0.0);
  stats.stdev.assign(genes, 1.0);
  std::size_t n = 0;
  for (const auto& tile : ds.tiles) {
    if (tile.split != Split::train) continue;
    for (const auto& cell : tile.cells) {
      ++n;
      for (std::size_t g = 0; g < genes; ++g)
        stats.mean[g] += std::log1p(cell.expression[g]);
    }
  }
  if (n == 0) throw std::runtime_error("expr stats: empty training split");
  for (auto& v : stats.mean) v /= static_cast<double>(n);
  std::vector<double> ss(genes, 0.0);
  for (const auto& tile : ds.tiles) {
    if (tile.split != Split::train) continue;
    for (const auto& cell : tile.cells)
      for (std::size_t g = 0; g < genes; ++g) {
        const double d = std::log1p(cell.expression[g]) - stats.mean[g];
        ss[g] += d * d;
      }
  }
  for (std::size_t g = 0; g < genes; ++g)
    stats.stdev[g] = std::max(std::sqrt(ss[g] / static_cast<double>(n)), 1e-8);
  return stats;
}

// [n_cells x G] standardized log1p expression, as a constant tensor
inline Tensor expression_matrix(const TilePair& tile, const ExprStats& stats) {
  const std::size_t n = tile.cells.size();
  const std::size_t genes = stats.mean.size();
  Tensor x(n, genes);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t g = 0; g < genes; ++g)
      x.at(i, g) = (std::log1p(tile.cells[i].expression[g]) - stats.mean[g]) /
                   stats.stdev[g];
  return x;
}

// per-gene mean over cells of log1p expression; the quantity HVG ranking and
// the expression-prediction targets are built from
inline std::vector<double> tile_mean_log1p(const TilePair& tile,
                                           std::size_t genes) {
  std::vector<double> mean(genes, 0.0);
  if (tile.cells.empty()) return mean;
  for (const auto& cell : tile.cells)
    for (std::size_t g = 0; g < genes; ++g)
      mean[g] += std::log1p(cell.expression[g]);
  for (auto& v : mean) v /= static_cast<double>(tile.cells.size());
  return mean;
}

// Indices of the k genes with the highest variance of tile-mean log1p
// expression across training tiles. Ties break toward the lower index.
inline std::vector<std::size_t> hvg_select(const Dataset& ds, std::size_t k) {
  const std::size_t genes = ds.gene_count();
  if (k > genes)
    throw std::invalid_argument("hvg_select: k=" + std::to_string(k) +
                                " exceeds gene count " + std::to_string(genes));
  std::vector<std::vector<double>> rows;
  for (const auto& tile : ds.tiles)
    if (tile.split == Split::train)
      rows.push_back(tile_mean_log1p(tile, genes));
  if (rows.empty())
    throw std::runtime_error("hvg_select: empty training split");

  const double inv_n = 1.0 / static_cast<double>(rows.size());
  std::vector<double> var(genes, 0.0);
  for (std::size_t g = 0; g < genes; ++g) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[g];
    mean *= inv_n;
    double ss = 0.0;
    for (const auto& r : rows) ss += (r[g] - mean) * (r[g] - mean);
    var[g] = rows.size() > 1 ? ss / static_cast<double>(rows.size() - 1) : 0.0;
  }

  std::vector<std::size_t> idx(genes);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (var[a] != var[b]) return var[a] > var[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

}  // namespace sigmma
