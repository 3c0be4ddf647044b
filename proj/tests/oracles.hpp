#pragma once

// Brute-force / independent reference implementations used as test oracles.
// These deliberately avoid the library's own code paths: plain loops, long
// double accumulation, Gauss-Jordan solves.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

inline double central_diff(const std::function<double()>& f, double& slot,
                           double h = 1e-5) {
  const double x0 = slot;
  slot = x0 + h;
  const double fp = f();
  slot = x0 - h;
  const double fm = f();
  slot = x0;
  return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor_val = 1e-4) {
  return std::abs(a - b) /
         std::max({std::abs(a), std::abs(b), floor_val});
}

// plain triple-loop matmul in long double
inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (std::size_t p = 0; p < k; ++p)
        acc += static_cast<long double>(a[i * k + p]) * b[p * n + j];
      out[i * n + j] = static_cast<double>(acc);
    }
  return out;
}

// exhaustive symmetric k-nearest-neighbour edges over 2-D points, ties broken
// by lower index; returns sorted unique undirected pairs (u < v)
inline std::vector<std::pair<int, int>> knn_edges(
    const std::vector<std::pair<double, double>>& pts, int k) {
  const int n = static_cast<int>(pts.size());
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> dist;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = pts[i].first - pts[j].first;
      const double dy = pts[i].second - pts[j].second;
      dist.push_back({dx * dx + dy * dy, j});
    }
    std::sort(dist.begin(), dist.end());
    const int take = std::min<int>(k, static_cast<int>(dist.size()));
    for (int t = 0; t < take; ++t) {
      const int j = dist[t].second;
      edges.push_back({std::min(i, j), std::max(i, j)});
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

// direct softmax-weighted sum: logits[i] scalar, feats[i] vector
inline std::vector<double> attention_pool(
    const std::vector<double>& logits,
    const std::vector<std::vector<double>>& feats) {
  const std::size_t n = logits.size();
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  long double z = 0.0L;
  std::vector<long double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::exp(static_cast<long double>(logits[i]) - mx);
    z += w[i];
  }
  std::vector<double> out(feats[0].size(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] += static_cast<double>(w[i] / z) * feats[i][j];
  return out;
}

// Gauss-Jordan inverse in long double; throws on (numerically) singular input
inline std::vector<long double> invert(std::vector<long double> a,
                                       std::size_t n) {
  std::vector<long double> inv(n * n, 0.0L);
  for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = 1.0L;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(static_cast<double>(a[r * n + col])) >
          std::abs(static_cast<double>(a[piv * n + col])))
        piv = r;
    if (std::abs(static_cast<double>(a[piv * n + col])) < 1e-18)
      throw std::runtime_error("oracle::invert: singular matrix");
    if (piv != col)
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(a[piv * n + j], a[col * n + j]);
        std::swap(inv[piv * n + j], inv[col * n + j]);
      }
    const long double d = a[col * n + col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col * n + j] /= d;
      inv[col * n + j] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const long double f = a[r * n + col];
      if (f == 0.0L) continue;
      for (std::size_t j = 0; j < n; ++j) {
        a[r * n + j] -= f * a[col * n + j];
        inv[r * n + j] -= f * inv[col * n + j];
      }
    }
  }
  return inv;
}

// ridge solution beta = (X^T X + lambda I)^-1 X^T y via explicit inverse,
// X is [n x p] row-major; no centering (caller pre-centers if desired)
inline std::vector<double> ridge(const std::vector<double>& x,
                                 const std::vector<double>& y, std::size_t n,
                                 std::size_t p, double lambda) {
  std::vector<long double> xtx(p * p, 0.0L);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      long double acc = 0.0L;
      for (std::size_t r = 0; r < n; ++r)
        acc += static_cast<long double>(x[r * p + i]) * x[r * p + j];
      xtx[i * p + j] = acc + (i == j ? static_cast<long double>(lambda) : 0.0L);
    }
  auto inv = invert(std::move(xtx), p);
  std::vector<long double> xty(p, 0.0L);
  for (std::size_t i = 0; i < p; ++i) {
    long double acc = 0.0L;
    for (std::size_t r = 0; r < n; ++r)
      acc += static_cast<long double>(x[r * p + i]) * y[r];
    xty[i] = acc;
  }
  std::vector<double> beta(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    long double acc = 0.0L;
    for (std::size_t j = 0; j < p; ++j) acc += inv[i * p + j] * xty[j];
    beta[i] = static_cast<double>(acc);
  }
  return beta;
}

inline double pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
  const std::size_t n = a.size();
  long double ma = 0.0L, mb = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  long double sa = 0.0L, sb = 0.0L, sab = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    sa += (a[i] - ma) * (a[i] - ma);
    sb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  if (sa <= 0.0L || sb <= 0.0L) return 0.0;
  return static_cast<double>(sab / std::sqrt(sa * sb));
}

}  // namespace oracle
