#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include "sigmma/log.hpp"
#include "sigmma/tensor.hpp"

namespace sigmma {

// Symmetric InfoNCE between paired image/ST batch embeddings, evaluated per
// scale and summed. Rows are L2-normalized here, so cosine similarity is the
// plain dot product and zero vectors surface as errors instead of NaNs.

inline Tensor similarity_matrix(const Tensor& zi, const Tensor& zs) {
  if (zi.cols() != zs.cols() || zi.rows() != zs.rows())
    detail::shape_error("similarity_matrix", zi, zs);
  return matmul(zi, transpose(zs));
}

// L_align = 1/2 [L_{I->S} + L_{S->I}], each a softmax cross-entropy over the
// rows of the similarity matrix with matched pairs on the diagonal.
inline Tensor infonce_symmetric(const Tensor& zi_raw, const Tensor& zs_raw,
                                double tau) {
  if (tau <= 0.0)
    throw std::invalid_argument("infonce_symmetric: tau must be > 0, got " +
                                std::to_string(tau));
  if (zi_raw.rows() != zs_raw.rows() || zi_raw.cols() != zs_raw.cols())
    detail::shape_error("infonce_symmetric", zi_raw, zs_raw);
  const std::size_t n = zi_raw.rows();
  if (n == 0)
    throw std::invalid_argument("infonce_symmetric: empty batch");
  if (n == 1) {
    log_warn("infonce_symmetric: batch of size 1 carries no negatives; "
             "returning zero loss");
    return Tensor::scalar(0.0);
  }

  Tensor zi = l2_normalize_rows(zi_raw);
  Tensor zs = l2_normalize_rows(zs_raw);
  Tensor sim = mul_scalar(similarity_matrix(zi, zs), 1.0 / tau);
  Tensor loss_is = neg(mean_all(diag(log_softmax_rows(sim))));
  Tensor loss_si = neg(mean_all(diag(log_softmax_rows(transpose(sim)))));
  return mul_scalar(add(loss_is, loss_si), 0.5);
}

struct ScaleLosses {
  std::array<Tensor, 3> per_scale;  // micro, meso, macro
  Tensor total;
};

// Unweighted sum over scales; the single-scale ablation keeps only the
// macro term.
inline ScaleLosses total_alignment_loss(const std::array<Tensor, 3>& zi,
                                        const std::array<Tensor, 3>& zs,
                                        double tau,
                                        bool single_scale = false) {
  ScaleLosses out;
  for (int s = 0; s < 3; ++s)
    out.per_scale[s] = infonce_symmetric(zi[s], zs[s], tau);
  if (single_scale) {
    out.total = out.per_scale[2];
  } else {
    out.total = add(add(out.per_scale[0], out.per_scale[1]), out.per_scale[2]);
  }
  return out;
}

}  // namespace sigmma
