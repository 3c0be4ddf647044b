#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sigmma/cell_graph.hpp"
#include "sigmma/tensor.hpp"

namespace sigmma {

enum class EncodeMode { train, infer };

struct StEncoderConfig {
  std::size_t gene_dim = 0;     // G, input width of the projection
  std::size_t hidden_dim = 64;  // d_h
  std::size_t embed_dim = 64;   // d
  std::size_t scorer_hidden = 32;
  int layers_micro = 2;
  int layers_meso = 1;
  int layers_macro = 1;
  std::size_t c_max = 8;  // candidate truncation per node; 0 = unlimited
  bool no_sparsification = false;  // connect every candidate (ablation)
};

struct StEncoderParams {
  StEncoderConfig cfg;
  Tensor proj_w, proj_b;        // G -> d_h
  std::vector<Tensor> gnn_w;    // one [2*d_h x d_h] per layer, all stages
  Tensor scorer_w1, scorer_b1;  // pair scorer MLP: 2*d_h -> hidden -> 1
  Tensor scorer_w2, scorer_b2;
  Tensor pool_gate_w, pool_gate_b;  // d_h -> 1 attention logits
  Tensor pool_tr_w, pool_tr_b;      // d_h -> d node transform

  static StEncoderParams init(const StEncoderConfig& cfg, Rng& rng) {
    if (cfg.gene_dim == 0)
      throw std::invalid_argument("StEncoderParams: gene_dim must be set");
    StEncoderParams p;
    p.cfg = cfg;
    const std::size_t dh = cfg.hidden_dim;
    p.proj_w = Tensor::randn(cfg.gene_dim, dh, rng,
                             std::sqrt(1.0 / cfg.gene_dim), true);
    p.proj_b = Tensor(1, dh, true);
    const int total_layers =
        cfg.layers_micro + cfg.layers_meso + cfg.layers_macro;
    for (int l = 0; l < total_layers; ++l)
      p.gnn_w.push_back(
          Tensor::randn(2 * dh, dh, rng, std::sqrt(2.0 / (2 * dh)), true));
    p.scorer_w1 = Tensor::randn(2 * dh, cfg.scorer_hidden, rng,
                                std::sqrt(2.0 / (2 * dh)), true);
    p.scorer_b1 = Tensor(1, cfg.scorer_hidden, true);
    p.scorer_w2 = Tensor::randn(cfg.scorer_hidden, 1, rng,
                                std::sqrt(1.0 / cfg.scorer_hidden), true);
    p.scorer_b2 = Tensor(1, 1, true);
    p.pool_gate_w = Tensor::randn(dh, 1, rng, std::sqrt(1.0 / dh), true);
    p.pool_gate_b = Tensor(1, 1, true);
    p.pool_tr_w =
        Tensor::randn(dh, cfg.embed_dim, rng, std::sqrt(1.0 / dh), true);
    p.pool_tr_b = Tensor(1, cfg.embed_dim, true);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out = {
        {"st.proj.w", proj_w}, {"st.proj.b", proj_b}};
    for (std::size_t l = 0; l < gnn_w.size(); ++l)
      out.push_back({"st.gnn" + std::to_string(l) + ".w", gnn_w[l]});
    out.insert(out.end(), {{"st.scorer.w1", scorer_w1},
                           {"st.scorer.b1", scorer_b1},
                           {"st.scorer.w2", scorer_w2},
                           {"st.scorer.b2", scorer_b2},
                           {"st.pool.gate.w", pool_gate_w},
                           {"st.pool.gate.b", pool_gate_b},
                           {"st.pool.tr.w", pool_tr_w},
                           {"st.pool.tr.b", pool_tr_b}});
    return out;
  }
};

// ---------------------------------------------------------------------------
// building blocks
// ---------------------------------------------------------------------------

// Directed edge bookkeeping for message passing. Undirected pairs enter as
// two directed entries sharing one weight slot; slot -1 means constant 1.
struct EdgeState {
  std::vector<std::pair<int, int>> directed;
  std::vector<int> weight_index;
  std::vector<Tensor> weight_parts;  // column tensors, concatenated on demand
  std::size_t weight_count = 0;

  void add_undirected(const EdgeList& pairs) {
    for (const auto& [u, v] : pairs) {
      directed.push_back({u, v});
      directed.push_back({v, u});
      weight_index.push_back(-1);
      weight_index.push_back(-1);
    }
  }

  // pairs[i] weighted by weights[i] (an [n_pairs x 1] tensor)
  void add_undirected_weighted(const EdgeList& pairs, const Tensor& weights) {
    if (weights.rows() != pairs.size() || weights.cols() != 1)
      throw std::invalid_argument(
          "EdgeState: weight tensor shape does not match pair count");
    const int base = static_cast<int>(weight_count);
    weight_parts.push_back(weights);
    weight_count += weights.rows();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto [u, v] = pairs[i];
      directed.push_back({u, v});
      directed.push_back({v, u});
      weight_index.push_back(base + static_cast<int>(i));
      weight_index.push_back(base + static_cast<int>(i));
    }
  }

  Tensor combined_weights() const {
    if (weight_parts.empty()) return Tensor();
    if (weight_parts.size() == 1) return weight_parts[0];
    return concat_rows(weight_parts);
  }
};

// h_v' = ReLU(W . Concat(h_v, mean of weighted neighbour embeddings))
inline Tensor gnn_layer(const Tensor& h, const EdgeState& edges,
                        const Tensor& w) {
  Tensor agg =
      neighbor_mean(h, edges.directed, edges.combined_weights(), edges.weight_index);
  return relu(matmul(concat_cols(h, agg), w));
}

// order-sensitive pair score sigma(MLP([h_u, h_v])) for every listed pair;
// returns [n_pairs x 1] in (0,1)
inline Tensor edge_score_directed(const Tensor& h, const std::vector<int>& us,
                                  const std::vector<int>& vs,
                                  const StEncoderParams& p) {
  Tensor feat = concat_cols(gather_rows(h, us), gather_rows(h, vs));
  Tensor hidden = relu(add_row_bias(matmul(feat, p.scorer_w1), p.scorer_b1));
  return sigmoid(add_row_bias(matmul(hidden, p.scorer_w2), p.scorer_b2));
}

// symmetrized score s_uv = (phi(u,v) + phi(v,u)) / 2 so an undirected edge
// carries a single weight
inline Tensor edge_scores(const Tensor& h, const EdgeList& pairs,
                          const StEncoderParams& p) {
  const std::size_t c = pairs.size();
  std::vector<int> us, vs;
  us.reserve(2 * c);
  vs.reserve(2 * c);
  for (const auto& [u, v] : pairs) {
    us.push_back(u);
    vs.push_back(v);
  }
  for (const auto& [u, v] : pairs) {
    us.push_back(v);
    vs.push_back(u);
  }
  Tensor both = edge_score_directed(h, us, vs, p);  // [2c x 1]
  std::vector<int> fwd(c), rev(c);
  for (std::size_t i = 0; i < c; ++i) {
    fwd[i] = static_cast<int>(i);
    rev[i] = static_cast<int>(c + i);
  }
  return mul_scalar(add(gather_rows(both, fwd), gather_rows(both, rev)), 0.5);
}

// Relaxed Bernoulli through the Gumbel-softmax: in train mode
//   p = sigma((log(s/(1-s)) + g1 - g0) / tau)
// with fresh Gumbel noise per entry; in infer mode a hard, noise-free
// threshold at 0.5.
inline Tensor gumbel_edge_select(const Tensor& scores, double tau, Rng& rng,
                                 EncodeMode mode) {
  if (tau <= 0.0)
    throw std::invalid_argument("gumbel_edge_select: tau must be > 0, got " +
                                std::to_string(tau));
  if (mode == EncodeMode::infer) {
    Tensor hard(scores.rows(), scores.cols());
    for (std::size_t i = 0; i < scores.numel(); ++i)
      hard.data()[i] = scores.data()[i] >= 0.5 ? 1.0 : 0.0;
    return hard;
  }
  Tensor delta(scores.rows(), scores.cols());
  for (auto& v : delta.data()) {
    const double g1 = rng.gumbel();
    const double g0 = rng.gumbel();
    v = g1 - g0;
  }
  return sigmoid(mul_scalar(add(logit(scores), delta), 1.0 / tau));
}

// gated attention pooling over nodes: softmax(gate(h)) weighted transform(h)
inline Tensor attention_pool(const Tensor& h, const StEncoderParams& p) {
  if (h.rows() == 0)
    throw std::invalid_argument("attention_pool: empty node set");
  Tensor logits = add_row_bias(matmul(h, p.pool_gate_w), p.pool_gate_b);
  Tensor alpha = softmax_rows(transpose(logits));  // [1 x n]
  Tensor transformed = add_row_bias(matmul(h, p.pool_tr_w), p.pool_tr_b);
  return matmul(alpha, transformed);  // [1 x d]
}

// ---------------------------------------------------------------------------
// scale expansion
// ---------------------------------------------------------------------------

struct ScaleExpansion {
  EdgeList pairs;       // undirected pairs recorded at this scale
  Tensor soft_weights;  // [pairs x 1]; undefined when pairs carry weight 1
};

// Scores every candidate pair at `scale` and draws relaxed/hard selections.
// Train mode keeps all candidates as weighted edges; infer mode keeps only
// hard-selected ones. With no_sparsification every candidate joins at
// weight 1 (the fully connected local-graph ablation).
inline ScaleExpansion expand_scale(const CellGraph& g, const Tensor& h,
                                   Scale scale, const EdgeList& realized,
                                   const StEncoderParams& p, double tau,
                                   Rng& rng, EncodeMode mode) {
  ScaleExpansion out;
  const EdgeList candidates =
      candidate_pairs(g, scale, realized, p.cfg.c_max);
  if (candidates.empty()) return out;

  if (p.cfg.no_sparsification) {
    out.pairs = candidates;
    return out;
  }

  Tensor scores = edge_scores(h, candidates, p);
  if (mode == EncodeMode::infer) {
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (scores.data()[i] >= 0.5) out.pairs.push_back(candidates[i]);
    return out;
  }
  out.pairs = candidates;
  out.soft_weights = gumbel_edge_select(scores, tau, rng, mode);
  return out;
}

// ---------------------------------------------------------------------------
// full forward pass
// ---------------------------------------------------------------------------

struct MultiScaleEmbedding {
  std::array<Tensor, 3> z;  // indexed by Scale, each [1 x d]
  const Tensor& at(Scale s) const { return z[static_cast<int>(s)]; }
};

struct StForwardResult {
  MultiScaleEmbedding embedding;
  std::array<EdgeList, 3> realized;   // realized undirected edges per scale
  std::array<Tensor, 3> stage_nodes;  // stage-final node embeddings
};

// Stage pipeline: project expression, run the micro GNN stack on proximity
// edges, pool; expand to meso, run, pool; expand to macro, run, pool.
inline StForwardResult st_forward(const Tensor& expression,
                                  const CellGraph& graph,
                                  const StEncoderParams& p, double tau,
                                  Rng& rng, EncodeMode mode) {
  if (expression.rows() == 0)
    throw std::invalid_argument("st_forward: tile has no cells");
  if (graph.size() != expression.rows())
    throw std::invalid_argument(
        "st_forward: graph size does not match expression rows");

  StForwardResult res;
  Tensor h = add_row_bias(matmul(expression, p.proj_w), p.proj_b);

  EdgeState edges;
  edges.add_undirected(graph.edges_micro);
  int layer = 0;
  for (int l = 0; l < p.cfg.layers_micro; ++l)
    h = gnn_layer(h, edges, p.gnn_w[layer++]);
  res.embedding.z[0] = attention_pool(h, p);
  res.realized[0] = graph.edges_micro;
  res.stage_nodes[0] = h;

  EdgeList realized = graph.edges_micro;
  ScaleExpansion meso = expand_scale(graph, h, Scale::meso, realized, p, tau,
                                     rng, mode);
  if (meso.soft_weights.defined())
    edges.add_undirected_weighted(meso.pairs, meso.soft_weights);
  else
    edges.add_undirected(meso.pairs);
  realized.insert(realized.end(), meso.pairs.begin(), meso.pairs.end());
  for (int l = 0; l < p.cfg.layers_meso; ++l)
    h = gnn_layer(h, edges, p.gnn_w[layer++]);
  res.embedding.z[1] = attention_pool(h, p);
  res.realized[1] = realized;
  res.stage_nodes[1] = h;

  ScaleExpansion macro = expand_scale(graph, h, Scale::macro, realized, p, tau,
                                      rng, mode);
  if (macro.soft_weights.defined())
    edges.add_undirected_weighted(macro.pairs, macro.soft_weights);
  else
    edges.add_undirected(macro.pairs);
  realized.insert(realized.end(), macro.pairs.begin(), macro.pairs.end());
  for (int l = 0; l < p.cfg.layers_macro; ++l)
    h = gnn_layer(h, edges, p.gnn_w[layer++]);
  res.embedding.z[2] = attention_pool(h, p);
  res.realized[2] = realized;
  res.stage_nodes[2] = h;

  return res;
}

}  // namespace sigmma
