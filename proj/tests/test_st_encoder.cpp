#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <random>
#include <set>

#include "oracles.hpp"
#include "sigmma/st_encoder.hpp"

using namespace sigmma;

namespace {

StEncoderParams tiny_params(std::size_t genes, std::size_t dh, std::size_t d,
                            std::uint64_t seed,
                            bool no_sparsification = false) {
  StEncoderConfig cfg;
  cfg.gene_dim = genes;
  cfg.hidden_dim = dh;
  cfg.embed_dim = d;
  cfg.scorer_hidden = 6;
  cfg.c_max = 0;
  cfg.no_sparsification = no_sparsification;
  Rng rng(seed);
  return StEncoderParams::init(cfg, rng);
}

CellGraph random_graph(Rng& rng, int n, std::size_t m, int k = 3) {
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < n; ++i)
    pts.push_back({rng.uniform01() * m, rng.uniform01() * m});
  return build_micro_graph(pts, m, k);
}

}  // namespace

TEST_CASE("gnn layer aggregates weighted neighbour means") {
  // W keeps only the self half: h' = relu(h) for an isolated node
  Tensor w_self = Tensor::from(4, 2, {1, 0, 0, 1, 0, 0, 0, 0});
  Tensor h = Tensor::from(1, 2, {-1.5, 2.0});
  EdgeState none;
  Tensor out = gnn_layer(h, none, w_self);
  REQUIRE(out.at(0, 0) == 0.0);
  REQUIRE(out.at(0, 1) == 2.0);

  // W sums self and neighbour halves; u=[1,0] with single neighbour v=[3,2]
  Tensor w_sum = Tensor::from(4, 2, {1, 0, 0, 1, 1, 0, 0, 1});
  Tensor h2 = Tensor::from(2, 2, {1, 0, 3, 2});
  EdgeState pair;
  pair.add_undirected({{0, 1}});
  Tensor out2 = gnn_layer(h2, pair, w_sum);
  // hand matmul oracle: concat(u, agg_u) = [1,0,3,2] -> [4,2]
  const auto ref = oracle::matmul({1, 0, 3, 2}, w_sum.data(), 1, 4, 2);
  REQUIRE(out2.at(0, 0) == ref[0]);
  REQUIRE(out2.at(0, 1) == ref[1]);
  REQUIRE(out2.at(0, 0) == 4.0);
  REQUIRE(out2.at(0, 1) == 2.0);

  // a zero-weight edge behaves like no edge at all
  EdgeState weighted;
  weighted.add_undirected_weighted({{0, 1}}, Tensor::from(1, 1, {0.0}));
  Tensor out3 = gnn_layer(h2, weighted, w_sum);
  EdgeState empty;
  Tensor out4 = gnn_layer(h2, empty, w_sum);
  REQUIRE(out3.data() == out4.data());
}

TEST_CASE("edge scorer at zero weights gives one half") {
  StEncoderParams p = tiny_params(4, 3, 2, 1);
  for (Tensor* t : {&p.scorer_w1, &p.scorer_b1, &p.scorer_w2, &p.scorer_b2})
    std::fill(t->data().begin(), t->data().end(), 0.0);
  Tensor h = Tensor::from(2, 3, {0.3, -0.2, 1.0, 0.5, 0.1, -0.4});
  Tensor s = edge_scores(h, {{0, 1}}, p);
  REQUIRE(s.item() == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("pair scores are symmetrized means of both directions") {
  Rng rng(5);
  StEncoderParams p = tiny_params(4, 3, 2, 2);
  Tensor h = Tensor::randn(5, 3, rng);
  Tensor fwd = edge_score_directed(h, {1}, {3}, p);
  Tensor rev = edge_score_directed(h, {3}, {1}, p);
  // order-sensitive as written
  REQUIRE(fwd.item() != rev.item());
  Tensor sym = edge_scores(h, {{1, 3}}, p);
  REQUIRE(sym.item() ==
          Catch::Approx(0.5 * (fwd.item() + rev.item())).margin(1e-12));
}

TEST_CASE("large positive scorer bias drives scores toward one") {
  Rng rng(6);
  StEncoderParams p = tiny_params(4, 3, 2, 3);
  Tensor h = Tensor::randn(4, 3, rng);
  double prev = 0.0;
  for (double bias : {0.0, 2.0, 5.0, 20.0}) {
    p.scorer_b2.data()[0] = bias;
    const double s = edge_scores(h, {{0, 2}}, p).item();
    REQUIRE(s > prev);
    prev = s;
  }
  REQUIRE(prev > 0.999);
}

TEST_CASE("gumbel edge selection obeys its closed form") {
  SECTION("temperature must be positive") {
    Rng rng(1);
    Tensor s = Tensor::from(1, 1, {0.5});
    REQUIRE_THROWS_AS(gumbel_edge_select(s, 0.0, rng, EncodeMode::train),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(gumbel_edge_select(s, -1.0, rng, EncodeMode::train),
                      std::invalid_argument);
  }
  SECTION("infer mode thresholds at one half without noise") {
    Rng rng(2);
    Tensor s = Tensor::from(3, 1, {0.49, 0.5, 0.92});
    Tensor hard = gumbel_edge_select(s, 0.5, rng, EncodeMode::infer);
    REQUIRE(hard.data() == std::vector<double>{0.0, 1.0, 1.0});
  }
  SECTION("symmetric logits balance at one half on average") {
    // s = 0.5 makes p = sigma((g1 - g0)/tau); g1 - g0 is symmetric about 0
    Rng rng(3);
    Tensor s = Tensor::from(1, 1, {0.5});
    long double acc = 0.0L;
    const int n = 200000;
    for (int i = 0; i < n; ++i)
      acc += gumbel_edge_select(s, 1.0, rng, EncodeMode::train).item();
    REQUIRE(std::abs(static_cast<double>(acc / n) - 0.5) < 0.005);
  }
  SECTION("expected relaxation matches a high-precision oracle") {
    const double score = 0.7, tau = 1.0;
    Rng rng(4);
    Tensor s = Tensor::from(1, 1, {score});
    const int n = 1000000;
    long double impl = 0.0L;
    for (int i = 0; i < n; ++i)
      impl += gumbel_edge_select(s, tau, rng, EncodeMode::train).item();
    // independent oracle: same formula in long double with its own generator
    std::mt19937_64 gen(990);
    auto u01 = [&]() {
      return static_cast<long double>(gen() >> 11) * 0x1.0p-53L;
    };
    long double ref = 0.0L;
    for (int i = 0; i < n; ++i) {
      const long double g1 = -std::log(-std::log(u01() + 1e-300L));
      const long double g0 = -std::log(-std::log(u01() + 1e-300L));
      const long double logits =
          (std::log(score / (1.0L - score)) + g1 - g0) / tau;
      ref += 1.0L / (1.0L + std::exp(-logits));
    }
    REQUIRE(std::abs(static_cast<double>(impl / n - ref / n)) < 0.005);
  }
  SECTION("low temperature saturates draws to almost binary") {
    Rng rng(5);
    Tensor s = Tensor::from(1, 1, {0.7});
    const int n = 100000;
    int saturated = 0;
    for (int i = 0; i < n; ++i) {
      const double p =
          gumbel_edge_select(s, 0.05, rng, EncodeMode::train).item();
      if (p < 1e-3 || p > 1.0 - 1e-3) ++saturated;
    }
    REQUIRE(static_cast<double>(saturated) / n >= 0.99);
  }
}

TEST_CASE("scale expansion respects candidates and blocks") {
  Rng rng(7);
  SECTION("no candidates, no additions") {
    // all cells in one micro block
    CellGraph g = build_micro_graph({{1.0, 1.0}, {2.0, 2.0}}, 256, 2);
    StEncoderParams p = tiny_params(4, 3, 2, 8);
    Tensor h = Tensor::randn(2, 3, rng);
    const auto exp = expand_scale(g, h, Scale::meso, g.edges_micro, p, 0.5,
                                  rng, EncodeMode::train);
    REQUIRE(exp.pairs.empty());
  }
  SECTION("a huge scorer bias connects every candidate") {
    CellGraph g = random_graph(rng, 24, 256);
    StEncoderParams p = tiny_params(4, 3, 2, 9);
    p.scorer_b2.data()[0] = 100.0;  // sigma(100) ~ 1
    Tensor h = Tensor::randn(24, 3, rng);
    const auto cands = candidate_pairs(g, Scale::meso, g.edges_micro);
    const auto exp = expand_scale(g, h, Scale::meso, g.edges_micro, p, 0.5,
                                  rng, EncodeMode::infer);
    REQUIRE(exp.pairs == cands);

    // identical edge set to the fully connected local-graph ablation
    StEncoderParams dense = tiny_params(4, 3, 2, 9, true);
    const auto exp2 = expand_scale(g, h, Scale::meso, g.edges_micro, dense,
                                   0.5, rng, EncodeMode::infer);
    REQUIRE(exp2.pairs == cands);
    REQUIRE(!exp2.soft_weights.defined());
  }
  SECTION("selection never adds a cross-block edge at the target scale") {
    for (int trial = 0; trial < 25; ++trial) {
      CellGraph g = random_graph(
          rng, 20 + static_cast<int>(rng.uniform_index(20)), 256);
      StEncoderParams p = tiny_params(4, 3, 2, 10 + trial);
      Tensor h = Tensor::randn(g.size(), 3, rng);
      EdgeList realized = g.edges_micro;
      for (Scale scale : {Scale::meso, Scale::macro}) {
        const auto exp =
            expand_scale(g, h, scale, realized, p, 0.5, rng, EncodeMode::train);
        for (const auto& [u, v] : exp.pairs)
          REQUIRE(g.same_block(u, v, scale));
        realized.insert(realized.end(), exp.pairs.begin(), exp.pairs.end());
      }
    }
  }
}

TEST_CASE("attention pooling matches the softmax-weighted oracle") {
  Rng rng(11);
  StEncoderParams p = tiny_params(4, 3, 2, 12);

  SECTION("single node pools to its own transform") {
    Tensor h = Tensor::randn(1, 3, rng);
    Tensor z = attention_pool(h, p);
    Tensor expect = add_row_bias(matmul(h, p.pool_tr_w), p.pool_tr_b);
    for (std::size_t j = 0; j < z.cols(); ++j)
      REQUIRE(z.at(0, j) == Catch::Approx(expect.at(0, j)).margin(1e-12));
  }
  SECTION("two identical nodes pool like one") {
    Tensor h1 = Tensor::randn(1, 3, rng);
    Tensor h2 = concat_rows({h1, h1});
    Tensor za = attention_pool(h1, p);
    Tensor zb = attention_pool(h2, p);
    for (std::size_t j = 0; j < za.cols(); ++j)
      REQUIRE(za.at(0, j) == Catch::Approx(zb.at(0, j)).margin(1e-12));
  }
  SECTION("five random nodes against direct summation") {
    Tensor h = Tensor::randn(5, 3, rng);
    Tensor z = attention_pool(h, p);
    std::vector<double> logits;
    std::vector<std::vector<double>> feats;
    for (int i = 0; i < 5; ++i) {
      double a = p.pool_gate_b.item();
      for (int k = 0; k < 3; ++k) a += h.at(i, k) * p.pool_gate_w.at(k, 0);
      logits.push_back(a);
      std::vector<double> t(p.cfg.embed_dim);
      for (std::size_t j = 0; j < p.cfg.embed_dim; ++j) {
        t[j] = p.pool_tr_b.at(0, j);
        for (int k = 0; k < 3; ++k) t[j] += h.at(i, k) * p.pool_tr_w.at(k, j);
      }
      feats.push_back(t);
    }
    const auto expect = oracle::attention_pool(logits, feats);
    for (std::size_t j = 0; j < z.cols(); ++j)
      REQUIRE(z.at(0, j) == Catch::Approx(expect[j]).margin(1e-10));
  }
  SECTION("empty node set is an error") {
    Tensor empty(0, 3);
    REQUIRE_THROWS_AS(attention_pool(empty, p), std::invalid_argument);
  }
}

TEST_CASE("st forward runs the full stage pipeline") {
  Rng rng(13);
  SECTION("one cell yields edge-free embeddings at every scale") {
    const std::vector<std::pair<double, double>> one{{30.0, 40.0}};
    CellGraph g = build_micro_graph(one, 256, 3);
    StEncoderParams p = tiny_params(5, 4, 3, 14);
    Tensor x = Tensor::randn(1, 5, rng);
    Rng noise(99);
    const auto res = st_forward(x, g, p, 0.5, noise, EncodeMode::train);
    for (int s = 0; s < 3; ++s) {
      REQUIRE(res.realized[s].empty());
      REQUIRE(res.embedding.z[s].cols() == 3);
      for (double v : res.embedding.z[s].data()) REQUIRE(std::isfinite(v));
    }
  }
  SECTION("zeroed gnn weights collapse z to the pool constants") {
    CellGraph g = random_graph(rng, 12, 256);
    StEncoderParams p = tiny_params(5, 4, 3, 15);
    for (auto& w : p.gnn_w) std::fill(w.data().begin(), w.data().end(), 0.0);
    Tensor x = Tensor::randn(12, 5, rng);
    Rng noise(98);
    const auto res = st_forward(x, g, p, 0.5, noise, EncodeMode::train);
    for (int s = 0; s < 3; ++s)
      for (std::size_t j = 0; j < 3; ++j)
        REQUIRE(res.embedding.z[s].at(0, j) ==
                Catch::Approx(p.pool_tr_b.at(0, j)).margin(1e-12));
  }
  SECTION("empty tiles are rejected") {
    CellGraph g;
    g.m = 256;
    StEncoderParams p = tiny_params(5, 4, 3, 16);
    Tensor x(0, 5);
    Rng noise(97);
    REQUIRE_THROWS_AS(st_forward(x, g, p, 0.5, noise, EncodeMode::train),
                      std::invalid_argument);
  }
}

TEST_CASE("receptive fields grow monotonically across scales") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    CellGraph g = random_graph(
        rng, 25 + static_cast<int>(rng.uniform_index(25)), 256);
    StEncoderParams p = tiny_params(4, 4, 3, 18 + trial);
    Tensor x = Tensor::randn(g.size(), 4, rng);
    Rng noise(200 + trial);
    const auto res =
        st_forward(x, g, p, 0.5, noise,
                   trial % 2 == 0 ? EncodeMode::train : EncodeMode::infer);
    for (int node = 0; node < static_cast<int>(g.size()); ++node) {
      std::array<std::set<int>, 3> nbrs;
      for (int s = 0; s < 3; ++s)
        for (const auto& [u, v] : res.realized[s]) {
          if (u == node) nbrs[s].insert(v);
          if (v == node) nbrs[s].insert(u);
        }
      for (int v : nbrs[0]) REQUIRE(nbrs[1].count(v) == 1);
      for (int v : nbrs[1]) REQUIRE(nbrs[2].count(v) == 1);
    }
    for (int s = 0; s < 3; ++s)
      for (const auto& [u, v] : res.realized[s])
        REQUIRE(g.same_block(u, v, static_cast<Scale>(s)));
  }
}

TEST_CASE("node permutation leaves pooled embeddings unchanged") {
  Rng rng(19);
  const int n = 18;
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < n; ++i)
    pts.push_back({rng.uniform01() * 256.0, rng.uniform01() * 256.0});
  Tensor x = Tensor::randn(n, 5, rng);

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng prng(77);
  prng.shuffle(perm);
  std::vector<std::pair<double, double>> pts_p(n);
  Tensor x_p(n, 5);
  for (int i = 0; i < n; ++i) {
    pts_p[perm[i]] = pts[i];
    for (int j = 0; j < 5; ++j) x_p.at(perm[i], j) = x.at(i, j);
  }

  StEncoderParams p = tiny_params(5, 4, 3, 20);
  CellGraph g = build_micro_graph(pts, 256, 2);
  CellGraph gp = build_micro_graph(pts_p, 256, 2);
  Rng na(1), nb(1);
  const auto res = st_forward(x, g, p, 0.5, na, EncodeMode::infer);
  const auto res_p = st_forward(x_p, gp, p, 0.5, nb, EncodeMode::infer);

  for (int s = 0; s < 3; ++s) {
    for (std::size_t j = 0; j < 3; ++j)
      REQUIRE(res.embedding.z[s].at(0, j) ==
              Catch::Approx(res_p.embedding.z[s].at(0, j)).margin(1e-12));
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        REQUIRE(res.stage_nodes[s].at(i, j) ==
                Catch::Approx(res_p.stage_nodes[s].at(perm[i], j))
                    .margin(1e-12));
  }
}

TEST_CASE("infer mode is deterministic across runs") {
  Rng rng(23);
  CellGraph g = random_graph(rng, 20, 256);
  StEncoderParams p = tiny_params(4, 4, 3, 24);
  Tensor x = Tensor::randn(20, 4, rng);
  Rng n1(1), n2(2);  // different noise streams must not matter
  const auto a = st_forward(x, g, p, 0.5, n1, EncodeMode::infer);
  const auto b = st_forward(x, g, p, 0.5, n2, EncodeMode::infer);
  for (int s = 0; s < 3; ++s)
    REQUIRE(a.embedding.z[s].data() == b.embedding.z[s].data());
}

TEST_CASE("train-mode gradients flow through every parameter group") {
  Rng rng(29);
  const int n = 20;
  CellGraph g = random_graph(rng, n, 256, 2);
  StEncoderParams p = tiny_params(4, 4, 3, 30);
  Tensor x = Tensor::randn(n, 4, rng);

  auto build = [&]() {
    Rng noise(4242);  // frozen draws: every evaluation sees identical noise
    const auto res = st_forward(x, g, p, 0.7, noise, EncodeMode::train);
    Rng wr(31);
    Tensor readout;
    for (int s = 0; s < 3; ++s) {
      Tensor w = Tensor::randn(1, 3, wr);
      Tensor part = mean_all(mul(res.embedding.z[s], w));
      readout = s == 0 ? part : add(readout, part);
    }
    return readout;
  };

  Tensor loss = build();
  backward(loss);

  auto params = p.named_params();
  // the scorer must receive gradient through the Gumbel relaxation
  double scorer_norm = 0.0;
  for (double v : p.scorer_w1.grad()) scorer_norm += v * v;
  for (double v : p.scorer_w2.grad()) scorer_norm += v * v;
  REQUIRE(scorer_norm > 0.0);

  auto f = [&]() { return build().item(); };
  for (auto& [name, t] : params) {
    auto& data = t.data();
    const std::size_t stride = std::max<std::size_t>(1, data.size() / 4);
    for (std::size_t i = 0; i < data.size(); i += stride) {
      const double fd = oracle::central_diff(f, data[i]);
      INFO(name << " coord " << i);
      REQUIRE(oracle::rel_err(t.grad()[i], fd, 1e-3) < 1e-3);
    }
  }
}
