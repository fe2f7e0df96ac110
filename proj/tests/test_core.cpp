#include <catch2/catch_amalgamated.hpp>

#include "attrmogen/core/graph.hpp"
#include "attrmogen/core/optim.hpp"
#include "attrmogen/core/rng.hpp"
#include "attrmogen/core/serialize.hpp"
#include "attrmogen/core/tensor.hpp"
#include "grad_check.hpp"

#include <filesystem>

using namespace attrmogen;
using attrmogen::testing::check_graph_gradients;

TEST_CASE("rng is deterministic and serializable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());

  const std::string state = a.serialize();
  const double expect = a.normal();
  Rng c;
  c.deserialize(state);
  REQUIRE(c.normal() == expect);
}

TEST_CASE("rng uniform_int is unbiased over small ranges") {
  Rng rng(7);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) counts[rng.uniform_int(7)]++;
  // 3 sigma of binomial(n, 1/7)
  const double mean = n / 7.0;
  const double sigma = std::sqrt(n * (1.0 / 7.0) * (6.0 / 7.0));
  for (int c : counts) REQUIRE(std::abs(c - mean) < 3.0 * sigma);
}

TEST_CASE("rng normal moments") {
  Rng rng(3);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  REQUIRE(std::abs(s / n) < 0.01);
  REQUIRE(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("elementwise and matmul gradients match finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({3, 4}, rng);
    auto res = check_graph_gradients(
        [](Graph& g, const std::vector<Graph::Id>& in) {
          return g.mean_all(g.mul(g.add(in[0], in[1]), g.sub(in[0], in[1])));
        },
        {a, b});
    REQUIRE(res.max_rel_err < 1e-6);

    Tensor m = Tensor::randn({4, 3}, rng);
    Tensor n = Tensor::randn({3, 5}, rng);
    res = check_graph_gradients(
        [](Graph& g, const std::vector<Graph::Id>& in) {
          return g.mse(g.matmul(in[0], in[1]),
                       g.leaf(Tensor::full({4, 5}, 0.3)));
        },
        {m, n});
    REQUIRE(res.max_rel_err < 1e-6);

    res = check_graph_gradients(
        [](Graph& g, const std::vector<Graph::Id>& in) {
          return g.sum_all(g.relu(g.matmul_nt(in[0], in[1])));
        },
        {Tensor::randn({3, 4}, rng), Tensor::randn({6, 4}, rng)});
    REQUIRE(res.max_rel_err < 1e-5);

    res = check_graph_gradients(
        [](Graph& g, const std::vector<Graph::Id>& in) {
          return g.sum_all(g.matmul_tn(in[0], in[1]));
        },
        {Tensor::randn({5, 2}, rng), Tensor::randn({5, 3}, rng)});
    REQUIRE(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("conv1d gradients match finite differences") {
  Rng rng(5);
  Tensor x = Tensor::randn({2, 3, 8}, rng);
  Tensor w = Tensor::randn({4, 3, 3}, rng, 0.5);
  Tensor b = Tensor::randn({4}, rng, 0.1);
  auto res = check_graph_gradients(
      [](Graph& g, const std::vector<Graph::Id>& in) {
        return g.mean_all(g.conv1d(in[0], in[1], in[2], 2, 1));
      },
      {x, w, b});
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("conv1d_transpose inverts conv1d shapes and grads check") {
  Rng rng(6);
  Tensor x = Tensor::randn({2, 4, 5}, rng);
  Tensor w = Tensor::randn({4, 3, 4}, rng, 0.5);
  Tensor b = Tensor::randn({3}, rng, 0.1);
  {
    Graph g;
    Graph::Id y = g.conv1d_transpose(g.leaf(x), g.leaf(w), g.leaf(b), 2, 1);
    REQUIRE(g.value(y).shape() == std::vector<int64_t>{2, 3, 10});
  }
  auto res = check_graph_gradients(
      [](Graph& g, const std::vector<Graph::Id>& in) {
        return g.mse(g.conv1d_transpose(in[0], in[1], in[2], 2, 1),
                     g.leaf(Tensor::full({2, 3, 10}, 0.1)));
      },
      {x, w, b});
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("layout ops round trip and differentiate") {
  Rng rng(8);
  Tensor x = Tensor::randn({2, 3, 4}, rng);
  Graph g;
  Graph::Id id = g.leaf(x);
  Graph::Id rows = g.bct_to_rows(id);
  Graph::Id back = g.rows_to_bct(rows, 2, 4);
  for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(g.value(back)[i] == x[i]);

  auto res = check_graph_gradients(
      [](Graph& gg, const std::vector<Graph::Id>& in) {
        Graph::Id r = gg.bct_to_rows(in[0]);
        Graph::Id pooled = gg.mean_last(gg.rows_to_bct(r, 2, 4));
        return gg.mse(pooled, gg.leaf(Tensor::full({2, 3}, 0.5)));
      },
      {x});
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("softmax, cross entropy, xlogx gradients") {
  Rng rng(9);
  Tensor logits = Tensor::randn({4, 6}, rng);
  auto res = check_graph_gradients(
      [](Graph& g, const std::vector<Graph::Id>& in) {
        return g.cross_entropy_rows(in[0], {1, 0, 5, 2});
      },
      {logits});
  REQUIRE(res.max_rel_err < 1e-6);

  res = check_graph_gradients(
      [](Graph& g, const std::vector<Graph::Id>& in) {
        return g.xlogx_sum(g.softmax_rows(in[0]));
      },
      {logits});
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("layer norm and column normalization gradients") {
  Rng rng(10);
  Tensor x = Tensor::randn({3, 5}, rng);
  Tensor gamma = Tensor::full({5}, 1.2);
  Tensor beta = Tensor::full({5}, -0.1);
  auto res = check_graph_gradients(
      [](Graph& g, const std::vector<Graph::Id>& in) {
        return g.mse(g.layer_norm_rows(in[0], in[1], in[2]),
                     g.leaf(Tensor::full({3, 5}, 0.2)));
      },
      {x, gamma, beta}, 1e-4);
  REQUIRE(res.max_rel_err < 1e-5);

  Tensor s = Tensor::randn({4, 3}, rng);
  res = check_graph_gradients(
      [](Graph& g, const std::vector<Graph::Id>& in) {
        return g.frob_identity_loss(
            g.matmul_tn(g.l2_normalize_cols(in[0]), g.l2_normalize_cols(in[1])));
      },
      {s, Tensor::randn({4, 3}, rng)});
  REQUIRE(res.max_rel_err < 1e-5);
}

TEST_CASE("gather, bag_mean, hconcat, slice gradients") {
  Rng rng(12);
  Tensor table = Tensor::randn({6, 4}, rng);
  auto res = check_graph_gradients(
      [](Graph& g, const std::vector<Graph::Id>& in) {
        return g.mean_all(g.gather_rows(in[0], {0, 3, 3, 5}));
      },
      {table});
  REQUIRE(res.max_rel_err < 1e-6);

  res = check_graph_gradients(
      [](Graph& g, const std::vector<Graph::Id>& in) {
        return g.mse(g.bag_mean(in[0], {{0, 1}, {2, 2, 3}}),
                     g.leaf(Tensor::full({2, 4}, 0.1)));
      },
      {table});
  REQUIRE(res.max_rel_err < 1e-6);

  Tensor a = Tensor::randn({3, 2}, rng);
  Tensor b = Tensor::randn({3, 4}, rng);
  res = check_graph_gradients(
      [](Graph& g, const std::vector<Graph::Id>& in) {
        Graph::Id cat = g.hconcat({in[0], in[1]});
        return g.mean_all(g.slice_cols(cat, 1, 5));
      },
      {a, b});
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("straight-through estimator copies gradients") {
  Tensor pre({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor quant({2, 2}, {1.1, 1.9, 3.2, 3.8});
  Graph g;
  Graph::Id p = g.leaf(pre, true);
  Graph::Id st = g.straight_through(p, quant);
  for (int64_t i = 0; i < 4; ++i) REQUIRE(g.value(st)[i] == quant[i]);
  Graph::Id loss = g.mean_all(st);
  g.backward(loss);
  for (int64_t i = 0; i < 4; ++i) REQUIRE(g.grad(p)[i] == Catch::Approx(0.25));
}

TEST_CASE("detach blocks gradients") {
  Tensor x({2}, {1.0, 2.0});
  Graph g;
  Graph::Id a = g.leaf(x, true);
  Graph::Id loss = g.mean_all(g.mul(g.detach(a), a));
  g.backward(loss);
  // d/da of mean(detach(a)*a) = detach(a)/2
  REQUIRE(g.grad(a)[0] == Catch::Approx(0.5));
  REQUIRE(g.grad(a)[1] == Catch::Approx(1.0));
}

TEST_CASE("adam minimizes a quadratic") {
  Tensor w({3}, {5.0, -4.0, 2.0});
  std::vector<NamedParam> params = {{"w", &w}};
  Adam opt({0.1, 0.9, 0.999, 1e-8});
  for (int step = 0; step < 500; ++step) {
    Graph g;
    VarMap vars(g, true);
    Graph::Id wid = vars(w);
    Graph::Id loss = g.mse(wid, g.leaf(Tensor({3}, {1.0, 2.0, 3.0})));
    g.backward(loss);
    opt.step(params, vars);
  }
  REQUIRE(std::abs(w[0] - 1.0) < 1e-2);
  REQUIRE(std::abs(w[1] - 2.0) < 1e-2);
  REQUIRE(std::abs(w[2] - 3.0) < 1e-2);
}

TEST_CASE("named tensor blob round trips bit-exactly") {
  Rng rng(21);
  NamedTensors nt;
  nt.add("enc.w", Tensor::randn({3, 4, 5}, rng));
  nt.add("enc.b", Tensor::randn({4}, rng));
  const auto dir = std::filesystem::temp_directory_path() / "amg_blob_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "weights.bin";
  nt.save(path);
  NamedTensors rt = NamedTensors::load(path);
  // Save again: the file must be byte-identical (float32 fixed point of the
  // double → float → double round trip).
  const auto path2 = dir / "weights2.bin";
  rt.save(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
  std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
  REQUIRE(b1 == b2);
  REQUIRE(rt.get("enc.w").shape() == std::vector<int64_t>{3, 4, 5});
  REQUIRE_THROWS_AS(rt.get("missing"), Error);
}
