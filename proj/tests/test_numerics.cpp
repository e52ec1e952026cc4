#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "webformer/flops.hpp"
#include "webformer/gradcheck.hpp"
#include "webformer/numerics/autograd.hpp"
#include "webformer/numerics/optim.hpp"

using namespace webformer;
using namespace webformer::num;
using Tp = Tape<double>;

namespace {

Tensor<double> random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor<double> t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

// Scalar loss = sum(out * W) for a fixed random W, so every output entry
// carries a distinct adjoint.
struct Probe {
  Tensor<double> weights;
  Var apply(Tp& tape, Var out, std::mt19937_64& rng) {
    const auto& v = tape.value(out);
    if (weights.size() != v.size()) weights = random_tensor(v.rows(), v.cols(), rng);
    Tensor<double> w = weights;
    const Shape s = v.shape();
    Tensor<double> reshaped(s, w.storage());
    Var wv = tape.constant(reshaped);
    return ops::sum(tape, mul(tape, out, wv));
  }
  // Elementwise product through matmul-free ops: out * w = sum over a
  // diagonal is awkward, so do it with an explicit recorded op.
  static Var mul(Tp& tape, Var a, Var b) {
    Tensor<double> out = tape.value(a);
    const auto& B = tape.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return tape.record(std::move(out), {a, b}, [a, b, self = tape.current_id()](Tp& t) {
      const auto& G = t.grad(Var{self});
      const auto& B = t.value(b);
      auto& dA = t.grad(a);
      for (std::size_t i = 0; i < G.size(); ++i) dA[i] += G[i] * B[i];
    });
  }
};

// Checks d(loss)/d(param) for every listed parameter against central
// differences on up to `coords` random coordinates.
void expect_grads_match(ParamStore<double>& store, const std::function<Var(Tp&)>& build, std::size_t coords = 100,
                        std::uint64_t seed = 7) {
  store.zero_grad();
  {
    Tp tape(false);
    tape.backward(build(tape));
  }
  auto loss = [&]() {
    Tp tape(false);
    return tape.value(build(tape))[0];
  };
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t c = 0; c < coords; ++c) {
    auto& p = store.params()[rng() % store.size()];
    const std::size_t i = rng() % p.value.size();
    const double a = p.grad[i];
    const double n = finite_diff_grad<double>(loss, p, i);
    worst = std::max(worst, relative_error(a, n, 1e-6));
  }
  EXPECT_LE(worst, 1e-5);
}

}  // namespace

TEST(Numerics, TensorShapeMismatchOnConstruction) {
  EXPECT_THROW(Tensor<double>(Shape{2, 3}, std::vector<double>(5)), ShapeError);
}

TEST(Numerics, MatmulShapeErrorNamesBothShapes) {
  Tp tape;
  Var a = tape.constant(Tensor<double>(2, 3));
  Var b = tape.constant(Tensor<double>(4, 5));
  try {
    ops::matmul(tape, a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Numerics, SoftmaxSingleElementIsOne) {
  Tp tape;
  Tensor<double> l(Shape{4});
  l[2] = 37.5;
  Var p = ops::softmax_indexed(tape, tape.constant(l), {2});
  EXPECT_DOUBLE_EQ(tape.value(p)[0], 1.0);
}

TEST(Numerics, SoftmaxEqualLogitsUniform) {
  Tp tape;
  Tensor<double> l(Shape{6}, 0.3);
  Var p = ops::softmax_indexed(tape, tape.constant(l), {0, 2, 3, 5});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(tape.value(p)[i], 0.25, 1e-12);
}

TEST(Numerics, SoftmaxRandomIndexSetsSumToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Tp tape;
    auto l = random_tensor(1, 20, rng, 10.0);
    std::vector<int> idx;
    for (int i = 0; i < 20; ++i)
      if (rng() % 2 || idx.empty()) idx.push_back(i);
    Var p = ops::softmax_indexed(tape, tape.constant(l), idx);
    double s = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      EXPECT_GE(tape.value(p)[i], 0.0);
      s += tape.value(p)[i];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Numerics, SoftmaxIndexOutOfRange) {
  Tp tape;
  Var l = tape.constant(Tensor<double>(Shape{3}));
  EXPECT_THROW(ops::softmax_indexed(tape, l, {0, 3}), ShapeError);
  EXPECT_THROW(ops::softmax_indexed(tape, l, {}), ShapeError);
}

TEST(Numerics, LayerNormOfConstantRowIsZeroBeforeAffine) {
  Tp tape;
  Var x = tape.constant(Tensor<double>(2, 5, 4.25));
  Var g = tape.constant(Tensor<double>(Shape{5}, 1.0));
  Var b = tape.constant(Tensor<double>(Shape{5}, 0.0));
  Var y = ops::layer_norm(tape, x, g, b);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(tape.value(y)[i], 0.0, 1e-12);
}

TEST(Numerics, DropoutEvalIsIdentity) {
  Tp tape(false, 5);
  std::mt19937_64 rng(1);
  Var x = tape.constant(random_tensor(4, 4, rng));
  Var y = ops::dropout(tape, x, 0.5);
  EXPECT_EQ(tape.value(y), tape.value(x));
}

TEST(Numerics, DropoutTrainZeroesOrScales) {
  Tp tape(true, 5);
  Var x = tape.constant(Tensor<double>(100, 100, 1.0));
  Var y = ops::dropout(tape, x, 0.25);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < 10000; ++i) {
    const double v = tape.value(y)[i];
    if (v == 0.0) ++zeros;
    else EXPECT_NEAR(v, 1.0 / 0.75, 1e-12);
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 10000.0, 0.25, 0.02);
  EXPECT_THROW(ops::dropout(tape, x, 1.0), ConfigError);
}

TEST(Numerics, SumOfLinearGivesInputBroadcast) {
  // loss = sum(x W): dW[r][c] = sum_i x[i][r]
  ParamStore<double> store;
  std::mt19937_64 rng(11);
  auto& w = store.add("w", random_tensor(3, 2, rng));
  Tensor<double> x = random_tensor(4, 3, rng);
  Tp tape;
  tape.backward(ops::sum(tape, ops::matmul(tape, tape.constant(x), tape.param(w))));
  for (std::size_t r = 0; r < 3; ++r) {
    double col = 0;
    for (std::size_t i = 0; i < 4; ++i) col += x.at(i, r);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(w.grad.at(r, c), col, 1e-12);
  }
}

TEST(Numerics, UnusedParameterGetsZeroGradient) {
  ParamStore<double> store;
  std::mt19937_64 rng(2);
  auto& a = store.add("a", random_tensor(2, 2, rng));
  store.add("unused", random_tensor(2, 2, rng));
  Tp tape;
  tape.backward(ops::sum(tape, tape.param(a)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(store.get("unused").grad[i], 0.0);
}

TEST(Numerics, BackwardTwiceIsStale) {
  ParamStore<double> store;
  auto& a = store.add("a", Tensor<double>(1, 1, 2.0));
  Tp tape;
  Var l = ops::sum(tape, tape.param(a));
  tape.backward(l);
  EXPECT_THROW(tape.backward(l), StaleTapeError);
  tape.reset();
  tape.backward(ops::sum(tape, tape.param(a)));
  EXPECT_EQ(a.grad[0], 2.0);
}

TEST(Numerics, BackwardNeedsScalar) {
  ParamStore<double> store;
  auto& a = store.add("a", Tensor<double>(2, 2, 1.0));
  Tp tape;
  EXPECT_THROW(tape.backward(tape.param(a)), ShapeError);
}

// ---- finite-difference checks, one per op ----

TEST(NumericsGrad, Matmul) {
  std::mt19937_64 rng(1);
  ParamStore<double> s;
  auto& a = s.add("a", random_tensor(5, 4, rng));
  auto& b = s.add("b", random_tensor(4, 3, rng));
  Probe probe;
  std::mt19937_64 prng(9);
  expect_grads_match(s, [&](Tp& t) { return probe.apply(t, ops::matmul(t, t.param(a), t.param(b)), prng); });
}

TEST(NumericsGrad, AddAndAddRowAndScale) {
  std::mt19937_64 rng(2);
  ParamStore<double> s;
  auto& a = s.add("a", random_tensor(3, 4, rng));
  auto& b = s.add("b", random_tensor(3, 4, rng));
  auto& r = s.add("r", random_tensor(1, 4, rng));
  Probe probe;
  std::mt19937_64 prng(9);
  expect_grads_match(s, [&](Tp& t) {
    Var x = ops::add(t, t.param(a), t.param(b));
    x = ops::add_row(t, x, t.param(r));
    return probe.apply(t, ops::scale(t, x, 1.7), prng);
  });
}

TEST(NumericsGrad, GatherConcatSlice) {
  std::mt19937_64 rng(3);
  ParamStore<double> s;
  auto& tab = s.add("table", random_tensor(6, 3, rng));
  auto& b = s.add("b", random_tensor(4, 2, rng));
  auto& c = s.add("c", random_tensor(2, 5, rng));
  Probe probe;
  std::mt19937_64 prng(9);
  expect_grads_match(s, [&](Tp& t) {
    Var g = ops::gather_rows(t, t.param(tab), {0, 5, 5, 2});
    Var x = ops::concat_cols(t, g, t.param(b));           // 4 x 5
    Var y = ops::concat_rows(t, x, t.param(c));           // 6 x 5
    return probe.apply(t, ops::slice_rows(t, y, 1, 4), prng);
  });
}

TEST(NumericsGrad, LayerNorm) {
  std::mt19937_64 rng(4);
  ParamStore<double> s;
  auto& x = s.add("x", random_tensor(4, 8, rng, 2.0));
  auto& g = s.add("gamma", Tensor<double>(Shape{8}, random_tensor(1, 8, rng).storage()));
  auto& b = s.add("beta", Tensor<double>(Shape{8}, random_tensor(1, 8, rng).storage()));
  Probe probe;
  std::mt19937_64 prng(9);
  expect_grads_match(s, [&](Tp& t) { return probe.apply(t, ops::layer_norm(t, t.param(x), t.param(g), t.param(b)), prng); });
}

TEST(NumericsGrad, Gelu) {
  std::mt19937_64 rng(5);
  ParamStore<double> s;
  auto& x = s.add("x", random_tensor(5, 5, rng, 2.0));
  Probe probe;
  std::mt19937_64 prng(9);
  expect_grads_match(s, [&](Tp& t) { return probe.apply(t, ops::gelu(t, t.param(x)), prng); });
}

TEST(NumericsGrad, DropoutWithFixedMask) {
  // Same tape seed each evaluation, so the mask is a constant of the loss.
  std::mt19937_64 rng(6);
  ParamStore<double> s;
  auto& x = s.add("x", random_tensor(6, 6, rng));
  Probe probe;
  std::mt19937_64 prng(9);
  s.zero_grad();
  {
    Tp tape(true, 42);
    tape.backward(probe.apply(tape, ops::dropout(tape, tape.param(x), 0.3), prng));
  }
  auto loss = [&]() {
    Tp tape(true, 42);
    return tape.value(probe.apply(tape, ops::dropout(tape, tape.param(x), 0.3), prng))[0];
  };
  for (std::size_t i = 0; i < x.value.size(); ++i)
    EXPECT_LE(relative_error(x.grad[i], finite_diff_grad<double>(loss, x, i), 1e-6), 1e-5);
}

TEST(NumericsGrad, SoftmaxIndexed) {
  std::mt19937_64 rng(7);
  ParamStore<double> s;
  auto& l = s.add("logits", random_tensor(1, 9, rng, 3.0));
  Probe probe;
  std::mt19937_64 prng(9);
  expect_grads_match(s, [&](Tp& t) { return probe.apply(t, ops::softmax_indexed(t, t.param(l), {8, 0, 3, 4}), prng); });
}

TEST(NumericsGrad, CrossEntropy) {
  std::mt19937_64 rng(8);
  ParamStore<double> s;
  auto& l = s.add("logits", random_tensor(7, 1, rng, 3.0));
  expect_grads_match(s, [&](Tp& t) { return ops::cross_entropy(t, t.param(l), 4); });
}

TEST(NumericsGrad, IndexedAttentionSparseWithBias) {
  std::mt19937_64 rng(9);
  ParamStore<double> s;
  auto& q = s.add("q", random_tensor(5, 8, rng));
  auto& k = s.add("k", random_tensor(6, 8, rng));
  auto& v = s.add("v", random_tensor(6, 8, rng));
  auto& a = s.add("bias", random_tensor(3, 4, rng));
  NeighborLists nb;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 6; ++j)
      if ((i + j) % 3 != 0) nb.push(j, (i * j) % 4 - 1);  // includes -1: no bias
    nb.close_row();
  }
  Probe probe;
  std::mt19937_64 prng(9);
  expect_grads_match(s, [&](Tp& t) {
    return probe.apply(t, ops::indexed_attention(t, t.param(q), t.param(k), t.param(v), &nb, t.param(a), 2), prng);
  }, 150);
}

TEST(NumericsGrad, IndexedAttentionDense) {
  std::mt19937_64 rng(10);
  ParamStore<double> s;
  auto& q = s.add("q", random_tensor(4, 6, rng));
  auto& k = s.add("k", random_tensor(7, 6, rng));
  auto& v = s.add("v", random_tensor(7, 6, rng));
  Probe probe;
  std::mt19937_64 prng(9);
  expect_grads_match(s, [&](Tp& t) {
    return probe.apply(t, ops::indexed_attention<double>(t, t.param(q), t.param(k), t.param(v), nullptr, Var{}, 3), prng);
  });
}

TEST(NumericsGrad, IndexedAttentionDropoutFixedSeed) {
  std::mt19937_64 rng(12);
  ParamStore<double> s;
  auto& q = s.add("q", random_tensor(4, 4, rng));
  auto& k = s.add("k", random_tensor(4, 4, rng));
  auto& v = s.add("v", random_tensor(4, 4, rng));
  NeighborLists nb;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j <= i; ++j) nb.push(j);
    nb.close_row();
  }
  Probe probe;
  std::mt19937_64 prng(9);
  auto build = [&](Tp& t) {
    return probe.apply(t, ops::indexed_attention(t, t.param(q), t.param(k), t.param(v), &nb, Var{}, 2, 0.3), prng);
  };
  s.zero_grad();
  {
    Tp tape(true, 77);
    tape.backward(build(tape));
  }
  auto loss = [&]() {
    Tp tape(true, 77);
    return tape.value(build(tape))[0];
  };
  for (auto* p : {&q, &k, &v})
    for (std::size_t i = 0; i < p->value.size(); ++i)
      EXPECT_LE(relative_error(p->grad[i], finite_diff_grad<double>(loss, *p, i), 1e-6), 1e-5) << p->name << " " << i;
}

TEST(Numerics, IndexedAttentionEmptyRowIsZero) {
  Tp tape;
  std::mt19937_64 rng(1);
  Var q = tape.constant(random_tensor(2, 4, rng));
  Var k = tape.constant(random_tensor(3, 4, rng));
  NeighborLists nb;
  nb.push(1);
  nb.close_row();
  nb.close_row();
  Var out = ops::indexed_attention(tape, q, k, k, &nb, Var{}, 2);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_DOUBLE_EQ(tape.value(out).at(0, c), tape.value(k).at(1, c));
    EXPECT_EQ(tape.value(out).at(1, c), 0.0);
  }
}

TEST(Numerics, IndexedAttentionRejectsBadInput) {
  Tp tape;
  Var q = tape.constant(Tensor<double>(2, 4));
  Var k = tape.constant(Tensor<double>(3, 4));
  NeighborLists nb;
  nb.push(3);
  nb.close_row();
  nb.close_row();
  EXPECT_THROW(ops::indexed_attention(tape, q, k, k, &nb, Var{}, 2), ShapeError);
  EXPECT_THROW(ops::indexed_attention<double>(tape, q, k, k, nullptr, Var{}, 3), ConfigError);
  Var bad = tape.constant(Tensor<double>(3, 5));
  EXPECT_THROW(ops::indexed_attention<double>(tape, q, bad, bad, nullptr, Var{}, 2), ShapeError);
}

// ---- optimizer and finite differences ----

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore<double> s;
  auto& w = s.add("w", Tensor<double>(Shape{1}, 0.0));
  w.grad[0] = 1.0;
  adam_step(s, AdamConfig{0.1});
  // m_hat = 1, v_hat = 1: step = lr * 1 / (1 + 1e-8)
  EXPECT_NEAR(w.value[0], -0.1, 1e-8);
  EXPECT_EQ(w.grad[0], 0.0);
}

TEST(Adam, ZeroGradientIsNoOp) {
  ParamStore<double> s;
  std::mt19937_64 rng(1);
  auto& w = s.add("w", random_tensor(3, 3, rng));
  const Tensor<double> before = w.value;
  for (int i = 0; i < 5; ++i) adam_step(s, AdamConfig{0.01});
  EXPECT_EQ(w.value, before);
}

TEST(Adam, QuadraticDecreasesMonotonically) {
  ParamStore<double> s;
  auto& w = s.add("w", Tensor<double>(Shape{1}, 3.0));
  auto f = [](double x) { return (x - 1.0) * (x - 1.0); };
  double prev = f(w.value[0]);
  for (int i = 0; i < 2; ++i) {
    w.grad[0] = 2.0 * (w.value[0] - 1.0);
    adam_step(s, AdamConfig{0.1});
    const double now = f(w.value[0]);
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(Adam, NonPositiveLearningRateRejected) {
  ParamStore<double> s;
  s.add("w", Tensor<double>(Shape{1}));
  EXPECT_THROW(adam_step(s, AdamConfig{0.0}), ConfigError);
  EXPECT_THROW(adam_step(s, AdamConfig{-1e-3}), ConfigError);
}

TEST(FiniteDiff, SquareAtThree) {
  const double g = finite_diff_grad<double>([](double x) { return x * x; }, 3.0);
  EXPECT_NEAR(g, 6.0, 1e-6);
}

TEST(FiniteDiff, CrossEntropyMatchesAnalytic) {
  std::mt19937_64 rng(4);
  ParamStore<double> s;
  auto& l = s.add("l", random_tensor(10, 1, rng, 2.0));
  const std::size_t target = 6;
  auto loss = [&]() {
    Tp t;
    return t.value(ops::cross_entropy(t, t.param(l), target))[0];
  };
  double mx = -1e300, z = 0;
  for (std::size_t i = 0; i < 10; ++i) mx = std::max(mx, l.value[i]);
  for (std::size_t i = 0; i < 10; ++i) z += std::exp(l.value[i] - mx);
  for (std::size_t i = 0; i < 10; ++i) {
    const double analytic = std::exp(l.value[i] - mx) / z - (i == target ? 1.0 : 0.0);
    EXPECT_NEAR(finite_diff_grad<double>(loss, l, i), analytic, 1e-6 * std::max(1.0, std::abs(analytic)));
  }
  EXPECT_NEAR(loss(), -(l.value[target] - mx - std::log(z)), 1e-12);
}

TEST(FiniteDiff, CoordinateRestored) {
  ParamStore<double> s;
  auto& p = s.add("p", Tensor<double>(Shape{3}, 0.5));
  finite_diff_grad<double>([&]() { return p.value[1] * 2.0; }, p, 1);
  EXPECT_EQ(p.value[1], 0.5);
}

// ---- full-model gradient check driver ----

TEST(Gradcheck, FreshModelPasses) {
  auto fx = make_gradcheck_fixture(3);
  GradcheckConfig cfg;
  cfg.coords = 60;
  auto report = gradcheck(fx.model, fx.doc, fx.topo, fx.field_id, fx.begin, fx.end, cfg);
  EXPECT_TRUE(report.passed()) << report.to_json().dump();
  EXPECT_EQ(report.samples.size(), 60u);
}

TEST(Gradcheck, CorruptedAdjointFails) {
  auto fx = make_gradcheck_fixture(3);
  GradcheckConfig cfg;
  cfg.coords = 60;
  auto report = gradcheck(fx.model, fx.doc, fx.topo, fx.field_id, fx.begin, fx.end, cfg,
                          [](ParamStore<double>& s) {
                            for (auto& p : s.params())
                              for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] = p.grad[i] * 1.01 + 1e-3;
                          });
  EXPECT_FALSE(report.passed());
  EXPECT_FALSE(report.failures().empty());
  EXPECT_FALSE(report.failures().front().tensor.empty());
}

TEST(Gradcheck, ZeroCoordsRejected) {
  GradcheckConfig cfg;
  cfg.coords = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

// ---- FLOP counter ----

namespace {
Document synthetic_doc(std::size_t text_nodes, std::size_t words_per_node, Vocab& vocab) {
  std::string html = "<html><body>";
  for (std::size_t n = 0; n < text_nodes; ++n) {
    html += "<div><p>";
    for (std::size_t w = 0; w < words_per_node; ++w) html += "w" + std::to_string((n + w) % 50) + " ";
    html += "</p></div>";
  }
  html += "</body></html>";
  for (int i = 0; i < 50; ++i) vocab.add_word("w" + std::to_string(i));
  return ingest(html, vocab, IngestCaps{256, 100000});
}
}  // namespace

TEST(Flops, AdditiveAndProportionalToLayers) {
  Vocab vocab;
  vocab.add_field("name");
  Document doc = synthetic_doc(8, 12, vocab);
  ModelConfig cfg;
  cfg.set_vocab(vocab);
  auto topo = build_topology(doc, cfg.radius, true);
  FlopCount one = flop_count(cfg, topo);
  EXPECT_EQ(one.total(), one.h2h + one.h2t + one.t2h + one.t2t + one.f2h + one.projections + one.ffn);
  ModelConfig three = cfg;
  three.layers = 3;
  FlopCount f3 = flop_count(three, topo);
  EXPECT_EQ(f3.total() * 2, one.total() * 3);
  EXPECT_EQ(f3.t2t * 2, one.t2t * 3);
}

TEST(Flops, T2TBoundedByWindow) {
  Vocab vocab;
  vocab.add_field("name");
  Document doc = synthetic_doc(4, 40, vocab);
  ModelConfig cfg;
  cfg.set_vocab(vocab);
  cfg.layers = 1;
  auto topo = build_topology(doc, cfg.radius, true);
  const std::uint64_t d = static_cast<std::uint64_t>(cfg.hidden);
  std::uint64_t windows = 0;
  for (const auto& w : topo.t2t_window) windows += static_cast<std::uint64_t>(w.size());
  EXPECT_EQ(flop_count(cfg, topo).t2t, windows * 3 * d);
  EXPECT_LE(windows, topo.n_text * static_cast<std::uint64_t>(2 * cfg.radius + 1));
}

TEST(Flops, DoublingTextIsLinearForLocalPatterns) {
  Vocab vocab;
  vocab.add_field("name");
  // Long nodes: window truncation at node edges adds r(r+1) per node, which
  // is negligible here.
  Document small = synthetic_doc(8, 512, vocab);
  Document big = synthetic_doc(8, 1024, vocab);
  ModelConfig cfg;
  cfg.set_vocab(vocab);
  auto ts = build_topology(small, cfg.radius, true);
  auto tb = build_topology(big, cfg.radius, true);
  ASSERT_EQ(ts.n_html, tb.n_html);
  ASSERT_EQ(tb.n_text, 2 * ts.n_text);
  const auto fs = flop_count(cfg, ts), fb = flop_count(cfg, tb);
  EXPECT_LE(static_cast<double>(fb.t2t + fb.t2h) / static_cast<double>(fs.t2t + fs.t2h), 2.01);
  EXPECT_EQ(full_attention_flops(cfg, 2 * ts.n_text), 4 * full_attention_flops(cfg, ts.n_text));
}

TEST(Flops, DenseTextTopologyIsQuadratic) {
  Vocab vocab;
  vocab.add_field("name");
  Document doc = synthetic_doc(4, 30, vocab);
  ModelConfig cfg;
  cfg.set_vocab(vocab);
  auto topo = dense_text_topology(build_topology(doc, cfg.radius, true));
  EXPECT_EQ(flop_count(cfg, topo).t2t, static_cast<std::uint64_t>(cfg.layers) * topo.n_text * topo.n_text * 2 *
                                           static_cast<std::uint64_t>(cfg.hidden));
}
