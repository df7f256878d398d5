#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "phlearn/autodiff.hpp"
#include "phlearn/nets.hpp"
#include "testing_util.hpp"

using namespace phlearn;

namespace {

// Independent straightforward MLP evaluator: plain double loops, no tensors.
std::vector<double> reference_mlp(const std::vector<int>& widths,
                                  const std::vector<std::vector<double>>& weights,
                                  const std::vector<std::vector<double>>& biases,
                                  std::vector<double> x) {
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l], out = widths[l + 1];
    std::vector<double> y(static_cast<std::size_t>(out), 0.0);
    for (int i = 0; i < out; ++i) {
      double acc = biases[l][static_cast<std::size_t>(i)];
      for (int j = 0; j < in; ++j)
        acc += weights[l][static_cast<std::size_t>(i) * in + j] * x[static_cast<std::size_t>(j)];
      y[static_cast<std::size_t>(i)] = acc;
    }
    if (l + 2 < widths.size())
      for (auto& v : y) v = std::tanh(v);
    x = std::move(y);
  }
  return x;
}

// Jacobi eigenvalue iteration for small symmetric matrices (test-only oracle).
std::vector<double> symmetric_eigenvalues(std::vector<double> a, int n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a[static_cast<std::size_t>(i) * n + j] *
                                              a[static_cast<std::size_t>(i) * n + j];
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<std::size_t>(p) * n + q];
        if (std::fabs(apq) < 1e-18) continue;
        const double app = a[static_cast<std::size_t>(p) * n + p];
        const double aqq = a[static_cast<std::size_t>(q) * n + q];
        const double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
        const double c = std::cos(theta), s = std::sin(theta);
        for (int k = 0; k < n; ++k) {
          const double akp = a[static_cast<std::size_t>(k) * n + p];
          const double akq = a[static_cast<std::size_t>(k) * n + q];
          a[static_cast<std::size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<std::size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[static_cast<std::size_t>(p) * n + k];
          const double aqk = a[static_cast<std::size_t>(q) * n + k];
          a[static_cast<std::size_t>(p) * n + k] = c * apk - s * aqk;
          a[static_cast<std::size_t>(q) * n + k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> eig(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) eig[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i) * n + i];
  return eig;
}

void set_param(ParamRefs& refs, const std::string& name, std::vector<double> values) {
  for (auto& r : refs)
    if (r.name == name) {
      r.value->mutable_values() = std::move(values);
      return;
    }
  FAIL() << "no parameter named " << name;
}

}  // namespace

TEST(Mlp, ZeroWeightsGiveLastBias) {
  Mlp net("t", MlpSpec{2, {4}, 3});
  ParamRefs refs;
  net.collect(refs);
  set_param(refs, "t/b1", {0.5, -1.0, 2.0});
  auto h = net.attach(nullptr);
  Tensor y = net.forward(h, vec({7.0, -3.0}));
  EXPECT_DOUBLE_EQ(y.at(0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(1), -1.0);
  EXPECT_DOUBLE_EQ(y.at(2), 2.0);
}

TEST(Mlp, SingleAffineLayer) {
  Mlp net("t", MlpSpec{1, {}, 1});
  ParamRefs refs;
  net.collect(refs);
  set_param(refs, "t/w0", {2.0});
  set_param(refs, "t/b0", {1.0});
  auto h = net.attach(nullptr);
  EXPECT_DOUBLE_EQ(net.forward(h, vec({3.0})).at(0), 7.0);
}

TEST(Mlp, MatchesIndependentEvaluator) {
  Mlp net("t", MlpSpec{1, {16}, 1});
  Rng rng(42);
  net.init(rng);
  ParamRefs refs;
  net.collect(refs);

  std::vector<int> widths = {1, 16, 1};
  std::vector<std::vector<double>> ws = {refs[0].value->values(), refs[2].value->values()};
  std::vector<std::vector<double>> bs = {refs[1].value->values(), refs[3].value->values()};

  auto h = net.attach(nullptr);
  Rng xr(7);
  for (int rep = 0; rep < 50; ++rep) {
    const double x = xr.uniform(-3.0, 3.0);
    const double got = net.forward(h, vec({x})).at(0);
    const double want = reference_mlp(widths, ws, bs, {x})[0];
    EXPECT_NEAR(got, want, 1e-12);
  }
}

TEST(Mlp, BatchedForwardMatchesColumns) {
  Mlp net("t", MlpSpec{2, {8}, 3});
  Rng rng(3);
  net.init(rng);
  auto h = net.attach(nullptr);
  Tensor X = mat(2, 3, {0.1, 0.2, 0.3, -0.4, 0.5, -0.6});
  Tensor Y = net.forward(h, X);
  for (int b = 0; b < 3; ++b) {
    Tensor x = vec({X.at(0, b), X.at(1, b)});
    Tensor y = net.forward(h, x);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(Y.at(i, b), y.at(i), 1e-15);
  }
}

TEST(Mlp, WidthMismatchRaises) {
  Mlp net("t", MlpSpec{2, {4}, 1});
  auto h = net.attach(nullptr);
  EXPECT_THROW(net.forward(h, vec({1.0, 2.0, 3.0})), ShapeError);
}

TEST(Mlp, WeightGradientsPassFiniteDifferences) {
  Mlp net("t", MlpSpec{2, {5}, 2});
  Rng rng(11);
  net.init(rng);
  ParamRefs refs;
  net.collect(refs);
  const Tensor x0 = vec({0.4, -1.2});
  const Tensor w = vec({1.0, -0.5});

  for (auto& ref : refs) {
    auto eval = [&](const std::vector<double>& vals) {
      Tensor saved = *ref.value;
      ref.value->mutable_values() = vals;
      auto h = net.attach(nullptr);
      double out = dot(net.forward(h, x0), w).value();
      *ref.value = saved;
      return out;
    };
    Tape tape;
    auto h = net.attach(&tape);
    Gradients g = backward(dot(net.forward(h, x0), w));
    // handle index matches collect order
    const std::size_t idx = static_cast<std::size_t>(&ref - refs.data());
    const double err =
        phtest::max_rel_err(g.at(h[idx]).values(), phtest::fd_gradient(eval, ref.value->values()));
    EXPECT_LE(err, 1e-5) << ref.name;
  }
}

TEST(CholeskyNet, ExplicitLowerTriangleProduct) {
  // inner net emits L = [[1, 0], [2, 3]] -> L L^T = [[1, 2], [2, 13]]
  CholeskyNet net("d", 1, {}, 2, 0.0);
  ParamRefs refs;
  net.collect(refs);
  set_param(refs, "d/w0", {0.0, 0.0, 0.0});
  set_param(refs, "d/b0", {1.0, 2.0, 3.0});
  auto h = net.attach(nullptr);
  Tensor m = net.forward_matrix(h, vec({0.7}));
  EXPECT_DOUBLE_EQ(m.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(m.at(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(m.at(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(m.at(1, 1), 13.0);
}

TEST(CholeskyNet, EpsilonOnlyWhenZero) {
  CholeskyNet net("m", 1, {}, 1, 0.01);
  auto h = net.attach(nullptr);  // zero params -> L = 0
  Tensor m = net.forward_matrix(h, vec({0.3}));
  EXPECT_DOUBLE_EQ(m.at(0, 0), 0.01);
}

TEST(CholeskyNet, RandomOutputsArePsd) {
  // eigenvalue oracle on 3x3 outputs; symmetry must be exact
  CholeskyNet net("d", 2, {8}, 3, 0.0);
  CholeskyNet net_eps("m", 2, {8}, 3, 0.05);
  Rng rng(99);
  net.init(rng);
  net_eps.init(rng);
  auto h = net.attach(nullptr);
  auto he = net_eps.attach(nullptr);

  Rng xr(5);
  double max_asym = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    Tensor x = vec({xr.uniform(-2, 2), xr.uniform(-2, 2)});
    Tensor a = net.forward_matrix(h, x);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) max_asym = std::max(max_asym, std::fabs(a.at(i, j) - a.at(j, i)));
    auto eig = symmetric_eigenvalues(a.values(), 3);
    for (double e : eig) EXPECT_GE(e, -1e-12);

    Tensor b = net_eps.forward_matrix(he, x);
    auto eig_b = symmetric_eigenvalues(b.values(), 3);
    for (double e : eig_b) EXPECT_GE(e, 0.05 - 1e-10);
  }
  EXPECT_LE(max_asym, 1e-12);
}

TEST(CholeskyNet, QuadraticFormNonNegative) {
  CholeskyNet net("d", 2, {8}, 2, 0.0);
  Rng rng(123);
  net.init(rng);
  auto h = net.attach(nullptr);
  Rng xr(17);
  for (int rep = 0; rep < 1000; ++rep) {
    Tensor x = vec({xr.uniform(-2, 2), xr.uniform(-2, 2)});
    Tensor a = net.forward_matrix(h, x);
    const double v0 = xr.uniform(-1, 1), v1 = xr.uniform(-1, 1);
    const double q = v0 * (a.at(0, 0) * v0 + a.at(0, 1) * v1) +
                     v1 * (a.at(1, 0) * v0 + a.at(1, 1) * v1);
    EXPECT_GE(q, -1e-14);
  }
}

TEST(Checkpoint, BitExactRoundTrip) {
  const std::string path = (std::filesystem::temp_directory_path() / "phlearn_ckpt_test.json").string();
  Mlp net("t", MlpSpec{3, {7, 5}, 2});
  Rng rng(2024);
  net.init(rng);
  ParamRefs refs;
  net.collect(refs);
  std::vector<std::vector<double>> original;
  for (auto& r : refs) original.push_back(r.value->values());

  save_checkpoint(path, refs);
  for (auto& r : refs)
    for (auto& v : r.value->mutable_values()) v = 1e9;
  load_checkpoint(path, refs);

  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& got = refs[i].value->values();
    ASSERT_EQ(got.size(), original[i].size());
    for (std::size_t j = 0; j < got.size(); ++j)
      EXPECT_EQ(got[j], original[i][j]) << refs[i].name;  // bitwise
  }
  std::remove(path.c_str());
}

TEST(Checkpoint, MismatchDetected) {
  const std::string path = (std::filesystem::temp_directory_path() / "phlearn_ckpt_bad.json").string();
  Mlp net("a", MlpSpec{2, {3}, 1});
  ParamRefs refs;
  net.collect(refs);
  save_checkpoint(path, refs);

  Mlp other("b", MlpSpec{2, {3}, 1});
  ParamRefs other_refs;
  other.collect(other_refs);
  EXPECT_THROW(load_checkpoint(path, other_refs), std::runtime_error);
  std::remove(path.c_str());
}

TEST(ParamCount, MatchesArchitecture) {
  Mlp net("t", MlpSpec{3, {64, 64}, 2});
  // (64*3 + 64) + (64*64 + 64) + (2*64 + 2)
  EXPECT_EQ(net.param_count(), 256 + 4160 + 130);
  CholeskyNet ch("d", 2, {16}, 2, 0.0);
  EXPECT_EQ(ch.param_count(), (16 * 2 + 16) + (3 * 16 + 3));
}
