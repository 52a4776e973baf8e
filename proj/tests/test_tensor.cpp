#include <doctest.h>

#include <cmath>
#include <random>

#include "subvae/gradcheck.hpp"
#include "subvae/ops.hpp"
#include "subvae/svt.hpp"
#include "test_util.hpp"

using namespace subvae;
using namespace subvae::testing;

using TD = Tensor<double>;
using TF = Tensor<float>;

namespace {

TD vec(Shape shape, std::vector<double> v, bool grad = false) {
  return TD::from_vector(std::move(shape), std::move(v), grad);
}

// Reduces any tensor to a scalar with fixed random weights so every output
// element gets a distinct upstream gradient.
template <typename T>
Tensor<T> project(const Tensor<T>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor<T>(y.shape(), rng);
  return sum(mul(y, w));
}

void check_op(const char* what, double tol, const std::function<TD()>& fn,
              std::vector<TD> params, double eps = 1e-3) {
  GradCheckOptions opts;
  opts.eps = eps;
  opts.max_coords_per_tensor = 24;
  auto r = grad_check(fn, params, opts);
  INFO(what << ": worst " << r.worst_tensor << "[" << r.worst_index << "] analytic "
            << r.worst_analytic << " numeric " << r.worst_numeric);
  CHECK(r.checked > 0);
  CHECK(r.max_relative_error <= tol);
}

}  // namespace

TEST_CASE("tensor: shape invariants") {
  CHECK_THROWS_AS(TF::from_vector({2, 3}, std::vector<float>(5)), Error);
  auto t = TF::zeros({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(!t.has_grad());
  CHECK(t.grad().size() == 24);
  auto r = reshape(t, {6, 4});
  CHECK(r.shape() == Shape{6, 4});
  CHECK_THROWS_AS(reshape(t, {5, 5}), Error);
}

TEST_CASE("conv2d: non-exact output size is rejected") {
  auto x = TF::zeros({1, 1, 3, 3});
  auto k = TF::zeros({1, 1, 2, 2});
  CHECK_THROWS_AS(conv2d(x, k, TF(), 2, 0), Error);
  // Floor rounding keeps the windows that fit: the last row/column is unused.
  auto y = conv2d(TF::full({1, 1, 3, 3}, 1.f), TF::full({1, 1, 2, 2}, 1.f), TF(), 2, 0,
                  Rounding::floor);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 4.f);
  auto wrong_channels = TF::zeros({1, 2, 2, 2});
  CHECK_THROWS_AS(conv2d(x, wrong_channels, TF(), 1, 0), Error);
}

TEST_CASE("conv2d: bias is added per output channel") {
  auto x = TF::full({1, 1, 3, 3}, 1.f);
  auto k = TF::full({2, 1, 2, 2}, 1.f);
  auto b = TF::from_vector({2}, {0.5f, -1.f});
  auto y = conv2d(x, k, b, 1, 0);
  REQUIRE(y.shape() == Shape{1, 2, 2, 2});
  for (Index i = 0; i < 4; ++i) CHECK(y.data()[i] == 4.5f);
  for (Index i = 4; i < 8; ++i) CHECK(y.data()[i] == 3.f);
}

TEST_CASE("conv_transpose2d: channel mismatch is rejected") {
  auto x = TF::zeros({1, 2, 2, 2});
  auto k = TF::zeros({3, 1, 2, 2});
  CHECK_THROWS_AS(conv_transpose2d(x, k, TF(), 2, 0), Error);
}

TEST_CASE("batch_norm: examples") {
  SUBCASE("constant channel normalizes to zero") {
    auto x = TF::full({4, 1, 2, 2}, 3.f);
    auto stats = RunningStats<float>::init(1);
    auto y = batch_norm(x, TF::full({1}, 1.f), TF::zeros({1}), stats, Mode::train);
    for (float v : y.data()) CHECK(v == 0.f);
  }
  SUBCASE("affine shift moves the mean") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    std::vector<double> raw(64);
    for (auto& v : raw) v = nd(rng);
    // Standardize exactly so the channel is zero-mean unit-variance.
    double m = 0, s = 0;
    for (double v : raw) m += v;
    m /= 64;
    for (double v : raw) s += (v - m) * (v - m);
    s = std::sqrt(s / 64);
    for (auto& v : raw) v = (v - m) / s;
    auto x = vec({16, 1, 2, 2}, raw);
    auto stats = RunningStats<double>::init(1);
    auto y = batch_norm(x, vec({1}, {1.0}), vec({1}, {5.0}), stats, Mode::train);
    double mean = 0;
    for (double v : y.data()) mean += v;
    CHECK(std::abs(mean / 64 - 5.0) < 1e-5);
  }
  SUBCASE("matches the two-pass per-channel oracle") {
    std::mt19937_64 rng(4);
    auto x = random_tensor<float>({4, 3, 2, 2}, rng, -2, 3);
    auto gamma = random_tensor<float>({3}, rng, 0.5, 1.5);
    auto beta = random_tensor<float>({3}, rng);
    auto stats = RunningStats<float>::init(3);
    auto y = batch_norm(x, gamma, beta, stats, Mode::train);
    for (Index c = 0; c < 3; ++c) {
      std::vector<double> vals;
      for (Index n = 0; n < 4; ++n)
        for (Index i = 0; i < 4; ++i) vals.push_back(x.data()[(n * 3 + c) * 4 + i]);
      double mean = 0;
      for (double v : vals) mean += v;
      mean /= 16;
      double var = 0;
      for (double v : vals) var += (v - mean) * (v - mean);
      var /= 16;
      for (Index n = 0; n < 4; ++n)
        for (Index i = 0; i < 4; ++i) {
          const double xv = x.data()[(n * 3 + c) * 4 + i];
          const double expect = gamma.data()[c] * (xv - mean) / std::sqrt(var + 1e-5) + beta.data()[c];
          CHECK(std::abs(y.data()[(n * 3 + c) * 4 + i] - expect) < 1e-5);
        }
      // Running stats: momentum 0.1, unbiased variance.
      CHECK(std::abs(stats.mean.data()[c] - 0.1 * mean) < 1e-6);
      CHECK(std::abs(stats.var.data()[c] - (0.9 + 0.1 * var * 16 / 15)) < 1e-5);
    }
  }
  SUBCASE("eval mode uses running statistics") {
    auto x = TF::from_vector({2, 1, 1, 1}, {1.f, 3.f});
    RunningStats<float> stats{TF::from_vector({1}, {1.f}), TF::from_vector({1}, {4.f})};
    auto y = batch_norm(x, TF::full({1}, 2.f), TF::full({1}, 1.f), stats, Mode::eval);
    CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(y.data()[1] == doctest::Approx(2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 1.0).epsilon(1e-6));
    CHECK(stats.mean.data()[0] == 1.f);
  }
  SUBCASE("batch of one in train mode is an error") {
    auto stats = RunningStats<float>::init(2);
    CHECK_THROWS_AS(batch_norm(TF::zeros({1, 2, 3, 3}), TF::full({2}, 1.f), TF::zeros({2}), stats,
                               Mode::train),
                    Error);
  }
}

TEST_CASE("leaky_relu: examples") {
  auto x = vec({4}, {2.0, -1.0, -3.0, 0.0}, true);
  auto y = leaky_relu(x, 0.01);
  CHECK(y.data()[0] == 2.0);
  CHECK(y.data()[1] == doctest::Approx(-0.01));
  clear_tape<double>();
  backward(sum(leaky_relu(x, 0.01)));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == doctest::Approx(0.01));
  CHECK(x.grad()[3] == doctest::Approx(0.01));  // tie-break at 0
  // Central difference at x = -3.
  auto f = [](double v) { return std::max(v, 0.01 * v); };
  const double fd = (f(-3 + 1e-3) - f(-3 - 1e-3)) / 2e-3;
  CHECK(std::abs(x.grad()[2] - fd) < 1e-9);
  clear_tape<double>();
}

TEST_CASE("linear: examples") {
  auto eye = vec({2, 2}, {1, 0, 0, 1});
  auto x = vec({1, 2}, {1, 2});
  auto y0 = linear(x, eye, vec({2}, {0, 0}));
  CHECK(y0.data()[0] == 1.0);
  CHECK(y0.data()[1] == 2.0);
  auto y = linear(x, scale(eye, 3.0), vec({2}, {1, 1}));
  CHECK(y.data()[0] == 4.0);
  CHECK(y.data()[1] == 7.0);
  CHECK_THROWS_AS(linear(x, TD::zeros({3, 2}), TD()), Error);
}

TEST_CASE("softmax_cross_entropy: examples and 64-bit oracle") {
  std::vector<int> labels{0, 3, 5, 2};
  CHECK(softmax_cross_entropy(TF::zeros({4, 6}), labels).item() ==
        doctest::Approx(std::log(6.0)).epsilon(1e-6));
  auto saturated = TF::zeros({4, 6});
  for (int n = 0; n < 4; ++n) saturated.data()[n * 6 + labels[n]] = 1000.f;
  CHECK(softmax_cross_entropy(saturated, labels).item() == doctest::Approx(0.0));

  std::mt19937_64 rng(5);
  auto logits = random_tensor<float>({4, 6}, rng, -4, 4);
  double oracle = 0;
  for (int n = 0; n < 4; ++n) {
    double s = 0;
    for (int k = 0; k < 6; ++k) s += std::exp(static_cast<double>(logits.data()[n * 6 + k]));
    oracle += std::log(s) - logits.data()[n * 6 + labels[n]];
  }
  oracle /= 4;
  const double got = softmax_cross_entropy(logits, labels).item();
  CHECK(got >= 0);
  CHECK(std::abs(got - oracle) < 1e-6);

  std::vector<int> bad{0, 6, 1, 1};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), Error);
}

TEST_CASE("bernoulli_cross_entropy: examples and 64-bit oracle") {
  auto half = TF::full({2, 3}, 0.5f);
  CHECK(bernoulli_cross_entropy(TF::zeros({2, 3}), half).item() ==
        doctest::Approx(3 * std::log(2.0)).epsilon(1e-6));
  CHECK(bernoulli_cross_entropy(TF::full({2, 3}, 40.f), TF::full({2, 3}, 1.f)).item() ==
        doctest::Approx(0.0));

  std::mt19937_64 rng(6);
  auto logits = random_tensor<float>({3, 2, 4, 4}, rng, -5, 5);
  auto target = random_tensor<float>({3, 2, 4, 4}, rng, 0, 1);
  double oracle = 0;
  for (Index i = 0; i < logits.numel(); ++i) {
    const double l = logits.data()[i], t = target.data()[i];
    const double p = 1 / (1 + std::exp(-l));
    oracle += -(t * std::log(p) + (1 - t) * std::log(1 - p));
  }
  oracle /= 3;
  const double got = bernoulli_cross_entropy(logits, target).item();
  CHECK(got >= 0);
  CHECK(std::abs(got - oracle) <= 1e-5 * std::max(1.0, oracle));

  CHECK_THROWS_AS(bernoulli_cross_entropy(logits, TF::full(logits.shape(), 1.5f)), Error);
  CHECK_THROWS_AS(bernoulli_cross_entropy(logits, TF::zeros({3, 32})), Error);
}

TEST_CASE("gaussian_kl: closed form") {
  auto mu = vec({2, 2}, {0, 1, -2, 0.5});
  auto logvar = vec({2, 2}, {0, 0.3, -1, 2});
  double oracle = 0;
  for (int i = 0; i < 4; ++i) {
    const double m = mu.data()[i], lv = logvar.data()[i];
    oracle += 0.5 * (std::exp(lv) + m * m - 1 - lv);
  }
  CHECK(gaussian_kl(mu, logvar).item() == doctest::Approx(oracle / 2).epsilon(1e-12));
  CHECK(gaussian_kl(TD::zeros({3, 5}), TD::zeros({3, 5})).item() == 0.0);
}

TEST_CASE("backward: examples") {
  std::mt19937_64 rng(7);
  auto x = random_tensor<double>({3, 4}, rng, -1, 1, true);
  clear_tape<double>();
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
  x.zero_grad();
  backward(sum(mul(x, x)));
  for (Index i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]));

  SUBCASE("repeated calls accumulate") {
    x.zero_grad();
    auto loss = sum(mul(x, x));
    backward(loss);
    backward(loss);
    for (Index i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(4 * x.data()[i]));
  }
  SUBCASE("non-scalar loss is rejected") {
    auto y = mul(x, x);
    CHECK_THROWS_AS(backward(y), Error);
  }
  clear_tape<double>();
}

TEST_CASE("no-grad mode records nothing") {
  auto x = TD::full({2, 2}, 1.0, true);
  clear_tape<double>();
  {
    NoGradGuard guard;
    auto y = sum(mul(x, x));
    CHECK(Tape<double>::current().size() == 0);
  }
  auto y = sum(mul(x, x));
  CHECK(Tape<double>::current().size() > 0);
  clear_tape<double>();
}

TEST_CASE("grad_check: per-op tolerances") {
  std::mt19937_64 rng(8);

  SUBCASE("linear") {
    auto x = random_tensor<double>({3, 5}, rng, -1, 1, true);
    auto w = random_tensor<double>({5, 4}, rng, -1, 1, true);
    auto b = random_tensor<double>({4}, rng, -1, 1, true);
    check_op("linear", 1e-4, [&] { return project(linear(x, w, b), 1); }, {x, w, b});
  }
  SUBCASE("conv2d") {
    auto x = random_tensor<double>({2, 3, 7, 7}, rng, -1, 1, true);
    auto k = random_tensor<double>({4, 3, 3, 3}, rng, -1, 1, true);
    auto b = random_tensor<double>({4}, rng, -1, 1, true);
    check_op("conv2d", 1e-3, [&] { return project(conv2d(x, k, b, 2, 1), 2); }, {x, k, b});
  }
  SUBCASE("conv2d with floor rounding") {
    auto x = random_tensor<double>({2, 3, 6, 6}, rng, -1, 1, true);
    auto k = random_tensor<double>({4, 3, 3, 3}, rng, -1, 1, true);
    check_op("conv2d floor", 1e-3,
             [&] { return project(conv2d(x, k, TD(), 2, 1, Rounding::floor), 2); }, {x, k});
  }
  SUBCASE("conv_transpose2d") {
    auto x = random_tensor<double>({2, 4, 3, 3}, rng, -1, 1, true);
    auto k = random_tensor<double>({4, 2, 4, 4}, rng, -1, 1, true);
    auto b = random_tensor<double>({2}, rng, -1, 1, true);
    check_op("conv_transpose2d", 1e-3,
             [&] { return project(conv_transpose2d(x, k, b, 2, 1), 3); }, {x, k, b});
  }
  SUBCASE("batch_norm train") {
    auto x = random_tensor<double>({4, 3, 2, 2}, rng, -2, 2, true);
    auto g = random_tensor<double>({3}, rng, 0.5, 1.5, true);
    auto b = random_tensor<double>({3}, rng, -1, 1, true);
    auto fn = [&] {
      auto stats = RunningStats<double>::init(3);
      return project(batch_norm(x, g, b, stats, Mode::train), 4);
    };
    check_op("batch_norm", 1e-3, fn, {x, g, b});
  }
  SUBCASE("batch_norm on N x F features") {
    auto x = random_tensor<double>({5, 4}, rng, -2, 2, true);
    auto g = random_tensor<double>({4}, rng, 0.5, 1.5, true);
    auto b = random_tensor<double>({4}, rng, -1, 1, true);
    auto fn = [&] {
      auto stats = RunningStats<double>::init(4);
      return project(batch_norm(x, g, b, stats, Mode::train), 5);
    };
    check_op("batch_norm 2d", 1e-3, fn, {x, g, b});
  }
  SUBCASE("batch_norm eval") {
    auto x = random_tensor<double>({2, 3, 2, 2}, rng, -2, 2, true);
    auto g = random_tensor<double>({3}, rng, 0.5, 1.5, true);
    auto b = random_tensor<double>({3}, rng, -1, 1, true);
    RunningStats<double> stats{random_tensor<double>({3}, rng), random_tensor<double>({3}, rng, 0.5, 2)};
    check_op("batch_norm eval", 1e-3,
             [&] { return project(batch_norm(x, g, b, stats, Mode::eval), 6); }, {x, g, b});
  }
  SUBCASE("leaky_relu") {
    auto x = random_away_from_zero<double>({4, 7}, rng, 0.05, true);
    check_op("leaky_relu", 1e-3, [&] { return project(leaky_relu(x), 7); }, {x});
  }
  SUBCASE("softmax_cross_entropy") {
    auto logits = random_tensor<double>({5, 6}, rng, -3, 3, true);
    std::vector<int> labels{0, 5, 2, 2, 4};
    check_op("softmax_ce", 1e-3, [&] { return softmax_cross_entropy(logits, labels); }, {logits});
  }
  SUBCASE("bernoulli_cross_entropy") {
    auto logits = random_tensor<double>({3, 2, 3, 3}, rng, -4, 4, true);
    auto target = random_tensor<double>({3, 2, 3, 3}, rng, 0, 1);
    check_op("bce", 1e-3, [&] { return bernoulli_cross_entropy(logits, target); }, {logits});
  }
  SUBCASE("gaussian_kl") {
    auto mu = random_tensor<double>({3, 6}, rng, -2, 2, true);
    auto lv = random_tensor<double>({3, 6}, rng, -2, 2, true);
    check_op("kl", 1e-3, [&] { return gaussian_kl(mu, lv); }, {mu, lv});
  }
  SUBCASE("reparameterize path") {
    auto mu = random_tensor<double>({3, 6}, rng, -2, 2, true);
    auto lv = random_tensor<double>({3, 6}, rng, -2, 2, true);
    auto noise = random_tensor<double>({3, 6}, rng, -2, 2);
    check_op("reparameterize", 1e-3, [&] { return project(reparameterize(mu, lv, noise), 8); },
             {mu, lv});
  }
  SUBCASE("slice / concat / reshape / scale / add") {
    auto a = random_tensor<double>({3, 5}, rng, -1, 1, true);
    auto b = random_tensor<double>({3, 2}, rng, -1, 1, true);
    auto fn = [&] {
      auto left = slice_columns(a, 1, 4);
      auto joined = concat_columns(left, scale(b, -2.5));
      auto r = reshape(add(joined, joined), {5, 3});
      return project(r, 9);
    };
    check_op("structural", 1e-4, fn, {a, b});
  }
}

TEST_CASE("gradient linearity: grad(a*L1 + b*L2) = a*grad(L1) + b*grad(L2)") {
  std::mt19937_64 rng(9);
  auto x = random_tensor<double>({2, 3, 4, 4}, rng, -1, 1, true);
  auto k = random_tensor<double>({2, 3, 3, 3}, rng, -1, 1, true);
  auto l1 = [&] { return project(leaky_relu(conv2d(x, k, TD(), 1, 1)), 10); };
  auto l2 = [&] { return sum(mul(conv2d(x, k, TD(), 1, 1), conv2d(x, k, TD(), 1, 1))); };
  auto grads = [&](const std::function<TD()>& f) {
    x.zero_grad();
    k.zero_grad();
    clear_tape<double>();
    backward(f());
    clear_tape<double>();
    std::vector<double> g(x.grad().begin(), x.grad().end());
    g.insert(g.end(), k.grad().begin(), k.grad().end());
    return g;
  };
  const double a = 0.7, b = -1.9;
  auto g1 = grads(l1);
  auto g2 = grads(l2);
  auto g = grads([&] { return add(scale(l1(), a), scale(l2(), b)); });
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(std::abs(g[i] - (a * g1[i] + b * g2[i])) <= 1e-5 * std::max(1.0, std::abs(g[i])));
  }
}

TEST_CASE("forward outputs are bitwise deterministic") {
  auto run = [] {
    std::mt19937_64 rng(10);
    auto x = random_tensor<float>({4, 9, 13, 13}, rng);
    auto k = random_tensor<float>({8, 9, 3, 3}, rng);
    auto g = TF::full({8}, 1.f);
    auto b = TF::zeros({8});
    auto stats = RunningStats<float>::init(8);
    auto h = leaky_relu(batch_norm(conv2d(x, k, TF(), 2, 1), g, b, stats, Mode::train));
    auto kt = random_tensor<float>({8, 9, 4, 4}, rng);
    auto y = conv_transpose2d(h, kt, TF(), 2, 1);
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("svt: encode/decode round trip and format") {
  const std::vector<float> values{1.5f, -2.f, 0.f, 3.25f, 1e-7f, -0.f};
  const std::string bytes = encode_svt({2, 3}, values);
  REQUIRE(bytes.size() == 4 + 4 + 2 * 4 + 6 * 4);
  CHECK(bytes.substr(0, 4) == "SVT1");
  CHECK(static_cast<unsigned char>(bytes[4]) == 2);
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);
  CHECK(static_cast<unsigned char>(bytes[12]) == 3);
  // 1.5f = 0x3FC00000, little-endian.
  CHECK(static_cast<unsigned char>(bytes[18]) == 0xC0);
  CHECK(static_cast<unsigned char>(bytes[19]) == 0x3F);
  auto arr = decode_svt(bytes);
  CHECK(arr.shape == Shape{2, 3});
  CHECK(arr.values == values);
  CHECK_THROWS_AS(decode_svt("SVT2" + bytes.substr(4)), Error);
  CHECK_THROWS_AS(decode_svt(bytes.substr(0, bytes.size() - 1)), Error);
}
