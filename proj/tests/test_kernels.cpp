#include <doctest.h>

#include <random>

#include "subvae/kernels.hpp"
#include "subvae/ops.hpp"
#include "test_util.hpp"

using namespace subvae;
using namespace subvae::testing;
namespace ref = subvae::kernels::reference;
namespace par = subvae::kernels::parallel;

namespace {

struct ConvCase {
  Index n, c, h, w, o, k, stride, pad;
};

const ConvCase kConvCases[] = {
    {1, 1, 3, 3, 1, 1, 1, 0},  {2, 3, 5, 5, 4, 3, 1, 1},   {2, 9, 48, 48, 4, 3, 2, 1},
    {3, 4, 12, 12, 6, 3, 2, 1}, {1, 2, 7, 5, 3, 3, 2, 0},  {2, 5, 6, 6, 7, 2, 2, 0},
    {4, 3, 9, 9, 2, 4, 1, 2},   {2, 64, 12, 12, 32, 3, 2, 1}, {2, 9, 48, 48, 32, 3, 2, 1}};

kernels::Conv2dGeometry geometry(const ConvCase& c) {
  return {c.n, c.c, c.h, c.w, c.o, c.k, c.k, c.stride, c.pad};
}

template <typename T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<T> v(n);
  for (T& x : v) x = static_cast<T>(d(rng));
  return v;
}

double rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
  return max_abs_diff(a, b) / std::max(1e-12, max_abs(b));
}

}  // namespace

TEST_CASE("reference conv2d: identity kernel reproduces the input") {
  std::vector<float> x{1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<float> w{1};
  std::vector<float> y(9, 0.f);
  ref::conv2d_forward<float>({1, 1, 3, 3, 1, 1, 1, 1, 0}, x.data(), w.data(), y.data());
  CHECK(y == x);
}

TEST_CASE("reference conv2d: all-ones 2x2 kernel over all-ones 3x3 input gives 4") {
  // Direct nested-loop summation: each output window covers 4 ones.
  std::vector<float> x(9, 1.f), w(4, 1.f), y(4, 0.f);
  ref::conv2d_forward<float>({1, 1, 3, 3, 1, 2, 2, 1, 0}, x.data(), w.data(), y.data());
  for (float v : y) CHECK(v == 4.0f);
}

TEST_CASE("reference conv_transpose2d: single pixel broadcasts the kernel") {
  std::vector<float> x{2.5f}, w(4, 1.f), y(4, 0.f);
  kernels::ConvTranspose2dGeometry g{1, 1, 1, 1, 1, 2, 2, 1, 0};
  ref::conv_transpose2d_forward<float>(g, x.data(), w.data(), y.data());
  for (float v : y) CHECK(v == 2.5f);
}

TEST_CASE("conv_transpose2d: stride-2 2x2 kernel tiles non-overlapping blocks") {
  // Scatter-add oracle: out[2i+a][2j+b] = x[i][j] * k[a][b], no overlap.
  const std::vector<float> x{1, 2, 3, 4};
  const std::vector<float> w{1, 10, 100, 1000};
  const std::vector<float> expected{1,   10,   2,   20,   100, 1000, 200, 2000,
                                    3,   30,   4,   40,   300, 3000, 400, 4000};
  kernels::ConvTranspose2dGeometry g{1, 1, 2, 2, 1, 2, 2, 2, 0};
  REQUIRE(g.out_h() == 4);
  std::vector<float> y_ref(16, 0.f), y_par(16, 0.f);
  ref::conv_transpose2d_forward<float>(g, x.data(), w.data(), y_ref.data());
  par::conv_transpose2d_forward<float>(g, x.data(), w.data(), y_par.data());
  CHECK(y_ref == expected);
  CHECK(y_par == expected);
}

TEST_CASE("parallel conv2d kernels match the serial reference") {
  std::mt19937_64 rng(11);
  for (const ConvCase& c : kConvCases) {
    const auto g = geometry(c);
    INFO("n=" << c.n << " c=" << c.c << " h=" << c.h << " o=" << c.o << " k=" << c.k << " s=" << c.stride << " p=" << c.pad);
    const std::size_t nx = static_cast<std::size_t>(g.batch * g.in_channels * g.in_h * g.in_w);
    const std::size_t nw = static_cast<std::size_t>(g.out_channels * g.in_channels * g.kernel_h *
                                                    g.kernel_w);
    const std::size_t ny = static_cast<std::size_t>(g.batch * g.out_channels * g.out_h() *
                                                    g.out_w());
    auto x = random_vec<float>(nx, rng);
    auto w = random_vec<float>(nw, rng);
    auto dy = random_vec<float>(ny, rng);

    std::vector<float> y_ref(ny, 0.f), y_par(ny, 0.f);
    ref::conv2d_forward(g, x.data(), w.data(), y_ref.data());
    par::conv2d_forward(g, x.data(), w.data(), y_par.data());
    CHECK(rel_diff(y_par, y_ref) < 1e-5);

    std::vector<float> dx_ref(nx, 0.f), dx_par(nx, 0.f);
    ref::conv2d_backward_input(g, dy.data(), w.data(), dx_ref.data());
    par::conv2d_backward_input(g, dy.data(), w.data(), dx_par.data());
    CHECK(rel_diff(dx_par, dx_ref) < 1e-5);

    std::vector<float> dw_ref(nw, 0.5f), dw_par(nw, 0.5f);
    ref::conv2d_backward_weight(g, x.data(), dy.data(), dw_ref.data());
    par::conv2d_backward_weight(g, x.data(), dy.data(), dw_par.data());
    CHECK(rel_diff(dw_par, dw_ref) < 1e-5);
  }
}

TEST_CASE("parallel conv_transpose2d kernels match the serial reference") {
  std::mt19937_64 rng(12);
  const kernels::ConvTranspose2dGeometry cases[] = {
      {2, 8, 6, 6, 4, 4, 4, 2, 1}, {1, 3, 3, 3, 2, 3, 3, 1, 1},
      {2, 4, 5, 4, 3, 2, 2, 2, 0}, {2, 32, 24, 24, 9, 4, 4, 2, 1}};
  for (const auto& g : cases) {
    const std::size_t nx = static_cast<std::size_t>(g.batch * g.in_channels * g.in_h * g.in_w);
    const std::size_t nw = static_cast<std::size_t>(g.in_channels * g.out_channels * g.kernel_h *
                                                    g.kernel_w);
    const std::size_t ny = static_cast<std::size_t>(g.batch * g.out_channels * g.out_h() *
                                                    g.out_w());
    auto x = random_vec<float>(nx, rng);
    auto w = random_vec<float>(nw, rng);
    auto dy = random_vec<float>(ny, rng);

    std::vector<float> y_ref(ny, 0.f), y_par(ny, 0.f);
    ref::conv_transpose2d_forward(g, x.data(), w.data(), y_ref.data());
    par::conv_transpose2d_forward(g, x.data(), w.data(), y_par.data());
    CHECK(rel_diff(y_par, y_ref) < 1e-5);

    std::vector<float> dx_ref(nx, 0.f), dx_par(nx, 0.f);
    ref::conv_transpose2d_backward_input(g, dy.data(), w.data(), dx_ref.data());
    par::conv_transpose2d_backward_input(g, dy.data(), w.data(), dx_par.data());
    CHECK(rel_diff(dx_par, dx_ref) < 1e-5);

    std::vector<float> dw_ref(nw, 0.f), dw_par(nw, 0.f);
    ref::conv_transpose2d_backward_weight(g, x.data(), dy.data(), dw_ref.data());
    par::conv_transpose2d_backward_weight(g, x.data(), dy.data(), dw_par.data());
    CHECK(rel_diff(dw_par, dw_ref) < 1e-5);
  }
}

TEST_CASE("adjointness: <conv2d(x,k), y> == <x, conv_transpose2d(y,k)>") {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> small(1, 4);
  for (int trial = 0; trial < 25; ++trial) {
    const Index stride = small(rng) % 2 + 1;
    const Index k = small(rng) % 3 + 1;
    const Index pad = std::min<Index>(small(rng) % 2, k - 1);
    const Index out = small(rng) + 1;
    // Choose the input size so the forward convolution is exact.
    const Index h = (out - 1) * stride + k - 2 * pad;
    if (h < 1) continue;
    const Index n = small(rng), c = small(rng), o = small(rng);
    auto x = random_tensor<double>({n, c, h, h}, rng);
    auto kernel = random_tensor<double>({o, c, k, k}, rng);
    auto y = random_tensor<double>({n, o, out, out}, rng);
    auto fwd = conv2d(x, kernel, Tensor<double>(), stride, pad);
    auto adj = conv_transpose2d(y, kernel, Tensor<double>(), stride, pad);
    REQUIRE(adj.shape() == x.shape());
    double lhs = 0, rhs = 0;
    for (Index i = 0; i < fwd.numel(); ++i) lhs += fwd.data()[i] * y.data()[i];
    for (Index i = 0; i < x.numel(); ++i) rhs += x.data()[i] * adj.data()[i];
    CHECK(std::abs(lhs - rhs) <= 1e-4 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("parallel kernels are bitwise identical across thread counts") {
  std::mt19937_64 rng(14);
  const kernels::Conv2dGeometry g{4, 32, 24, 24, 64, 3, 3, 2, 1};
  const std::size_t nx = static_cast<std::size_t>(4 * 32 * 24 * 24);
  const std::size_t nw = static_cast<std::size_t>(64 * 32 * 9);
  const std::size_t ny = static_cast<std::size_t>(4 * 64 * 12 * 12);
  auto x = random_vec<float>(nx, rng);
  auto w = random_vec<float>(nw, rng);
  auto dy = random_vec<float>(ny, rng);
  auto run = [&](int threads) {
    kernels::set_num_threads(threads);
    std::vector<float> y(ny, 0.f), dx(nx, 0.f), dw(nw, 0.f);
    par::conv2d_forward(g, x.data(), w.data(), y.data());
    par::conv2d_backward_input(g, dy.data(), w.data(), dx.data());
    par::conv2d_backward_weight(g, x.data(), dy.data(), dw.data());
    kernels::set_num_threads(1);
    return std::make_tuple(y, dx, dw);
  };
  CHECK(run(1) == run(3));
}

TEST_CASE("gemm handles every transpose combination") {
  std::mt19937_64 rng(15);
  const Index m = 5, n = 700, k = 7;  // n spans two column panels
  auto a = random_vec<double>(static_cast<std::size_t>(m * k), rng);
  auto b = random_vec<double>(static_cast<std::size_t>(k * n), rng);
  std::vector<double> expected(static_cast<std::size_t>(m * n), 0.0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index p = 0; p < k; ++p) expected[i * n + j] += a[i * k + p] * b[p * n + j];
  // Transposed copies.
  std::vector<double> at(a.size()), bt(b.size());
  for (Index i = 0; i < m; ++i)
    for (Index p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  for (Index p = 0; p < k; ++p)
    for (Index j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  for (int mode = 0; mode < 4; ++mode) {
    const bool ta = mode & 1, tb = mode & 2;
    std::vector<double> c(static_cast<std::size_t>(m * n), 1.0);
    par::gemm<double>(ta, tb, m, n, k, 1.0, ta ? at.data() : a.data(), ta ? m : k,
                      tb ? bt.data() : b.data(), tb ? k : n, 0.0, c.data(), n);
    CHECK(max_abs_diff(c, expected) < 1e-12);
  }
}
