#include <Eigen/Core>
#include <omp.h>

#include <vector>

#include "subvae/kernels.hpp"

namespace subvae::kernels {

namespace {
int g_threads = 1;
}

void set_num_threads(int threads) { g_threads = threads < 1 ? 1 : threads; }
int num_threads() { return g_threads; }

namespace parallel {

namespace {

constexpr Index kPanelWidth = 512;

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMajor<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutMap = Eigen::Map<RowMajor<T>, 0, Eigen::OuterStride<>>;

// NCHW activations <-> channel-major matrix (C × N·HW), column index n·HW + p.
template <typename T>
void nchw_to_cmajor(Index batch, Index channels, Index plane, const T* src, T* dst) {
  const Index cols = batch * plane;
#pragma omp parallel for collapse(2) schedule(static) num_threads(g_threads)
  for (Index n = 0; n < batch; ++n)
    for (Index c = 0; c < channels; ++c) {
      const T* s = src + (n * channels + c) * plane;
      T* d = dst + c * cols + n * plane;
      for (Index p = 0; p < plane; ++p) d[p] = s[p];
    }
}

template <typename T>
void cmajor_add_to_nchw(Index batch, Index channels, Index plane, const T* src, T* dst) {
  const Index cols = batch * plane;
#pragma omp parallel for collapse(2) schedule(static) num_threads(g_threads)
  for (Index n = 0; n < batch; ++n)
    for (Index c = 0; c < channels; ++c) {
      const T* s = src + c * cols + n * plane;
      T* d = dst + (n * channels + c) * plane;
      for (Index p = 0; p < plane; ++p) d[p] += s[p];
    }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, T alpha, const T* a, Index lda,
          const T* b, Index ldb, T beta, T* c, Index ldc) {
  const Index panels = (n + kPanelWidth - 1) / kPanelWidth;
#pragma omp parallel for schedule(static) num_threads(g_threads)
  for (Index panel = 0; panel < panels; ++panel) {
    const Index j0 = panel * kPanelWidth;
    const Index width = std::min(kPanelWidth, n - j0);
    MutMap<T> out(c + j0, m, width, Eigen::OuterStride<>(ldc));
    if (beta == T(0)) {
      out.setZero();
    } else if (beta != T(1)) {
      out *= beta;
    }
    const T* b_panel = trans_b ? b + j0 * ldb : b + j0;
    if (!trans_a && !trans_b) {
      ConstMap<T> lhs(a, m, k, Eigen::OuterStride<>(lda));
      ConstMap<T> rhs(b_panel, k, width, Eigen::OuterStride<>(ldb));
      out.noalias() += alpha * lhs * rhs;
    } else if (!trans_a && trans_b) {
      ConstMap<T> lhs(a, m, k, Eigen::OuterStride<>(lda));
      ConstMap<T> rhs(b_panel, width, k, Eigen::OuterStride<>(ldb));
      out.noalias() += alpha * lhs * rhs.transpose();
    } else if (trans_a && !trans_b) {
      ConstMap<T> lhs(a, k, m, Eigen::OuterStride<>(lda));
      ConstMap<T> rhs(b_panel, k, width, Eigen::OuterStride<>(ldb));
      out.noalias() += alpha * lhs.transpose() * rhs;
    } else {
      ConstMap<T> lhs(a, k, m, Eigen::OuterStride<>(lda));
      ConstMap<T> rhs(b_panel, width, k, Eigen::OuterStride<>(ldb));
      out.noalias() += alpha * lhs.transpose() * rhs.transpose();
    }
  }
}

template <typename T>
void im2col(const Conv2dGeometry& g, const T* x, T* cols) {
  const Index oh_n = g.out_h(), ow_n = g.out_w();
  const Index plane = oh_n * ow_n;
  const Index width = g.batch * plane;
#pragma omp parallel for collapse(2) schedule(static) num_threads(g_threads)
  for (Index n = 0; n < g.batch; ++n)
    for (Index c = 0; c < g.in_channels; ++c) {
      const T* src = x + (n * g.in_channels + c) * g.in_h * g.in_w;
      for (Index kh = 0; kh < g.kernel_h; ++kh)
        for (Index kw = 0; kw < g.kernel_w; ++kw) {
          T* row = cols + ((c * g.kernel_h + kh) * g.kernel_w + kw) * width + n * plane;
          for (Index oh = 0; oh < oh_n; ++oh) {
            const Index ih = oh * g.stride - g.padding + kh;
            T* dst = row + oh * ow_n;
            if (ih < 0 || ih >= g.in_h) {
              for (Index ow = 0; ow < ow_n; ++ow) dst[ow] = T(0);
              continue;
            }
            const T* line = src + ih * g.in_w;
            for (Index ow = 0; ow < ow_n; ++ow) {
              const Index iw = ow * g.stride - g.padding + kw;
              dst[ow] = (iw >= 0 && iw < g.in_w) ? line[iw] : T(0);
            }
          }
        }
    }
}

template <typename T>
void col2im(const Conv2dGeometry& g, const T* cols, T* dx) {
  const Index oh_n = g.out_h(), ow_n = g.out_w();
  const Index plane = oh_n * ow_n;
  const Index width = g.batch * plane;
#pragma omp parallel for collapse(2) schedule(static) num_threads(g_threads)
  for (Index n = 0; n < g.batch; ++n)
    for (Index c = 0; c < g.in_channels; ++c) {
      T* dst = dx + (n * g.in_channels + c) * g.in_h * g.in_w;
      for (Index kh = 0; kh < g.kernel_h; ++kh)
        for (Index kw = 0; kw < g.kernel_w; ++kw) {
          const T* row = cols + ((c * g.kernel_h + kh) * g.kernel_w + kw) * width + n * plane;
          for (Index oh = 0; oh < oh_n; ++oh) {
            const Index ih = oh * g.stride - g.padding + kh;
            if (ih < 0 || ih >= g.in_h) continue;
            T* line = dst + ih * g.in_w;
            const T* src = row + oh * ow_n;
            for (Index ow = 0; ow < ow_n; ++ow) {
              const Index iw = ow * g.stride - g.padding + kw;
              if (iw >= 0 && iw < g.in_w) line[iw] += src[ow];
            }
          }
        }
    }
}

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, const T* x, const T* w, T* y) {
  const Index plane = g.out_h() * g.out_w();
  const Index width = g.batch * plane;
  const Index depth = g.in_channels * g.kernel_h * g.kernel_w;
  std::vector<T> cols(static_cast<std::size_t>(depth * width));
  std::vector<T> out(static_cast<std::size_t>(g.out_channels * width));
  im2col(g, x, cols.data());
  gemm<T>(false, false, g.out_channels, width, depth, T(1), w, depth, cols.data(), width, T(0),
          out.data(), width);
  cmajor_add_to_nchw(g.batch, g.out_channels, plane, out.data(), y);
}

template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, const T* dy, const T* w, T* dx) {
  const Index plane = g.out_h() * g.out_w();
  const Index width = g.batch * plane;
  const Index depth = g.in_channels * g.kernel_h * g.kernel_w;
  std::vector<T> dy_mat(static_cast<std::size_t>(g.out_channels * width));
  std::vector<T> dcols(static_cast<std::size_t>(depth * width));
  nchw_to_cmajor(g.batch, g.out_channels, plane, dy, dy_mat.data());
  gemm<T>(true, false, depth, width, g.out_channels, T(1), w, depth, dy_mat.data(), width, T(0),
          dcols.data(), width);
  col2im(g, dcols.data(), dx);
}

template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, const T* x, const T* dy, T* dw) {
  const Index plane = g.out_h() * g.out_w();
  const Index width = g.batch * plane;
  const Index depth = g.in_channels * g.kernel_h * g.kernel_w;
  std::vector<T> cols(static_cast<std::size_t>(depth * width));
  std::vector<T> dy_mat(static_cast<std::size_t>(g.out_channels * width));
  im2col(g, x, cols.data());
  nchw_to_cmajor(g.batch, g.out_channels, plane, dy, dy_mat.data());
  gemm<T>(false, true, g.out_channels, depth, width, T(1), dy_mat.data(), width, cols.data(),
          width, T(1), dw, depth);
}

// A transposed convolution is the input-gradient map of its adjoint
// convolution, so all three passes reuse the conv2d kernels with the roles of
// input and output swapped.
template <typename T>
void conv_transpose2d_forward(const ConvTranspose2dGeometry& g, const T* x, const T* w, T* y) {
  conv2d_backward_input(g.adjoint(), x, w, y);
}

template <typename T>
void conv_transpose2d_backward_input(const ConvTranspose2dGeometry& g, const T* dy, const T* w,
                                     T* dx) {
  conv2d_forward(g.adjoint(), dy, w, dx);
}

template <typename T>
void conv_transpose2d_backward_weight(const ConvTranspose2dGeometry& g, const T* x, const T* dy,
                                      T* dw) {
  conv2d_backward_weight(g.adjoint(), dy, x, dw);
}

#define SUBVAE_INSTANTIATE(T)                                                                  \
  template void gemm<T>(bool, bool, Index, Index, Index, T, const T*, Index, const T*, Index,   \
                        T, T*, Index);                                                         \
  template void im2col<T>(const Conv2dGeometry&, const T*, T*);                                \
  template void col2im<T>(const Conv2dGeometry&, const T*, T*);                                \
  template void conv2d_forward<T>(const Conv2dGeometry&, const T*, const T*, T*);              \
  template void conv2d_backward_input<T>(const Conv2dGeometry&, const T*, const T*, T*);       \
  template void conv2d_backward_weight<T>(const Conv2dGeometry&, const T*, const T*, T*);      \
  template void conv_transpose2d_forward<T>(const ConvTranspose2dGeometry&, const T*, const T*, \
                                            T*);                                               \
  template void conv_transpose2d_backward_input<T>(const ConvTranspose2dGeometry&, const T*,   \
                                                   const T*, T*);                              \
  template void conv_transpose2d_backward_weight<T>(const ConvTranspose2dGeometry&, const T*,  \
                                                    const T*, T*);

SUBVAE_INSTANTIATE(float)
SUBVAE_INSTANTIATE(double)
#undef SUBVAE_INSTANTIATE

}  // namespace parallel
}  // namespace subvae::kernels
