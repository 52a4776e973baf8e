#pragma once

// Convolution kernels in two flavours with identical signatures:
//
//   kernels::reference  direct nested loops, serial; the test oracle.
//   kernels::parallel   im2col + panel GEMM, OpenMP over samples and column
//                       panels. Work partitioning never depends on the thread
//                       count, so results are bitwise identical for any
//                       --threads value.
//
// All kernels accumulate (+=) into their output buffer. Layouts: activations
// NCHW, conv2d weights OIHW, conv_transpose2d weights IOHW.

#include "subvae/tensor.hpp"

namespace subvae::kernels {

struct Conv2dGeometry {
  Index batch = 1;
  Index in_channels = 1;
  Index in_h = 1;
  Index in_w = 1;
  Index out_channels = 1;
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index stride = 1;
  Index padding = 0;

  Index out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  Index out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
  bool exact() const {
    return (in_h + 2 * padding - kernel_h) % stride == 0 &&
           (in_w + 2 * padding - kernel_w) % stride == 0 && in_h + 2 * padding >= kernel_h &&
           in_w + 2 * padding >= kernel_w;
  }
};

struct ConvTranspose2dGeometry {
  Index batch = 1;
  Index in_channels = 1;
  Index in_h = 1;
  Index in_w = 1;
  Index out_channels = 1;
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index stride = 1;
  Index padding = 0;

  Index out_h() const { return (in_h - 1) * stride - 2 * padding + kernel_h; }
  Index out_w() const { return (in_w - 1) * stride - 2 * padding + kernel_w; }

  /// The convolution whose input-gradient map is this transposed convolution.
  Conv2dGeometry adjoint() const {
    return Conv2dGeometry{batch,    out_channels, out_h(),  out_w(), in_channels,
                          kernel_h, kernel_w,     stride,   padding};
  }
};

namespace reference {

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, const T* x, const T* w, T* y);
template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, const T* dy, const T* w, T* dx);
template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, const T* x, const T* dy, T* dw);

template <typename T>
void conv_transpose2d_forward(const ConvTranspose2dGeometry& g, const T* x, const T* w, T* y);
template <typename T>
void conv_transpose2d_backward_input(const ConvTranspose2dGeometry& g, const T* dy, const T* w,
                                     T* dx);
template <typename T>
void conv_transpose2d_backward_weight(const ConvTranspose2dGeometry& g, const T* x, const T* dy,
                                      T* dw);

}  // namespace reference

namespace parallel {

/// Row-major C = alpha * op(A) * op(B) + beta * C, split into fixed-width
/// column panels of C that run as independent OpenMP tasks.
template <typename T>
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, T alpha, const T* a, Index lda,
          const T* b, Index ldb, T beta, T* c, Index ldc);

/// Unfolds x (N×C×H×W) into a (C·kh·kw) × (N·out_h·out_w) matrix.
template <typename T>
void im2col(const Conv2dGeometry& g, const T* x, T* cols);

/// Adjoint of im2col: scatter-adds columns back into dx.
template <typename T>
void col2im(const Conv2dGeometry& g, const T* cols, T* dx);

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, const T* x, const T* w, T* y);
template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, const T* dy, const T* w, T* dx);
template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, const T* x, const T* dy, T* dw);

template <typename T>
void conv_transpose2d_forward(const ConvTranspose2dGeometry& g, const T* x, const T* w, T* y);
template <typename T>
void conv_transpose2d_backward_input(const ConvTranspose2dGeometry& g, const T* dy, const T* w,
                                     T* dx);
template <typename T>
void conv_transpose2d_backward_weight(const ConvTranspose2dGeometry& g, const T* x, const T* dy,
                                      T* dw);

}  // namespace parallel

/// Sets the OpenMP team size used by the parallel kernels (default 1).
void set_num_threads(int threads);
int num_threads();

}  // namespace subvae::kernels
