#include "subvae/kernels.hpp"

namespace subvae::kernels::reference {

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, const T* x, const T* w, T* y) {
  const Index oh_n = g.out_h(), ow_n = g.out_w();
  for (Index n = 0; n < g.batch; ++n)
    for (Index o = 0; o < g.out_channels; ++o)
      for (Index oh = 0; oh < oh_n; ++oh)
        for (Index ow = 0; ow < ow_n; ++ow) {
          T acc = 0;
          for (Index c = 0; c < g.in_channels; ++c)
            for (Index kh = 0; kh < g.kernel_h; ++kh) {
              const Index ih = oh * g.stride - g.padding + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              for (Index kw = 0; kw < g.kernel_w; ++kw) {
                const Index iw = ow * g.stride - g.padding + kw;
                if (iw < 0 || iw >= g.in_w) continue;
                acc += x[((n * g.in_channels + c) * g.in_h + ih) * g.in_w + iw] *
                       w[((o * g.in_channels + c) * g.kernel_h + kh) * g.kernel_w + kw];
              }
            }
          y[((n * g.out_channels + o) * oh_n + oh) * ow_n + ow] += acc;
        }
}

template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, const T* dy, const T* w, T* dx) {
  const Index oh_n = g.out_h(), ow_n = g.out_w();
  for (Index n = 0; n < g.batch; ++n)
    for (Index o = 0; o < g.out_channels; ++o)
      for (Index oh = 0; oh < oh_n; ++oh)
        for (Index ow = 0; ow < ow_n; ++ow) {
          const T grad = dy[((n * g.out_channels + o) * oh_n + oh) * ow_n + ow];
          for (Index c = 0; c < g.in_channels; ++c)
            for (Index kh = 0; kh < g.kernel_h; ++kh) {
              const Index ih = oh * g.stride - g.padding + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              for (Index kw = 0; kw < g.kernel_w; ++kw) {
                const Index iw = ow * g.stride - g.padding + kw;
                if (iw < 0 || iw >= g.in_w) continue;
                dx[((n * g.in_channels + c) * g.in_h + ih) * g.in_w + iw] +=
                    grad * w[((o * g.in_channels + c) * g.kernel_h + kh) * g.kernel_w + kw];
              }
            }
        }
}

template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, const T* x, const T* dy, T* dw) {
  const Index oh_n = g.out_h(), ow_n = g.out_w();
  for (Index n = 0; n < g.batch; ++n)
    for (Index o = 0; o < g.out_channels; ++o)
      for (Index oh = 0; oh < oh_n; ++oh)
        for (Index ow = 0; ow < ow_n; ++ow) {
          const T grad = dy[((n * g.out_channels + o) * oh_n + oh) * ow_n + ow];
          for (Index c = 0; c < g.in_channels; ++c)
            for (Index kh = 0; kh < g.kernel_h; ++kh) {
              const Index ih = oh * g.stride - g.padding + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              for (Index kw = 0; kw < g.kernel_w; ++kw) {
                const Index iw = ow * g.stride - g.padding + kw;
                if (iw < 0 || iw >= g.in_w) continue;
                dw[((o * g.in_channels + c) * g.kernel_h + kh) * g.kernel_w + kw] +=
                    grad * x[((n * g.in_channels + c) * g.in_h + ih) * g.in_w + iw];
              }
            }
        }
}

// Transposed convolution by its scatter definition: every input pixel adds a
// kernel-weighted footprint to the output.
template <typename T>
void conv_transpose2d_forward(const ConvTranspose2dGeometry& g, const T* x, const T* w, T* y) {
  const Index oh_n = g.out_h(), ow_n = g.out_w();
  for (Index n = 0; n < g.batch; ++n)
    for (Index ci = 0; ci < g.in_channels; ++ci)
      for (Index i = 0; i < g.in_h; ++i)
        for (Index j = 0; j < g.in_w; ++j) {
          const T v = x[((n * g.in_channels + ci) * g.in_h + i) * g.in_w + j];
          for (Index co = 0; co < g.out_channels; ++co)
            for (Index kh = 0; kh < g.kernel_h; ++kh) {
              const Index oh = i * g.stride - g.padding + kh;
              if (oh < 0 || oh >= oh_n) continue;
              for (Index kw = 0; kw < g.kernel_w; ++kw) {
                const Index ow = j * g.stride - g.padding + kw;
                if (ow < 0 || ow >= ow_n) continue;
                y[((n * g.out_channels + co) * oh_n + oh) * ow_n + ow] +=
                    v * w[((ci * g.out_channels + co) * g.kernel_h + kh) * g.kernel_w + kw];
              }
            }
        }
}

template <typename T>
void conv_transpose2d_backward_input(const ConvTranspose2dGeometry& g, const T* dy, const T* w,
                                     T* dx) {
  const Index oh_n = g.out_h(), ow_n = g.out_w();
  for (Index n = 0; n < g.batch; ++n)
    for (Index ci = 0; ci < g.in_channels; ++ci)
      for (Index i = 0; i < g.in_h; ++i)
        for (Index j = 0; j < g.in_w; ++j) {
          T acc = 0;
          for (Index co = 0; co < g.out_channels; ++co)
            for (Index kh = 0; kh < g.kernel_h; ++kh) {
              const Index oh = i * g.stride - g.padding + kh;
              if (oh < 0 || oh >= oh_n) continue;
              for (Index kw = 0; kw < g.kernel_w; ++kw) {
                const Index ow = j * g.stride - g.padding + kw;
                if (ow < 0 || ow >= ow_n) continue;
                acc += dy[((n * g.out_channels + co) * oh_n + oh) * ow_n + ow] *
                       w[((ci * g.out_channels + co) * g.kernel_h + kh) * g.kernel_w + kw];
              }
            }
          dx[((n * g.in_channels + ci) * g.in_h + i) * g.in_w + j] += acc;
        }
}

template <typename T>
void conv_transpose2d_backward_weight(const ConvTranspose2dGeometry& g, const T* x, const T* dy,
                                      T* dw) {
  const Index oh_n = g.out_h(), ow_n = g.out_w();
  for (Index n = 0; n < g.batch; ++n)
    for (Index ci = 0; ci < g.in_channels; ++ci)
      for (Index i = 0; i < g.in_h; ++i)
        for (Index j = 0; j < g.in_w; ++j) {
          const T v = x[((n * g.in_channels + ci) * g.in_h + i) * g.in_w + j];
          for (Index co = 0; co < g.out_channels; ++co)
            for (Index kh = 0; kh < g.kernel_h; ++kh) {
              const Index oh = i * g.stride - g.padding + kh;
              if (oh < 0 || oh >= oh_n) continue;
              for (Index kw = 0; kw < g.kernel_w; ++kw) {
                const Index ow = j * g.stride - g.padding + kw;
                if (ow < 0 || ow >= ow_n) continue;
                dw[((ci * g.out_channels + co) * g.kernel_h + kh) * g.kernel_w + kw] +=
                    v * dy[((n * g.out_channels + co) * oh_n + oh) * ow_n + ow];
              }
            }
        }
}

#define SUBVAE_INSTANTIATE(T)                                                                  \
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

}  // namespace subvae::kernels::reference
