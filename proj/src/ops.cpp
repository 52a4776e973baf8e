#include "subvae/ops.hpp"

#include <omp.h>

#include <cmath>
#include <initializer_list>
#include <string>

#include <Eigen/Core>

#include "subvae/kernels.hpp"

namespace subvae {

namespace {

constexpr Index kParallelThreshold = Index{1} << 15;

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T, typename Fn>
void attach(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, Fn&& fn) {
  std::vector<typename Tensor<T>::NodePtr> nodes;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined()) nodes.push_back(t->node());
  }
  out.node()->requires_grad = true;
  out.node()->leaf = false;
  Tape<T>::current().record(std::move(nodes), out.node(), std::forward<Fn>(fn));
}

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw Error(ErrorKind::shape, op + ": " + detail);
}

void require_rank(const std::string& op, const Shape& shape, std::size_t rank,
                  const char* what) {
  if (shape.size() != rank) {
    shape_error(op, std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                        to_string(shape));
  }
}

template <typename T>
void add_bias_nchw(Index batch, Index channels, Index plane, const T* bias, T* y) {
  for (Index n = 0; n < batch; ++n)
    for (Index c = 0; c < channels; ++c) {
      T* row = y + (n * channels + c) * plane;
      for (Index p = 0; p < plane; ++p) row[p] += bias[c];
    }
}

template <typename T>
void bias_grad_nchw(Index batch, Index channels, Index plane, const T* dy, T* db) {
  for (Index c = 0; c < channels; ++c) {
    double acc = 0;
    for (Index n = 0; n < batch; ++n) {
      const T* row = dy + (n * channels + c) * plane;
      for (Index p = 0; p < plane; ++p) acc += row[p];
    }
    db[c] += static_cast<T>(acc);
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Index stride,
                 Index padding, Rounding rounding) {
  const std::string op = "conv2d";
  require_rank(op, x.shape(), 4, "input");
  require_rank(op, weight.shape(), 4, "kernel");
  if (stride < 1) throw Error(ErrorKind::precondition, "conv2d: stride must be >= 1");
  if (padding < 0) throw Error(ErrorKind::precondition, "conv2d: padding must be >= 0");
  if (x.dim(1) != weight.dim(1)) {
    shape_error(op, "input channels " + std::to_string(x.dim(1)) + " != kernel input channels " +
                        std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    shape_error(op, "bias must have shape [" + std::to_string(weight.dim(0)) + "]");
  }
  const kernels::Conv2dGeometry g{x.dim(0),      x.dim(1),      x.dim(2), x.dim(3), weight.dim(0),
                                  weight.dim(2), weight.dim(3), stride,   padding};
  if (x.dim(2) + 2 * padding < weight.dim(2) || x.dim(3) + 2 * padding < weight.dim(3)) {
    shape_error(op, "kernel " + to_string(weight.shape()) + " larger than padded input " +
                        to_string(x.shape()));
  }
  if (rounding == Rounding::exact && !g.exact()) {
    shape_error(op, "output size is not integral for input " + to_string(x.shape()) +
                        ", kernel " + to_string(weight.shape()) + ", stride " +
                        std::to_string(stride) + ", padding " + std::to_string(padding));
  }
  const Index plane = g.out_h() * g.out_w();
  auto out = Tensor<T>::zeros({g.batch, g.out_channels, g.out_h(), g.out_w()});
  if (bias.defined()) add_bias_nchw(g.batch, g.out_channels, plane, bias.ptr(), out.ptr());
  kernels::parallel::conv2d_forward(g, x.ptr(), weight.ptr(), out.ptr());

  if (tracking<T>({&x, &weight, &bias})) {
    auto on = out.node(), xn = x.node(), wn = weight.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    attach(out, {&x, &weight, &bias}, [g, plane, on, xn, wn, bn]() {
      const T* dy = on->grad.data();
      if (xn->requires_grad)
        kernels::parallel::conv2d_backward_input(g, dy, wn->data.data(),
                                                 xn->ensure_grad().data());
      if (wn->requires_grad)
        kernels::parallel::conv2d_backward_weight(g, xn->data.data(), dy,
                                                  wn->ensure_grad().data());
      if (bn && bn->requires_grad)
        bias_grad_nchw(g.batch, g.out_channels, plane, dy, bn->ensure_grad().data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           Index stride, Index padding) {
  const std::string op = "conv_transpose2d";
  require_rank(op, x.shape(), 4, "input");
  require_rank(op, weight.shape(), 4, "kernel");
  if (stride < 1) throw Error(ErrorKind::precondition, op + ": stride must be >= 1");
  if (padding < 0) throw Error(ErrorKind::precondition, op + ": padding must be >= 0");
  if (x.dim(1) != weight.dim(0)) {
    shape_error(op, "input channels " + std::to_string(x.dim(1)) + " != kernel input channels " +
                        std::to_string(weight.dim(0)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(1))) {
    shape_error(op, "bias must have shape [" + std::to_string(weight.dim(1)) + "]");
  }
  const kernels::ConvTranspose2dGeometry g{x.dim(0),      x.dim(1),      x.dim(2),
                                           x.dim(3),      weight.dim(1), weight.dim(2),
                                           weight.dim(3), stride,        padding};
  if (g.out_h() < 1 || g.out_w() < 1) shape_error(op, "empty output");
  const Index plane = g.out_h() * g.out_w();
  auto out = Tensor<T>::zeros({g.batch, g.out_channels, g.out_h(), g.out_w()});
  if (bias.defined()) add_bias_nchw(g.batch, g.out_channels, plane, bias.ptr(), out.ptr());
  kernels::parallel::conv_transpose2d_forward(g, x.ptr(), weight.ptr(), out.ptr());

  if (tracking<T>({&x, &weight, &bias})) {
    auto on = out.node(), xn = x.node(), wn = weight.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    attach(out, {&x, &weight, &bias}, [g, plane, on, xn, wn, bn]() {
      const T* dy = on->grad.data();
      if (xn->requires_grad)
        kernels::parallel::conv_transpose2d_backward_input(g, dy, wn->data.data(),
                                                           xn->ensure_grad().data());
      if (wn->requires_grad)
        kernels::parallel::conv_transpose2d_backward_weight(g, xn->data.data(), dy,
                                                            wn->ensure_grad().data());
      if (bn && bn->requires_grad)
        bias_grad_nchw(g.batch, g.out_channels, plane, dy, bn->ensure_grad().data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, Mode mode, double momentum, double epsilon) {
  const std::string op = "batch_norm";
  if (x.rank() < 2) shape_error(op, "input must have rank >= 2, got " + to_string(x.shape()));
  const Index batch = x.dim(0);
  const Index channels = x.dim(1);
  Index plane = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) plane *= x.dim(i);
  const Tensor<T>* per_channel[] = {&gamma, &beta, &stats.mean, &stats.var};
  for (const Tensor<T>* t : per_channel) {
    if (t->rank() != 1 || t->dim(0) != channels) {
      shape_error(op, "per-channel tensors must have shape [" + std::to_string(channels) + "]");
    }
  }
  if (mode == Mode::train && batch < 2) {
    throw Error(ErrorKind::precondition, "batch_norm: train mode needs a batch of at least 2");
  }
  const Index count = batch * plane;
  auto out = Tensor<T>::zeros(x.shape());
  std::vector<T> xhat(x.data().size());
  std::vector<T> inv_std(static_cast<std::size_t>(channels));
  const T* xs = x.ptr();
  T* ys = out.ptr();

#pragma omp parallel for schedule(static) num_threads(kernels::num_threads()) if (count * channels > kParallelThreshold)
  for (Index c = 0; c < channels; ++c) {
    double mean = 0;
    double var = 0;
    if (mode == Mode::train) {
      for (Index n = 0; n < batch; ++n) {
        const T* row = xs + (n * channels + c) * plane;
        for (Index p = 0; p < plane; ++p) mean += row[p];
      }
      mean /= static_cast<double>(count);
      for (Index n = 0; n < batch; ++n) {
        const T* row = xs + (n * channels + c) * plane;
        for (Index p = 0; p < plane; ++p) {
          const double d = row[p] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      stats.mean.ptr()[c] =
          static_cast<T>((1.0 - momentum) * stats.mean.ptr()[c] + momentum * mean);
      stats.var.ptr()[c] =
          static_cast<T>((1.0 - momentum) * stats.var.ptr()[c] + momentum * unbiased);
    } else {
      mean = stats.mean.ptr()[c];
      var = stats.var.ptr()[c];
    }
    const double istd = 1.0 / std::sqrt(var + epsilon);
    inv_std[static_cast<std::size_t>(c)] = static_cast<T>(istd);
    const T gc = gamma.ptr()[c];
    const T bc = beta.ptr()[c];
    for (Index n = 0; n < batch; ++n) {
      const Index base = (n * channels + c) * plane;
      for (Index p = 0; p < plane; ++p) {
        const T h = static_cast<T>((xs[base + p] - mean) * istd);
        xhat[static_cast<std::size_t>(base + p)] = h;
        ys[base + p] = gc * h + bc;
      }
    }
  }

  if (tracking<T>({&x, &gamma, &beta})) {
    auto on = out.node(), xn = x.node(), gn = gamma.node(), bn = beta.node();
    attach(out, {&x, &gamma, &beta},
           [on, xn, gn, bn, mode, batch, channels, plane, count, xhat = std::move(xhat),
            inv_std = std::move(inv_std)]() {
             const T* dy = on->grad.data();
             T* dx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
             T* dg = gn->requires_grad ? gn->ensure_grad().data() : nullptr;
             T* db = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
#pragma omp parallel for schedule(static) num_threads(kernels::num_threads()) if (count * channels > kParallelThreshold)
             for (Index c = 0; c < channels; ++c) {
               double sum_dy = 0;
               double sum_dy_xhat = 0;
               for (Index n = 0; n < batch; ++n) {
                 const Index base = (n * channels + c) * plane;
                 for (Index p = 0; p < plane; ++p) {
                   sum_dy += dy[base + p];
                   sum_dy_xhat += dy[base + p] * xhat[static_cast<std::size_t>(base + p)];
                 }
               }
               if (dg) dg[c] += static_cast<T>(sum_dy_xhat);
               if (db) db[c] += static_cast<T>(sum_dy);
               if (!dx) continue;
               const double scale_c = gn->data[static_cast<std::size_t>(c)] *
                                      static_cast<double>(inv_std[static_cast<std::size_t>(c)]);
               const double mean_dy = sum_dy / count;
               const double mean_dy_xhat = sum_dy_xhat / count;
               for (Index n = 0; n < batch; ++n) {
                 const Index base = (n * channels + c) * plane;
                 for (Index p = 0; p < plane; ++p) {
                   if (mode == Mode::train) {
                     const double h = xhat[static_cast<std::size_t>(base + p)];
                     dx[base + p] += static_cast<T>(
                         scale_c * (dy[base + p] - mean_dy - h * mean_dy_xhat));
                   } else {
                     dx[base + p] += static_cast<T>(scale_c * dy[base + p]);
                   }
                 }
               }
             }
           });
  }
  return out;
}

namespace {
thread_local KinkMonitor* g_kink_monitor = nullptr;
}

KinkMonitor::KinkMonitor() : previous_(g_kink_monitor) { g_kink_monitor = this; }
KinkMonitor::~KinkMonitor() { g_kink_monitor = previous_; }
KinkMonitor* KinkMonitor::active() { return g_kink_monitor; }

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw Error(ErrorKind::precondition, "leaky_relu: slope must lie in (0, 1)");
  }
  auto out = Tensor<T>::zeros(x.shape());
  const Index n = x.numel();
  const T s = static_cast<T>(slope);
  const T* xs = x.ptr();
  T* ys = out.ptr();
#pragma omp parallel for schedule(static) num_threads(kernels::num_threads()) if (n > kParallelThreshold)
  for (Index i = 0; i < n; ++i) ys[i] = std::max(xs[i], s * xs[i]);

  if (KinkMonitor* monitor = KinkMonitor::active()) {
    for (Index base = 0; base < n; base += 64) {
      std::uint64_t word = 0;
      for (Index i = base; i < std::min(n, base + 64); ++i) word = (word << 1) | (xs[i] > T(0));
      monitor->fold(word);
    }
  }

  if (tracking<T>({&x})) {
    auto on = out.node(), xn = x.node();
    attach(out, {&x}, [on, xn, s, n]() {
      const T* dy = on->grad.data();
      const T* xv = xn->data.data();
      T* dx = xn->ensure_grad().data();
#pragma omp parallel for schedule(static) num_threads(kernels::num_threads()) if (n > kParallelThreshold)
      for (Index i = 0; i < n; ++i) dx[i] += dy[i] * (xv[i] > T(0) ? T(1) : s);
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const std::string op = "linear";
  require_rank(op, x.shape(), 2, "input");
  require_rank(op, weight.shape(), 2, "weight");
  if (x.dim(1) != weight.dim(0)) {
    shape_error(op, "input features " + std::to_string(x.dim(1)) + " != weight rows " +
                        std::to_string(weight.dim(0)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(1))) {
    shape_error(op, "bias must have shape [" + std::to_string(weight.dim(1)) + "]");
  }
  const Index n = x.dim(0), f = x.dim(1), g = weight.dim(1);
  auto out = Tensor<T>::zeros({n, g});
  if (bias.defined()) {
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < g; ++j) out.ptr()[i * g + j] = bias.ptr()[j];
  }
  if (n > 0 && f > 0 && g > 0) {
    kernels::parallel::gemm<T>(false, false, n, g, f, T(1), x.ptr(), f, weight.ptr(), g, T(1),
                               out.ptr(), g);
  }

  if (tracking<T>({&x, &weight, &bias})) {
    auto on = out.node(), xn = x.node(), wn = weight.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    attach(out, {&x, &weight, &bias}, [on, xn, wn, bn, n, f, g]() {
      const T* dy = on->grad.data();
      if (n == 0 || g == 0) return;
      if (xn->requires_grad && f > 0)
        kernels::parallel::gemm<T>(false, true, n, f, g, T(1), dy, g, wn->data.data(), g, T(1),
                                   xn->ensure_grad().data(), f);
      if (wn->requires_grad && f > 0)
        kernels::parallel::gemm<T>(true, false, f, g, n, T(1), xn->data.data(), f, dy, g, T(1),
                                   wn->ensure_grad().data(), g);
      if (bn && bn->requires_grad) {
        T* db = bn->ensure_grad().data();
        for (Index j = 0; j < g; ++j) {
          double acc = 0;
          for (Index i = 0; i < n; ++i) acc += dy[i * g + j];
          db[j] += static_cast<T>(acc);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const std::string op = "softmax_cross_entropy";
  require_rank(op, logits.shape(), 2, "logits");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    shape_error(op, std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  if (n == 0) shape_error(op, "empty batch");
  for (int label : labels) {
    if (label < 0 || label >= k) {
      throw Error(ErrorKind::precondition,
                  op + ": label " + std::to_string(label) + " outside [0, " + std::to_string(k) +
                      ")");
    }
  }
  std::vector<double> probs(static_cast<std::size_t>(n * k));
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const T* row = logits.ptr() + i * k;
    double max = row[0];
    for (Index j = 1; j < k; ++j) max = std::max(max, static_cast<double>(row[j]));
    double denom = 0;
    for (Index j = 0; j < k; ++j) {
      const double e = std::exp(row[j] - max);
      probs[static_cast<std::size_t>(i * k + j)] = e;
      denom += e;
    }
    for (Index j = 0; j < k; ++j) probs[static_cast<std::size_t>(i * k + j)] /= denom;
    total += -(row[labels[static_cast<std::size_t>(i)]] - max - std::log(denom));
  }
  auto out = Tensor<T>::scalar(static_cast<T>(total / n));

  if (tracking<T>({&logits})) {
    auto on = out.node(), ln = logits.node();
    std::vector<int> label_copy(labels.begin(), labels.end());
    attach(out, {&logits},
           [on, ln, n, k, probs = std::move(probs), label_copy = std::move(label_copy)]() {
             const double upstream = on->grad[0] / static_cast<double>(n);
             T* dl = ln->ensure_grad().data();
             for (Index i = 0; i < n; ++i)
               for (Index j = 0; j < k; ++j) {
                 double p = probs[static_cast<std::size_t>(i * k + j)];
                 if (j == label_copy[static_cast<std::size_t>(i)]) p -= 1.0;
                 dl[i * k + j] += static_cast<T>(upstream * p);
               }
           });
  }
  return out;
}

template <typename T>
Tensor<T> bernoulli_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target) {
  const std::string op = "bernoulli_cross_entropy";
  if (logits.shape() != target.shape()) {
    shape_error(op, "logits " + to_string(logits.shape()) + " vs target " +
                        to_string(target.shape()));
  }
  if (logits.rank() < 1 || logits.dim(0) == 0) shape_error(op, "empty batch");
  const Index batch = logits.dim(0);
  const Index n = logits.numel();
  const T* ls = logits.ptr();
  const T* ts = target.ptr();
  for (Index i = 0; i < n; ++i) {
    if (!(ts[i] >= T(0) && ts[i] <= T(1))) {
      throw Error(ErrorKind::precondition, op + ": target outside [0, 1]");
    }
  }
  // Elementwise terms use vectorized exp/log1p in T; per-sample partial sums
  // in double keep the reduction order fixed for any thread count.
  // loss_i = max(l, 0) - l·t + log1p(exp(-|l|)),  d loss_i / d l = sigmoid(l) - t
  const Index per_sample = n / batch;
  std::vector<double> partial(static_cast<std::size_t>(batch));
  std::vector<T> sig(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static) num_threads(kernels::num_threads()) if (n > kParallelThreshold)
  for (Index s = 0; s < batch; ++s) {
    using Array = Eigen::Array<T, Eigen::Dynamic, 1>;
    const Index begin = s * per_sample;
    Eigen::Map<const Array> l(ls + begin, per_sample);
    Eigen::Map<const Array> t(ts + begin, per_sample);
    const Array e = (-l.abs()).exp();
    const Array term = l.max(T(0)) - l * t + e.log1p();
    Eigen::Map<Array>(sig.data() + begin, per_sample) =
        (l >= T(0)).select(T(1) / (T(1) + e), e / (T(1) + e));
    double acc = 0;
    for (Index i = 0; i < per_sample; ++i) acc += term[i];
    partial[static_cast<std::size_t>(s)] = acc;
  }
  double total = 0;
  for (double p : partial) total += p;
  auto out = Tensor<T>::scalar(static_cast<T>(total / batch));

  if (tracking<T>({&logits})) {
    auto on = out.node(), ln = logits.node(), tn = target.node();
    attach(out, {&logits}, [on, ln, tn, n, batch, sig = std::move(sig)]() {
      const T upstream = static_cast<T>(on->grad[0] / static_cast<double>(batch));
      const T* tv = tn->data.data();
      T* dl = ln->ensure_grad().data();
#pragma omp parallel for schedule(static) num_threads(kernels::num_threads()) if (n > kParallelThreshold)
      for (Index i = 0; i < n; ++i) dl[i] += upstream * (sig[static_cast<std::size_t>(i)] - tv[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> gaussian_kl(const Tensor<T>& mu, const Tensor<T>& logvar) {
  const std::string op = "gaussian_kl";
  require_rank(op, mu.shape(), 2, "mu");
  if (mu.shape() != logvar.shape()) shape_error(op, "mu and logvar shapes differ");
  const Index batch = mu.dim(0);
  if (batch == 0) shape_error(op, "empty batch");
  const Index n = mu.numel();
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const double m = mu.ptr()[i];
    const double lv = logvar.ptr()[i];
    total += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
  }
  auto out = Tensor<T>::scalar(static_cast<T>(total / batch));

  if (tracking<T>({&mu, &logvar})) {
    auto on = out.node(), mn = mu.node(), vn = logvar.node();
    attach(out, {&mu, &logvar}, [on, mn, vn, n, batch]() {
      const double upstream = on->grad[0] / static_cast<double>(batch);
      if (mn->requires_grad) {
        T* dm = mn->ensure_grad().data();
        for (Index i = 0; i < n; ++i) dm[i] += static_cast<T>(upstream * mn->data[i]);
      }
      if (vn->requires_grad) {
        T* dv = vn->ensure_grad().data();
        for (Index i = 0; i < n; ++i) {
          dv[i] += static_cast<T>(upstream * 0.5 * (std::exp(static_cast<double>(vn->data[i])) -
                                                    1.0));
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, const Tensor<T>& noise) {
  if (mu.shape() != logvar.shape() || mu.shape() != noise.shape()) {
    shape_error("reparameterize", "mu, logvar and noise shapes must match");
  }
  const Index n = mu.numel();
  auto out = Tensor<T>::zeros(mu.shape());
  std::vector<T> sigma(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    sigma[static_cast<std::size_t>(i)] = std::exp(T(0.5) * logvar.ptr()[i]);
    out.ptr()[i] = mu.ptr()[i] + sigma[static_cast<std::size_t>(i)] * noise.ptr()[i];
  }
  if (tracking<T>({&mu, &logvar})) {
    auto on = out.node(), mn = mu.node(), vn = logvar.node(), en = noise.node();
    attach(out, {&mu, &logvar}, [on, mn, vn, en, n, sigma = std::move(sigma)]() {
      const T* dz = on->grad.data();
      if (mn->requires_grad) {
        T* dm = mn->ensure_grad().data();
        for (Index i = 0; i < n; ++i) dm[i] += dz[i];
      }
      if (vn->requires_grad) {
        T* dv = vn->ensure_grad().data();
        for (Index i = 0; i < n; ++i)
          dv[i] += dz[i] * T(0.5) * sigma[static_cast<std::size_t>(i)] * en->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    shape_error("reshape", "cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  auto out = Tensor<T>::from_vector(std::move(shape), std::vector<T>(x.data().begin(),
                                                                     x.data().end()));
  if (tracking<T>({&x})) {
    auto on = out.node(), xn = x.node();
    attach(out, {&x}, [on, xn]() {
      T* dx = xn->ensure_grad().data();
      for (std::size_t i = 0; i < on->grad.size(); ++i) dx[i] += on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_columns(const Tensor<T>& x, Index begin, Index end) {
  require_rank("slice_columns", x.shape(), 2, "input");
  const Index n = x.dim(0), d = x.dim(1);
  if (begin < 0 || end < begin || end > d) {
    shape_error("slice_columns", "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                     ") outside " + std::to_string(d) + " columns");
  }
  const Index w = end - begin;
  auto out = Tensor<T>::zeros({n, w});
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < w; ++j) out.ptr()[i * w + j] = x.ptr()[i * d + begin + j];
  if (tracking<T>({&x})) {
    auto on = out.node(), xn = x.node();
    attach(out, {&x}, [on, xn, n, d, w, begin]() {
      T* dx = xn->ensure_grad().data();
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < w; ++j) dx[i * d + begin + j] += on->grad[i * w + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_columns(const Tensor<T>& left, const Tensor<T>& right) {
  require_rank("concat_columns", left.shape(), 2, "left");
  require_rank("concat_columns", right.shape(), 2, "right");
  if (left.dim(0) != right.dim(0)) shape_error("concat_columns", "row counts differ");
  const Index n = left.dim(0), a = left.dim(1), b = right.dim(1), w = a + b;
  auto out = Tensor<T>::zeros({n, w});
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < a; ++j) out.ptr()[i * w + j] = left.ptr()[i * a + j];
    for (Index j = 0; j < b; ++j) out.ptr()[i * w + a + j] = right.ptr()[i * b + j];
  }
  if (tracking<T>({&left, &right})) {
    auto on = out.node(), ln = left.node(), rn = right.node();
    attach(out, {&left, &right}, [on, ln, rn, n, a, b, w]() {
      if (ln->requires_grad) {
        T* dl = ln->ensure_grad().data();
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < a; ++j) dl[i * a + j] += on->grad[i * w + j];
      }
      if (rn->requires_grad) {
        T* dr = rn->ensure_grad().data();
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < b; ++j) dr[i * b + j] += on->grad[i * w + a + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    shape_error("add", to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  auto out = Tensor<T>::zeros(a.shape());
  for (Index i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  if (tracking<T>({&a, &b})) {
    auto on = out.node(), an = a.node(), bn = b.node();
    attach(out, {&a, &b}, [on, an, bn]() {
      for (auto* node : {an.get(), bn.get()}) {
        if (!node->requires_grad) continue;
        T* d = node->ensure_grad().data();
        for (std::size_t i = 0; i < on->grad.size(); ++i) d[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    shape_error("mul", to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  auto out = Tensor<T>::zeros(a.shape());
  for (Index i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  if (tracking<T>({&a, &b})) {
    auto on = out.node(), an = a.node(), bn = b.node();
    attach(out, {&a, &b}, [on, an, bn]() {
      if (an->requires_grad) {
        T* d = an->ensure_grad().data();
        for (std::size_t i = 0; i < on->grad.size(); ++i) d[i] += on->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        T* d = bn->ensure_grad().data();
        for (std::size_t i = 0; i < on->grad.size(); ++i) d[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor) {
  const T f = static_cast<T>(factor);
  auto out = Tensor<T>::zeros(a.shape());
  for (Index i = 0; i < a.numel(); ++i) out.ptr()[i] = f * a.ptr()[i];
  if (tracking<T>({&a})) {
    auto on = out.node(), an = a.node();
    attach(out, {&a}, [on, an, f]() {
      T* d = an->ensure_grad().data();
      for (std::size_t i = 0; i < on->grad.size(); ++i) d[i] += f * on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double acc = 0;
  for (T v : a.data()) acc += v;
  auto out = Tensor<T>::scalar(static_cast<T>(acc));
  if (tracking<T>({&a})) {
    auto on = out.node(), an = a.node();
    attach(out, {&a}, [on, an]() {
      T* d = an->ensure_grad().data();
      const T g = on->grad[0];
      for (std::size_t i = 0; i < an->data.size(); ++i) d[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& logits) {
  auto out = Tensor<T>::zeros(logits.shape());
  for (Index i = 0; i < logits.numel(); ++i) {
    out.ptr()[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(logits.ptr()[i]))));
  }
  return out;
}

#define SUBVAE_INSTANTIATE(T)                                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Index,       \
                            Index, Rounding);                                                  \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                      Index, Index);                                           \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                RunningStats<T>&, Mode, double, double);                       \
  template Tensor<T> leaky_relu(const Tensor<T>&, double);                                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);            \
  template Tensor<T> bernoulli_cross_entropy(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> gaussian_kl(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> reparameterize(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> slice_columns(const Tensor<T>&, Index, Index);                            \
  template Tensor<T> concat_columns(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, double);                                          \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> sigmoid(const Tensor<T>&);

SUBVAE_INSTANTIATE(float)
SUBVAE_INSTANTIATE(double)
#undef SUBVAE_INSTANTIATE

}  // namespace subvae
