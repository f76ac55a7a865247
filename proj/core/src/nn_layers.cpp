#include "layermon/nn_layers.hpp"

#include <algorithm>
#include <cmath>

#include "layermon/errors.hpp"
#include "layermon/parallel.hpp"

namespace layermon {

Tensor Tensor::reshaped(int n_, int c_, int h_, int w_) const {
  if (static_cast<std::size_t>(n_) * c_ * h_ * w_ != data.size())
    throw ValidationError("reshape changes element count");
  Tensor t;
  t.n = n_;
  t.c = c_;
  t.h = h_;
  t.w = w_;
  t.data = data;
  return t;
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv2d_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  if (weights.h != 3 || weights.w != 3) throw ValidationError("conv2d: kernel must be 3x3");
  if (weights.c != x.c) throw ValidationError("conv2d: input channel mismatch");
  if (bias.size() != static_cast<std::size_t>(weights.n))
    throw ValidationError("conv2d: bias size mismatch");

  const int oc_count = weights.n;
  Tensor y(x.n, oc_count, x.h, x.w);

  parallel_for(static_cast<std::size_t>(x.n), [&](std::size_t ni) {
    const int in = static_cast<int>(ni);
    for (int oc = 0; oc < oc_count; ++oc) {
      const double bv = bias.data[static_cast<std::size_t>(oc)];
      for (int oh = 0; oh < x.h; ++oh) {
        double* yrow = y.row(in, oc, oh);
        std::fill(yrow, yrow + x.w, bv);
      }
      for (int ic = 0; ic < x.c; ++ic) {
        for (int ky = 0; ky < 3; ++ky) {
          for (int oh = 0; oh < x.h; ++oh) {
            const int ih = oh + ky - 1;
            if (ih < 0 || ih >= x.h) continue;
            const double* xrow = x.row(in, ic, ih);
            double* yrow = y.row(in, oc, oh);
            for (int kx = 0; kx < 3; ++kx) {
              const double wv = weights.at(oc, ic, ky, kx);
              const int shift = kx - 1;
              const int ow0 = std::max(0, -shift);
              const int ow1 = std::min(x.w, x.w - shift);
              for (int ow = ow0; ow < ow1; ++ow) yrow[ow] += wv * xrow[ow + shift];
            }
          }
        }
      }
    }
  });
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& weights, const Tensor& dy) {
  if (dy.n != x.n || dy.h != x.h || dy.w != x.w || dy.c != weights.n)
    throw ValidationError("conv2d_backward: gradient shape mismatch");

  ConvGrads g;
  g.dx = Tensor(x.n, x.c, x.h, x.w);
  g.dweights = Tensor(weights.n, weights.c, 3, 3);
  g.dbias = Tensor(1, weights.n);

  // dx: each sample is an independent slice, so parallelise over the batch.
  parallel_for(static_cast<std::size_t>(x.n), [&](std::size_t ni) {
    const int in = static_cast<int>(ni);
    for (int oc = 0; oc < weights.n; ++oc) {
      for (int ic = 0; ic < x.c; ++ic) {
        for (int ky = 0; ky < 3; ++ky) {
          for (int oh = 0; oh < x.h; ++oh) {
            const int ih = oh + ky - 1;
            if (ih < 0 || ih >= x.h) continue;
            const double* dyrow = dy.row(in, oc, oh);
            double* dxrow = g.dx.row(in, ic, ih);
            for (int kx = 0; kx < 3; ++kx) {
              const double wv = weights.at(oc, ic, ky, kx);
              const int shift = kx - 1;
              const int ow0 = std::max(0, -shift);
              const int ow1 = std::min(x.w, x.w - shift);
              for (int ow = ow0; ow < ow1; ++ow) dxrow[ow + shift] += wv * dyrow[ow];
            }
          }
        }
      }
    }
  });

  // dweights/dbias: one worker owns each output channel, accumulating over the
  // batch sequentially so results do not depend on the thread count.
  parallel_for(static_cast<std::size_t>(weights.n), [&](std::size_t oci) {
    const int oc = static_cast<int>(oci);
    double bsum = 0.0;
    for (int in = 0; in < x.n; ++in) {
      for (int oh = 0; oh < x.h; ++oh) {
        const double* dyrow = dy.row(in, oc, oh);
        for (int ow = 0; ow < x.w; ++ow) bsum += dyrow[ow];
        for (int ic = 0; ic < x.c; ++ic) {
          for (int ky = 0; ky < 3; ++ky) {
            const int ih = oh + ky - 1;
            if (ih < 0 || ih >= x.h) continue;
            const double* xrow = x.row(in, ic, ih);
            for (int kx = 0; kx < 3; ++kx) {
              const int shift = kx - 1;
              const int ow0 = std::max(0, -shift);
              const int ow1 = std::min(x.w, x.w - shift);
              double sum = 0.0;
              for (int ow = ow0; ow < ow1; ++ow) sum += dyrow[ow] * xrow[ow + shift];
              g.dweights.at(oc, ic, ky, kx) += sum;
            }
          }
        }
      }
    }
    g.dbias.data[static_cast<std::size_t>(oc)] = bsum;
  });
  return g;
}

// ---------------------------------------------------------------------------
// Max pooling

PoolResult maxpool2x2_forward(const Tensor& x) {
  if (x.h % 2 != 0 || x.w % 2 != 0)
    throw ValidationError("maxpool2x2: spatial dimensions must be even");
  PoolResult out;
  out.y = Tensor(x.n, x.c, x.h / 2, x.w / 2);
  out.argmax.resize(out.y.size());

  parallel_for(static_cast<std::size_t>(x.n), [&](std::size_t ni) {
    const int in = static_cast<int>(ni);
    for (int ic = 0; ic < x.c; ++ic) {
      for (int oh = 0; oh < out.y.h; ++oh) {
        for (int ow = 0; ow < out.y.w; ++ow) {
          double best = -1.0;
          std::int64_t best_idx = -1;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int ih = 2 * oh + dy;
              const int iw = 2 * ow + dx;
              const double v = x.at(in, ic, ih, iw);
              const std::int64_t idx =
                  ((static_cast<std::int64_t>(in) * x.c + ic) * x.h + ih) * x.w + iw;
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = idx;
              }
            }
          }
          out.y.at(in, ic, oh, ow) = best;
          out.argmax[((static_cast<std::size_t>(in) * x.c + ic) * out.y.h + oh) * out.y.w + ow] =
              best_idx;
        }
      }
    }
  });
  return out;
}

Tensor maxpool2x2_backward(const Tensor& dy, const std::vector<std::int64_t>& argmax,
                           const Tensor& x_like) {
  if (argmax.size() != dy.size())
    throw ValidationError("maxpool2x2_backward: argmax size mismatch");
  Tensor dx(x_like.n, x_like.c, x_like.h, x_like.w);
  for (std::size_t i = 0; i < dy.size(); ++i)
    dx.data[static_cast<std::size_t>(argmax[i])] += dy.data[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalisation

Tensor batchnorm_forward(const Tensor& x, std::span<const double> gamma,
                         std::span<const double> beta, std::vector<double>& running_mean,
                         std::vector<double>& running_var, bool training, BatchNormCache* cache) {
  const std::size_t channels = static_cast<std::size_t>(x.c);
  if (gamma.size() != channels || beta.size() != channels || running_mean.size() != channels ||
      running_var.size() != channels)
    throw ValidationError("batchnorm: per-channel parameter size mismatch");
  if (training && x.n < 2)
    throw ValidationError("batchnorm: training mode requires a batch of at least 2");

  Tensor y(x.n, x.c, x.h, x.w);
  const int plane = x.plane();
  const double m = static_cast<double>(x.n) * plane;

  if (cache != nullptr) {
    cache->xhat = Tensor(x.n, x.c, x.h, x.w);
    cache->inv_std.assign(channels, 0.0);
  }

  for (int ic = 0; ic < x.c; ++ic) {
    double mu, var;
    if (training) {
      double sum = 0.0;
      for (int in = 0; in < x.n; ++in) {
        const double* row0 = x.row(in, ic, 0);
        for (int i = 0; i < plane; ++i) sum += row0[i];
      }
      mu = sum / m;
      double sq = 0.0;
      for (int in = 0; in < x.n; ++in) {
        const double* row0 = x.row(in, ic, 0);
        for (int i = 0; i < plane; ++i) sq += (row0[i] - mu) * (row0[i] - mu);
      }
      var = sq / m;  // biased, also used for the running estimate
      running_mean[static_cast<std::size_t>(ic)] =
          (1.0 - kBatchNormMomentum) * running_mean[static_cast<std::size_t>(ic)] +
          kBatchNormMomentum * mu;
      running_var[static_cast<std::size_t>(ic)] =
          (1.0 - kBatchNormMomentum) * running_var[static_cast<std::size_t>(ic)] +
          kBatchNormMomentum * var;
    } else {
      mu = running_mean[static_cast<std::size_t>(ic)];
      var = running_var[static_cast<std::size_t>(ic)];
    }

    const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
    const double g = gamma[static_cast<std::size_t>(ic)];
    const double b = beta[static_cast<std::size_t>(ic)];
    for (int in = 0; in < x.n; ++in) {
      const double* xrow = x.row(in, ic, 0);
      double* yrow = y.row(in, ic, 0);
      double* hrow = cache != nullptr ? cache->xhat.row(in, ic, 0) : nullptr;
      for (int i = 0; i < plane; ++i) {
        const double xhat = (xrow[i] - mu) * inv_std;
        if (hrow != nullptr) hrow[i] = xhat;
        yrow[i] = g * xhat + b;
      }
    }
    if (cache != nullptr) cache->inv_std[static_cast<std::size_t>(ic)] = inv_std;
  }
  return y;
}

BatchNormGrads batchnorm_backward(const Tensor& dy, const BatchNormCache& cache,
                                  std::span<const double> gamma) {
  const Tensor& xhat = cache.xhat;
  if (!dy.same_shape(xhat)) throw ValidationError("batchnorm_backward: shape mismatch");

  BatchNormGrads g;
  g.dx = Tensor(dy.n, dy.c, dy.h, dy.w);
  g.dgamma.assign(static_cast<std::size_t>(dy.c), 0.0);
  g.dbeta.assign(static_cast<std::size_t>(dy.c), 0.0);

  const int plane = dy.plane();
  const double m = static_cast<double>(dy.n) * plane;

  for (int ic = 0; ic < dy.c; ++ic) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int in = 0; in < dy.n; ++in) {
      const double* dyrow = dy.row(in, ic, 0);
      const double* hrow = xhat.row(in, ic, 0);
      for (int i = 0; i < plane; ++i) {
        sum_dy += dyrow[i];
        sum_dy_xhat += dyrow[i] * hrow[i];
      }
    }
    g.dbeta[static_cast<std::size_t>(ic)] = sum_dy;
    g.dgamma[static_cast<std::size_t>(ic)] = sum_dy_xhat;

    const double gm = gamma[static_cast<std::size_t>(ic)];
    const double inv_std = cache.inv_std[static_cast<std::size_t>(ic)];
    const double k = gm * inv_std / m;
    for (int in = 0; in < dy.n; ++in) {
      const double* dyrow = dy.row(in, ic, 0);
      const double* hrow = xhat.row(in, ic, 0);
      double* dxrow = g.dx.row(in, ic, 0);
      for (int i = 0; i < plane; ++i)
        dxrow[i] = k * (m * dyrow[i] - sum_dy - hrow[i] * sum_dy_xhat);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Activations and dense head

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& dy, const Tensor& x) {
  if (!dy.same_shape(x)) throw ValidationError("relu_backward: shape mismatch");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (x.data[i] <= 0.0) dx.data[i] = 0.0;
  return dx;
}

Tensor dense_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  const int d = x.c * x.h * x.w;
  if (weights.c != d || weights.h != 1 || weights.w != 1)
    throw ValidationError("dense: weight shape mismatch with input");
  if (bias.size() != static_cast<std::size_t>(weights.n))
    throw ValidationError("dense: bias size mismatch");

  const int out_dim = weights.n;
  Tensor y(x.n, out_dim);
  parallel_for(static_cast<std::size_t>(x.n), [&](std::size_t ni) {
    const int in = static_cast<int>(ni);
    const double* xrow = x.data.data() + static_cast<std::size_t>(in) * d;
    double* yrow = y.data.data() + static_cast<std::size_t>(in) * out_dim;
    for (int o = 0; o < out_dim; ++o) {
      const double* wrow = weights.data.data() + static_cast<std::size_t>(o) * d;
      double sum = bias.data[static_cast<std::size_t>(o)];
      for (int i = 0; i < d; ++i) sum += wrow[i] * xrow[i];
      yrow[o] = sum;
    }
  });
  return y;
}

DenseGrads dense_backward(const Tensor& x, const Tensor& weights, const Tensor& dy) {
  const int d = x.c * x.h * x.w;
  const int out_dim = weights.n;
  if (dy.n != x.n || dy.c * dy.h * dy.w != out_dim)
    throw ValidationError("dense_backward: gradient shape mismatch");

  DenseGrads g;
  g.dx = Tensor(x.n, x.c, x.h, x.w);
  g.dweights = Tensor(out_dim, d, 1, 1);
  g.dbias = Tensor(1, out_dim);

  parallel_for(static_cast<std::size_t>(x.n), [&](std::size_t ni) {
    const int in = static_cast<int>(ni);
    const double* dyrow = dy.data.data() + static_cast<std::size_t>(in) * out_dim;
    double* dxrow = g.dx.data.data() + static_cast<std::size_t>(in) * d;
    for (int o = 0; o < out_dim; ++o) {
      const double* wrow = weights.data.data() + static_cast<std::size_t>(o) * d;
      const double dv = dyrow[o];
      for (int i = 0; i < d; ++i) dxrow[i] += dv * wrow[i];
    }
  });

  parallel_for(static_cast<std::size_t>(out_dim), [&](std::size_t oi) {
    const int o = static_cast<int>(oi);
    double* dwrow = g.dweights.data.data() + static_cast<std::size_t>(o) * d;
    double bsum = 0.0;
    for (int in = 0; in < x.n; ++in) {
      const double dv = dy.data[static_cast<std::size_t>(in) * out_dim + o];
      const double* xrow = x.data.data() + static_cast<std::size_t>(in) * d;
      bsum += dv;
      for (int i = 0; i < d; ++i) dwrow[i] += dv * xrow[i];
    }
    g.dbias.data[static_cast<std::size_t>(o)] = bsum;
  });
  return g;
}

Tensor softmax(const Tensor& logits) {
  const int k = logits.c * logits.h * logits.w;
  Tensor probs = logits;
  for (int in = 0; in < logits.n; ++in) {
    double* row = probs.data.data() + static_cast<std::size_t>(in) * k;
    double mx = row[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
      row[i] = std::exp(row[i] - mx);
      sum += row[i];
    }
    for (int i = 0; i < k; ++i) row[i] /= sum;
  }
  return probs;
}

CrossEntropyResult cross_entropy_with_logits(const Tensor& logits, std::span<const int> labels) {
  const int k = logits.c * logits.h * logits.w;
  if (labels.size() != static_cast<std::size_t>(logits.n))
    throw ValidationError("cross_entropy: label count mismatch");

  CrossEntropyResult out;
  out.dlogits = softmax(logits);
  const double inv_n = 1.0 / static_cast<double>(logits.n);
  double loss = 0.0;
  for (int in = 0; in < logits.n; ++in) {
    const int label = labels[static_cast<std::size_t>(in)];
    if (label < 0 || label >= k) throw ValidationError("cross_entropy: label index out of range");
    const double* row = logits.data.data() + static_cast<std::size_t>(in) * k;
    double mx = row[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
    double lse = 0.0;
    for (int i = 0; i < k; ++i) lse += std::exp(row[i] - mx);
    loss += (mx + std::log(lse)) - row[label];

    double* drow = out.dlogits.data.data() + static_cast<std::size_t>(in) * k;
    drow[label] -= 1.0;
    for (int i = 0; i < k; ++i) drow[i] *= inv_n;
  }
  out.loss = loss * inv_n;
  return out;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::int64_t t, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ValidationError("adam_step: size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ValidationError("adam_step: state size mismatch");
  if (t < 1) throw ValidationError("adam_step: step count must be >= 1");

  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace layermon
