// Copyright (c) 2026 The tinyptq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tinyptq/layers.h"

#include <cmath>
#include <limits>

#include "tinyptq/error.h"

namespace tinyptq {

int same_pad_before(std::int64_t in, int kernel, int stride) {
  const std::int64_t out = (in + stride - 1) / stride;
  const std::int64_t total = std::max<std::int64_t>((out - 1) * stride + kernel - in, 0);
  return static_cast<int>(total / 2);
}

namespace {

// Sliding-window geometry over an N,H,W,C tensor (1-d data uses H == 1).
struct Window {
  std::int64_t n = 0, h = 0, w = 0, c = 0;
  std::int64_t out_h = 0, out_w = 0, out_c = 0;
  int kh = 1, kw = 1, sh = 1, sw = 1;
  int pad_top = 0, pad_left = 0;
};

[[noreturn]] void fail(const Layer& layer, const std::string& what) {
  throw StructuralError("layer '" + layer.name + "' (" + std::string(to_string(layer.kind)) +
                        "): " + what);
}

Window make_window(const Layer& layer, const Tensor& x, std::int64_t out_channels,
                   Padding padding) {
  Window g;
  if (x.rank() == 4) {
    g.n = x.dim(0);
    g.h = x.dim(1);
    g.w = x.dim(2);
    g.c = x.dim(3);
  } else if (x.rank() == 3) {
    g.n = x.dim(0);
    g.h = 1;
    g.w = x.dim(1);
    g.c = x.dim(2);
  } else {
    fail(layer, "expected a batched spatial input, got " + shape_string(x.shape()));
  }
  g.kh = layer.kernel_h;
  g.kw = layer.kernel_w;
  g.sh = layer.stride_h;
  g.sw = layer.stride_w;
  if (padding == Padding::kSame) {
    g.out_h = (g.h + g.sh - 1) / g.sh;
    g.out_w = (g.w + g.sw - 1) / g.sw;
    g.pad_top = same_pad_before(g.h, g.kh, g.sh);
    g.pad_left = same_pad_before(g.w, g.kw, g.sw);
  } else {
    g.out_h = g.h >= g.kh ? (g.h - g.kh) / g.sh + 1 : 0;
    g.out_w = g.w >= g.kw ? (g.w - g.kw) / g.sw + 1 : 0;
  }
  if (g.out_h < 1 || g.out_w < 1) fail(layer, "empty output for input " + shape_string(x.shape()));
  g.out_c = out_channels;
  return g;
}

Shape window_output_shape(const Tensor& x, const Window& g) {
  if (x.rank() == 4) return {g.n, g.out_h, g.out_w, g.out_c};
  return {g.n, g.out_w, g.out_c};
}

const Tensor& single_input(const Layer& layer, std::span<const Tensor* const> inputs) {
  if (inputs.size() != 1 || inputs[0] == nullptr) fail(layer, "expected exactly one input");
  return *inputs[0];
}

double bias_at(const Layer& layer, std::int64_t c) {
  return layer.bias.empty() ? 0.0 : layer.bias[c];
}

// ---- dense convolution (conv2d and conv1d share the kernel) ----

void conv_forward(const Layer& layer, const Window& g, const double* x, const double* w,
                  double* y) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        double* out = y + ((n * g.out_h + oh) * g.out_w + ow) * g.out_c;
        for (std::int64_t co = 0; co < g.out_c; ++co) out[co] = bias_at(layer, co);
        for (int kh = 0; kh < g.kh; ++kh) {
          const std::int64_t ih = oh * g.sh - g.pad_top + kh;
          if (ih < 0 || ih >= g.h) continue;
          for (int kw = 0; kw < g.kw; ++kw) {
            const std::int64_t iw = ow * g.sw - g.pad_left + kw;
            if (iw < 0 || iw >= g.w) continue;
            const double* in = x + ((n * g.h + ih) * g.w + iw) * g.c;
            const double* wk = w + (static_cast<std::int64_t>(kh) * g.kw + kw) * g.c * g.out_c;
            for (std::int64_t ci = 0; ci < g.c; ++ci) {
              const double v = in[ci];
              const double* wr = wk + ci * g.out_c;
              for (std::int64_t co = 0; co < g.out_c; ++co) out[co] += v * wr[co];
            }
          }
        }
      }
    }
  }
}

void conv_backward(const Window& g, const double* x, const double* w, const double* gy,
                   double* gx, double* gw, double* gb) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        const double* go = gy + ((n * g.out_h + oh) * g.out_w + ow) * g.out_c;
        if (gb) {
          for (std::int64_t co = 0; co < g.out_c; ++co) gb[co] += go[co];
        }
        for (int kh = 0; kh < g.kh; ++kh) {
          const std::int64_t ih = oh * g.sh - g.pad_top + kh;
          if (ih < 0 || ih >= g.h) continue;
          for (int kw = 0; kw < g.kw; ++kw) {
            const std::int64_t iw = ow * g.sw - g.pad_left + kw;
            if (iw < 0 || iw >= g.w) continue;
            const std::int64_t in_off = ((n * g.h + ih) * g.w + iw) * g.c;
            const std::int64_t w_off = (static_cast<std::int64_t>(kh) * g.kw + kw) * g.c * g.out_c;
            for (std::int64_t ci = 0; ci < g.c; ++ci) {
              const double* wr = w + w_off + ci * g.out_c;
              if (gx) {
                double acc = 0.0;
                for (std::int64_t co = 0; co < g.out_c; ++co) acc += go[co] * wr[co];
                gx[in_off + ci] += acc;
              }
              if (gw) {
                const double v = x[in_off + ci];
                double* gwr = gw + w_off + ci * g.out_c;
                for (std::int64_t co = 0; co < g.out_c; ++co) gwr[co] += v * go[co];
              }
            }
          }
        }
      }
    }
  }
}

// ---- depthwise convolution ----

void dw_forward(const Layer& layer, const Window& g, const double* x, const double* w, double* y) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        double* out = y + ((n * g.out_h + oh) * g.out_w + ow) * g.c;
        for (std::int64_t c = 0; c < g.c; ++c) out[c] = bias_at(layer, c);
        for (int kh = 0; kh < g.kh; ++kh) {
          const std::int64_t ih = oh * g.sh - g.pad_top + kh;
          if (ih < 0 || ih >= g.h) continue;
          for (int kw = 0; kw < g.kw; ++kw) {
            const std::int64_t iw = ow * g.sw - g.pad_left + kw;
            if (iw < 0 || iw >= g.w) continue;
            const double* in = x + ((n * g.h + ih) * g.w + iw) * g.c;
            const double* wk = w + (static_cast<std::int64_t>(kh) * g.kw + kw) * g.c;
            for (std::int64_t c = 0; c < g.c; ++c) out[c] += in[c] * wk[c];
          }
        }
      }
    }
  }
}

void dw_backward(const Window& g, const double* x, const double* w, const double* gy, double* gx,
                 double* gw, double* gb) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        const double* go = gy + ((n * g.out_h + oh) * g.out_w + ow) * g.c;
        if (gb) {
          for (std::int64_t c = 0; c < g.c; ++c) gb[c] += go[c];
        }
        for (int kh = 0; kh < g.kh; ++kh) {
          const std::int64_t ih = oh * g.sh - g.pad_top + kh;
          if (ih < 0 || ih >= g.h) continue;
          for (int kw = 0; kw < g.kw; ++kw) {
            const std::int64_t iw = ow * g.sw - g.pad_left + kw;
            if (iw < 0 || iw >= g.w) continue;
            const std::int64_t in_off = ((n * g.h + ih) * g.w + iw) * g.c;
            const std::int64_t w_off = (static_cast<std::int64_t>(kh) * g.kw + kw) * g.c;
            for (std::int64_t c = 0; c < g.c; ++c) {
              if (gx) gx[in_off + c] += go[c] * w[w_off + c];
              if (gw) gw[w_off + c] += x[in_off + c] * go[c];
            }
          }
        }
      }
    }
  }
}

// ---- pooling (valid padding) ----

void pool_forward(bool average, const Window& g, const double* x, double* y) {
  const double inv_area = 1.0 / (static_cast<double>(g.kh) * g.kw);
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        double* out = y + ((n * g.out_h + oh) * g.out_w + ow) * g.c;
        for (std::int64_t c = 0; c < g.c; ++c) {
          out[c] = average ? 0.0 : -std::numeric_limits<double>::infinity();
        }
        for (int kh = 0; kh < g.kh; ++kh) {
          const std::int64_t ih = oh * g.sh + kh;
          for (int kw = 0; kw < g.kw; ++kw) {
            const std::int64_t iw = ow * g.sw + kw;
            const double* in = x + ((n * g.h + ih) * g.w + iw) * g.c;
            for (std::int64_t c = 0; c < g.c; ++c) {
              if (average) {
                out[c] += in[c];
              } else if (in[c] > out[c]) {
                out[c] = in[c];
              }
            }
          }
        }
        if (average) {
          for (std::int64_t c = 0; c < g.c; ++c) out[c] *= inv_area;
        }
      }
    }
  }
}

void pool_backward(bool average, const Window& g, const double* x, const double* gy, double* gx) {
  const double inv_area = 1.0 / (static_cast<double>(g.kh) * g.kw);
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        const double* go = gy + ((n * g.out_h + oh) * g.out_w + ow) * g.c;
        for (std::int64_t c = 0; c < g.c; ++c) {
          if (average) {
            for (int kh = 0; kh < g.kh; ++kh) {
              for (int kw = 0; kw < g.kw; ++kw) {
                const std::int64_t off = ((n * g.h + oh * g.sh + kh) * g.w + ow * g.sw + kw) * g.c;
                gx[off + c] += go[c] * inv_area;
              }
            }
          } else {
            // Gradient goes to the first maximal element of the window.
            std::int64_t best = -1;
            double best_v = -std::numeric_limits<double>::infinity();
            for (int kh = 0; kh < g.kh; ++kh) {
              for (int kw = 0; kw < g.kw; ++kw) {
                const std::int64_t off = ((n * g.h + oh * g.sh + kh) * g.w + ow * g.sw + kw) * g.c;
                if (best < 0 || x[off + c] > best_v) {
                  best = off + c;
                  best_v = x[off + c];
                }
              }
            }
            gx[best] += go[c];
          }
        }
      }
    }
  }
}

double bn_scale(const Layer& layer, std::int64_t c) {
  return layer.gamma[c] / std::sqrt(layer.variance[c] + layer.epsilon);
}

}  // namespace

Tensor layer_forward(const Layer& layer, std::span<const Tensor* const> inputs,
                     const Tensor& weight) {
  switch (layer.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kConv1d: {
      const Tensor& x = single_input(layer, inputs);
      const Window g = make_window(layer, x, layer.out_channels, layer.padding);
      if (weight.size() != static_cast<std::int64_t>(g.kh) * g.kw * g.c * g.out_c) {
        fail(layer, "weight does not match input channels " + std::to_string(g.c));
      }
      Tensor y(window_output_shape(x, g));
      conv_forward(layer, g, x.data(), weight.data(), y.data());
      return y;
    }
    case LayerKind::kDepthwiseConv2d: {
      const Tensor& x = single_input(layer, inputs);
      const Window g = make_window(layer, x, x.dim(-1), layer.padding);
      if (weight.size() != static_cast<std::int64_t>(g.kh) * g.kw * g.c) {
        fail(layer, "weight does not match input channels " + std::to_string(g.c));
      }
      Tensor y(window_output_shape(x, g));
      dw_forward(layer, g, x.data(), weight.data(), y.data());
      return y;
    }
    case LayerKind::kFullyConnected: {
      const Tensor& x = single_input(layer, inputs);
      if (x.rank() != 2) fail(layer, "expected N x C input, got " + shape_string(x.shape()));
      const std::int64_t n = x.dim(0), cin = x.dim(1), cout = layer.out_channels;
      if (weight.size() != cin * cout) fail(layer, "weight does not match input features");
      Tensor y({n, cout});
      for (std::int64_t i = 0; i < n; ++i) {
        double* out = y.data() + i * cout;
        for (std::int64_t co = 0; co < cout; ++co) out[co] = bias_at(layer, co);
        const double* in = x.data() + i * cin;
        for (std::int64_t ci = 0; ci < cin; ++ci) {
          const double v = in[ci];
          const double* wr = weight.data() + ci * cout;
          for (std::int64_t co = 0; co < cout; ++co) out[co] += v * wr[co];
        }
      }
      return y;
    }
    case LayerKind::kAvgPool:
    case LayerKind::kMaxPool: {
      const Tensor& x = single_input(layer, inputs);
      const Window g = make_window(layer, x, x.dim(-1), Padding::kValid);
      Tensor y(window_output_shape(x, g));
      pool_forward(layer.kind == LayerKind::kAvgPool, g, x.data(), y.data());
      return y;
    }
    case LayerKind::kRelu: {
      Tensor y = single_input(layer, inputs);
      for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
      return y;
    }
    case LayerKind::kBatchNorm: {
      Tensor y = single_input(layer, inputs);
      const std::int64_t c = y.dim(-1);
      if (layer.gamma.size() != c) fail(layer, "channel count mismatch");
      for (std::int64_t i = 0; i < y.size(); ++i) {
        const std::int64_t ch = i % c;
        y[i] = (y[i] - layer.mean[ch]) * bn_scale(layer, ch) + layer.beta[ch];
      }
      return y;
    }
    case LayerKind::kAdd: {
      if (inputs.size() != 2 || !inputs[0] || !inputs[1]) fail(layer, "expected two inputs");
      if (inputs[0]->shape() != inputs[1]->shape()) {
        fail(layer, "operand shapes differ: " + shape_string(inputs[0]->shape()) + " vs " +
                        shape_string(inputs[1]->shape()));
      }
      Tensor y = *inputs[0];
      for (std::int64_t i = 0; i < y.size(); ++i) y[i] += (*inputs[1])[i];
      return y;
    }
    case LayerKind::kFlatten: {
      const Tensor& x = single_input(layer, inputs);
      if (x.rank() < 1) fail(layer, "flatten needs a batch axis");
      const std::int64_t n = x.dim(0);
      return x.reshaped({n, n ? x.size() / n : 0});
    }
  }
  fail(layer, "unknown layer kind");
}

LayerGradients layer_backward(const Layer& layer, std::span<const Tensor* const> inputs,
                              const Tensor& weight, const Tensor& output,
                              const Tensor& grad_output, GradRequest request) {
  if (grad_output.shape() != output.shape()) {
    fail(layer, "upstream gradient shape " + shape_string(grad_output.shape()) +
                    " does not match output " + shape_string(output.shape()));
  }
  LayerGradients grads;
  grads.inputs.resize(inputs.size());
  switch (layer.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kConv1d:
    case LayerKind::kDepthwiseConv2d: {
      const Tensor& x = single_input(layer, inputs);
      const bool dw = layer.kind == LayerKind::kDepthwiseConv2d;
      const Window g = make_window(layer, x, dw ? x.dim(-1) : layer.out_channels, layer.padding);
      double* gx = nullptr;
      double* gw = nullptr;
      double* gb = nullptr;
      if (request.inputs) {
        grads.inputs[0] = Tensor(x.shape());
        gx = grads.inputs[0].data();
      }
      if (request.weight) {
        grads.weight = Tensor(weight.shape());
        gw = grads.weight.data();
      }
      if (request.bias) {
        grads.bias = Tensor({g.out_c});
        gb = grads.bias.data();
      }
      if (dw) {
        dw_backward(g, x.data(), weight.data(), grad_output.data(), gx, gw, gb);
      } else {
        conv_backward(g, x.data(), weight.data(), grad_output.data(), gx, gw, gb);
      }
      return grads;
    }
    case LayerKind::kFullyConnected: {
      const Tensor& x = single_input(layer, inputs);
      const std::int64_t n = x.dim(0), cin = x.dim(1), cout = layer.out_channels;
      if (request.inputs) grads.inputs[0] = Tensor(x.shape());
      if (request.weight) grads.weight = Tensor(weight.shape());
      if (request.bias) grads.bias = Tensor({cout});
      for (std::int64_t i = 0; i < n; ++i) {
        const double* go = grad_output.data() + i * cout;
        const double* in = x.data() + i * cin;
        if (request.bias) {
          for (std::int64_t co = 0; co < cout; ++co) grads.bias[co] += go[co];
        }
        for (std::int64_t ci = 0; ci < cin; ++ci) {
          const double* wr = weight.data() + ci * cout;
          if (request.inputs) {
            double acc = 0.0;
            for (std::int64_t co = 0; co < cout; ++co) acc += go[co] * wr[co];
            grads.inputs[0][i * cin + ci] = acc;
          }
          if (request.weight) {
            double* gwr = grads.weight.data() + ci * cout;
            for (std::int64_t co = 0; co < cout; ++co) gwr[co] += in[ci] * go[co];
          }
        }
      }
      return grads;
    }
    case LayerKind::kAvgPool:
    case LayerKind::kMaxPool: {
      const Tensor& x = single_input(layer, inputs);
      if (!request.inputs) return grads;
      const Window g = make_window(layer, x, x.dim(-1), Padding::kValid);
      grads.inputs[0] = Tensor(x.shape());
      pool_backward(layer.kind == LayerKind::kAvgPool, g, x.data(), grad_output.data(),
                    grads.inputs[0].data());
      return grads;
    }
    case LayerKind::kRelu: {
      const Tensor& x = single_input(layer, inputs);
      if (!request.inputs) return grads;
      Tensor gx = grad_output;
      for (std::int64_t i = 0; i < gx.size(); ++i) {
        if (!(x[i] > 0.0)) gx[i] = 0.0;
      }
      grads.inputs[0] = std::move(gx);
      return grads;
    }
    case LayerKind::kBatchNorm: {
      if (!request.inputs) return grads;
      Tensor gx = grad_output;
      const std::int64_t c = gx.dim(-1);
      for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] *= bn_scale(layer, i % c);
      grads.inputs[0] = std::move(gx);
      return grads;
    }
    case LayerKind::kAdd: {
      if (!request.inputs) return grads;
      grads.inputs[0] = grad_output;
      grads.inputs[1] = grad_output;
      return grads;
    }
    case LayerKind::kFlatten: {
      const Tensor& x = single_input(layer, inputs);
      if (request.inputs) grads.inputs[0] = grad_output.reshaped(x.shape());
      return grads;
    }
  }
  fail(layer, "unknown layer kind");
}

}  // namespace tinyptq
