#include "fairfader/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace fairfader {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    FF_CHECK_ARG(e > 0, "shape extent must be positive, got %lld", (long long)e);
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int64_t conv_out_extent(int64_t in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

int64_t deconv_out_extent(int64_t in, int k, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + k;
}

// ---- factories ----

template <typename S>
TensorPtrT<S> make_tensor(Shape shape, std::vector<S> values, bool requires_grad) {
  const int64_t n = shape_numel(shape);
  FF_CHECK_ARG(n == (int64_t)values.size(), "tensor %s expects %lld values, got %zu",
               shape_str(shape).c_str(), (long long)n, values.size());
  auto t = std::make_shared<TensorT<S>>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

template <typename S>
TensorPtrT<S> zeros(Shape shape, bool requires_grad) {
  return full<S>(std::move(shape), S(0), requires_grad);
}

template <typename S>
TensorPtrT<S> full(Shape shape, S value, bool requires_grad) {
  const int64_t n = shape_numel(shape);
  auto t = std::make_shared<TensorT<S>>();
  t->shape = std::move(shape);
  t->values.assign((size_t)n, value);
  t->requires_grad = requires_grad;
  return t;
}

template <typename S>
TensorPtrT<S> scalar_tensor(S value, bool requires_grad) {
  return make_tensor<S>({1}, {value}, requires_grad);
}

template <typename S>
TensorPtrT<S> uniform(Shape shape, S lo, S hi, std::mt19937& rng, bool requires_grad) {
  auto t = zeros<S>(std::move(shape), requires_grad);
  std::uniform_real_distribution<double> dist((double)lo, (double)hi);
  for (auto& v : t->values) v = (S)dist(rng);
  return t;
}

template <typename S>
TensorPtrT<S> clone(const TensorPtrT<S>& t) {
  auto c = std::make_shared<TensorT<S>>(*t);
  return c;
}

// ---- tape ----

template <typename S>
void GraphT<S>::record(const char* op, TensorPtrT<S> out, std::function<void()> backward_fn) {
  nodes_.push_back(Node{op, std::move(out), std::move(backward_fn)});
}

template <typename S>
void GraphT<S>::backward(const TensorPtrT<S>& loss) {
  FF_CHECK_ARG(loss && loss->numel() == 1, "backward: loss must be a scalar tensor, got %s",
               loss ? shape_str(loss->shape).c_str() : "null");
  loss->ensure_grad();
  loss->grad[0] += S(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->out->requires_grad) continue;
    it->out->ensure_grad();
    it->fn();
  }
}

template <typename S>
void GraphT<S>::clear() {
  nodes_.clear();
}

// ---- scratch buffers (single training context per thread) ----

template <typename S>
static std::vector<S>& scratch(int which) {
  thread_local std::vector<S> bufs[3];
  auto& b = bufs[which];
  return b;
}

// ---- matmul micro-kernels (row-major) ----

// C[M,N] (+)= A[M,K] @ B[K,N]
template <typename S>
static void mm_nn(int64_t M, int64_t N, int64_t K, const S* __restrict a, const S* __restrict b,
                  S* __restrict c, bool accumulate) {
  if (!accumulate) std::fill(c, c + M * N, S(0));
  for (int64_t i = 0; i < M; ++i) {
    const S* arow = a + i * K;
    S* crow = c + i * N;
    for (int64_t k = 0; k < K; ++k) {
      const S av = arow[k];
      const S* brow = b + k * N;
      for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] (+)= A[K,M]^T @ B[K,N]
template <typename S>
static void mm_tn(int64_t M, int64_t N, int64_t K, const S* __restrict a, const S* __restrict b,
                  S* __restrict c, bool accumulate) {
  if (!accumulate) std::fill(c, c + M * N, S(0));
  for (int64_t k = 0; k < K; ++k) {
    const S* arow = a + k * M;
    const S* brow = b + k * N;
    for (int64_t i = 0; i < M; ++i) {
      const S av = arow[i];
      S* crow = c + i * N;
      for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] (+)= A[M,K] @ B[N,K]^T
template <typename S>
static void mm_nt(int64_t M, int64_t N, int64_t K, const S* __restrict a, const S* __restrict b,
                  S* __restrict c, bool accumulate) {
  for (int64_t i = 0; i < M; ++i) {
    const S* arow = a + i * K;
    S* crow = c + i * N;
    for (int64_t j = 0; j < N; ++j) {
      const S* brow = b + j * K;
      S acc = S(0);
      for (int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

// ---- im2col / col2im ----

// image [C,H,W] -> col [C*k*k, OH*OW]; out-of-bounds taps are zero.
template <typename S>
static void im2col(const S* img, int64_t C, int64_t H, int64_t W, int k, int s, int p, int64_t OH,
                   int64_t OW, S* col) {
  const int64_t plane = H * W;
  int64_t r = 0;
  for (int64_t c = 0; c < C; ++c) {
    const S* src = img + c * plane;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw, ++r) {
        S* dst = col + r * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t ih = oh * s - p + kh;
          S* drow = dst + oh * OW;
          if (ih < 0 || ih >= H) {
            std::fill(drow, drow + OW, S(0));
            continue;
          }
          const S* srow = src + ih * W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int64_t iw = ow * s - p + kw;
            drow[ow] = (iw >= 0 && iw < W) ? srow[iw] : S(0);
          }
        }
      }
    }
  }
}

// col [C*k*k, OH*OW] scatter-added back into image [C,H,W].
template <typename S>
static void col2im_add(const S* col, int64_t C, int64_t H, int64_t W, int k, int s, int p,
                       int64_t OH, int64_t OW, S* img) {
  const int64_t plane = H * W;
  int64_t r = 0;
  for (int64_t c = 0; c < C; ++c) {
    S* dst = img + c * plane;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw, ++r) {
        const S* src = col + r * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t ih = oh * s - p + kh;
          if (ih < 0 || ih >= H) continue;
          const S* srow = src + oh * OW;
          S* drow = dst + ih * W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int64_t iw = ow * s - p + kw;
            if (iw >= 0 && iw < W) drow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

// ---- op helpers ----

template <typename S>
static bool want_tape(GraphT<S>* g, std::initializer_list<const TensorPtrT<S>*> inputs) {
  if (!g) return false;
  for (auto* t : inputs)
    if (*t && (*t)->requires_grad) return true;
  return false;
}

static void check_rank(const Shape& shape, size_t rank, const char* op, const char* arg) {
  FF_CHECK_ARG(shape.size() == rank, "%s: %s must have rank %zu, got %s", op, arg, rank,
               shape_str(shape).c_str());
}

// ---- conv2d ----

template <typename S>
static void check_conv_geometry(const char* op, const Shape& in, const Shape& w, const Shape& b,
                                int stride, int pad, bool transposed) {
  check_rank(in, 4, op, "input");
  check_rank(w, 4, op, "weight");
  check_rank(b, 1, op, "bias");
  FF_CHECK_ARG(stride >= 1, "%s: stride must be >= 1, got %d", op, stride);
  FF_CHECK_ARG(pad >= 0, "%s: pad must be >= 0, got %d", op, pad);
  FF_CHECK_ARG(w[2] == w[3], "%s: kernel must be square, got %lldx%lld", op, (long long)w[2],
               (long long)w[3]);
  if (!transposed) {
    FF_CHECK_ARG(in[1] == w[1], "%s: input channel extent %lld does not match weight C_in %lld", op,
                 (long long)in[1], (long long)w[1]);
    FF_CHECK_ARG(b[0] == w[0], "%s: bias extent %lld does not match weight C_out %lld", op,
                 (long long)b[0], (long long)w[0]);
    FF_CHECK_ARG(in[2] + 2 * pad >= w[2] && in[3] + 2 * pad >= w[2],
                 "%s: spatial extents %lldx%lld plus 2*pad=%d are smaller than kernel %lld", op,
                 (long long)in[2], (long long)in[3], 2 * pad, (long long)w[2]);
  } else {
    FF_CHECK_ARG(in[1] == w[0], "%s: input channel extent %lld does not match weight A extent %lld",
                 op, (long long)in[1], (long long)w[0]);
    FF_CHECK_ARG(b[0] == w[1], "%s: bias extent %lld does not match weight B extent %lld", op,
                 (long long)b[0], (long long)w[1]);
    FF_CHECK_ARG(deconv_out_extent(in[2], (int)w[2], stride, pad) >= 1 &&
                     deconv_out_extent(in[3], (int)w[2], stride, pad) >= 1,
                 "%s: output spatial extent would be empty for input %lldx%lld", op,
                 (long long)in[2], (long long)in[3]);
  }
}

template <typename S>
TensorPtrT<S> conv2d(GraphT<S>* g, const TensorPtrT<S>& input, const TensorPtrT<S>& weight,
                     const TensorPtrT<S>& bias, int stride, int pad) {
  check_conv_geometry<S>("conv2d", input->shape, weight->shape, bias->shape, stride, pad, false);
  const int64_t N = input->shape[0], Ci = input->shape[1], H = input->shape[2], W = input->shape[3];
  const int64_t Co = weight->shape[0];
  const int k = (int)weight->shape[2];
  const int64_t OH = conv_out_extent(H, k, stride, pad);
  const int64_t OW = conv_out_extent(W, k, stride, pad);
  const int64_t ckk = Ci * k * k, ohw = OH * OW;

  auto out = zeros<S>({N, Co, OH, OW});
  auto& col = scratch<S>(0);
  col.resize((size_t)(ckk * ohw));
  for (int64_t n = 0; n < N; ++n) {
    im2col(input->data() + n * Ci * H * W, Ci, H, W, k, stride, pad, OH, OW, col.data());
    S* on = out->data() + n * Co * ohw;
    mm_nn(Co, ohw, ckk, weight->data(), col.data(), on, false);
    for (int64_t c = 0; c < Co; ++c) {
      const S bv = bias->values[(size_t)c];
      S* row = on + c * ohw;
      for (int64_t i = 0; i < ohw; ++i) row[i] += bv;
    }
  }

  if (want_tape<S>(g, {&input, &weight, &bias})) {
    out->requires_grad = true;
    auto in = input, w = weight, b = bias;
    auto o = out;
    g->record("conv2d", out, [in, w, b, o, stride, pad, k, N, Ci, Co, H, W, OH, OW, ckk, ohw]() {
      auto& gcol = scratch<S>(1);
      auto& colb = scratch<S>(2);
      if (in->requires_grad) in->ensure_grad();
      if (w->requires_grad) w->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (int64_t n = 0; n < N; ++n) {
        const S* gout = o->grad.data() + n * Co * ohw;
        if (b->requires_grad) {
          for (int64_t c = 0; c < Co; ++c) {
            double acc = 0;
            const S* row = gout + c * ohw;
            for (int64_t i = 0; i < ohw; ++i) acc += row[i];
            b->grad[(size_t)c] += (S)acc;
          }
        }
        if (w->requires_grad) {
          colb.resize((size_t)(ckk * ohw));
          im2col(in->data() + n * Ci * H * W, Ci, H, W, k, stride, pad, OH, OW, colb.data());
          mm_nt(Co, ckk, ohw, gout, colb.data(), w->grad.data(), true);
        }
        if (in->requires_grad) {
          gcol.resize((size_t)(ckk * ohw));
          mm_tn(ckk, ohw, Co, w->data(), gout, gcol.data(), false);
          col2im_add(gcol.data(), Ci, H, W, k, stride, pad, OH, OW,
                     in->grad.data() + n * Ci * H * W);
        }
      }
    });
  }
  return out;
}

// ---- deconv2d ----

template <typename S>
TensorPtrT<S> deconv2d(GraphT<S>* g, const TensorPtrT<S>& input, const TensorPtrT<S>& weight,
                       const TensorPtrT<S>& bias, int stride, int pad) {
  check_conv_geometry<S>("deconv2d", input->shape, weight->shape, bias->shape, stride, pad, true);
  const int64_t N = input->shape[0], A = input->shape[1], H = input->shape[2], W = input->shape[3];
  const int64_t B = weight->shape[1];
  const int k = (int)weight->shape[2];
  const int64_t OH = deconv_out_extent(H, k, stride, pad);
  const int64_t OW = deconv_out_extent(W, k, stride, pad);
  const int64_t bkk = B * k * k, ihw = H * W, ohw = OH * OW;

  auto out = zeros<S>({N, B, OH, OW});
  auto& col = scratch<S>(0);
  col.resize((size_t)(bkk * ihw));
  for (int64_t n = 0; n < N; ++n) {
    // col[B*k*k, H*W] = W^T @ x_n, then scatter to the upsampled grid
    mm_tn(bkk, ihw, A, weight->data(), input->data() + n * A * ihw, col.data(), false);
    S* on = out->data() + n * B * ohw;
    col2im_add(col.data(), B, OH, OW, k, stride, pad, H, W, on);
    for (int64_t c = 0; c < B; ++c) {
      const S bv = bias->values[(size_t)c];
      S* row = on + c * ohw;
      for (int64_t i = 0; i < ohw; ++i) row[i] += bv;
    }
  }

  if (want_tape<S>(g, {&input, &weight, &bias})) {
    out->requires_grad = true;
    auto in = input, w = weight, b = bias;
    auto o = out;
    g->record("deconv2d", out, [in, w, b, o, stride, pad, k, N, A, B, H, W, OH, OW, bkk, ihw,
                                ohw]() {
      auto& gcol = scratch<S>(1);
      if (in->requires_grad) in->ensure_grad();
      if (w->requires_grad) w->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (int64_t n = 0; n < N; ++n) {
        const S* gout = o->grad.data() + n * B * ohw;
        if (b->requires_grad) {
          for (int64_t c = 0; c < B; ++c) {
            double acc = 0;
            const S* row = gout + c * ohw;
            for (int64_t i = 0; i < ohw; ++i) acc += row[i];
            b->grad[(size_t)c] += (S)acc;
          }
        }
        if (in->requires_grad || w->requires_grad) {
          gcol.resize((size_t)(bkk * ihw));
          im2col(gout, B, OH, OW, k, stride, pad, H, W, gcol.data());
          if (in->requires_grad)
            mm_nn(A, ihw, bkk, w->data(), gcol.data(), in->grad.data() + n * A * ihw, true);
          if (w->requires_grad)
            mm_nt(A, bkk, ihw, in->data() + n * A * ihw, gcol.data(), w->grad.data(), true);
        }
      }
    });
  }
  return out;
}

// ---- batchnorm2d ----

template <typename S>
BatchNormState<S> make_batchnorm_state(int64_t channels) {
  BatchNormState<S> st;
  st.running_mean = zeros<S>({channels});
  st.running_var = full<S>({channels}, S(1));
  return st;
}

template <typename S>
TensorPtrT<S> batchnorm2d(GraphT<S>* g, const TensorPtrT<S>& input, const TensorPtrT<S>& gamma,
                          const TensorPtrT<S>& beta, BatchNormState<S>& state, Mode mode) {
  check_rank(input->shape, 4, "batchnorm2d", "input");
  const int64_t N = input->shape[0], C = input->shape[1], H = input->shape[2], W = input->shape[3];
  FF_CHECK_ARG(gamma->numel() == C && beta->numel() == C,
               "batchnorm2d: gamma/beta extent must be %lld", (long long)C);
  FF_CHECK_ARG(state.running_mean->numel() == C && state.running_var->numel() == C,
               "batchnorm2d: running state extent must be %lld", (long long)C);
  FF_CHECK_ARG(mode == Mode::Eval || N >= 2,
               "batchnorm2d: train mode requires batch size >= 2, got %lld (variance degenerate)",
               (long long)N);

  const int64_t plane = H * W;
  const int64_t m = N * plane;
  std::vector<S> mean((size_t)C), inv_std((size_t)C);

  if (mode == Mode::Train) {
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0;
      for (int64_t n = 0; n < N; ++n) {
        const S* row = input->data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) acc += row[i];
      }
      const double mu = acc / (double)m;
      double vacc = 0;
      for (int64_t n = 0; n < N; ++n) {
        const S* row = input->data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double d = row[i] - mu;
          vacc += d * d;
        }
      }
      const double var = vacc / (double)m;
      mean[(size_t)c] = (S)mu;
      inv_std[(size_t)c] = (S)(1.0 / std::sqrt(var + (double)state.eps));
      const double mom = (double)state.momentum;
      auto& rm = state.running_mean->values[(size_t)c];
      auto& rv = state.running_var->values[(size_t)c];
      rm = (S)((1.0 - mom) * rm + mom * mu);
      rv = (S)((1.0 - mom) * rv + mom * var * (double)m / (double)(m - 1));
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[(size_t)c] = state.running_mean->values[(size_t)c];
      inv_std[(size_t)c] =
          (S)(1.0 / std::sqrt((double)state.running_var->values[(size_t)c] + (double)state.eps));
    }
  }

  auto out = zeros<S>({N, C, H, W});
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const S mu = mean[(size_t)c], is = inv_std[(size_t)c];
      const S ga = gamma->values[(size_t)c], be = beta->values[(size_t)c];
      const S* src = input->data() + (n * C + c) * plane;
      S* dst = out->data() + (n * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] = ga * (src[i] - mu) * is + be;
    }
  }

  if (want_tape<S>(g, {&input, &gamma, &beta})) {
    out->requires_grad = true;
    auto in = input, ga = gamma, be = beta;
    auto o = out;
    const bool train = mode == Mode::Train;
    g->record("batchnorm2d", out, [in, ga, be, o, mean, inv_std, train, N, C, plane, m]() {
      if (in->requires_grad) in->ensure_grad();
      if (ga->requires_grad) ga->ensure_grad();
      if (be->requires_grad) be->ensure_grad();
      for (int64_t c = 0; c < C; ++c) {
        const S mu = mean[(size_t)c], is = inv_std[(size_t)c];
        const S gav = ga->values[(size_t)c];
        double sum_gy = 0, sum_gy_xhat = 0;
        for (int64_t n = 0; n < N; ++n) {
          const S* gy = o->grad.data() + (n * C + c) * plane;
          const S* x = in->data() + (n * C + c) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            sum_gy += gy[i];
            sum_gy_xhat += gy[i] * (x[i] - mu) * is;
          }
        }
        if (ga->requires_grad) ga->grad[(size_t)c] += (S)sum_gy_xhat;
        if (be->requires_grad) be->grad[(size_t)c] += (S)sum_gy;
        if (!in->requires_grad) continue;
        if (train) {
          const double k = (double)gav * is / (double)m;
          for (int64_t n = 0; n < N; ++n) {
            const S* gy = o->grad.data() + (n * C + c) * plane;
            const S* x = in->data() + (n * C + c) * plane;
            S* gx = in->grad.data() + (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              const double xhat = (x[i] - mu) * is;
              gx[i] += (S)(k * ((double)m * gy[i] - sum_gy - xhat * sum_gy_xhat));
            }
          }
        } else {
          const S k = gav * is;
          for (int64_t n = 0; n < N; ++n) {
            const S* gy = o->grad.data() + (n * C + c) * plane;
            S* gx = in->grad.data() + (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) gx[i] += k * gy[i];
          }
        }
      }
    });
  }
  return out;
}

// ---- activation ----

template <typename S>
TensorPtrT<S> activation(GraphT<S>* g, const TensorPtrT<S>& input, Act act) {
  auto out = zeros<S>(input->shape);
  const size_t n = input->values.size();
  const S slope = (S)act.slope;
  switch (act.kind) {
    case ActKind::Relu:
      for (size_t i = 0; i < n; ++i) out->values[i] = input->values[i] > S(0) ? input->values[i] : S(0);
      break;
    case ActKind::LeakyRelu:
      for (size_t i = 0; i < n; ++i) {
        const S v = input->values[i];
        out->values[i] = v > S(0) ? v : slope * v;
      }
      break;
    case ActKind::Tanh:
      for (size_t i = 0; i < n; ++i) out->values[i] = std::tanh(input->values[i]);
      break;
  }
  if (want_tape<S>(g, {&input})) {
    out->requires_grad = true;
    auto in = input;
    auto o = out;
    g->record("activation", out, [in, o, act, slope, n]() {
      in->ensure_grad();
      switch (act.kind) {
        case ActKind::Relu:
          for (size_t i = 0; i < n; ++i)
            if (in->values[i] > S(0)) in->grad[i] += o->grad[i];
          break;
        case ActKind::LeakyRelu:
          for (size_t i = 0; i < n; ++i)
            in->grad[i] += in->values[i] > S(0) ? o->grad[i] : slope * o->grad[i];
          break;
        case ActKind::Tanh:
          for (size_t i = 0; i < n; ++i) in->grad[i] += (S(1) - o->values[i] * o->values[i]) * o->grad[i];
          break;
      }
    });
  }
  return out;
}

// ---- maxpool2d ----

template <typename S>
TensorPtrT<S> maxpool2d(GraphT<S>* g, const TensorPtrT<S>& input, int window) {
  check_rank(input->shape, 4, "maxpool2d", "input");
  FF_CHECK_ARG(window >= 1, "maxpool2d: window must be >= 1, got %d", window);
  const int64_t N = input->shape[0], C = input->shape[1], H = input->shape[2], W = input->shape[3];
  FF_CHECK_ARG(H % window == 0 && W % window == 0,
               "maxpool2d: spatial extents %lldx%lld not divisible by window %d", (long long)H,
               (long long)W, window);
  const int64_t OH = H / window, OW = W / window;
  auto out = zeros<S>({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<int64_t>>((size_t)(N * C * OH * OW));
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const S* src = input->data() + nc * H * W;
    S* dst = out->data() + nc * OH * OW;
    int64_t* am = argmax->data() + nc * OH * OW;
    for (int64_t oh = 0; oh < OH; ++oh) {
      for (int64_t ow = 0; ow < OW; ++ow) {
        S best = -std::numeric_limits<S>::infinity();
        int64_t besti = -1;
        for (int h = 0; h < window; ++h) {
          for (int w = 0; w < window; ++w) {
            const int64_t idx = (oh * window + h) * W + ow * window + w;
            if (src[idx] > best) {
              best = src[idx];
              besti = idx;
            }
          }
        }
        dst[oh * OW + ow] = best;
        am[oh * OW + ow] = besti;
      }
    }
  }
  if (want_tape<S>(g, {&input})) {
    out->requires_grad = true;
    auto in = input;
    auto o = out;
    g->record("maxpool2d", out, [in, o, argmax, N, C, H, W, OH, OW]() {
      in->ensure_grad();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const S* gy = o->grad.data() + nc * OH * OW;
        const int64_t* am = argmax->data() + nc * OH * OW;
        S* gx = in->grad.data() + nc * H * W;
        for (int64_t i = 0; i < OH * OW; ++i) gx[am[i]] += gy[i];
      }
    });
  }
  return out;
}

// ---- linear ----

template <typename S>
TensorPtrT<S> linear(GraphT<S>* g, const TensorPtrT<S>& input, const TensorPtrT<S>& weight,
                     const TensorPtrT<S>& bias) {
  check_rank(input->shape, 2, "linear", "input");
  check_rank(weight->shape, 2, "linear", "weight");
  check_rank(bias->shape, 1, "linear", "bias");
  const int64_t N = input->shape[0], D = input->shape[1];
  const int64_t Dout = weight->shape[0];
  FF_CHECK_ARG(weight->shape[1] == D, "linear: input width %lld does not match weight width %lld",
               (long long)D, (long long)weight->shape[1]);
  FF_CHECK_ARG(bias->shape[0] == Dout, "linear: bias extent %lld does not match weight D_out %lld",
               (long long)bias->shape[0], (long long)Dout);
  auto out = zeros<S>({N, Dout});
  mm_nt(N, Dout, D, input->data(), weight->data(), out->data(), false);
  for (int64_t i = 0; i < N; ++i) {
    S* row = out->data() + i * Dout;
    for (int64_t j = 0; j < Dout; ++j) row[j] += bias->values[(size_t)j];
  }
  if (want_tape<S>(g, {&input, &weight, &bias})) {
    out->requires_grad = true;
    auto in = input, w = weight, b = bias;
    auto o = out;
    g->record("linear", out, [in, w, b, o, N, D, Dout]() {
      if (in->requires_grad) {
        in->ensure_grad();
        mm_nn(N, D, Dout, o->grad.data(), w->data(), in->grad.data(), true);
      }
      if (w->requires_grad) {
        w->ensure_grad();
        mm_tn(Dout, D, N, o->grad.data(), in->data(), w->grad.data(), true);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t i = 0; i < N; ++i) {
          const S* row = o->grad.data() + i * Dout;
          for (int64_t j = 0; j < Dout; ++j) b->grad[(size_t)j] += row[j];
        }
      }
    });
  }
  return out;
}

// ---- dropout ----

template <typename S>
TensorPtrT<S> dropout(GraphT<S>* g, const TensorPtrT<S>& input, double rate, Mode mode,
                      std::mt19937& rng) {
  FF_CHECK_ARG(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0,1), got %g", rate);
  if (mode == Mode::Eval || rate == 0.0) {
    auto out = make_tensor<S>(input->shape, input->values);
    if (want_tape<S>(g, {&input})) {
      out->requires_grad = true;
      auto in = input;
      auto o = out;
      g->record("dropout", out, [in, o]() {
        in->ensure_grad();
        for (size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += o->grad[i];
      });
    }
    return out;
  }
  const S inv = (S)(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<S>>(input->values.size());
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (auto& mv : *mask) mv = dist(rng) < rate ? S(0) : inv;
  auto out = zeros<S>(input->shape);
  for (size_t i = 0; i < input->values.size(); ++i) out->values[i] = input->values[i] * (*mask)[i];
  if (want_tape<S>(g, {&input})) {
    out->requires_grad = true;
    auto in = input;
    auto o = out;
    g->record("dropout", out, [in, o, mask]() {
      in->ensure_grad();
      for (size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += o->grad[i] * (*mask)[i];
    });
  }
  return out;
}

// ---- losses ----

template <typename S>
TensorPtrT<S> mse_loss(GraphT<S>* g, const TensorPtrT<S>& pred, const TensorPtrT<S>& target) {
  FF_CHECK_ARG(pred->shape == target->shape, "mse_loss: shape mismatch %s vs %s",
               shape_str(pred->shape).c_str(), shape_str(target->shape).c_str());
  const size_t n = pred->values.size();
  double acc = 0;
  for (size_t i = 0; i < n; ++i) {
    const double d = (double)pred->values[i] - (double)target->values[i];
    acc += d * d;
  }
  auto out = scalar_tensor<S>((S)(acc / (double)n));
  if (want_tape<S>(g, {&pred, &target})) {
    out->requires_grad = true;
    auto p = pred, t = target;
    auto o = out;
    g->record("mse_loss", out, [p, t, o, n]() {
      const S go = o->grad[0];
      const S c = (S)(2.0 / (double)n) * go;
      if (p->requires_grad) {
        p->ensure_grad();
        for (size_t i = 0; i < n; ++i) p->grad[i] += c * (p->values[i] - t->values[i]);
      }
      if (t->requires_grad) {
        t->ensure_grad();
        for (size_t i = 0; i < n; ++i) t->grad[i] -= c * (p->values[i] - t->values[i]);
      }
    });
  }
  return out;
}

// log-sum-exp of one row, max-shifted.
template <typename S>
static double row_lse(const S* row, int64_t K, double& maxv) {
  maxv = -std::numeric_limits<double>::infinity();
  for (int64_t k = 0; k < K; ++k) maxv = std::max(maxv, (double)row[k]);
  double acc = 0;
  for (int64_t k = 0; k < K; ++k) acc += std::exp((double)row[k] - maxv);
  return maxv + std::log(acc);
}

template <typename S>
TensorPtrT<S> softmax_nll(GraphT<S>* g, const TensorPtrT<S>& logits, const std::vector<int>& labels,
                          const std::vector<S>* weights) {
  check_rank(logits->shape, 2, "softmax_nll", "logits");
  const int64_t N = logits->shape[0], K = logits->shape[1];
  FF_CHECK_ARG((int64_t)labels.size() == N, "softmax_nll: %zu labels for %lld rows", labels.size(),
               (long long)N);
  if (weights) {
    FF_CHECK_ARG((int64_t)weights->size() == N, "softmax_nll: %zu weights for %lld rows",
                 weights->size(), (long long)N);
    for (S w : *weights)
      FF_CHECK_ARG(w >= S(0), "softmax_nll: weights must be nonnegative, got %g", (double)w);
  }
  double acc = 0;
  for (int64_t i = 0; i < N; ++i) {
    const int y = labels[(size_t)i];
    FF_CHECK_ARG(y >= 0 && y < K, "softmax_nll: label %d out of range [0,%lld) at row %lld", y,
                 (long long)K, (long long)i);
    double maxv;
    const double lse = row_lse(logits->data() + i * K, K, maxv);
    const double w = weights ? (double)(*weights)[(size_t)i] : 1.0;
    acc += w * (lse - (double)logits->values[(size_t)(i * K + y)]);
  }
  auto out = scalar_tensor<S>((S)(acc / (double)N));
  if (want_tape<S>(g, {&logits})) {
    out->requires_grad = true;
    auto l = logits;
    auto o = out;
    auto wts = weights ? std::make_shared<std::vector<S>>(*weights) : nullptr;
    auto labs = std::make_shared<std::vector<int>>(labels);
    g->record("softmax_nll", out, [l, o, wts, labs, N, K]() {
      l->ensure_grad();
      const double go = (double)o->grad[0];
      for (int64_t i = 0; i < N; ++i) {
        const S* row = l->data() + i * K;
        double maxv;
        const double lse = row_lse(row, K, maxv);
        const double w = wts ? (double)(*wts)[(size_t)i] : 1.0;
        const double c = go * w / (double)N;
        S* grow = l->grad.data() + i * K;
        for (int64_t k = 0; k < K; ++k) {
          const double p = std::exp((double)row[k] - lse);
          grow[k] += (S)(c * (p - ((*labs)[(size_t)i] == (int)k ? 1.0 : 0.0)));
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorPtrT<S> softmax_xent_uniform(GraphT<S>* g, const TensorPtrT<S>& logits) {
  check_rank(logits->shape, 2, "softmax_xent_uniform", "logits");
  const int64_t N = logits->shape[0], K = logits->shape[1];
  double acc = 0;
  for (int64_t i = 0; i < N; ++i) {
    const S* row = logits->data() + i * K;
    double maxv;
    const double lse = row_lse(row, K, maxv);
    double mean_logit = 0;
    for (int64_t k = 0; k < K; ++k) mean_logit += (double)row[k];
    mean_logit /= (double)K;
    acc += lse - mean_logit;
  }
  auto out = scalar_tensor<S>((S)(acc / (double)N));
  if (want_tape<S>(g, {&logits})) {
    out->requires_grad = true;
    auto l = logits;
    auto o = out;
    g->record("softmax_xent_uniform", out, [l, o, N, K]() {
      l->ensure_grad();
      const double go = (double)o->grad[0];
      const double u = 1.0 / (double)K;
      for (int64_t i = 0; i < N; ++i) {
        const S* row = l->data() + i * K;
        double maxv;
        const double lse = row_lse(row, K, maxv);
        S* grow = l->grad.data() + i * K;
        for (int64_t k = 0; k < K; ++k) {
          const double p = std::exp((double)row[k] - lse);
          grow[k] += (S)(go * (p - u) / (double)N);
        }
      }
    });
  }
  return out;
}

template <typename S>
std::vector<S> softmax_rows(const TensorPtrT<S>& logits) {
  check_rank(logits->shape, 2, "softmax_rows", "logits");
  const int64_t N = logits->shape[0], K = logits->shape[1];
  std::vector<S> probs((size_t)(N * K));
  for (int64_t i = 0; i < N; ++i) {
    const S* row = logits->data() + i * K;
    double maxv;
    const double lse = row_lse(row, K, maxv);
    for (int64_t k = 0; k < K; ++k) probs[(size_t)(i * K + k)] = (S)std::exp((double)row[k] - lse);
  }
  return probs;
}

// ---- elementwise / structural ----

template <typename S>
TensorPtrT<S> add(GraphT<S>* g, const TensorPtrT<S>& a, const TensorPtrT<S>& b) {
  FF_CHECK_ARG(a->shape == b->shape, "add: shape mismatch %s vs %s", shape_str(a->shape).c_str(),
               shape_str(b->shape).c_str());
  auto out = zeros<S>(a->shape);
  for (size_t i = 0; i < a->values.size(); ++i) out->values[i] = a->values[i] + b->values[i];
  if (want_tape<S>(g, {&a, &b})) {
    out->requires_grad = true;
    auto x = a, y = b;
    auto o = out;
    g->record("add", out, [x, y, o]() {
      if (x->requires_grad) {
        x->ensure_grad();
        for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += o->grad[i];
      }
      if (y->requires_grad) {
        y->ensure_grad();
        for (size_t i = 0; i < y->grad.size(); ++i) y->grad[i] += o->grad[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorPtrT<S> scale(GraphT<S>* g, const TensorPtrT<S>& a, S factor) {
  auto out = zeros<S>(a->shape);
  for (size_t i = 0; i < a->values.size(); ++i) out->values[i] = a->values[i] * factor;
  if (want_tape<S>(g, {&a})) {
    out->requires_grad = true;
    auto x = a;
    auto o = out;
    g->record("scale", out, [x, o, factor]() {
      x->ensure_grad();
      for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += factor * o->grad[i];
    });
  }
  return out;
}

template <typename S>
TensorPtrT<S> sum(GraphT<S>* g, const TensorPtrT<S>& a) {
  double acc = 0;
  for (S v : a->values) acc += (double)v;
  auto out = scalar_tensor<S>((S)acc);
  if (want_tape<S>(g, {&a})) {
    out->requires_grad = true;
    auto x = a;
    auto o = out;
    g->record("sum", out, [x, o]() {
      x->ensure_grad();
      for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += o->grad[0];
    });
  }
  return out;
}

template <typename S>
TensorPtrT<S> weighted_sum(GraphT<S>* g, const TensorPtrT<S>& a, const std::vector<S>& w) {
  FF_CHECK_ARG(w.size() == a->values.size(), "weighted_sum: %zu weights for %lld values", w.size(),
               (long long)a->numel());
  double acc = 0;
  for (size_t i = 0; i < w.size(); ++i) acc += (double)w[i] * (double)a->values[i];
  auto out = scalar_tensor<S>((S)acc);
  if (want_tape<S>(g, {&a})) {
    out->requires_grad = true;
    auto x = a;
    auto o = out;
    auto ws = std::make_shared<std::vector<S>>(w);
    g->record("weighted_sum", out, [x, o, ws]() {
      x->ensure_grad();
      for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += (*ws)[i] * o->grad[0];
    });
  }
  return out;
}

template <typename S>
TensorPtrT<S> concat_channels(GraphT<S>* g, const TensorPtrT<S>& a, const TensorPtrT<S>& b) {
  check_rank(a->shape, 4, "concat_channels", "a");
  check_rank(b->shape, 4, "concat_channels", "b");
  FF_CHECK_ARG(a->shape[0] == b->shape[0] && a->shape[2] == b->shape[2] && a->shape[3] == b->shape[3],
               "concat_channels: non-channel extents differ, %s vs %s", shape_str(a->shape).c_str(),
               shape_str(b->shape).c_str());
  const int64_t N = a->shape[0], Ca = a->shape[1], Cb = b->shape[1];
  const int64_t plane = a->shape[2] * a->shape[3];
  auto out = zeros<S>({N, Ca + Cb, a->shape[2], a->shape[3]});
  for (int64_t n = 0; n < N; ++n) {
    std::memcpy(out->data() + n * (Ca + Cb) * plane, a->data() + n * Ca * plane,
                sizeof(S) * (size_t)(Ca * plane));
    std::memcpy(out->data() + (n * (Ca + Cb) + Ca) * plane, b->data() + n * Cb * plane,
                sizeof(S) * (size_t)(Cb * plane));
  }
  if (want_tape<S>(g, {&a, &b})) {
    out->requires_grad = true;
    auto x = a, y = b;
    auto o = out;
    g->record("concat_channels", out, [x, y, o, N, Ca, Cb, plane]() {
      if (x->requires_grad) x->ensure_grad();
      if (y->requires_grad) y->ensure_grad();
      for (int64_t n = 0; n < N; ++n) {
        const S* go = o->grad.data() + n * (Ca + Cb) * plane;
        if (x->requires_grad) {
          S* gx = x->grad.data() + n * Ca * plane;
          for (int64_t i = 0; i < Ca * plane; ++i) gx[i] += go[i];
        }
        if (y->requires_grad) {
          S* gy = y->grad.data() + n * Cb * plane;
          for (int64_t i = 0; i < Cb * plane; ++i) gy[i] += go[Ca * plane + i];
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorPtrT<S> reshape(GraphT<S>* g, const TensorPtrT<S>& a, Shape shape) {
  FF_CHECK_ARG(shape_numel(shape) == a->numel(), "reshape: %s has %lld values, target %s needs %lld",
               shape_str(a->shape).c_str(), (long long)a->numel(), shape_str(shape).c_str(),
               (long long)shape_numel(shape));
  auto out = make_tensor<S>(std::move(shape), a->values);
  if (want_tape<S>(g, {&a})) {
    out->requires_grad = true;
    auto x = a;
    auto o = out;
    g->record("reshape", out, [x, o]() {
      x->ensure_grad();
      for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += o->grad[i];
    });
  }
  return out;
}

template <typename S>
void sgd_step(const std::vector<TensorPtrT<S>>& params, double lr) {
  for (const auto& p : params) {
    if (!p->has_grad())
      throw std::runtime_error("sgd_step: invalid state, parameter is missing its gradient");
  }
  for (const auto& p : params) {
    const S eta = (S)lr;
    for (size_t i = 0; i < p->values.size(); ++i) p->values[i] -= eta * p->grad[i];
    p->clear_grad();
  }
}

// ---- explicit instantiations ----

#define FF_INSTANTIATE(S)                                                                          \
  template struct BatchNormState<S>;                                                              \
  template class GraphT<S>;                                                                       \
  template TensorPtrT<S> make_tensor<S>(Shape, std::vector<S>, bool);                             \
  template TensorPtrT<S> zeros<S>(Shape, bool);                                                   \
  template TensorPtrT<S> full<S>(Shape, S, bool);                                                 \
  template TensorPtrT<S> scalar_tensor<S>(S, bool);                                               \
  template TensorPtrT<S> uniform<S>(Shape, S, S, std::mt19937&, bool);                            \
  template TensorPtrT<S> clone<S>(const TensorPtrT<S>&);                                          \
  template BatchNormState<S> make_batchnorm_state<S>(int64_t);                                    \
  template TensorPtrT<S> conv2d<S>(GraphT<S>*, const TensorPtrT<S>&, const TensorPtrT<S>&,        \
                                   const TensorPtrT<S>&, int, int);                               \
  template TensorPtrT<S> deconv2d<S>(GraphT<S>*, const TensorPtrT<S>&, const TensorPtrT<S>&,      \
                                     const TensorPtrT<S>&, int, int);                             \
  template TensorPtrT<S> batchnorm2d<S>(GraphT<S>*, const TensorPtrT<S>&, const TensorPtrT<S>&,   \
                                        const TensorPtrT<S>&, BatchNormState<S>&, Mode);          \
  template TensorPtrT<S> activation<S>(GraphT<S>*, const TensorPtrT<S>&, Act);                    \
  template TensorPtrT<S> maxpool2d<S>(GraphT<S>*, const TensorPtrT<S>&, int);                     \
  template TensorPtrT<S> linear<S>(GraphT<S>*, const TensorPtrT<S>&, const TensorPtrT<S>&,        \
                                   const TensorPtrT<S>&);                                         \
  template TensorPtrT<S> dropout<S>(GraphT<S>*, const TensorPtrT<S>&, double, Mode,               \
                                    std::mt19937&);                                               \
  template TensorPtrT<S> mse_loss<S>(GraphT<S>*, const TensorPtrT<S>&, const TensorPtrT<S>&);     \
  template TensorPtrT<S> softmax_nll<S>(GraphT<S>*, const TensorPtrT<S>&, const std::vector<int>&, \
                                        const std::vector<S>*);                                   \
  template TensorPtrT<S> softmax_xent_uniform<S>(GraphT<S>*, const TensorPtrT<S>&);               \
  template std::vector<S> softmax_rows<S>(const TensorPtrT<S>&);                                  \
  template TensorPtrT<S> add<S>(GraphT<S>*, const TensorPtrT<S>&, const TensorPtrT<S>&);          \
  template TensorPtrT<S> scale<S>(GraphT<S>*, const TensorPtrT<S>&, S);                           \
  template TensorPtrT<S> sum<S>(GraphT<S>*, const TensorPtrT<S>&);                                \
  template TensorPtrT<S> weighted_sum<S>(GraphT<S>*, const TensorPtrT<S>&, const std::vector<S>&); \
  template TensorPtrT<S> concat_channels<S>(GraphT<S>*, const TensorPtrT<S>&, const TensorPtrT<S>&); \
  template TensorPtrT<S> reshape<S>(GraphT<S>*, const TensorPtrT<S>&, Shape);                     \
  template void sgd_step<S>(const std::vector<TensorPtrT<S>>&, double);

FF_INSTANTIATE(float)
FF_INSTANTIATE(double)

#undef FF_INSTANTIATE

}  // namespace fairfader
