#pragma once

// Minimal dense-tensor engine: row-major n-d arrays, the forward kernels used
// by the networks in this project, and reverse-mode differentiation over a
// per-step tape. Instantiated for float (training) and double (gradient
// checks).

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fairfader/error.hpp"

namespace fairfader {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Mode { Train, Eval };

template <typename S>
struct TensorT {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // empty until backward populates it
  bool requires_grad = false;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  int64_t extent(size_t axis) const { return shape.at(axis); }
  S* data() { return values.data(); }
  const S* data() const { return values.data(); }
  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), S(0));
  }
  void clear_grad() { grad.clear(); }
};

template <typename S>
using TensorPtrT = std::shared_ptr<TensorT<S>>;

using Tensor = TensorT<float>;
using TensorPtr = TensorPtrT<float>;

template <typename S>
TensorPtrT<S> make_tensor(Shape shape, std::vector<S> values, bool requires_grad = false);
template <typename S>
TensorPtrT<S> zeros(Shape shape, bool requires_grad = false);
template <typename S>
TensorPtrT<S> full(Shape shape, S value, bool requires_grad = false);
template <typename S>
TensorPtrT<S> scalar_tensor(S value, bool requires_grad = false);
// Uniform fill in [lo, hi); draw order is row-major, one draw per element.
template <typename S>
TensorPtrT<S> uniform(Shape shape, S lo, S hi, std::mt19937& rng, bool requires_grad = false);
template <typename S>
TensorPtrT<S> clone(const TensorPtrT<S>& t);

// Ordered record of executed ops. Replaying adjoints walks nodes in exact
// reverse execution order; grads accumulate additively into every
// requires_grad tensor touched by a recorded op.
template <typename S>
class GraphT {
 public:
  void record(const char* op, TensorPtrT<S> out, std::function<void()> backward_fn);
  // Seeds d(loss)/d(loss) = 1 and replays the tape. Throws if loss is not a
  // scalar or was not produced by this graph.
  void backward(const TensorPtrT<S>& loss);
  void clear();
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op;
    TensorPtrT<S> out;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
};

using Graph = GraphT<float>;

template <typename S>
void backward(const TensorPtrT<S>& loss, GraphT<S>& graph) {
  graph.backward(loss);
}

// ---- activations ----

enum class ActKind { Relu, LeakyRelu, Tanh };

struct Act {
  ActKind kind = ActKind::Relu;
  double slope = 0.0;  // leaky_relu only
  static Act relu() { return {ActKind::Relu, 0.0}; }
  static Act leaky_relu(double slope) { return {ActKind::LeakyRelu, slope}; }
  static Act tanh() { return {ActKind::Tanh, 0.0}; }
};

// ---- batchnorm running state ----

template <typename S>
struct BatchNormState {
  TensorPtrT<S> running_mean;  // [C]
  TensorPtrT<S> running_var;   // [C]
  S momentum = S(0.1);
  S eps = S(1e-5);
};

template <typename S>
BatchNormState<S> make_batchnorm_state(int64_t channels);

// ---- ops ----
// Every op takes the tape as a nullable first argument; pass nullptr for
// pure inference. An op records onto the tape only when some input has
// requires_grad set.

// input [N,C_in,H,W], weight [C_out,C_in,k,k], bias [C_out].
template <typename S>
TensorPtrT<S> conv2d(GraphT<S>* g, const TensorPtrT<S>& input, const TensorPtrT<S>& weight,
                     const TensorPtrT<S>& bias, int stride, int pad);

// Transposed convolution; exact adjoint of conv2d's linear map for the same
// weight and geometry. input [N,A,H,W], weight [A,B,k,k], bias [B],
// output [N,B,(H-1)*stride-2*pad+k, ...].
template <typename S>
TensorPtrT<S> deconv2d(GraphT<S>* g, const TensorPtrT<S>& input, const TensorPtrT<S>& weight,
                       const TensorPtrT<S>& bias, int stride, int pad);

template <typename S>
TensorPtrT<S> batchnorm2d(GraphT<S>* g, const TensorPtrT<S>& input, const TensorPtrT<S>& gamma,
                          const TensorPtrT<S>& beta, BatchNormState<S>& state, Mode mode);

template <typename S>
TensorPtrT<S> activation(GraphT<S>* g, const TensorPtrT<S>& input, Act act);

// Non-overlapping max pooling; ties route the gradient to the first max in
// row-major order.
template <typename S>
TensorPtrT<S> maxpool2d(GraphT<S>* g, const TensorPtrT<S>& input, int window);

// input [N,D], weight [D_out,D], bias [D_out] -> [N,D_out].
template <typename S>
TensorPtrT<S> linear(GraphT<S>* g, const TensorPtrT<S>& input, const TensorPtrT<S>& weight,
                     const TensorPtrT<S>& bias);

// Inverted dropout: train mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); eval mode is the identity.
template <typename S>
TensorPtrT<S> dropout(GraphT<S>* g, const TensorPtrT<S>& input, double rate, Mode mode,
                      std::mt19937& rng);

template <typename S>
TensorPtrT<S> mse_loss(GraphT<S>* g, const TensorPtrT<S>& pred, const TensorPtrT<S>& target);

// Mean over rows of weight * (-log softmax(logits)[label]). `weights` is
// per-sample (nonnegative) when present.
template <typename S>
TensorPtrT<S> softmax_nll(GraphT<S>* g, const TensorPtrT<S>& logits, const std::vector<int>& labels,
                          const std::vector<S>* weights = nullptr);

// Cross-entropy of each softmax row against the uniform distribution over K
// classes, averaged over rows. Minimized by uniform logits.
template <typename S>
TensorPtrT<S> softmax_xent_uniform(GraphT<S>* g, const TensorPtrT<S>& logits);

// Probability rows of [N,K] logits (no tape).
template <typename S>
std::vector<S> softmax_rows(const TensorPtrT<S>& logits);

template <typename S>
TensorPtrT<S> add(GraphT<S>* g, const TensorPtrT<S>& a, const TensorPtrT<S>& b);
template <typename S>
TensorPtrT<S> scale(GraphT<S>* g, const TensorPtrT<S>& a, S factor);
template <typename S>
TensorPtrT<S> sum(GraphT<S>* g, const TensorPtrT<S>& a);
// Scalar projection sum_i w[i] * a[i] with constant weights.
template <typename S>
TensorPtrT<S> weighted_sum(GraphT<S>* g, const TensorPtrT<S>& a, const std::vector<S>& w);
// Concatenate along the channel axis of NCHW tensors.
template <typename S>
TensorPtrT<S> concat_channels(GraphT<S>* g, const TensorPtrT<S>& a, const TensorPtrT<S>& b);
template <typename S>
TensorPtrT<S> reshape(GraphT<S>* g, const TensorPtrT<S>& a, Shape shape);

// theta <- theta - lr * grad for every param, then clears grads. Throws if a
// param is missing its grad.
template <typename S>
void sgd_step(const std::vector<TensorPtrT<S>>& params, double lr);

// Conv output extent for one spatial axis.
int64_t conv_out_extent(int64_t in, int k, int stride, int pad);
int64_t deconv_out_extent(int64_t in, int k, int stride, int pad);

}  // namespace fairfader
