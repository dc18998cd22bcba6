#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ghr/rng.hpp"

namespace ghr {

using Index = std::int64_t;
using Shape = std::vector<Index>;

std::string shape_str(const Shape& s);
Index shape_numel(const Shape& s);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated lazily, same length as data
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
};

}  // namespace detail

// Dense row-major float32 tensor with handle (shared-pointer) semantics.
// Every operation returns a freshly allocated tensor; inputs are never
// mutated. Gradients accumulate into leaf tensors when a ComputationTape
// is active (see tape.hpp-style RAII scope below). Reductions and dot
// products accumulate in float64 and round once on store.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  // Gaussian(0, stddev) entries, consuming one RNG draw per element in
  // row-major order.
  static Tensor gaussian(Shape shape, Rng& rng, double stddev, bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  Index dim(int i) const;
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  Index numel() const { return static_cast<Index>(impl_->data.size()); }

  std::span<const float> data() const { return impl_->data; }
  // Writable view for optimizer updates; never call while a tape that saw
  // this tensor is still live.
  std::span<float> raw_data() { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const;
  std::span<float> raw_grad();
  void zero_grad();

  // Value of a rank-0 or single-element tensor.
  float item() const;
  float at(std::initializer_list<Index> idx) const;

  // Deep copy of values; result requires no grad and is off-tape.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const;

  bool all_finite() const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class ComputationTape;
  friend Tensor make_tensor(Shape shape, bool requires_grad);
};

Tensor make_tensor(Shape shape, bool requires_grad);

// Define-by-run reverse-mode tape. One training step owns one tape; ops
// record onto the innermost active tape of the current thread. Recorded
// ops are replayed exactly once, in reverse order, by backward().
class ComputationTape {
 public:
  ComputationTape() = default;
  ComputationTape(const ComputationTape&) = delete;
  ComputationTape& operator=(const ComputationTape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad leaf.
  // Grad accumulates across repeated calls until zero_grad(); callers that
  // want fresh gradients must clear leaves first.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

  void record(std::function<void()> backward_fn,
              std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
              std::shared_ptr<detail::TensorImpl> output);
  bool contains(const detail::TensorImpl* impl) const;

 private:
  struct Node {
    std::function<void()> fn;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
  };
  std::vector<Node> nodes_;
  std::unordered_set<const detail::TensorImpl*> outputs_;
};

// Installs `tape` as the active tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(ComputationTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  ComputationTape* previous_;
};

ComputationTape* active_tape();

// ---------------------------------------------------------------------------
// Differentiable operations. All follow the same contract: inputs are
// immutable, the output is freshly allocated, and a node is recorded when a
// tape is active and any input requires grad.

// Batched matrix product a[..,m,k] x b[..,k,n] -> [..,m,n]. Leading batch
// dimensions broadcast numpy-style.
Tensor matmul(const Tensor& a, const Tensor& b);

// Non-overlapping patch projection: stride equals the kernel extent.
// x[B,C,H,W], kernel[D,C,P,P], optional bias[D] -> [B,D,H/P,W/P].
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, int patch);

// Transposed counterpart of conv2d with the same kernel layout:
// x[B,D,h,w], kernel[D,C,P,P] -> [B,C,h*P,w*P]. Satisfies the adjoint
// identity <conv2d(x,k), y> == <x, deconv2d(y,k)>.
Tensor deconv2d(const Tensor& x, const Tensor& kernel, int patch);

Tensor softmax(const Tensor& x, int axis);
// Normalizes the last axis to zero mean / unit variance, then applies
// gain and offset (both shaped like the last axis).
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& offset, float eps = 1e-5f);
Tensor gelu(const Tensor& x);

// Elementwise with trailing-aligned broadcast (missing leading dims act
// as 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Free-function form of the backward contract: requires a live tape scope
// containing `loss`.
void backward(const Tensor& loss);

}  // namespace ghr
