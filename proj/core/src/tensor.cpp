#include "ghr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "ghr/errors.hpp"

namespace ghr {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

namespace {

using detail::TensorImpl;

thread_local ComputationTape* g_active_tape = nullptr;

std::shared_ptr<TensorImpl> new_impl(Shape shape, bool requires_grad) {
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<std::size_t>(shape_numel(impl->shape)), 0.0f);
  impl->requires_grad = requires_grad;
  return impl;
}

Shape row_major_strides(const Shape& s) {
  Shape strides(s.size());
  Index acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    strides[static_cast<std::size_t>(i)] = acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return strides;
}

// Trailing-aligned broadcast of two shapes; throws on a hard mismatch.
Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  std::size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Index da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    Index db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `shape` viewed as the broadcast target `out`, with zero stride
// on broadcast dimensions.
Shape broadcast_strides(const Shape& shape, const Shape& out) {
  Shape strides(out.size(), 0);
  Shape own = row_major_strides(shape);
  std::size_t off = out.size() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i) {
    strides[off + i] = (shape[i] == 1 && out[off + i] != 1) ? 0 : own[i];
  }
  return strides;
}

// ---------------------------------------------------------------------------
// Raw matrix kernels. Row-major, float storage, float64 accumulation.

// c[m,n] (+)= a[m,k] * b[k,n]
void mm_nn(const float* a, const float* b, float* c, Index m, Index k, Index n, bool accumulate) {
#pragma omp parallel
  {
    std::vector<double> row(static_cast<std::size_t>(n));
#pragma omp for schedule(static)
    for (Index i = 0; i < m; ++i) {
      std::fill(row.begin(), row.end(), 0.0);
      const float* ai = a + i * k;
      for (Index kk = 0; kk < k; ++kk) {
        const double av = static_cast<double>(ai[kk]);
        const float* bk = b + kk * n;
        for (Index j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] += av * static_cast<double>(bk[j]);
      }
      float* ci = c + i * n;
      if (accumulate) {
        for (Index j = 0; j < n; ++j) ci[j] += static_cast<float>(row[static_cast<std::size_t>(j)]);
      } else {
        for (Index j = 0; j < n; ++j) ci[j] = static_cast<float>(row[static_cast<std::size_t>(j)]);
      }
    }
  }
}

// c[m,n] (+)= a[m,k] * b[n,k]^T
void mm_nt(const float* a, const float* b, float* c, Index m, Index k, Index n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < m; ++i) {
    const float* ai = a + i * k;
    float* ci = c + i * n;
    for (Index j = 0; j < n; ++j) {
      const float* bj = b + j * k;
      double acc = 0.0;
      for (Index kk = 0; kk < k; ++kk) acc += static_cast<double>(ai[kk]) * static_cast<double>(bj[kk]);
      if (accumulate) {
        ci[j] += static_cast<float>(acc);
      } else {
        ci[j] = static_cast<float>(acc);
      }
    }
  }
}

// c[m,n] (+)= a[k,m]^T * b[k,n]
void mm_tn(const float* a, const float* b, float* c, Index m, Index k, Index n, bool accumulate) {
#pragma omp parallel
  {
    std::vector<double> row(static_cast<std::size_t>(n));
#pragma omp for schedule(static)
    for (Index i = 0; i < m; ++i) {
      std::fill(row.begin(), row.end(), 0.0);
      for (Index kk = 0; kk < k; ++kk) {
        const double av = static_cast<double>(a[kk * m + i]);
        const float* bk = b + kk * n;
        for (Index j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] += av * static_cast<double>(bk[j]);
      }
      float* ci = c + i * n;
      if (accumulate) {
        for (Index j = 0; j < n; ++j) ci[j] += static_cast<float>(row[static_cast<std::size_t>(j)]);
      } else {
        for (Index j = 0; j < n; ++j) ci[j] = static_cast<float>(row[static_cast<std::size_t>(j)]);
      }
    }
  }
}

void record_if_needed(std::vector<const Tensor*> inputs, Tensor& out, std::function<void()> fn) {
  ComputationTape* tape = g_active_tape;
  if (!tape) return;
  bool any = false;
  std::vector<std::shared_ptr<TensorImpl>> impls;
  impls.reserve(inputs.size());
  for (const Tensor* t : inputs) {
    any = any || t->requires_grad();
    impls.push_back(t->impl());
  }
  if (!any) return;
  out.impl()->requires_grad = true;
  tape->record(std::move(fn), std::move(impls), out.impl());
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor make_tensor(Shape shape, bool requires_grad) {
  return Tensor(new_impl(std::move(shape), requires_grad));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return make_tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (static_cast<Index>(values.size()) != shape_numel(shape)) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  Tensor t = make_tensor(std::move(shape), requires_grad);
  t.impl_->data = std::move(values);
  return t;
}

Tensor Tensor::gaussian(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), requires_grad);
  for (float& v : t.impl_->data) v = static_cast<float>(rng.gaussian(0.0, stddev));
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), requires_grad);
  for (float& v : t.impl_->data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

Index Tensor::dim(int i) const {
  int n = ndim();
  if (i < 0) i += n;
  if (i < 0 || i >= n) throw ShapeError("dim index out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(i)];
}

Tensor& Tensor::set_requires_grad(bool rg) {
  impl_->requires_grad = rg;
  return *this;
}

std::span<const float> Tensor::grad() const {
  return impl_->grad;
}

std::span<float> Tensor::raw_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor has shape " + shape_str(shape()));
  return impl_->data[0];
}

float Tensor::at(std::initializer_list<Index> idx) const {
  if (static_cast<int>(idx.size()) != ndim()) {
    throw ShapeError("at(): rank mismatch for " + shape_str(shape()));
  }
  Shape strides = row_major_strides(impl_->shape);
  Index off = 0;
  std::size_t i = 0;
  for (Index v : idx) {
    if (v < 0 || v >= impl_->shape[i]) throw ShapeError("at(): index out of range");
    off += v * strides[i];
    ++i;
  }
  return impl_->data[static_cast<std::size_t>(off)];
}

Tensor Tensor::detach() const {
  Tensor t = make_tensor(impl_->shape, false);
  t.impl_->data = impl_->data;
  return t;
}

Tensor Tensor::clone(bool requires_grad) const {
  Tensor t = make_tensor(impl_->shape, requires_grad);
  t.impl_->data = impl_->data;
  return t;
}

bool Tensor::all_finite() const {
  for (float v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape

void ComputationTape::record(std::function<void()> backward_fn,
                             std::vector<std::shared_ptr<TensorImpl>> inputs,
                             std::shared_ptr<TensorImpl> output) {
  outputs_.insert(output.get());
  nodes_.push_back(Node{std::move(backward_fn), std::move(inputs), std::move(output)});
}

bool ComputationTape::contains(const detail::TensorImpl* impl) const {
  return outputs_.count(impl) > 0;
}

void ComputationTape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!contains(loss.impl().get())) {
    throw std::logic_error("backward: loss tensor is not an output recorded on this tape");
  }
  // Intermediates (recorded outputs) start each pass at zero; leaves keep
  // accumulating across passes until the caller clears them.
  for (Node& node : nodes_) {
    if (!node.output->grad.empty()) {
      std::fill(node.output->grad.begin(), node.output->grad.end(), 0.0f);
    }
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->fn();
  }
}

TapeScope::TapeScope(ComputationTape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() {
  g_active_tape = previous_;
}

ComputationTape* active_tape() {
  return g_active_tape;
}

void backward(const Tensor& loss) {
  if (!g_active_tape) throw std::logic_error("backward: no active tape");
  g_active_tape->backward(loss);
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const Index m = a.dim(-2), ka = a.dim(-1);
  const Index kb = b.dim(-2), n = b.dim(-1);
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }

  // Common fast path: rhs is a plain matrix, lhs flattens to 2-D.
  if (b.ndim() == 2) {
    const Index rows = a.numel() / ka;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    Tensor out = make_tensor(out_shape, false);
    mm_nn(a.data().data(), b.data().data(), out.raw_data().data(), rows, ka, n, false);

    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    record_if_needed({&a, &b}, out, [ai, bi, oi, rows, ka, n]() {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        mm_nt(oi->grad.data(), bi->data.data(), ai->grad.data(), rows, n, ka, true);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        mm_tn(ai->data.data(), oi->grad.data(), bi->grad.data(), ka, rows, n, true);
      }
    });
    return out;
  }

  // General batched path with broadcast over leading dims.
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  Shape batch = broadcast_shapes(abatch, bbatch, "matmul");
  const Index nbatch = shape_numel(batch);
  Shape astr = broadcast_strides(abatch, batch);
  Shape bstr = broadcast_strides(bbatch, batch);
  Shape ostr = row_major_strides(batch);

  // Per-slice element offsets for a, b and out.
  std::vector<Index> aoff(static_cast<std::size_t>(nbatch)), boff(aoff.size());
  for (Index e = 0; e < nbatch; ++e) {
    Index rem = e, ao = 0, bo = 0;
    for (std::size_t d = 0; d < batch.size(); ++d) {
      Index id = rem / ostr[d];
      rem %= ostr[d];
      ao += id * astr[d];
      bo += id * bstr[d];
    }
    aoff[static_cast<std::size_t>(e)] = ao * m * ka;
    boff[static_cast<std::size_t>(e)] = bo * ka * n;
  }

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = make_tensor(out_shape, false);
  const float* ap = a.data().data();
  const float* bp = b.data().data();
  float* op = out.raw_data().data();
  for (Index e = 0; e < nbatch; ++e) {
    mm_nn(ap + aoff[static_cast<std::size_t>(e)], bp + boff[static_cast<std::size_t>(e)],
          op + e * m * n, m, ka, n, false);
  }

  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  record_if_needed({&a, &b}, out, [ai, bi, oi, aoff, boff, nbatch, m, ka, n]() {
    if (oi->grad.empty()) return;
    // Serial over batch slices: broadcast operands may alias, and gradient
    // accumulation order must be fixed.
    for (Index e = 0; e < nbatch; ++e) {
      const float* go = oi->grad.data() + e * m * n;
      const Index ao = aoff[static_cast<std::size_t>(e)];
      const Index bo = boff[static_cast<std::size_t>(e)];
      if (ai->requires_grad) {
        ai->ensure_grad();
        mm_nt(go, bi->data.data() + bo, ai->grad.data() + ao, m, n, ka, true);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        mm_tn(ai->data.data() + ao, go, bi->grad.data() + bo, ka, m, n, true);
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// conv2d / deconv2d (stride == kernel extent, no overlap)

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, int patch) {
  if (x.ndim() != 4 || kernel.ndim() != 4) {
    throw ShapeError("conv2d: expected x[B,C,H,W] and kernel[D,C,P,P], got " +
                     shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index D = kernel.dim(0), Ck = kernel.dim(1), P = kernel.dim(2), P2 = kernel.dim(3);
  if (P != patch || P2 != patch) {
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " does not match patch " +
                     std::to_string(patch));
  }
  if (Ck != C) {
    throw ShapeError("conv2d: channel mismatch between x " + shape_str(x.shape()) + " and kernel " +
                     shape_str(kernel.shape()));
  }
  if (H % P != 0 || W % P != 0) {
    throw ShapeError("conv2d: spatial dims of " + shape_str(x.shape()) + " not divisible by patch " +
                     std::to_string(patch));
  }
  if (bias && (bias->ndim() != 1 || bias->dim(0) != D)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()) + " does not match D=" +
                     std::to_string(D));
  }
  const Index R = H / P, Q = W / P;
  Tensor out = make_tensor({B, D, R, Q}, false);

  const float* xp = x.data().data();
  const float* kp = kernel.data().data();
  const float* bp = bias ? bias->data().data() : nullptr;
  float* op = out.raw_data().data();
#pragma omp parallel for schedule(static)
  for (Index bd = 0; bd < B * D; ++bd) {
    const Index b = bd / D, d = bd % D;
    for (Index i = 0; i < R; ++i) {
      for (Index j = 0; j < Q; ++j) {
        double acc = bp ? static_cast<double>(bp[d]) : 0.0;
        for (Index c = 0; c < C; ++c) {
          for (Index p = 0; p < P; ++p) {
            const float* xrow = xp + ((b * C + c) * H + i * P + p) * W + j * P;
            const float* krow = kp + ((d * C + c) * P + p) * P;
            for (Index q = 0; q < P; ++q) acc += static_cast<double>(xrow[q]) * static_cast<double>(krow[q]);
          }
        }
        op[((b * D + d) * R + i) * Q + j] = static_cast<float>(acc);
      }
    }
  }

  auto xi = x.impl(), ki = kernel.impl(), oi = out.impl();
  auto bi = bias ? bias->impl() : nullptr;
  std::vector<const Tensor*> ins{&x, &kernel};
  if (bias) ins.push_back(bias);
  record_if_needed(ins, out, [xi, ki, bi, oi, B, C, D, H, W, P, R, Q]() {
    if (oi->grad.empty()) return;
    const float* go = oi->grad.data();
    if (xi->requires_grad) {
      xi->ensure_grad();
      float* gx = xi->grad.data();
      const float* kp = ki->data.data();
#pragma omp parallel for schedule(static)
      for (Index bc = 0; bc < B * C; ++bc) {
        const Index b = bc / C, c = bc % C;
        for (Index i = 0; i < R; ++i) {
          for (Index j = 0; j < Q; ++j) {
            for (Index p = 0; p < P; ++p) {
              for (Index q = 0; q < P; ++q) {
                double acc = 0.0;
                for (Index d = 0; d < D; ++d) {
                  acc += static_cast<double>(go[((b * D + d) * R + i) * Q + j]) *
                         static_cast<double>(kp[((d * C + c) * P + p) * P + q]);
                }
                gx[((b * C + c) * H + i * P + p) * W + j * P + q] += static_cast<float>(acc);
              }
            }
          }
        }
      }
    }
    if (ki->requires_grad) {
      ki->ensure_grad();
      float* gk = ki->grad.data();
      const float* xp = xi->data.data();
#pragma omp parallel for schedule(static)
      for (Index d = 0; d < D; ++d) {
        for (Index c = 0; c < C; ++c) {
          for (Index p = 0; p < P; ++p) {
            for (Index q = 0; q < P; ++q) {
              double acc = 0.0;
              for (Index b = 0; b < B; ++b) {
                for (Index i = 0; i < R; ++i) {
                  for (Index j = 0; j < Q; ++j) {
                    acc += static_cast<double>(go[((b * D + d) * R + i) * Q + j]) *
                           static_cast<double>(xp[((b * C + c) * H + i * P + p) * W + j * P + q]);
                  }
                }
              }
              gk[((d * C + c) * P + p) * P + q] += static_cast<float>(acc);
            }
          }
        }
      }
    }
    if (bi && bi->requires_grad) {
      bi->ensure_grad();
      float* gb = bi->grad.data();
      for (Index d = 0; d < D; ++d) {
        double acc = 0.0;
        for (Index b = 0; b < B; ++b) {
          for (Index i = 0; i < R; ++i) {
            for (Index j = 0; j < Q; ++j) acc += static_cast<double>(go[((b * D + d) * R + i) * Q + j]);
          }
        }
        gb[d] += static_cast<float>(acc);
      }
    }
  });
  return out;
}

Tensor deconv2d(const Tensor& x, const Tensor& kernel, int patch) {
  if (x.ndim() != 4 || kernel.ndim() != 4) {
    throw ShapeError("deconv2d: expected x[B,D,h,w] and kernel[D,C,P,P], got " +
                     shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  const Index B = x.dim(0), D = x.dim(1), R = x.dim(2), Q = x.dim(3);
  const Index Dk = kernel.dim(0), C = kernel.dim(1), P = kernel.dim(2), P2 = kernel.dim(3);
  if (P != patch || P2 != patch) {
    throw ShapeError("deconv2d: kernel " + shape_str(kernel.shape()) + " does not match patch " +
                     std::to_string(patch));
  }
  if (Dk != D) {
    throw ShapeError("deconv2d: channel mismatch between x " + shape_str(x.shape()) +
                     " and kernel " + shape_str(kernel.shape()));
  }
  const Index H = R * P, W = Q * P;
  Tensor out = make_tensor({B, C, H, W}, false);

  const float* xp = x.data().data();
  const float* kp = kernel.data().data();
  float* op = out.raw_data().data();
#pragma omp parallel for schedule(static)
  for (Index bc = 0; bc < B * C; ++bc) {
    const Index b = bc / C, c = bc % C;
    for (Index i = 0; i < R; ++i) {
      for (Index j = 0; j < Q; ++j) {
        for (Index p = 0; p < P; ++p) {
          for (Index q = 0; q < P; ++q) {
            double acc = 0.0;
            for (Index d = 0; d < D; ++d) {
              acc += static_cast<double>(xp[((b * D + d) * R + i) * Q + j]) *
                     static_cast<double>(kp[((d * C + c) * P + p) * P + q]);
            }
            op[((b * C + c) * H + i * P + p) * W + j * P + q] = static_cast<float>(acc);
          }
        }
      }
    }
  }

  auto xi = x.impl(), ki = kernel.impl(), oi = out.impl();
  record_if_needed({&x, &kernel}, out, [xi, ki, oi, B, C, D, H, W, P, R, Q]() {
    if (oi->grad.empty()) return;
    const float* go = oi->grad.data();
    if (xi->requires_grad) {
      xi->ensure_grad();
      float* gx = xi->grad.data();
      const float* kp = ki->data.data();
#pragma omp parallel for schedule(static)
      for (Index bd = 0; bd < B * D; ++bd) {
        const Index b = bd / D, d = bd % D;
        for (Index i = 0; i < R; ++i) {
          for (Index j = 0; j < Q; ++j) {
            double acc = 0.0;
            for (Index c = 0; c < C; ++c) {
              for (Index p = 0; p < P; ++p) {
                for (Index q = 0; q < P; ++q) {
                  acc += static_cast<double>(go[((b * C + c) * H + i * P + p) * W + j * P + q]) *
                         static_cast<double>(kp[((d * C + c) * P + p) * P + q]);
                }
              }
            }
            gx[((b * D + d) * R + i) * Q + j] += static_cast<float>(acc);
          }
        }
      }
    }
    if (ki->requires_grad) {
      ki->ensure_grad();
      float* gk = ki->grad.data();
      const float* xp = xi->data.data();
#pragma omp parallel for schedule(static)
      for (Index d = 0; d < D; ++d) {
        for (Index c = 0; c < C; ++c) {
          for (Index p = 0; p < P; ++p) {
            for (Index q = 0; q < P; ++q) {
              double acc = 0.0;
              for (Index b = 0; b < B; ++b) {
                for (Index i = 0; i < R; ++i) {
                  for (Index j = 0; j < Q; ++j) {
                    acc += static_cast<double>(xp[((b * D + d) * R + i) * Q + j]) *
                           static_cast<double>(go[((b * C + c) * H + i * P + p) * W + j * P + q]);
                  }
                }
              }
              gk[((d * C + c) * P + p) * P + q] += static_cast<float>(acc);
            }
          }
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// softmax / layernorm / gelu

Tensor softmax(const Tensor& x, int axis) {
  const int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) {
    throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  }
  const Index len = x.dim(axis);
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < nd; ++i) inner *= x.dim(i);

  Tensor out = make_tensor(x.shape(), false);
  const float* xp = x.data().data();
  float* op = out.raw_data().data();
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < outer * inner; ++r) {
    const Index o = r / inner, in = r % inner;
    const Index base = o * len * inner + in;
    float mx = xp[base];
    for (Index t = 1; t < len; ++t) mx = std::max(mx, xp[base + t * inner]);
    double denom = 0.0;
    for (Index t = 0; t < len; ++t) {
      const double e = std::exp(static_cast<double>(xp[base + t * inner]) - static_cast<double>(mx));
      op[base + t * inner] = static_cast<float>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (Index t = 0; t < len; ++t) {
      op[base + t * inner] = static_cast<float>(static_cast<double>(op[base + t * inner]) * inv);
    }
  }

  auto xi = x.impl(), oi = out.impl();
  record_if_needed({&x}, out, [xi, oi, outer, inner, len]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    xi->ensure_grad();
    const float* y = oi->data.data();
    const float* gy = oi->grad.data();
    float* gx = xi->grad.data();
#pragma omp parallel for schedule(static)
    for (Index r = 0; r < outer * inner; ++r) {
      const Index o = r / inner, in = r % inner;
      const Index base = o * len * inner + in;
      double s = 0.0;
      for (Index t = 0; t < len; ++t) {
        s += static_cast<double>(gy[base + t * inner]) * static_cast<double>(y[base + t * inner]);
      }
      for (Index t = 0; t < len; ++t) {
        const Index e = base + t * inner;
        gx[e] += static_cast<float>((static_cast<double>(gy[e]) - s) * static_cast<double>(y[e]));
      }
    }
  });
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& offset, float eps) {
  if (x.ndim() < 1) throw ShapeError("layernorm: rank-0 input");
  const Index D = x.dim(-1);
  if (gain.ndim() != 1 || gain.dim(0) != D || offset.ndim() != 1 || offset.dim(0) != D) {
    throw ShapeError("layernorm: gain/offset must be [" + std::to_string(D) + "], got " +
                     shape_str(gain.shape()) + " and " + shape_str(offset.shape()));
  }
  const Index rows = x.numel() / D;
  Tensor out = make_tensor(x.shape(), false);
  // Row statistics are re-derived in backward; only sigma is kept.
  auto sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  auto mu = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));

  const float* xp = x.data().data();
  const float* gp = gain.data().data();
  const float* bp = offset.data().data();
  float* op = out.raw_data().data();
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r) {
    const float* row = xp + r * D;
    double m = 0.0;
    for (Index j = 0; j < D; ++j) m += static_cast<double>(row[j]);
    m /= static_cast<double>(D);
    double var = 0.0;
    for (Index j = 0; j < D; ++j) {
      const double d = static_cast<double>(row[j]) - m;
      var += d * d;
    }
    var /= static_cast<double>(D);
    const double sd = std::sqrt(var + static_cast<double>(eps));
    (*mu)[static_cast<std::size_t>(r)] = m;
    (*sigma)[static_cast<std::size_t>(r)] = sd;
    float* orow = op + r * D;
    for (Index j = 0; j < D; ++j) {
      const double xhat = (static_cast<double>(row[j]) - m) / sd;
      orow[j] = static_cast<float>(xhat * static_cast<double>(gp[j]) + static_cast<double>(bp[j]));
    }
  }

  auto xi = x.impl(), gi = gain.impl(), bi = offset.impl(), oi = out.impl();
  record_if_needed({&x, &gain, &offset}, out, [xi, gi, bi, oi, mu, sigma, rows, D]() {
    if (oi->grad.empty()) return;
    const float* xp = xi->data.data();
    const float* gp = gi->data.data();
    const float* gy = oi->grad.data();
    if (gi->requires_grad) gi->ensure_grad();
    if (bi->requires_grad) bi->ensure_grad();
    if (xi->requires_grad) xi->ensure_grad();
    for (Index r = 0; r < rows; ++r) {
      const double m = (*mu)[static_cast<std::size_t>(r)];
      const double sd = (*sigma)[static_cast<std::size_t>(r)];
      const float* row = xp + r * D;
      const float* gyr = gy + r * D;
      if (gi->requires_grad || bi->requires_grad) {
        for (Index j = 0; j < D; ++j) {
          const double xhat = (static_cast<double>(row[j]) - m) / sd;
          if (gi->requires_grad) gi->grad[static_cast<std::size_t>(j)] += static_cast<float>(gyr[j] * xhat);
          if (bi->requires_grad) bi->grad[static_cast<std::size_t>(j)] += gyr[j];
        }
      }
      if (xi->requires_grad) {
        double m1 = 0.0, m2 = 0.0;
        for (Index j = 0; j < D; ++j) {
          const double gh = static_cast<double>(gp[j]) * static_cast<double>(gyr[j]);
          const double xhat = (static_cast<double>(row[j]) - m) / sd;
          m1 += gh;
          m2 += gh * xhat;
        }
        m1 /= static_cast<double>(D);
        m2 /= static_cast<double>(D);
        float* gxr = xi->grad.data() + r * D;
        for (Index j = 0; j < D; ++j) {
          const double gh = static_cast<double>(gp[j]) * static_cast<double>(gyr[j]);
          const double xhat = (static_cast<double>(row[j]) - m) / sd;
          gxr[j] += static_cast<float>((gh - m1 - xhat * m2) / sd);
        }
      }
    }
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = make_tensor(x.shape(), false);
  const float* xp = x.data().data();
  float* op = out.raw_data().data();
  const Index n = x.numel();
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  for (Index i = 0; i < n; ++i) {
    const double v = static_cast<double>(xp[i]);
    op[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  auto xi = x.impl(), oi = out.impl();
  record_if_needed({&x}, out, [xi, oi, n]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    xi->ensure_grad();
    const float* xp = xi->data.data();
    const float* gy = oi->grad.data();
    float* gx = xi->grad.data();
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    for (Index i = 0; i < n; ++i) {
      const double v = static_cast<double>(xp[i]);
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += static_cast<float>(static_cast<double>(gy[i]) * (cdf + v * pdf));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcast

namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  Shape out_shape = broadcast_shapes(a.shape(), b.shape(), name);
  Tensor out = make_tensor(out_shape, false);
  const Index n = out.numel();
  const float* ap = a.data().data();
  const float* bp = b.data().data();
  float* op_ = out.raw_data().data();

  const bool same = a.shape() == b.shape();
  Shape astr, bstr, ostr;
  if (!same) {
    astr = broadcast_strides(a.shape(), out_shape);
    bstr = broadcast_strides(b.shape(), out_shape);
    ostr = row_major_strides(out_shape);
  }

  auto apply = [op](float x, float y) {
    switch (op) {
      case BinOp::Add: return x + y;
      case BinOp::Sub: return x - y;
      default: return x * y;
    }
  };

  if (same) {
    for (Index i = 0; i < n; ++i) op_[i] = apply(ap[i], bp[i]);
  } else {
    for (Index i = 0; i < n; ++i) {
      Index rem = i, ia = 0, ib = 0;
      for (std::size_t d = 0; d < out_shape.size(); ++d) {
        const Index id = rem / ostr[d];
        rem %= ostr[d];
        ia += id * astr[d];
        ib += id * bstr[d];
      }
      op_[i] = apply(ap[ia], bp[ib]);
    }
  }

  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  record_if_needed({&a, &b}, out,
                   [ai, bi, oi, op, same, astr, bstr, ostr, out_shape, n]() {
    if (oi->grad.empty()) return;
    const float* gy = oi->grad.data();
    auto add_into = [&](const std::shared_ptr<TensorImpl>& t, const Shape& str, bool is_a) {
      t->ensure_grad();
      float* g = t->grad.data();
      for (Index i = 0; i < n; ++i) {
        Index it = i;
        if (!same) {
          Index rem = i;
          it = 0;
          for (std::size_t d = 0; d < out_shape.size(); ++d) {
            const Index id = rem / ostr[d];
            rem %= ostr[d];
            it += id * str[d];
          }
        }
        double contrib = static_cast<double>(gy[i]);
        if (op == BinOp::Mul) {
          // d(a*b)/da = b and vice versa.
          const std::shared_ptr<TensorImpl>& other = is_a ? bi : ai;
          Index io = i;
          if (!same) {
            Index rem = i;
            io = 0;
            const Shape& so = is_a ? bstr : astr;
            for (std::size_t d = 0; d < out_shape.size(); ++d) {
              const Index id = rem / ostr[d];
              rem %= ostr[d];
              io += id * so[d];
            }
          }
          contrib *= static_cast<double>(other->data[static_cast<std::size_t>(io)]);
        } else if (op == BinOp::Sub && !is_a) {
          contrib = -contrib;
        }
        g[it] += static_cast<float>(contrib);
      }
    };
    if (ai->requires_grad) add_into(ai, astr, true);
    if (bi->requires_grad) add_into(bi, bstr, false);
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& x, double s) {
  Tensor out = make_tensor(x.shape(), false);
  const float* xp = x.data().data();
  float* op = out.raw_data().data();
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) op[i] = static_cast<float>(static_cast<double>(xp[i]) * s);
  auto xi = x.impl(), oi = out.impl();
  record_if_needed({&x}, out, [xi, oi, s, n]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    xi->ensure_grad();
    const float* gy = oi->grad.data();
    float* gx = xi->grad.data();
    for (Index i = 0; i < n; ++i) gx[i] += static_cast<float>(static_cast<double>(gy[i]) * s);
  });
  return out;
}

// ---------------------------------------------------------------------------
// reshape / permute

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = make_tensor(shape, false);
  out.impl()->data = x.impl()->data;
  auto xi = x.impl(), oi = out.impl();
  record_if_needed({&x}, out, [xi, oi]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    xi->ensure_grad();
    const std::size_t n = oi->grad.size();
    for (std::size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i];
  });
  return out;
}

namespace {

// dst[idx_permuted] = src[idx]; `axes` maps output dim -> input dim.
void permute_raw(const float* src, float* dst, const Shape& in_shape, const std::vector<int>& axes,
                 bool accumulate) {
  const std::size_t nd = in_shape.size();
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = in_shape[static_cast<std::size_t>(axes[i])];
  Shape in_str = row_major_strides(in_shape);
  Shape out_str = row_major_strides(out_shape);
  const Index n = shape_numel(in_shape);
  // Walk output positions in order; gather from input.
  for (Index o = 0; o < n; ++o) {
    Index rem = o, src_off = 0;
    for (std::size_t d = 0; d < nd; ++d) {
      const Index id = rem / out_str[d];
      rem %= out_str[d];
      src_off += id * in_str[static_cast<std::size_t>(axes[d])];
    }
    if (accumulate) {
      dst[o] += src[src_off];
    } else {
      dst[o] = src[src_off];
    }
  }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const std::size_t nd = static_cast<std::size_t>(x.ndim());
  if (axes.size() != nd) {
    throw ShapeError("permute: axes rank mismatch for " + shape_str(x.shape()));
  }
  std::vector<bool> seen(nd, false);
  for (int a : axes) {
    if (a < 0 || static_cast<std::size_t>(a) >= nd || seen[static_cast<std::size_t>(a)]) {
      throw ShapeError("permute: invalid axes for " + shape_str(x.shape()));
    }
    seen[static_cast<std::size_t>(a)] = true;
  }
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = x.dim(axes[i]);
  Tensor out = make_tensor(out_shape, false);
  permute_raw(x.data().data(), out.raw_data().data(), x.shape(), axes, false);

  auto xi = x.impl(), oi = out.impl();
  record_if_needed({&x}, out, [xi, oi, axes, nd]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    xi->ensure_grad();
    // Inverse permutation routes the gradient back.
    std::vector<int> inv(nd);
    for (std::size_t i = 0; i < nd; ++i) inv[static_cast<std::size_t>(axes[i])] = static_cast<int>(i);
    permute_raw(oi->grad.data(), xi->grad.data(), oi->shape, inv, true);
  });
  return out;
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += static_cast<double>(v);
  Tensor out = Tensor::from({1}, {static_cast<float>(acc)});
  auto xi = x.impl(), oi = out.impl();
  record_if_needed({&x}, out, [xi, oi]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    xi->ensure_grad();
    const float g = oi->grad[0];
    for (float& v : xi->grad) v += g;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double acc = 0.0;
  for (float v : x.data()) acc += static_cast<double>(v);
  Tensor out = Tensor::from({1}, {static_cast<float>(acc * inv)});
  auto xi = x.impl(), oi = out.impl();
  record_if_needed({&x}, out, [xi, oi, inv]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    xi->ensure_grad();
    const float g = static_cast<float>(static_cast<double>(oi->grad[0]) * inv);
    for (float& v : xi->grad) v += g;
  });
  return out;
}

}  // namespace ghr
