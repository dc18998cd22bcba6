#include "ghr/optimizer.hpp"

#include <cmath>

#include "ghr/errors.hpp"

namespace ghr {

AdamW::AdamW(std::vector<Tensor> params, Options options)
    : AdamW(std::move(params), std::vector<bool>(), std::move(options)) {}

AdamW::AdamW(std::vector<Tensor> params, std::vector<bool> decay_mask, Options options)
    : params_(std::move(params)), decay_(std::move(decay_mask)), options_(options) {
  if (decay_.empty()) {
    decay_.reserve(params_.size());
    for (const Tensor& p : params_) decay_.push_back(p.ndim() >= 2);
  }
  if (decay_.size() != params_.size()) {
    throw ShapeError("AdamW: decay mask size does not match parameter count");
  }
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;  // parameter unused this step
    auto data = p.raw_data();
    auto grad = p.raw_grad();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    const double wd = decay_[i] ? options_.weight_decay : 0.0;
    for (std::size_t e = 0; e < data.size(); ++e) {
      const double g = static_cast<double>(grad[e]);
      m[e] = options_.beta1 * m[e] + (1.0 - options_.beta1) * g;
      v[e] = options_.beta2 * v[e] + (1.0 - options_.beta2) * g * g;
      const double mhat = m[e] / bc1;
      const double vhat = v[e] / bc2;
      const double x = static_cast<double>(data[e]);
      data[e] = static_cast<float>(x - options_.lr * (mhat / (std::sqrt(vhat) + options_.eps) + wd * x));
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace ghr
