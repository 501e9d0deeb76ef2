#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "s4l/autograd.hpp"

namespace s4l {
namespace nn {

// Named-tensor registry. Every layer registers its parameters (trainable)
// and buffers (batch-norm running statistics) under a slash-delimited path;
// checkpointing, partial transfer and the optimizer all work off these names.
template <class T>
struct ParamRegistry {
  std::vector<std::pair<std::string, ag::Var<T>>> params;
  std::vector<std::pair<std::string, std::shared_ptr<Arr<T>>>> buffers;

  ag::Var<T> add_param(const std::string& name, Arr<T> value) {
    for (auto& [n, _] : params)
      if (n == name) raise(ErrorKind::Contract, "duplicate parameter " + name);
    auto v = ag::parameter(std::move(value));
    params.emplace_back(name, v);
    return v;
  }

  std::shared_ptr<Arr<T>> add_buffer(const std::string& name, Arr<T> value) {
    auto b = std::make_shared<Arr<T>>(std::move(value));
    buffers.emplace_back(name, b);
    return b;
  }

  ag::Var<T> find_param(const std::string& name) const {
    for (auto& [n, v] : params)
      if (n == name) return v;
    return nullptr;
  }

  int64_t param_count() const {
    int64_t c = 0;
    for (auto& [n, v] : params) c += v->value.numel();
    return c;
  }

  void zero_grad() {
    for (auto& [n, v] : params) v->grad = Arr<T>();
  }
};

// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
Arr<T> uniform_init(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Arr<T> a(std::move(shape));
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int64_t i = 0; i < a.numel(); ++i)
    a[i] = static_cast<T>(rng.uniform(-bound, bound));
  return a;
}

template <class T>
struct Linear {
  ag::Var<T> w, b;

  Linear() = default;
  Linear(ParamRegistry<T>& reg, const std::string& prefix, int64_t in,
         int64_t out, Rng& rng) {
    w = reg.add_param(prefix + "/weight", uniform_init<T>({out, in}, in, rng));
    b = reg.add_param(prefix + "/bias", uniform_init<T>({out}, in, rng));
  }

  ag::Var<T> forward(const ag::Var<T>& x) const { return ag::linear(x, w, b); }
};

template <class T>
struct Conv2d {
  ag::Var<T> w, b;
  ag::ConvSpec spec;

  Conv2d() = default;
  Conv2d(ParamRegistry<T>& reg, const std::string& prefix, int64_t in_ch,
         int64_t out_ch, int64_t kh, int64_t kw, ag::ConvSpec s, Rng& rng)
      : spec(s) {
    int64_t fan_in = in_ch * kh * kw;
    w = reg.add_param(prefix + "/weight",
                      uniform_init<T>({out_ch, in_ch, kh, kw}, fan_in, rng));
    b = reg.add_param(prefix + "/bias", uniform_init<T>({out_ch}, fan_in, rng));
  }

  ag::Var<T> forward(const ag::Var<T>& x) const {
    return ag::conv2d(x, w, b, spec);
  }
};

template <class T>
struct BatchNorm {
  ag::Var<T> gamma, beta;
  std::shared_ptr<Arr<T>> running_mean, running_var;

  BatchNorm() = default;
  BatchNorm(ParamRegistry<T>& reg, const std::string& prefix, int64_t ch) {
    gamma = reg.add_param(prefix + "/gamma", Arr<T>::full({ch}, T(1)));
    beta = reg.add_param(prefix + "/beta", Arr<T>::zeros({ch}));
    running_mean = reg.add_buffer(prefix + "/running_mean", Arr<T>::zeros({ch}));
    running_var = reg.add_buffer(prefix + "/running_var", Arr<T>::full({ch}, T(1)));
  }

  ag::Var<T> forward(const ag::Var<T>& x, bool training) const {
    return ag::batchnorm(x, gamma, beta, running_mean.get(), running_var.get(),
                         training);
  }
};

// Adam with the standard published defaults; only the learning rate is a
// pipeline-level setting.
template <class T>
class Adam {
 public:
  Adam(std::vector<ag::Var<T>> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
        eps_(eps) {
    state_.resize(params_.size());
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p->grad.numel() == 0) continue;  // unused this step
      auto& st = state_[i];
      if (st.m.numel() == 0) {
        st.m = Arr<T>::zeros(p->value.shape);
        st.v = Arr<T>::zeros(p->value.shape);
      }
      for (int64_t j = 0; j < p->value.numel(); ++j) {
        double g = static_cast<double>(p->grad[j]);
        double m = beta1_ * st.m[j] + (1.0 - beta1_) * g;
        double v = beta2_ * st.v[j] + (1.0 - beta2_) * g * g;
        st.m[j] = static_cast<T>(m);
        st.v[j] = static_cast<T>(v);
        double update = (m / bc1) / (std::sqrt(v / bc2) + eps_);
        p->value[j] -= static_cast<T>(lr_ * update);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p->grad = Arr<T>();
  }

 private:
  struct State {
    Arr<T> m, v;
  };
  std::vector<ag::Var<T>> params_;
  std::vector<State> state_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace nn
}  // namespace s4l
