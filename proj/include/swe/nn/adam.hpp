#pragma once

#include "swe/nn/layers.hpp"

namespace swe::nn {

// Adam with per-parameter moment state. The state vectors are exposed for
// checkpointing so interrupted runs resume bit-exactly.
template <class T>
class Adam {
 public:
  explicit Adam(ParamStore<T>& ps, double lr = 1e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : ps_(&ps), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& [name, v] : ps.params()) {
      m_.push_back(Tensor<T>::zeros(v.val().shape()));
      v_.push_back(Tensor<T>::zeros(v.val().shape()));
    }
  }

  void zero_grad() {
    for (auto& [name, p] : ps_->params()) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    std::size_t idx = 0;
    for (auto& [name, p] : ps_->params()) {
      Tensor<T>& m = m_[idx];
      Tensor<T>& v = v_[idx];
      ++idx;
      Tensor<T>& g = p.grad();
      Tensor<T>& w = p.val();
      const std::int64_t n = w.numel();
      for (std::int64_t i = 0; i < n; ++i) {
        const double gi = double(g[i]);
        const double mi = beta1_ * double(m[i]) + (1.0 - beta1_) * gi;
        const double vi = beta2_ * double(v[i]) + (1.0 - beta2_) * gi * gi;
        m[i] = T(mi);
        v[i] = T(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        w[i] = T(double(w[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  std::vector<Tensor<T>>& m_state() { return m_; }
  std::vector<Tensor<T>>& v_state() { return v_; }

 private:
  ParamStore<T>* ps_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// Plateau scheduler: multiplies the rate by `factor` after `patience` epochs
// without validation improvement.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.2, int patience = 2)
      : factor_(factor), patience_(patience) {}

  // Returns true when the rate was reduced this epoch.
  bool observe(double val_loss, double& lr) {
    if (val_loss < best_ - 1e-12) {
      best_ = val_loss;
      bad_epochs_ = 0;
      return false;
    }
    if (++bad_epochs_ >= patience_) {
      lr *= factor_;
      bad_epochs_ = 0;
      return true;
    }
    return false;
  }

  double best() const { return best_; }
  void set_state(double best, int bad) {
    best_ = best;
    bad_epochs_ = bad;
  }
  int bad_epochs() const { return bad_epochs_; }

 private:
  double factor_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

}  // namespace swe::nn
