#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "egocognav/tape.hpp"
#include "json.hpp"

namespace egocognav {

struct OptimizerConfig {
  double lr_max = 5e-5;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 200;
  std::size_t warmup_epochs = 2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;

  void check() const {
    if (lr_max <= 0.0) throw BadConfig("lr_max must be positive");
    if (batch_size == 0) throw BadConfig("batch_size must be positive");
    if (epochs == 0) throw BadConfig("epochs must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw BadConfig("betas must lie in [0,1)");
    if (eps <= 0.0) throw BadConfig("eps must be positive");
    if (clip_norm <= 0.0) throw BadConfig("clip_norm must be positive");
    if (weight_decay < 0.0) throw BadConfig("weight_decay must be nonnegative");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"lr_max", lr_max},
                          {"weight_decay", weight_decay},
                          {"batch_size", batch_size},
                          {"epochs", epochs},
                          {"warmup_epochs", warmup_epochs},
                          {"beta1", beta1},
                          {"beta2", beta2},
                          {"eps", eps},
                          {"clip_norm", clip_norm}};
  }

  static OptimizerConfig from_json(const nlohmann::json& j) {
    static const char* known[] = {"lr_max",        "weight_decay", "batch_size",
                                  "epochs",        "warmup_epochs", "beta1",
                                  "beta2",         "eps",          "clip_norm"};
    for (const auto& item : j.items()) {
      bool ok = false;
      for (const char* k : known) ok = ok || item.key() == k;
      if (!ok) throw BadConfig("unknown optimizer key: " + item.key());
    }
    OptimizerConfig c;
    c.lr_max = j.value("lr_max", c.lr_max);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.check();
    return c;
  }
};

// Linear warm-up from zero, then cosine decay to zero. Both branches meet at
// lr_max, and the final step lands on exactly zero.
inline double lr_at(std::size_t step, std::size_t total_steps,
                    std::size_t warmup_steps, double lr_max) {
  if (total_steps == 0) return 0.0;
  if (step > total_steps) step = total_steps;
  if (warmup_steps > 0 && step < warmup_steps) {
    return lr_max * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
  }
  if (total_steps <= warmup_steps) return lr_max;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return lr_max * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// Decoupled AdamW. Decay is the multiplicative form p *= (1 - lr*wd), applied
// before the moment update and only to parameters flagged for decay.
class AdamW {
 public:
  AdamW(ParamStore& params, const OptimizerConfig& cfg)
      : params_(&params), cfg_(cfg) {
    cfg_.check();
    m_.reserve(params.count());
    v_.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
      const Tensor& val = params.at(i).value;
      m_.push_back(Tensor::zeros(val.rows(), val.cols()));
      v_.push_back(Tensor::zeros(val.rows(), val.cols()));
    }
  }

  std::size_t step_count() const { return step_; }
  void set_step_count(std::size_t s) { step_ = s; }

  // Scales all gradients so their joint norm is at most clip_norm; returns
  // the pre-clip norm.
  double clip_gradients() {
    double sq = 0.0;
    for (std::size_t i = 0; i < params_->count(); ++i) {
      const Tensor& g = params_->at(i).grad;
      for (std::size_t j = 0; j < g.size(); ++j) sq += g[j] * g[j];
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) {
      const double scale = cfg_.clip_norm / norm;
      for (std::size_t i = 0; i < params_->count(); ++i) {
        Tensor& g = params_->at(i).grad;
        for (std::size_t j = 0; j < g.size(); ++j) g[j] *= scale;
      }
    }
    return norm;
  }

  void step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_->count(); ++i) {
      Parameter& p = params_->at(i);
      if (p.value.size() != m_[i].size())
        throw ShapeMismatch("optimizer state does not match parameter " +
                            p.name);
      if (p.decay && cfg_.weight_decay > 0.0) {
        const double keep = 1.0 - lr * cfg_.weight_decay;
        for (std::size_t j = 0; j < p.value.size(); ++j) p.value[j] *= keep;
      }
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = p.grad[j];
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        p.value[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  ParamStore* params_;
  OptimizerConfig cfg_;
  std::size_t step_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace egocognav
