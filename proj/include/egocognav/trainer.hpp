#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "egocognav/losses.hpp"
#include "egocognav/optim.hpp"

namespace egocognav {

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double traj = 0.0;
  double head = 0.0;
  double u = 0.0;
  double aux = 0.0;
  double total = 0.0;
  double val_total = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t final_step = 0;
};

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,lr,L_traj,L_head,L_U,L_aux,L_total,val_total\n";
  for (const EpochLog& e : log) {
    out += std::to_string(e.epoch);
    for (double v : {e.lr, e.traj, e.head, e.u, e.aux, e.total, e.val_total}) {
      out += ',';
      out += detail::fmt_g17(v);
    }
    out += '\n';
  }
  return out;
}

template <class Model>
double mean_total_loss(Model& model, const std::vector<WindowSample>& samples,
                       const LossWeights& w) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const WindowSample& s : samples) {
    Tape t;
    sum += t.value(window_loss(t, model.forward(t, s), s, w).total)
               .scalar_value();
  }
  return sum / static_cast<double>(samples.size());
}

// Mini-batch loop with shuffled batches, global-norm clipping, warm-up plus
// cosine schedule, and a callback fired whenever validation improves.
// start_step continues the schedule of a resumed run. Deterministic for a
// fixed (model seed, data, train seed).
template <class Model>
TrainResult train_model(
    Model& model, const std::vector<WindowSample>& train,
    const std::vector<WindowSample>& val, const LossWeights& w,
    const OptimizerConfig& oc, std::uint64_t seed, std::size_t start_step = 0,
    const std::function<void(std::size_t step, double val_total)>& on_best =
        nullptr) {
  w.check();
  oc.check();
  if (train.empty()) throw TooFew("training set is empty");

  const std::size_t spe = (train.size() + oc.batch_size - 1) / oc.batch_size;
  const std::size_t total_steps = start_step + spe * oc.epochs;
  const std::size_t warmup_steps = spe * oc.warmup_epochs;

  AdamW opt(model.params(), oc);
  opt.set_step_count(start_step);
  Rng order_rng(seed);
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= oc.epochs; ++epoch) {
    Rng erng = order_rng.fork(epoch);
    erng.shuffle(idx);
    EpochLog entry;
    entry.epoch = epoch;
    for (std::size_t b0 = 0; b0 < idx.size(); b0 += oc.batch_size) {
      const std::size_t nb = std::min(oc.batch_size, idx.size() - b0);
      const double inv = 1.0 / static_cast<double>(nb);
      model.params().zero_grads();
      for (std::size_t k = 0; k < nb; ++k) {
        const WindowSample& s = train[idx[b0 + k]];
        Tape t;
        LossBreakdown parts = window_loss(t, model.forward(t, s), s, w);
        const double total = t.value(parts.total).scalar_value();
        if (!std::isfinite(total)) throw NonFinite("training loss");
        t.backward(t.scale(parts.total, inv));
        entry.traj += t.value(parts.traj).scalar_value();
        entry.head += t.value(parts.head).scalar_value();
        entry.u += t.value(parts.u).scalar_value();
        entry.aux += t.value(parts.aux).scalar_value();
        entry.total += total;
      }
      opt.clip_gradients();
      entry.lr = lr_at(opt.step_count() + 1, total_steps, warmup_steps,
                       oc.lr_max);
      opt.step(entry.lr);
    }
    const double n = static_cast<double>(train.size());
    entry.traj /= n;
    entry.head /= n;
    entry.u /= n;
    entry.aux /= n;
    entry.total /= n;
    entry.val_total =
        val.empty() ? entry.total : mean_total_loss(model, val, w);
    if (!std::isfinite(entry.val_total)) throw NonFinite("validation loss");
    result.log.push_back(entry);
    if (entry.val_total < result.best_val) {
      result.best_val = entry.val_total;
      result.best_epoch = epoch;
      if (on_best) on_best(opt.step_count(), entry.val_total);
    }
  }
  result.final_step = opt.step_count();
  return result;
}

}  // namespace egocognav
