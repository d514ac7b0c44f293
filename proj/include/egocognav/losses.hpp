#pragma once

#include <cmath>
#include <cstddef>

#include "egocognav/geometry.hpp"
#include "egocognav/model.hpp"

namespace egocognav {

struct LossWeights {
  double lambda_traj = 1.0;
  double lambda_head = 1.0;
  double lambda_u = 1.0;
  double lambda_var = 0.3;
  double alpha = 0.3;
  double gamma = 0.98;

  void check() const {
    // gamma == 1.0 is the documented discount-off setting used by ablations.
    if (gamma != 1.0 && (gamma < 0.95 || gamma > 0.99))
      throw BadConfig("gamma outside [0.95, 0.99]");
    if (lambda_traj < 0 || lambda_head < 0 || lambda_u < 0 || lambda_var < 0 ||
        alpha < 0)
      throw BadConfig("loss weights must be nonnegative");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"lambda_traj", lambda_traj},
                          {"lambda_head", lambda_head},
                          {"lambda_u", lambda_u},
                          {"lambda_var", lambda_var},
                          {"alpha", alpha},
                          {"gamma", gamma}};
  }

  static LossWeights from_json(const nlohmann::json& j) {
    static const char* known[] = {"lambda_traj", "lambda_head", "lambda_u",
                                  "lambda_var",  "alpha",       "gamma"};
    for (const auto& item : j.items()) {
      bool ok = false;
      for (const char* k : known) ok = ok || item.key() == k;
      if (!ok) throw BadConfig("unknown loss weight key: " + item.key());
    }
    LossWeights w;
    w.lambda_traj = j.value("lambda_traj", w.lambda_traj);
    w.lambda_head = j.value("lambda_head", w.lambda_head);
    w.lambda_u = j.value("lambda_u", w.lambda_u);
    w.lambda_var = j.value("lambda_var", w.lambda_var);
    w.alpha = j.value("alpha", w.alpha);
    w.gamma = j.value("gamma", w.gamma);
    w.check();
    return w;
  }
};

namespace loss_detail {

constexpr double kStdEps = 1e-12;
constexpr double kGramSchmidtEps = 1e-12;

// Per-column population std on the tape. Running pred and gt through the
// same ops makes the std gap cancel bitwise when the deviations agree, so
// a perfect prediction scores exactly zero.
inline Var std_cols(Tape& t, Var x) {
  Var mean = t.mean_rows(x);
  Var dev = t.add_row(x, t.scale(mean, -1.0));
  return t.sqrt(t.mean_rows(t.square(dev)), kStdEps);
}

}  // namespace loss_detail

// Row weights gamma^1 .. gamma^t2 for the discounted trajectory L1 term.
inline Tensor traj_discounts(double gamma, std::size_t t2) {
  Tensor out = Tensor::zeros(1, t2);
  double w = 1.0;
  for (std::size_t i = 0; i < t2; ++i) {
    w *= gamma;
    out[i] = w;
  }
  return out;
}

// Discounted per-step L1 plus a penalty on the per-dimension temporal
// standard deviation gap between prediction and target.
inline Var traj_loss(Tape& t, Var pred, const Tensor& gt,
                     const LossWeights& w) {
  const Tensor& pv = t.value(pred);
  if (!pv.same_shape(gt))
    throw ShapeMismatch("traj_loss " + pv.shape_str() + " vs " +
                        gt.shape_str());
  const std::size_t t2 = gt.rows(), dim = gt.cols();
  Tensor discounts = traj_discounts(w.gamma, t2);
  Tensor weight = Tensor::zeros(t2, dim);
  for (std::size_t i = 0; i < t2; ++i)
    for (std::size_t j = 0; j < dim; ++j) weight.at(i, j) = discounts[i];

  Var l1 = t.sum_all(t.mul(t.abs(t.sub(pred, t.constant(gt))),
                           t.constant(weight)));

  Var gap = t.sub(loss_detail::std_cols(t, pred),
                  loss_detail::std_cols(t, t.constant(gt)));
  return t.add(l1, t.scale(t.sum_all(t.square(gap)), w.lambda_var));
}

// Differentiable Gram-Schmidt of one 6D row; returns the transpose of the
// recovered rotation as a stacked (3,3) node.
inline Var rot6d_transpose_var(Tape& t, Var row6) {
  const double eps = loss_detail::kGramSchmidtEps;
  Var a1 = t.slice_cols(row6, 0, 3);
  Var a2 = t.slice_cols(row6, 3, 3);
  Var b1 = t.sdiv(a1, t.sqrt(t.sum_all(t.square(a1)), eps));
  Var u2 = t.sub(a2, t.smul(b1, t.sum_all(t.mul(b1, a2))));
  Var b2 = t.sdiv(u2, t.sqrt(t.sum_all(t.square(u2)), eps));
  Var b3 = t.cross3(b1, b2);
  return t.concat_rows({b1, b2, b3});
}

// Mean relative-rotation L1 across future steps.
inline Var head_loss(Tape& t, Var pred, const Tensor& gt) {
  const Tensor& pv = t.value(pred);
  if (!pv.same_shape(gt) || gt.cols() != 6)
    throw ShapeMismatch("head_loss " + pv.shape_str() + " vs " +
                        gt.shape_str());
  const std::size_t t2 = gt.rows();
  Tensor identity = Tensor::zeros(3, 3);
  identity.at(0, 0) = identity.at(1, 1) = identity.at(2, 2) = 1.0;
  Var acc = t.scalar(0.0);
  for (std::size_t i = 0; i < t2; ++i) {
    Rot6D g;
    for (std::size_t j = 0; j < 6; ++j) g.a[j] = gt.at(i, j);
    RotMatrix gm = rot6d_to_matrix(g);
    Tensor gmat = Tensor::zeros(3, 3);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) gmat.at(r, c) = gm.at(r, c);
    Var rel = t.matmul(rot6d_transpose_var(t, t.slice_rows(pred, i, 1)),
                       t.constant(gmat));
    acc = t.add(acc, t.sum_all(t.abs(t.sub(rel, t.constant(identity)))));
  }
  return t.scale(acc, 1.0 / static_cast<double>(t2));
}

// Same quantity on plain values; degenerate 6D inputs throw from the
// conversion on either side.
inline double head_loss_value(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt) || gt.cols() != 6)
    throw ShapeMismatch("head_loss " + pred.shape_str() + " vs " +
                        gt.shape_str());
  double acc = 0.0;
  for (std::size_t i = 0; i < gt.rows(); ++i) {
    Rot6D p, g;
    for (std::size_t j = 0; j < 6; ++j) {
      p.a[j] = pred.at(i, j);
      g.a[j] = gt.at(i, j);
    }
    acc += relative_rotation_l1(rot6d_to_matrix(p), rot6d_to_matrix(g));
  }
  return acc / static_cast<double>(gt.rows());
}

inline Var u_loss(Tape& t, Var u_hat, double u_human) {
  const Tensor& uv = t.value(u_hat);
  if (!uv.is_scalar()) throw NotScalar("u_loss expects a scalar prediction");
  const double u = uv.scalar_value();
  if (u < 0.0 || u > 1.0) throw OutOfRange("u_hat outside [0,1]");
  if (u_human < 0.0 || u_human > 1.0) throw OutOfRange("u_human outside [0,1]");
  return t.square(t.affine(u_hat, 1.0, -u_human));
}

// Mean per-class binary cross-entropy, summed over the two label heads.
inline Var aux_loss(Tape& t, Var env_logits, Var behavior_logits,
                    const Tensor& env_targets, const Tensor& behavior_targets) {
  return t.add(t.mean_all(t.bce_with_logits(env_logits, env_targets)),
               t.mean_all(t.bce_with_logits(behavior_logits,
                                            behavior_targets)));
}

inline Var total_loss(Tape& t, Var l_traj, Var l_head, Var l_u, Var l_aux,
                      const LossWeights& w) {
  for (Var v : {l_traj, l_head, l_u, l_aux}) {
    if (!t.value(v).all_finite()) throw NonFinite("loss part not finite");
  }
  return t.add(t.add(t.add(t.scale(l_traj, w.lambda_traj),
                           t.scale(l_head, w.lambda_head)),
                     t.scale(l_u, w.lambda_u)),
               t.scale(l_aux, w.alpha));
}

struct LossBreakdown {
  Var total;
  Var traj;
  Var head;
  Var u;
  Var aux;
};

// Full supervised loss for one window. Forecasts without cognition outputs
// (no uncertainty or label heads) contribute zero for those parts.
inline LossBreakdown window_loss(Tape& t, const ForecastVars& fv,
                                 const WindowSample& s, const LossWeights& w) {
  Var lt = traj_loss(t, fv.traj, s.future_traj(), w);
  Var lh = head_loss(t, fv.head, s.future_head());
  Var lu = t.scalar(0.0);
  Var la = t.scalar(0.0);
  if (fv.env_logits.valid()) {
    lu = u_loss(t, fv.u, s.u_target());
    const Tensor& env = t.value(fv.env_logits);
    const Tensor& beh = t.value(fv.behavior_logits);
    la = aux_loss(t, fv.env_logits, fv.behavior_logits,
                  model_detail::label_bits(s.env_union(), env.cols()),
                  model_detail::label_bits(s.behavior_union(), beh.cols()));
  }
  return {total_loss(t, lt, lh, lu, la, w), lt, lh, lu, la};
}

}  // namespace egocognav
