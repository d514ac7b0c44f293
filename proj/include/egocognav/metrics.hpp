#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "egocognav/losses.hpp"

namespace egocognav {

// One evaluated forecast window. Trajectories are world-frame positions
// integrated from the prediction origin; heads stay in the 6D encoding.
struct EvalRecord {
  std::string episode_id;
  std::size_t window_start = 0;
  Tensor pred_xy;   // (T2, 2)
  Tensor gt_xy;     // (T2, 2)
  Tensor pred_head; // (T2, 6)
  Tensor gt_head;   // (T2, 6)
  double u_hat = 0.0;
  double u_human = 0.0;
  std::uint8_t env_mask = 0;       // at the prediction step
  std::uint8_t behavior_mask = 0;  // at the prediction step
  bool behavior_onset = false;
};

// Behaviors counted as difficulty events; checking signage is not one.
constexpr std::uint8_t kDifficultyMask =
    behavior_label::kHes | behavior_label::kWrong | behavior_label::kBack |
    behavior_label::kScan | behavior_label::kLb;

// True at the first step of a contiguous run of labeled behavior.
inline bool behavior_onset(const Episode& ep, std::size_t step) {
  if (ep.behavior_labels[step] == 0) return false;
  return step == 0 || ep.behavior_labels[step - 1] == 0;
}

// Integrates body-frame deltas from an origin pose into world xy positions,
// one row per step.
inline Tensor world_positions(const Pose2D& origin, const Tensor& deltas) {
  if (deltas.cols() != 3)
    throw ShapeMismatch("world_positions expects (T,3), got " +
                        deltas.shape_str());
  std::vector<BodyDelta> v(deltas.rows());
  for (std::size_t i = 0; i < deltas.rows(); ++i)
    v[i] = {deltas.at(i, 0), deltas.at(i, 1), deltas.at(i, 2)};
  const std::vector<Pose2D> poses = integrate_deltas(origin, v);
  Tensor out = Tensor::zeros(deltas.rows(), 2);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    out.at(i, 0) = poses[i].x;
    out.at(i, 1) = poses[i].y;
  }
  return out;
}

inline double ade(const Tensor& pred_xy, const Tensor& gt_xy) {
  if (!pred_xy.same_shape(gt_xy) || pred_xy.cols() != 2 || pred_xy.rows() == 0)
    throw ShapeMismatch("ade: " + pred_xy.shape_str() + " vs " +
                        gt_xy.shape_str());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred_xy.rows(); ++i)
    sum += std::hypot(pred_xy.at(i, 0) - gt_xy.at(i, 0),
                      pred_xy.at(i, 1) - gt_xy.at(i, 1));
  return sum / static_cast<double>(pred_xy.rows());
}

inline double fde(const Tensor& pred_xy, const Tensor& gt_xy) {
  if (!pred_xy.same_shape(gt_xy) || pred_xy.cols() != 2 || pred_xy.rows() == 0)
    throw ShapeMismatch("fde: " + pred_xy.shape_str() + " vs " +
                        gt_xy.shape_str());
  const std::size_t last = pred_xy.rows() - 1;
  return std::hypot(pred_xy.at(last, 0) - gt_xy.at(last, 0),
                    pred_xy.at(last, 1) - gt_xy.at(last, 1));
}

// Same quantity the training loss minimizes for head rotations.
inline double head_l1_metric(const Tensor& pred, const Tensor& gt) {
  return head_loss_value(pred, gt);
}

inline double mae(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw LengthMismatch("mae: input lengths differ");
  if (a.empty()) throw TooFew("mae: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::fabs(a[i] - b[i]);
  return sum / static_cast<double>(a.size());
}

namespace metric_detail {

// Average ranks (1-based); tied values share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double shared =
        0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  return cov / std::sqrt(va * vb);
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace metric_detail

inline double spearman_rho(const std::vector<double>& a,
                           const std::vector<double>& b) {
  if (a.size() != b.size())
    throw LengthMismatch("spearman_rho: input lengths differ");
  if (a.size() < 3) throw TooFew("spearman_rho needs at least 3 pairs");
  auto constant = [](const std::vector<double>& v) {
    for (double x : v)
      if (x != v[0]) return false;
    return true;
  };
  if (constant(a) || constant(b))
    throw DegenerateInput("spearman_rho: constant input");
  return metric_detail::pearson(metric_detail::average_ranks(a),
                                metric_detail::average_ranks(b));
}

// Fraction of the top-20% most uncertain windows (by u_hat, stable order on
// ties) whose behavior set contains a difficulty event.
inline double high_u_precision(const std::vector<EvalRecord>& records) {
  const std::size_t n = records.size();
  if (n < 5) throw TooFew("high_u_precision needs at least 5 records");
  const std::size_t k = (n + 4) / 5;  // ceil(0.2 n)
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return records[i].u_hat > records[j].u_hat;
  });
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i)
    if (records[order[i]].behavior_mask & kDifficultyMask) ++hits;
  return static_cast<double>(hits) / static_cast<double>(k);
}

// Mean u_hat at behavior onsets minus mean u_hat over neutral windows.
inline double delta_u(const std::vector<EvalRecord>& records) {
  std::vector<double> onset, neutral;
  for (const EvalRecord& r : records) {
    if (r.behavior_onset) onset.push_back(r.u_hat);
    if (r.behavior_mask == 0) neutral.push_back(r.u_hat);
  }
  if (onset.empty()) throw EmptyGroup("delta_u: no behavior onsets");
  if (neutral.empty()) throw EmptyGroup("delta_u: no neutral windows");
  return metric_detail::mean(onset) - metric_detail::mean(neutral);
}

// Cohen's d with pooled standard deviation.
inline double effect_size(const std::vector<double>& a,
                          const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw TooFew("effect_size needs at least 2 per group");
  const double ma = metric_detail::mean(a);
  const double mb = metric_detail::mean(b);
  double sa = 0.0, sb = 0.0;
  for (double x : a) sa += (x - ma) * (x - ma);
  for (double x : b) sb += (x - mb) * (x - mb);
  const double pooled =
      std::sqrt((sa + sb) /
                static_cast<double>(a.size() + b.size() - 2));
  if (pooled == 0.0) throw ZeroVariance("effect_size: pooled std is zero");
  return (ma - mb) / pooled;
}

struct BehaviorRow {
  std::string behavior;
  bool present = false;
  double mean_u = 0.0;
  bool has_effect = false;
  double effect = 0.0;
};

// Mean predicted uncertainty per behavior plus effect size against the
// neutral group (no difficulty behavior at the prediction step). Any is the
// union of the five rows; Neutral is its complement.
inline std::vector<BehaviorRow> behavior_breakdown(
    const std::vector<EvalRecord>& records) {
  constexpr std::uint8_t bits[5] = {
      behavior_label::kHes, behavior_label::kWrong, behavior_label::kBack,
      behavior_label::kScan, behavior_label::kLb};
  constexpr const char* names[5] = {"HES", "WRONG", "BACK", "SCAN", "LB"};

  std::vector<double> neutral;
  for (const EvalRecord& r : records)
    if (!(r.behavior_mask & kDifficultyMask)) neutral.push_back(r.u_hat);

  auto make_row = [&](const std::string& name,
                      const std::vector<double>& group, bool vs_neutral) {
    BehaviorRow row;
    row.behavior = name;
    if (group.empty()) return row;
    row.present = true;
    row.mean_u = metric_detail::mean(group);
    if (vs_neutral && group.size() >= 2 && neutral.size() >= 2) {
      try {
        row.effect = effect_size(group, neutral);
        row.has_effect = true;
      } catch (const ZeroVariance&) {
      }
    }
    return row;
  };

  std::vector<BehaviorRow> out;
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> group;
    for (const EvalRecord& r : records)
      if (r.behavior_mask & bits[i]) group.push_back(r.u_hat);
    out.push_back(make_row(names[i], group, true));
  }
  std::vector<double> any;
  for (const EvalRecord& r : records)
    if (r.behavior_mask & kDifficultyMask) any.push_back(r.u_hat);
  out.push_back(make_row("Any", any, true));
  out.push_back(make_row("Neutral", neutral, false));
  return out;
}

// Top ceil(0.2 N) windows by ground-truth uncertainty: the high-difficulty
// scenario split used alongside the all-scenario columns.
inline std::vector<EvalRecord> subset_by_true_uncertainty(
    const std::vector<EvalRecord>& records) {
  const std::size_t n = records.size();
  if (n < 5) throw TooFew("uncertainty subset needs at least 5 records");
  const std::size_t k = (n + 4) / 5;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return records[i].u_human > records[j].u_human;
  });
  std::vector<EvalRecord> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(records[order[i]]);
  return out;
}

// CSV layouts for the three report tables. NaN prints as "--" so rows can
// mark fields that do not apply.

namespace metric_detail {

inline std::string fmt_cell(double v) {
  return std::isnan(v) ? std::string("--") : detail::fmt_g17(v);
}

}  // namespace metric_detail

struct Table1Row {
  std::string method;
  double ade_all = 0.0, fde_all = 0.0, head_l1_all = 0.0;
  double ade_high = 0.0, fde_high = 0.0, head_l1_high = 0.0;
};

inline std::string table1_csv(const std::vector<Table1Row>& rows) {
  std::string out =
      "method,ade,fde,head_l1,ade_high_u,fde_high_u,head_l1_high_u\n";
  for (const Table1Row& r : rows) {
    out += r.method;
    for (double v : {r.ade_all, r.fde_all, r.head_l1_all, r.ade_high,
                     r.fde_high, r.head_l1_high}) {
      out += ',';
      out += metric_detail::fmt_cell(v);
    }
    out += '\n';
  }
  return out;
}

struct Table2Row {
  std::string method;
  double mae = 0.0, rho = 0.0, precision = 0.0, delta_u = 0.0, effect = 0.0;
};

inline std::string table2_csv(const std::vector<Table2Row>& rows) {
  std::string out = "method,mae,spearman_rho,high_u_precision,delta_u,effect_size\n";
  for (const Table2Row& r : rows) {
    out += r.method;
    for (double v : {r.mae, r.rho, r.precision, r.delta_u, r.effect}) {
      out += ',';
      out += metric_detail::fmt_cell(v);
    }
    out += '\n';
  }
  return out;
}

inline std::string table3_csv(const std::vector<BehaviorRow>& rows) {
  std::string out = "behavior,mean_u,effect\n";
  for (const BehaviorRow& r : rows) {
    if (!r.present) continue;
    out += r.behavior;
    out += ',';
    out += detail::fmt_g17(r.mean_u);
    out += ',';
    out += r.has_effect ? detail::fmt_g17(r.effect) : std::string("--");
    out += '\n';
  }
  return out;
}

// Minimal reader for the emitted tables (no quoting; fields never contain
// commas). Returns rows of cells including the header row.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  for (char c : text) {
    if (c == ',') {
      row.push_back(cell);
      cell.clear();
    } else if (c == '\n') {
      row.push_back(cell);
      cell.clear();
      rows.push_back(row);
      row.clear();
    } else {
      cell += c;
    }
  }
  if (!cell.empty() || !row.empty()) {
    row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace egocognav
