#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "egocognav/episode.hpp"
#include "egocognav/geometry.hpp"
#include "json.hpp"

namespace egocognav {

// Non-learned motion predictors return plain tensors; the learned
// transformer baseline lives in model.hpp as MTransformer.
struct BaselineForecast {
  Tensor traj;  // (T2, 3)
  Tensor head;  // (T2, 6)
};

namespace baseline_detail {

inline Rot6D row6(const Tensor& m, std::size_t r) {
  Rot6D v;
  for (std::size_t j = 0; j < 6; ++j) v.a[j] = m.at(r, j);
  return v;
}

inline double dpsi_std(const WindowSample& s) {
  Tensor motion = s.motion_past();
  const std::size_t n = motion.rows();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += motion.at(i, 2);
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = motion.at(i, 2) - mean;
    var += d * d;
  }
  return std::sqrt(var / static_cast<double>(n));
}

// Normal-equations least squares for a handful of columns.
inline std::vector<double> least_squares(
    const std::vector<std::vector<double>>& rows,
    const std::vector<double>& y) {
  if (rows.size() != y.size())
    throw LengthMismatch("least_squares: rows vs targets");
  if (rows.empty()) throw TooFew("least_squares: no rows");
  const std::size_t k = rows[0].size();
  std::vector<double> ata(k * k, 0.0), aty(k, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < k; ++c) ata[r * k + c] += rows[i][r] * rows[i][c];
      aty[r] += rows[i][r] * y[i];
    }
  }
  return detail::solve_dense(std::move(ata), std::move(aty), k);
}

}  // namespace baseline_detail

// Repeats the last body delta and keeps turning by the last relative head
// rotation.
inline BaselineForecast const_vel(const WindowSample& s) {
  if (s.t1 < 2) throw TooShort("const_vel: past window shorter than 2");
  Tensor motion = s.motion_past();
  Tensor head6 = s.head_past();
  const std::size_t t1 = motion.rows();
  const std::size_t t2 = static_cast<std::size_t>(s.t2);

  BaselineForecast out;
  out.traj = Tensor::zeros(t2, 3);
  for (std::size_t i = 0; i < t2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      out.traj.at(i, j) = motion.at(t1 - 1, j);

  const RotMatrix last = rot6d_to_matrix(baseline_detail::row6(head6, t1 - 1));
  const RotMatrix prev = rot6d_to_matrix(baseline_detail::row6(head6, t1 - 2));
  const RotMatrix rel = prev.transposed() * last;
  out.head = Tensor::zeros(t2, 6);
  RotMatrix cur = last;
  for (std::size_t i = 0; i < t2; ++i) {
    cur = cur * rel;
    const Rot6D r = matrix_to_rot6d(cur);
    for (std::size_t j = 0; j < 6; ++j) out.head.at(i, j) = r.a[j];
  }
  return out;
}

// Per-axis least-squares line over the past, evaluated at the future step
// indices. Extrapolated 6D rows are snapped back onto the rotation manifold.
inline BaselineForecast lin_ext(const WindowSample& s) {
  if (s.t1 < 2) throw TooShort("lin_ext: past window shorter than 2");
  Tensor motion = s.motion_past();
  Tensor head6 = s.head_past();
  const std::size_t t1 = motion.rows();
  const std::size_t t2 = static_cast<std::size_t>(s.t2);

  std::vector<double> xs(t1);
  for (std::size_t i = 0; i < t1; ++i) xs[i] = static_cast<double>(i);
  auto fit_col = [&](const Tensor& m, std::size_t col) {
    std::vector<double> ys(t1);
    for (std::size_t i = 0; i < t1; ++i) ys[i] = m.at(i, col);
    return detail::polyfit(xs, ys, 1);
  };

  BaselineForecast out;
  out.traj = Tensor::zeros(t2, 3);
  for (std::size_t j = 0; j < 3; ++j) {
    const auto line = fit_col(motion, j);
    for (std::size_t i = 0; i < t2; ++i)
      out.traj.at(i, j) = detail::polyval(line, static_cast<double>(t1 + i));
  }

  std::array<std::vector<double>, 6> lines;
  for (std::size_t j = 0; j < 6; ++j) lines[j] = fit_col(head6, j);
  out.head = Tensor::zeros(t2, 6);
  for (std::size_t i = 0; i < t2; ++i) {
    Rot6D raw;
    for (std::size_t j = 0; j < 6; ++j)
      raw.a[j] = detail::polyval(lines[j], static_cast<double>(t1 + i));
    const Rot6D snapped = matrix_to_rot6d(rot6d_to_matrix(raw));
    for (std::size_t j = 0; j < 6; ++j) out.head.at(i, j) = snapped.a[j];
  }
  return out;
}

// Two hand-crafted signals, one learned affine map: softmax entropy of the
// last step's pooled channel energies plus the heading variability of the
// past window.
class EmuProxy {
 public:
  static double ambiguity(const WindowSample& s) {
    const Episode& ep = *s.episode;
    const std::size_t c = ep.channels;
    if (c < 2) return 0.0;
    const std::size_t cells = ep.grid * ep.grid;
    const float* base = ep.features.data() + s.last_past() * cells * c;
    std::vector<double> energy(c, 0.0);
    for (std::size_t cell = 0; cell < cells; ++cell) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = base[cell * c + ch];
        energy[ch] += v * v;
      }
    }
    for (double& e : energy) e /= static_cast<double>(cells);
    const double mx = *std::max_element(energy.begin(), energy.end());
    double z = 0.0;
    for (double& e : energy) {
      e = std::exp(e - mx);
      z += e;
    }
    double h = 0.0;
    for (double e : energy) {
      const double p = e / z;
      if (p > 0.0) h -= p * std::log(p);
    }
    return h / std::log(static_cast<double>(c));
  }

  static double variability(const WindowSample& s) {
    return baseline_detail::dpsi_std(s);
  }

  void fit(const std::vector<WindowSample>& samples,
           const std::vector<double>& targets) {
    std::vector<std::vector<double>> rows;
    rows.reserve(samples.size());
    for (const WindowSample& s : samples)
      rows.push_back({ambiguity(s), variability(s), 1.0});
    const std::vector<double> beta =
        baseline_detail::least_squares(rows, targets);
    w_ambiguity_ = beta[0];
    w_variability_ = beta[1];
    bias_ = beta[2];
    fitted_ = true;
  }

  double predict(const WindowSample& s) const {
    if (!fitted_) throw UnfitModel("emu_proxy predict before fit");
    const double u =
        w_ambiguity_ * ambiguity(s) + w_variability_ * variability(s) + bias_;
    return std::clamp(u, 0.0, 1.0);
  }

  nlohmann::json to_json() const {
    if (!fitted_) throw UnfitModel("emu_proxy serialize before fit");
    return nlohmann::json{{"w_ambiguity", w_ambiguity_},
                          {"w_variability", w_variability_},
                          {"bias", bias_}};
  }

  static EmuProxy from_json(const nlohmann::json& j) {
    for (const auto& item : j.items()) {
      if (item.key() != "w_ambiguity" && item.key() != "w_variability" &&
          item.key() != "bias")
        throw BadConfig("unknown emu_proxy key: " + item.key());
    }
    EmuProxy m;
    m.w_ambiguity_ = j.at("w_ambiguity").get<double>();
    m.w_variability_ = j.at("w_variability").get<double>();
    m.bias_ = j.at("bias").get<double>();
    m.fitted_ = true;
    return m;
  }

  double w_ambiguity() const { return w_ambiguity_; }
  double w_variability() const { return w_variability_; }
  double bias() const { return bias_; }

 private:
  double w_ambiguity_ = 0.0;
  double w_variability_ = 0.0;
  double bias_ = 0.0;
  bool fitted_ = false;
};

struct UncertaintyFeatureVector {
  double junction_count = 0.0;
  double occlusion_count = 0.0;
  double crowd_flag = 0.0;
  double goal_distance = 0.0;
  double motion_variability = 0.0;

  std::array<double, 5> as_array() const {
    return {junction_count, occlusion_count, crowd_flag, goal_distance,
            motion_variability};
  }
};

// Linear regressor over environment-derived counts; behavior labels are
// deliberately not part of the feature set.
class PathU {
 public:
  static UncertaintyFeatureVector features(const WindowSample& s) {
    const Episode& ep = *s.episode;
    UncertaintyFeatureVector f;
    for (std::size_t t = s.start; t < s.start + static_cast<std::size_t>(s.t1);
         ++t) {
      const uint8_t env = ep.env_labels[t];
      if (env & env_label::kJct) f.junction_count += 1.0;
      if (env & env_label::kOcc) f.occlusion_count += 1.0;
      if (env & env_label::kCrowd) f.crowd_flag = 1.0;
    }
    const std::size_t last = s.last_past();
    f.goal_distance =
        encode_goal(ep.poses[last], ep.goal_xy[last][0], ep.goal_xy[last][1])
            .d;
    f.motion_variability = baseline_detail::dpsi_std(s);
    return f;
  }

  void fit(const std::vector<WindowSample>& samples,
           const std::vector<double>& targets) {
    std::vector<std::vector<double>> rows;
    rows.reserve(samples.size());
    for (const WindowSample& s : samples) {
      const std::array<double, 5> f = features(s).as_array();
      rows.push_back({f[0], f[1], f[2], f[3], f[4], 1.0});
    }
    const std::vector<double> beta =
        baseline_detail::least_squares(rows, targets);
    for (std::size_t i = 0; i < 5; ++i) weights_[i] = beta[i];
    bias_ = beta[5];
    fitted_ = true;
  }

  double predict(const WindowSample& s) const {
    if (!fitted_) throw UnfitModel("path_u predict before fit");
    const std::array<double, 5> f = features(s).as_array();
    double u = bias_;
    for (std::size_t i = 0; i < 5; ++i) u += weights_[i] * f[i];
    return std::clamp(u, 0.0, 1.0);
  }

  nlohmann::json to_json() const {
    if (!fitted_) throw UnfitModel("path_u serialize before fit");
    return nlohmann::json{
        {"weights", std::vector<double>(weights_.begin(), weights_.end())},
        {"bias", bias_}};
  }

  static PathU from_json(const nlohmann::json& j) {
    for (const auto& item : j.items()) {
      if (item.key() != "weights" && item.key() != "bias")
        throw BadConfig("unknown path_u key: " + item.key());
    }
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != 5) throw LengthMismatch("path_u expects 5 weights");
    PathU m;
    for (std::size_t i = 0; i < 5; ++i) m.weights_[i] = w[i];
    m.bias_ = j.at("bias").get<double>();
    m.fitted_ = true;
    return m;
  }

  const std::array<double, 5>& weights() const { return weights_; }
  double bias() const { return bias_; }

 private:
  std::array<double, 5> weights_{0.0, 0.0, 0.0, 0.0, 0.0};
  double bias_ = 0.0;
  bool fitted_ = false;
};

}  // namespace egocognav
