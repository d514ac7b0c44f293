#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "egocognav/errors.hpp"
#include "egocognav/geometry.hpp"
#include "egocognav/tensor.hpp"
#include "json.hpp"

namespace egocognav {

// Per-step label sets, stored as bitmasks.
namespace env_label {
constexpr uint8_t kJct = 1;    // junction nearby
constexpr uint8_t kOcc = 2;    // occluded sightlines
constexpr uint8_t kMult = 4;   // several plausible continuations
constexpr uint8_t kCrowd = 8;  // crowded area
constexpr uint8_t kSt = 16;    // stairs / level transition
constexpr std::array<const char*, 5> kNames = {"JCT", "OCC", "MULT", "CROWD",
                                               "ST"};
}  // namespace env_label

namespace behavior_label {
constexpr uint8_t kHes = 1;      // hesitation stop
constexpr uint8_t kWrong = 2;    // wrong branch taken
constexpr uint8_t kBack = 4;     // backtracking to the junction
constexpr uint8_t kScan = 8;     // head scanning
constexpr uint8_t kConfirm = 16; // checking signage
constexpr uint8_t kLb = 32;      // looking back
constexpr std::array<const char*, 6> kNames = {"HES",  "WRONG",   "BACK",
                                               "SCAN", "CONFIRM", "LB"};
}  // namespace behavior_label

// One recording on a 10 Hz timeline. All per-step streams share the same
// length. motion[0] is the zero delta; motion[i] moves pose i-1 to pose i,
// so poses are recoverable exactly by integration.
struct Episode {
  std::string id;
  std::vector<double> timeline;
  std::vector<BodyDelta> motion;
  std::vector<Rot6D> head;
  std::vector<GazePoint> gaze;
  std::vector<std::array<double, 2>> goal_xy;
  std::vector<double> uncertainty;
  std::vector<uint8_t> env_labels;
  std::vector<uint8_t> behavior_labels;
  size_t grid = 4;
  size_t channels = 32;
  std::vector<float> features;  // length*grid*grid*channels, row-major
  std::vector<Pose2D> poses;    // derived; see compute_poses()

  size_t length() const { return timeline.size(); }

  void compute_poses() { poses = integrate_deltas(Pose2D{}, motion); }

  void validate() const {
    const size_t n = length();
    if (motion.size() != n || head.size() != n || gaze.size() != n ||
        goal_xy.size() != n || uncertainty.size() != n ||
        env_labels.size() != n || behavior_labels.size() != n) {
      throw LengthMismatch("episode " + id + ": stream lengths disagree");
    }
    if (features.size() != n * grid * grid * channels) {
      throw LengthMismatch("episode " + id + ": feature payload size");
    }
    for (double u : uncertainty) {
      if (!(u >= 0.0 && u <= 1.0)) {
        throw OutOfRange("episode " + id + ": U outside [0,1]");
      }
    }
  }

  // Spatial mean over the grid for one step: one value per channel.
  std::vector<double> pooled_features(size_t step) const {
    const size_t cells = grid * grid;
    const float* base = features.data() + step * cells * channels;
    std::vector<double> out(channels, 0.0);
    for (size_t cell = 0; cell < cells; ++cell) {
      for (size_t c = 0; c < channels; ++c) {
        out[c] += base[cell * channels + c];
      }
    }
    for (double& v : out) v /= static_cast<double>(cells);
    return out;
  }
};

namespace detail {

// Gaussian elimination with partial pivoting; a is n x n row-major.
inline std::vector<double> solve_dense(std::vector<double> a,
                                       std::vector<double> b, size_t n) {
  for (size_t col = 0; col < n; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a[r * n + col]) > std::fabs(a[piv * n + col])) piv = r;
    }
    if (a[piv * n + col] == 0.0) throw DegenerateInput("singular system");
    if (piv != col) {
      for (size_t j = 0; j < n; ++j) std::swap(a[piv * n + j], a[col * n + j]);
      std::swap(b[piv], b[col]);
    }
    for (size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      if (f == 0.0) continue;
      for (size_t j = col; j < n; ++j) a[r * n + j] -= f * a[col * n + j];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (size_t ri = n; ri-- > 0;) {
    double s = b[ri];
    for (size_t j = ri + 1; j < n; ++j) s -= a[ri * n + j] * x[j];
    x[ri] = s / a[ri * n + ri];
  }
  return x;
}

// Least-squares polynomial coefficients c0..c_order for points (xs, ys).
inline std::vector<double> polyfit(const std::vector<double>& xs,
                                   const std::vector<double>& ys, int order) {
  const size_t m = static_cast<size_t>(order) + 1;
  std::vector<double> ata(m * m, 0.0), aty(m, 0.0);
  std::vector<double> powers(m);
  for (size_t i = 0; i < xs.size(); ++i) {
    double p = 1.0;
    for (size_t k = 0; k < m; ++k) {
      powers[k] = p;
      p *= xs[i];
    }
    for (size_t r = 0; r < m; ++r) {
      for (size_t c = 0; c < m; ++c) ata[r * m + c] += powers[r] * powers[c];
      aty[r] += powers[r] * ys[i];
    }
  }
  return solve_dense(std::move(ata), std::move(aty), m);
}

inline double polyval(const std::vector<double>& coeffs, double x) {
  double v = 0.0;
  for (size_t k = coeffs.size(); k-- > 0;) v = v * x + coeffs[k];
  return v;
}

}  // namespace detail

// Savitzky-Golay smoothing. Interior samples use the precomputed central
// convolution; within half a window of either end the output evaluates the
// edge window's least-squares polynomial at the sample's own position, which
// keeps polynomials up to `poly_order` exact over the whole series.
inline std::vector<double> savgol_smooth(const std::vector<double>& series,
                                         int window_len, int poly_order) {
  if (window_len <= 0 || window_len % 2 == 0) {
    throw BadWindow("window_len must be odd and positive");
  }
  if (poly_order < 0 || poly_order >= window_len) {
    throw BadWindow("poly_order must lie in [0, window_len)");
  }
  const size_t n = series.size();
  if (n < static_cast<size_t>(window_len)) {
    throw BadWindow("series shorter than window");
  }
  const int h = window_len / 2;
  const size_t m = static_cast<size_t>(poly_order) + 1;

  // Central weights: first row of (A^T A)^-1 A^T with A_{j,k} = j^k.
  std::vector<double> ata(m * m, 0.0);
  for (int j = -h; j <= h; ++j) {
    std::vector<double> powers(m);
    double p = 1.0;
    for (size_t k = 0; k < m; ++k) {
      powers[k] = p;
      p *= j;
    }
    for (size_t r = 0; r < m; ++r) {
      for (size_t c = 0; c < m; ++c) ata[r * m + c] += powers[r] * powers[c];
    }
  }
  std::vector<double> e0(m, 0.0);
  e0[0] = 1.0;
  const std::vector<double> minv0 = detail::solve_dense(ata, e0, m);
  std::vector<double> weights(window_len, 0.0);
  for (int j = -h; j <= h; ++j) {
    double p = 1.0, w = 0.0;
    for (size_t k = 0; k < m; ++k) {
      w += minv0[k] * p;
      p *= j;
    }
    weights[j + h] = w;
  }

  std::vector<double> out(n, 0.0);
  for (size_t i = h; i + h < n; ++i) {
    double s = 0.0;
    for (int j = -h; j <= h; ++j) s += weights[j + h] * series[i + j];
    out[i] = s;
  }
  std::vector<double> xs(window_len), ys(window_len);
  for (int j = 0; j < window_len; ++j) {
    xs[j] = j - h;  // centered abscissa keeps the fit well conditioned
    ys[j] = series[j];
  }
  const auto head_fit = detail::polyfit(xs, ys, poly_order);
  for (int i = 0; i < h; ++i) out[i] = detail::polyval(head_fit, i - h);
  for (int j = 0; j < window_len; ++j) {
    ys[j] = series[n - window_len + j];
  }
  const auto tail_fit = detail::polyfit(xs, ys, poly_order);
  for (int i = 0; i < h; ++i) {
    out[n - 1 - i] = detail::polyval(tail_fit, h - i);
  }
  return out;
}

enum class ResampleMode { nearest, linear };

// Resamples an irregular (timestamp, value) stream onto the k*0.1 s grid
// covered by the input span. Nearest-neighbor ties choose the earlier sample.
inline std::vector<std::pair<double, double>> resample_10hz(
    const std::vector<std::pair<double, double>>& in, ResampleMode mode) {
  if (in.empty()) throw EmptyStream("resample_10hz");
  for (size_t i = 1; i < in.size(); ++i) {
    if (in[i].first <= in[i - 1].first) {
      throw ParseError("resample_10hz: timestamps not strictly increasing");
    }
  }
  constexpr double kGridEps = 1e-9;
  const int64_t k0 =
      static_cast<int64_t>(std::ceil(in.front().first / 0.1 - kGridEps));
  const int64_t k1 =
      static_cast<int64_t>(std::floor(in.back().first / 0.1 + kGridEps));
  std::vector<std::pair<double, double>> out;
  size_t j = 0;
  for (int64_t k = k0; k <= k1; ++k) {
    const double tg = static_cast<double>(k) * 0.1;
    if (mode == ResampleMode::nearest) {
      while (j + 1 < in.size() &&
             std::fabs(in[j + 1].first - tg) < std::fabs(in[j].first - tg)) {
        ++j;
      }
      out.emplace_back(tg, in[j].second);
    } else {
      while (j + 1 < in.size() && in[j + 1].first < tg) ++j;
      if (j + 1 >= in.size() || tg <= in[j].first) {
        out.emplace_back(tg, in[j].second);
      } else {
        const double t0 = in[j].first, t1 = in[j + 1].first;
        const double w = (tg - t0) / (t1 - t0);
        out.emplace_back(tg, in[j].second + w * (in[j + 1].second - in[j].second));
      }
    }
  }
  return out;
}

// A view of one training window inside an episode: T1 past steps of every
// input stream and T2 future steps of motion and head targets.
struct WindowSample {
  const Episode* episode = nullptr;
  size_t start = 0;
  int t1 = 30;
  int t2 = 10;

  size_t last_past() const { return start + static_cast<size_t>(t1) - 1; }

  double u_target() const { return episode->uncertainty[last_past()]; }

  uint8_t env_union() const {
    uint8_t m = 0;
    for (int i = 0; i < t1; ++i) m |= episode->env_labels[start + i];
    return m;
  }

  uint8_t behavior_union() const {
    uint8_t m = 0;
    for (int i = 0; i < t1; ++i) m |= episode->behavior_labels[start + i];
    return m;
  }

  uint8_t behavior_at_prediction() const {
    return episode->behavior_labels[last_past()];
  }

  Tensor motion_past() const {
    Tensor out({static_cast<size_t>(t1), 3});
    for (int i = 0; i < t1; ++i) {
      const BodyDelta& d = episode->motion[start + i];
      out.at(i, 0) = d.dx;
      out.at(i, 1) = d.dy;
      out.at(i, 2) = d.dpsi;
    }
    return out;
  }

  Tensor head_past() const {
    Tensor out({static_cast<size_t>(t1), 6});
    for (int i = 0; i < t1; ++i) {
      for (int j = 0; j < 6; ++j) out.at(i, j) = episode->head[start + i].a[j];
    }
    return out;
  }

  Tensor gaze_past() const {
    Tensor out({static_cast<size_t>(t1), 2});
    for (int i = 0; i < t1; ++i) {
      out.at(i, 0) = episode->gaze[start + i].u;
      out.at(i, 1) = episode->gaze[start + i].v;
    }
    return out;
  }

  // (distance, sin bearing, cos bearing) of the goal in each past body frame.
  Tensor goal_past() const {
    Tensor out({static_cast<size_t>(t1), 3});
    for (int i = 0; i < t1; ++i) {
      const size_t s = start + i;
      const GoalEncoding g = encode_goal(episode->poses[s],
                                         episode->goal_xy[s][0],
                                         episode->goal_xy[s][1]);
      out.at(i, 0) = g.d;
      out.at(i, 1) = g.sb;
      out.at(i, 2) = g.cb;
    }
    return out;
  }

  // Spatially pooled visual features, (T1, C).
  Tensor features_past() const {
    Tensor out({static_cast<size_t>(t1), episode->channels});
    for (int i = 0; i < t1; ++i) {
      const auto pooled = episode->pooled_features(start + i);
      for (size_t c = 0; c < pooled.size(); ++c) out.at(i, c) = pooled[c];
    }
    return out;
  }

  Tensor future_traj() const {
    Tensor out({static_cast<size_t>(t2), 3});
    for (int i = 0; i < t2; ++i) {
      const BodyDelta& d = episode->motion[start + t1 + i];
      out.at(i, 0) = d.dx;
      out.at(i, 1) = d.dy;
      out.at(i, 2) = d.dpsi;
    }
    return out;
  }

  Tensor future_head() const {
    Tensor out({static_cast<size_t>(t2), 6});
    for (int i = 0; i < t2; ++i) {
      for (int j = 0; j < 6; ++j) {
        out.at(i, j) = episode->head[start + t1 + i].a[j];
      }
    }
    return out;
  }
};

inline std::vector<WindowSample> extract_windows(const Episode& ep, int stride,
                                                 int t1 = 30, int t2 = 10) {
  if (stride < 1) throw OutOfRange("extract_windows: stride must be >= 1");
  const size_t need = static_cast<size_t>(t1) + static_cast<size_t>(t2);
  if (ep.length() < need) {
    throw TooShort("episode " + ep.id + ": length " +
                   std::to_string(ep.length()) + " < " + std::to_string(need));
  }
  const size_t count = (ep.length() - need) / static_cast<size_t>(stride) + 1;
  std::vector<WindowSample> out;
  out.reserve(count);
  for (size_t w = 0; w < count; ++w) {
    out.push_back(WindowSample{&ep, w * static_cast<size_t>(stride), t1, t2});
  }
  return out;
}

// ---- cached feature file ----

struct FeatureCache {
  uint32_t version = 1;
  uint32_t steps = 0;
  uint32_t grid = 0;
  uint32_t channels = 0;
  std::vector<float> data;  // steps*grid*grid*channels
};

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace detail

inline std::string encode_feature_cache(const FeatureCache& fc) {
  if (fc.data.size() != static_cast<size_t>(fc.steps) * fc.grid * fc.grid *
                            fc.channels) {
    throw LengthMismatch("feature cache payload size");
  }
  std::string out;
  out.reserve(24 + fc.data.size() * 4);
  out += "ECNF";
  detail::put_u32(out, fc.version);
  detail::put_u32(out, fc.steps);
  detail::put_u32(out, fc.grid);
  detail::put_u32(out, fc.grid);
  detail::put_u32(out, fc.channels);
  for (float f : fc.data) detail::put_u32(out, std::bit_cast<uint32_t>(f));
  return out;
}

inline FeatureCache decode_feature_cache(const std::string& bytes) {
  if (bytes.size() < 24 || bytes.compare(0, 4, "ECNF") != 0) {
    throw BadMagic("feature cache header");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  FeatureCache fc;
  fc.version = detail::get_u32(p + 4);
  fc.steps = detail::get_u32(p + 8);
  const uint32_t g1 = detail::get_u32(p + 12);
  const uint32_t g2 = detail::get_u32(p + 16);
  fc.channels = detail::get_u32(p + 20);
  if (g1 != g2) throw LengthMismatch("feature cache grid dims disagree");
  fc.grid = g1;
  const size_t expect =
      static_cast<size_t>(fc.steps) * fc.grid * fc.grid * fc.channels;
  if (bytes.size() != 24 + expect * 4) {
    throw LengthMismatch("feature cache payload: have " +
                         std::to_string((bytes.size() - 24) / 4) +
                         " floats, expected " + std::to_string(expect));
  }
  fc.data.resize(expect);
  for (size_t i = 0; i < expect; ++i) {
    fc.data[i] = std::bit_cast<float>(detail::get_u32(p + 24 + i * 4));
  }
  return fc;
}

inline void write_feature_cache(const std::filesystem::path& path,
                                const FeatureCache& fc) {
  detail::write_file(path, encode_feature_cache(fc));
}

inline FeatureCache read_feature_cache(const std::filesystem::path& path) {
  return decode_feature_cache(detail::read_file(path));
}

// ---- episode directory ----

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

constexpr const char* kStreamsHeader =
    "t,dx,dy,dpsi,h1,h2,h3,h4,h5,h6,u,v,goal_x,goal_y,U,env,behavior";

// Writes manifest.json, streams.csv and features.bin. Doubles are printed
// with 17 significant digits so a read-back reproduces them bit for bit.
inline void write_episode_dir(const Episode& ep,
                              const std::filesystem::path& dir) {
  ep.validate();
  std::filesystem::create_directories(dir);

  nlohmann::json manifest;
  manifest["id"] = ep.id;
  manifest["length"] = ep.length();
  manifest["grid"] = ep.grid;
  manifest["channels"] = ep.channels;
  manifest["env_label_names"] = env_label::kNames;
  manifest["behavior_label_names"] = behavior_label::kNames;
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::string csv = kStreamsHeader;
  csv += '\n';
  for (size_t i = 0; i < ep.length(); ++i) {
    csv += detail::fmt_g17(ep.timeline[i]);
    for (double v : {ep.motion[i].dx, ep.motion[i].dy, ep.motion[i].dpsi}) {
      csv += ',';
      csv += detail::fmt_g17(v);
    }
    for (double v : ep.head[i].a) {
      csv += ',';
      csv += detail::fmt_g17(v);
    }
    for (double v : {ep.gaze[i].u, ep.gaze[i].v, ep.goal_xy[i][0],
                     ep.goal_xy[i][1], ep.uncertainty[i]}) {
      csv += ',';
      csv += detail::fmt_g17(v);
    }
    csv += ',' + std::to_string(ep.env_labels[i]);
    csv += ',' + std::to_string(ep.behavior_labels[i]);
    csv += '\n';
  }
  detail::write_file(dir / "streams.csv", csv);

  FeatureCache fc;
  fc.steps = static_cast<uint32_t>(ep.length());
  fc.grid = static_cast<uint32_t>(ep.grid);
  fc.channels = static_cast<uint32_t>(ep.channels);
  fc.data = ep.features;
  write_feature_cache(dir / "features.bin", fc);
}

inline Episode read_episode_dir(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest.json: " + std::string(e.what()));
  }
  Episode ep;
  try {
    ep.id = manifest.at("id").get<std::string>();
    ep.grid = manifest.at("grid").get<size_t>();
    ep.channels = manifest.at("channels").get<size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest.json: " + std::string(e.what()));
  }

  const std::string csv = detail::read_file(dir / "streams.csv");
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kStreamsHeader) {
    throw ParseError("streams.csv: unexpected header");
  }
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::array<double, 15> f{};
    std::array<unsigned, 2> masks{};
    size_t field = 0, pos = 0;
    while (field < 17) {
      size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      const std::string cell = line.substr(pos, comma - pos);
      if (field < 15) {
        try {
          f[field] = std::stod(cell);
        } catch (const std::exception&) {
          throw ParseError("streams.csv line " + std::to_string(lineno) +
                           ": bad number '" + cell + "'");
        }
      } else {
        try {
          masks[field - 15] = static_cast<unsigned>(std::stoul(cell));
        } catch (const std::exception&) {
          throw ParseError("streams.csv line " + std::to_string(lineno) +
                           ": bad mask '" + cell + "'");
        }
      }
      ++field;
      pos = comma + 1;
      if (comma == line.size() && field < 17) {
        throw ParseError("streams.csv line " + std::to_string(lineno) +
                         ": expected 17 fields");
      }
    }
    ep.timeline.push_back(f[0]);
    ep.motion.push_back(BodyDelta{f[1], f[2], f[3]});
    Rot6D h;
    for (int j = 0; j < 6; ++j) h.a[j] = f[4 + j];
    ep.head.push_back(h);
    ep.gaze.push_back(GazePoint{f[10], f[11]});
    ep.goal_xy.push_back({f[12], f[13]});
    ep.uncertainty.push_back(f[14]);
    ep.env_labels.push_back(static_cast<uint8_t>(masks[0]));
    ep.behavior_labels.push_back(static_cast<uint8_t>(masks[1]));
  }
  if (manifest.at("length").get<size_t>() != ep.length()) {
    throw LengthMismatch("manifest length vs streams.csv rows");
  }

  const FeatureCache fc = read_feature_cache(dir / "features.bin");
  if (fc.steps != ep.length() || fc.grid != ep.grid ||
      fc.channels != ep.channels) {
    throw LengthMismatch("features.bin header vs manifest");
  }
  ep.features = fc.data;
  ep.compute_poses();
  ep.validate();
  return ep;
}

}  // namespace egocognav
