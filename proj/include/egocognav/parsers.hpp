#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "egocognav/errors.hpp"

namespace egocognav {

struct GpsFix {
  double t;  // seconds since the unix epoch
  double lat;
  double lon;
};

struct GazeImuRow {
  double t;
  double u;
  double v;
  std::vector<double> imu;
};

struct GazeImuTable {
  std::vector<GazeImuRow> rows;
  std::vector<std::string> imu_columns;
  size_t clamped = 0;  // gaze samples pulled back into [0,1]
};

struct JoystickSample {
  double t;
  double magnitude;
};

struct JoystickTable {
  std::vector<JoystickSample> rows;
  size_t clamped = 0;
};

namespace detail {

// Days since the unix epoch for a civil date (proleptic Gregorian).
inline int64_t days_from_civil(int64_t y, int m, int d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const int64_t yoe = y - era * 400;
  const int64_t doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + doe - 719468;
}

inline double parse_iso8601(const std::string& s, size_t line) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  double sec = 0.0;
  if (std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%lf", &y, &mo, &d, &h, &mi,
                  &sec) != 6) {
    throw ParseError("line " + std::to_string(line) + ": bad timestamp '" + s +
                     "'");
  }
  return static_cast<double>(days_from_civil(y, mo, d)) * 86400.0 +
         h * 3600.0 + mi * 60.0 + sec;
}

inline double parse_number(const std::string& s, size_t line) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    }
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line) + ": bad number '" + s +
                     "'");
  }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Finds attr="value" inside a tag body.
inline bool find_attr(const std::string& tag, const std::string& attr,
                      std::string& out) {
  const std::string key = attr + "=\"";
  const size_t p = tag.find(key);
  if (p == std::string::npos) return false;
  const size_t q = tag.find('"', p + key.size());
  if (q == std::string::npos) return false;
  out = tag.substr(p + key.size(), q - p - key.size());
  return true;
}

}  // namespace detail

// Minimal GPX reader covering the trk/trkseg/trkpt/time subset. Fixes must
// be chronological.
inline std::vector<GpsFix> parse_gpx(const std::string& text) {
  std::vector<GpsFix> fixes;
  size_t pos = 0;
  size_t line = 1;
  bool in_point = false;
  GpsFix cur{};
  bool have_time = false;
  while (pos < text.size()) {
    const size_t open = text.find('<', pos);
    if (open == std::string::npos) break;
    for (size_t i = pos; i < open; ++i) line += text[i] == '\n';
    const size_t close = text.find('>', open);
    if (close == std::string::npos) {
      throw ParseError("line " + std::to_string(line) + ": unterminated tag");
    }
    std::string tag = text.substr(open + 1, close - open - 1);
    for (size_t i = open; i < close; ++i) line += text[i] == '\n';
    if (tag.rfind("trkpt", 0) == 0) {
      std::string lat, lon;
      if (!detail::find_attr(tag, "lat", lat) ||
          !detail::find_attr(tag, "lon", lon)) {
        throw ParseError("line " + std::to_string(line) +
                         ": trkpt missing lat/lon");
      }
      cur = GpsFix{0.0, detail::parse_number(lat, line),
                   detail::parse_number(lon, line)};
      in_point = true;
      have_time = false;
      if (tag.back() == '/') {  // self-closing point without a time
        throw ParseError("line " + std::to_string(line) +
                         ": trkpt without <time>");
      }
    } else if (tag == "time" && in_point) {
      const size_t end = text.find("</time>", close);
      if (end == std::string::npos) {
        throw ParseError("line " + std::to_string(line) + ": unclosed <time>");
      }
      cur.t = detail::parse_iso8601(text.substr(close + 1, end - close - 1),
                                    line);
      have_time = true;
    } else if (tag == "/trkpt") {
      if (!have_time) {
        throw ParseError("line " + std::to_string(line) +
                         ": trkpt without <time>");
      }
      if (!fixes.empty() && cur.t < fixes.back().t) {
        throw ParseError("line " + std::to_string(line) +
                         ": timestamps out of order");
      }
      fixes.push_back(cur);
      in_point = false;
    }
    pos = close + 1;
  }
  return fixes;
}

// Equirectangular projection to local meters about a reference fix;
// x points east, y north. Adequate below the kilometer scale.
inline void gps_to_local_meters(const std::vector<GpsFix>& fixes,
                                std::vector<double>& x,
                                std::vector<double>& y) {
  x.clear();
  y.clear();
  if (fixes.empty()) return;
  constexpr double kEarthRadius = 6371000.0;
  constexpr double kDeg = M_PI / 180.0;
  const double lat0 = fixes[0].lat;
  const double lon0 = fixes[0].lon;
  const double clat = std::cos(lat0 * kDeg);
  for (const auto& f : fixes) {
    x.push_back(kEarthRadius * (f.lon - lon0) * kDeg * clat);
    y.push_back(kEarthRadius * (f.lat - lat0) * kDeg);
  }
}

// Tab-separated eye tracker / IMU export. Requires columns t, gaze_u and
// gaze_v; every other numeric column is carried through as an IMU channel.
inline GazeImuTable parse_gaze_imu_tsv(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw ParseError("empty TSV");
  const auto cols = detail::split(header, '\t');
  int t_col = -1, u_col = -1, v_col = -1;
  GazeImuTable table;
  std::vector<int> imu_cols;
  for (size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] == "t") {
      t_col = static_cast<int>(i);
    } else if (cols[i] == "gaze_u") {
      u_col = static_cast<int>(i);
    } else if (cols[i] == "gaze_v") {
      v_col = static_cast<int>(i);
    } else {
      imu_cols.push_back(static_cast<int>(i));
      table.imu_columns.push_back(cols[i]);
    }
  }
  if (t_col < 0) throw MissingColumn("t");
  if (u_col < 0) throw MissingColumn("gaze_u");
  if (v_col < 0) throw MissingColumn("gaze_v");
  std::string row;
  size_t line = 1;
  while (std::getline(in, row)) {
    ++line;
    if (row.empty()) continue;
    const auto parts = detail::split(row, '\t');
    if (parts.size() != cols.size()) {
      throw ParseError("line " + std::to_string(line) + ": expected " +
                       std::to_string(cols.size()) + " fields, got " +
                       std::to_string(parts.size()));
    }
    GazeImuRow r;
    r.t = detail::parse_number(parts[t_col], line);
    r.u = detail::parse_number(parts[u_col], line);
    r.v = detail::parse_number(parts[v_col], line);
    for (double* g : {&r.u, &r.v}) {
      if (*g < 0.0 || *g > 1.0) {
        *g = std::min(1.0, std::max(0.0, *g));
        ++table.clamped;
      }
    }
    for (int c : imu_cols) r.imu.push_back(detail::parse_number(parts[c], line));
    if (!table.rows.empty() && r.t <= table.rows.back().t) {
      throw ParseError("line " + std::to_string(line) +
                       ": timestamps not increasing");
    }
    table.rows.push_back(std::move(r));
  }
  return table;
}

// Comma-separated self-report stream: columns t and magnitude.
inline JoystickTable parse_joystick_csv(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw ParseError("empty CSV");
  const auto cols = detail::split(header, ',');
  int t_col = -1, m_col = -1;
  for (size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] == "t") t_col = static_cast<int>(i);
    if (cols[i] == "magnitude") m_col = static_cast<int>(i);
  }
  if (t_col < 0) throw MissingColumn("t");
  if (m_col < 0) throw MissingColumn("magnitude");
  JoystickTable table;
  std::string row;
  size_t line = 1;
  while (std::getline(in, row)) {
    ++line;
    if (row.empty()) continue;
    const auto parts = detail::split(row, ',');
    if (parts.size() != cols.size()) {
      throw ParseError("line " + std::to_string(line) + ": field count");
    }
    JoystickSample s;
    s.t = detail::parse_number(parts[t_col], line);
    s.magnitude = detail::parse_number(parts[m_col], line);
    if (s.magnitude < 0.0 || s.magnitude > 1.0) {
      s.magnitude = std::min(1.0, std::max(0.0, s.magnitude));
      ++table.clamped;
    }
    if (!table.rows.empty() && s.t <= table.rows.back().t) {
      throw ParseError("line " + std::to_string(line) +
                       ": timestamps not increasing");
    }
    table.rows.push_back(s);
  }
  return table;
}

}  // namespace egocognav
