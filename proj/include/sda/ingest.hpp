#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sda/field.hpp"
#include "sda/observation.hpp"

namespace sda {

// -----------------------------------------------------------------------------
// Wind

struct Wind {
  double u = 0.0;  // zonal, positive eastward
  double v = 0.0;  // meridional, positive northward
};

/// Meteorological convention: direction is the bearing the wind blows FROM, clockwise from north.
/// u = -speed sin(theta), v = -speed cos(theta).
inline Wind decompose_wind(double speed, double direction_deg) {
  if (!(speed >= 0.0) || !std::isfinite(speed)) throw DomainError("wind speed must be finite and >= 0");
  if (!(direction_deg >= 0.0 && direction_deg < 360.0))
    throw DomainError("wind direction must lie in [0, 360) degrees");
  const double th = direction_deg * std::numbers::pi / 180.0;
  return {-speed * std::sin(th), -speed * std::cos(th)};
}

// -----------------------------------------------------------------------------
// Time stamps: UTC "YYYY-MM-DDTHH:MM[:SS][Z]" (a space may replace 'T'), stored as seconds since epoch.

inline std::int64_t parse_utc(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  std::istringstream is(text);
  char dash1 = 0, dash2 = 0, colon1 = 0;
  is >> y >> dash1 >> mo >> dash2 >> d;
  if (!is || dash1 != '-' || dash2 != '-') throw DomainError("bad timestamp '" + text + "'");
  is.get(sep);
  if (!is || (sep != 'T' && sep != ' ')) throw DomainError("bad timestamp '" + text + "'");
  is >> h >> colon1 >> mi;
  if (!is || colon1 != ':') throw DomainError("bad timestamp '" + text + "'");
  if (is.peek() == ':') {
    is.get();
    is >> s;
    if (!is) throw DomainError("bad timestamp '" + text + "'");
  }
  if (is.peek() == 'Z') is.get();
  if (is.peek() != std::char_traits<char>::eof()) throw DomainError("bad timestamp '" + text + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{unsigned(mo)}, day{unsigned(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60)
    throw DomainError("bad timestamp '" + text + "'");
  return duration_cast<seconds>(sys_days{ymd}.time_since_epoch()).count() + h * 3600 + mi * 60 + s;
}

inline std::string format_utc(std::int64_t t) {
  using namespace std::chrono;
  const auto days = static_cast<std::int64_t>(std::floor(double(t) / 86400.0));
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  const std::int64_t rem = t - days * 86400;
  std::ostringstream os;
  os << std::setfill('0') << std::setw(4) << int(ymd.year()) << '-' << std::setw(2) << unsigned(ymd.month()) << '-'
     << std::setw(2) << unsigned(ymd.day()) << 'T' << std::setw(2) << rem / 3600 << ':' << std::setw(2)
     << (rem / 60) % 60 << ':' << std::setw(2) << rem % 60 << 'Z';
  return os.str();
}

// -----------------------------------------------------------------------------
// Station records

struct StationRecord {
  std::string station_id;
  std::int64_t time = 0;
  std::optional<double> speed;      // m/s
  std::optional<double> direction;  // degrees, FROM
  std::optional<double> precip;     // mm accumulation
  std::size_t row = 0, col = 0;

  void validate() const {
    if (speed && !(*speed >= 0.0)) throw DomainError("station " + station_id + ": negative wind speed");
    if (direction && !(*direction >= 0.0 && *direction < 360.0))
      throw DomainError("station " + station_id + ": wind direction out of range");
    if (precip && !(*precip >= 0.0)) throw DomainError("station " + station_id + ": negative precipitation");
    if (speed.has_value() != direction.has_value())
      throw DomainError("station " + station_id + ": wind speed and direction must both be present or missing");
  }
};

/// Post-decomposition hourly sample; unset optionals are missing values.
struct HourlyRecord {
  std::string station_id;
  std::int64_t time = 0;
  std::size_t row = 0, col = 0;
  std::optional<double> u, v;
  std::optional<double> log_precip;  // log(precip + shift)

  bool missing() const noexcept { return !u && !v && !log_precip; }
};

struct InterpolationOptions {
  double max_gap_hours = 2.0;
  double precip_shift = 1e-4;
};

namespace detail {
struct TimedValue {
  std::int64_t t;
  double v;
};

inline std::optional<double> interpolate_at(const std::vector<TimedValue>& s, std::int64_t t, std::int64_t max_gap) {
  auto it = std::lower_bound(s.begin(), s.end(), t, [](const TimedValue& a, std::int64_t x) { return a.t < x; });
  if (it != s.end() && it->t == t) return it->v;
  if (it == s.begin() || it == s.end()) return std::nullopt;
  const auto& b = *it;
  const auto& a = *(it - 1);
  if (b.t - a.t > max_gap) return std::nullopt;
  const double w = double(t - a.t) / double(b.t - a.t);
  return a.v + w * (b.v - a.v);
}
}  // namespace detail

/// Per station: drops duplicate time stamps (last wins, with a warning), decomposes wind, and
/// linearly interpolates u, v and log-precipitation to each top-of-hour bracketed by records no
/// more than max_gap apart. Output is grouped by station (first-appearance order), hourly within.
inline std::vector<HourlyRecord> interpolate_to_hours(const std::vector<StationRecord>& records,
                                                      const InterpolationOptions& opt = {}) {
  if (!(opt.max_gap_hours > 0.0)) throw ConfigError("max gap must be > 0 hours");
  if (!(opt.precip_shift > 0.0)) throw ConfigError("precipitation shift must be > 0");
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<StationRecord>> by_station;
  for (const auto& r : records) {
    r.validate();
    auto [it, fresh] = by_station.try_emplace(r.station_id);
    if (fresh) order.push_back(r.station_id);
    auto& series = it->second;
    if (!series.empty()) {
      if (r.time < series.back().time)
        throw ConfigError("station " + r.station_id + ": records are not time-sorted at " + format_utc(r.time));
      if (r.time == series.back().time) {
        warn("station " + r.station_id + ": duplicate time stamp " + format_utc(r.time) + ", keeping the last record");
        series.back() = r;
        continue;
      }
    }
    series.push_back(r);
  }

  const auto max_gap = static_cast<std::int64_t>(std::llround(opt.max_gap_hours * 3600.0));
  std::vector<HourlyRecord> out;
  for (const auto& id : order) {
    const auto& series = by_station[id];
    std::vector<detail::TimedValue> us, vs, ps;
    for (const auto& r : series) {
      if (r.speed) {
        const Wind w = decompose_wind(*r.speed, *r.direction);
        us.push_back({r.time, w.u});
        vs.push_back({r.time, w.v});
      }
      if (r.precip) ps.push_back({r.time, std::log(*r.precip + opt.precip_shift)});
    }
    auto floor_div = [](std::int64_t a, std::int64_t b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); };
    const std::int64_t first = -floor_div(-series.front().time, 3600) * 3600;
    const std::int64_t last = floor_div(series.back().time, 3600) * 3600;
    for (std::int64_t t = first; t <= last; t += 3600) {
      HourlyRecord h{id, t, series.front().row, series.front().col, {}, {}, {}};
      h.u = detail::interpolate_at(us, t, max_gap);
      h.v = detail::interpolate_at(vs, t, max_gap);
      h.log_precip = detail::interpolate_at(ps, t, max_gap);
      out.push_back(std::move(h));
    }
  }
  return out;
}

// -----------------------------------------------------------------------------
// CSV

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const char* what, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(std::string("bad ") + what + " '" + s + "'", line);
  }
}

inline std::size_t parse_index(const std::string& s, const char* what, std::size_t line) {
  try {
    std::size_t used = 0;
    if (!s.empty() && s.front() == '-') throw std::invalid_argument(s);
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ParseError(std::string("bad ") + what + " '" + s + "'", line);
  }
}

class CsvHeader {
 public:
  CsvHeader(const std::string& line, const std::vector<std::string>& required,
            const std::vector<std::string>& optional) {
    const auto cells = split_csv(line);
    for (std::size_t k = 0; k < cells.size(); ++k) col_[cells[k]] = k;
    for (const auto& r : required)
      if (!col_.count(r)) throw ParseError("missing required column '" + r + "'", 1);
    for (const auto& [name, _] : col_)
      if (std::find(required.begin(), required.end(), name) == required.end() &&
          std::find(optional.begin(), optional.end(), name) == optional.end())
        throw ParseError("unknown column '" + name + "'", 1);
    width_ = cells.size();
  }
  bool has(const std::string& name) const { return col_.count(name) != 0; }
  const std::string& get(const std::vector<std::string>& cells, const std::string& name) const {
    return cells[col_.at(name)];
  }
  std::size_t width() const noexcept { return width_; }

 private:
  std::map<std::string, std::size_t> col_;
  std::size_t width_ = 0;
};

template <class RowFn>
void for_each_csv_row(std::istream& is, const std::vector<std::string>& required,
                      const std::vector<std::string>& optional, RowFn&& fn) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty file, expected a header row", 1);
  CsvHeader header(line, required, optional);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line.front() == '#') continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.width())
      throw ParseError("expected " + std::to_string(header.width()) + " fields, got " + std::to_string(cells.size()),
                       lineno);
    fn(header, cells, lineno);
  }
}
}  // namespace detail

/// Columns: time, station_id, row, col, speed, direction, precip (empty cell = missing).
inline std::vector<StationRecord> parse_station_csv(std::istream& is) {
  std::vector<StationRecord> out;
  detail::for_each_csv_row(is, {"time", "station_id", "row", "col"}, {"speed", "direction", "precip"},
                           [&](const detail::CsvHeader& h, const std::vector<std::string>& c, std::size_t line) {
                             StationRecord r;
                             r.station_id = h.get(c, "station_id");
                             try {
                               r.time = parse_utc(h.get(c, "time"));
                             } catch (const DomainError& e) {
                               throw ParseError(e.what(), line);
                             }
                             r.row = detail::parse_index(h.get(c, "row"), "row", line);
                             r.col = detail::parse_index(h.get(c, "col"), "col", line);
                             auto opt = [&](const char* name) -> std::optional<double> {
                               if (!h.has(name) || h.get(c, name).empty()) return std::nullopt;
                               return detail::parse_double(h.get(c, name), name, line);
                             };
                             r.speed = opt("speed");
                             r.direction = opt("direction");
                             r.precip = opt("precip");
                             try {
                               r.validate();
                             } catch (const DomainError& e) {
                               throw ParseError(e.what(), line);
                             }
                             out.push_back(std::move(r));
                           });
  return out;
}

/// Observations of one time stamp.
struct TimedObservations {
  std::string time;
  ObservationSet obs;
};

/// Columns: time, station_id, row, col, channel, value[, sigma]. Values are physical and are mapped
/// into normalized model space with the channel transform and norm stats of `layout`. Sigma is the
/// model-space noise std (default 0.1 when the column is absent or the cell empty).
/// Rows are grouped by time stamp in first-appearance order.
inline std::vector<TimedObservations> parse_observation_csv(std::istream& is, const FieldGrid& layout,
                                                            double default_sigma = 0.1) {
  if (!(default_sigma > 0.0)) throw ConfigError("default observation sigma must be > 0");
  std::vector<TimedObservations> out;
  std::unordered_map<std::string, std::size_t> slot;
  std::unordered_map<std::string, std::size_t> seen;  // "time|flat" -> line
  const auto& shape = layout.shape();
  detail::for_each_csv_row(
      is, {"time", "station_id", "row", "col", "channel", "value"}, {"sigma"},
      [&](const detail::CsvHeader& h, const std::vector<std::string>& c, std::size_t line) {
        Observation o;
        o.station_id = h.get(c, "station_id");
        o.row = detail::parse_index(h.get(c, "row"), "row", line);
        o.col = detail::parse_index(h.get(c, "col"), "col", line);
        const std::string& name = h.get(c, "channel");
        const auto& chans = layout.channels();
        auto it = std::find_if(chans.begin(), chans.end(), [&](const ChannelSpec& s) { return s.name == name; });
        if (it == chans.end()) throw ParseError("unknown channel '" + name + "'", line);
        o.channel = static_cast<std::size_t>(it - chans.begin());
        if (o.row >= shape.height || o.col >= shape.width) throw ParseError("location outside the grid", line);
        const double phys = detail::parse_double(h.get(c, "value"), "value", line);
        if (!std::isfinite(phys)) throw ParseError("non-finite value", line);
        if (it->transform == TransformKind::log_shift && phys < 0.0)
          throw ParseError("negative value for log-transformed channel '" + name + "'", line);
        o.value = (to_model(phys, *it) - layout.norm().mean[o.channel]) / layout.norm().std[o.channel];
        o.sigma = default_sigma;
        if (h.has("sigma") && !h.get(c, "sigma").empty()) {
          o.sigma = detail::parse_double(h.get(c, "sigma"), "sigma", line);
          if (!(o.sigma > 0.0) || !std::isfinite(o.sigma)) throw ParseError("sigma must be > 0", line);
        }
        const std::string& time = h.get(c, "time");
        const std::string key = time + "|" + std::to_string(shape.index(o.channel, o.row, o.col));
        if (auto [dup, fresh] = seen.emplace(key, line); !fresh)
          throw ParseError("duplicates the location observed on line " + std::to_string(dup->second), line);
        auto [s, fresh] = slot.try_emplace(time, out.size());
        if (fresh) out.push_back({time, {}});
        out[s->second].obs.items.push_back(std::move(o));
      });
  return out;
}

inline std::vector<TimedObservations> read_observation_csv(const std::string& path, const FieldGrid& layout,
                                                           double default_sigma = 0.1) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open observation file " + path);
  return parse_observation_csv(is, layout, default_sigma);
}

/// Inverse of parse_observation_csv (values written in physical units).
inline void write_observation_csv(std::ostream& os, const std::vector<TimedObservations>& series,
                                  const FieldGrid& layout) {
  os << "time,station_id,row,col,channel,value,sigma\n";
  os << std::setprecision(17);
  for (const auto& [time, set] : series)
    for (const auto& o : set.items) {
      const auto& spec = layout.channels().at(o.channel);
      double phys = to_physical(o.value * layout.norm().std[o.channel] + layout.norm().mean[o.channel], spec);
      if (spec.transform == TransformKind::log_shift) phys = std::max(phys, 0.0);
      os << time << ',' << o.station_id << ',' << o.row << ',' << o.col << ',' << spec.name << ',' << phys << ','
         << o.sigma << '\n';
    }
}

}  // namespace sda
