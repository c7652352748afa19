#include "lcfb/stroke.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "lcfb/error.hpp"

namespace lcfb {

void validate_sketch(const Sketch& sketch, std::size_t max_length) {
  const auto& ev = sketch.events;
  if (ev.empty()) throw ContractError("sketch has no events");
  if (ev.size() > max_length) {
    throw ContractError("sketch length " + std::to_string(ev.size()) + " exceeds maximum " +
                        std::to_string(max_length));
  }
  if (ev.back().pen != Pen::End) throw ContractError("sketch does not end with an End event");
  for (std::size_t i = 0; i < ev.size(); ++i) {
    if (!std::isfinite(ev[i].dx) || !std::isfinite(ev[i].dy)) {
      throw ContractError("non-finite offset at event " + std::to_string(i));
    }
    if (i + 1 < ev.size() && ev[i].pen == Pen::End) {
      throw ContractError("End event at position " + std::to_string(i) + " before the last event");
    }
  }
}

Sketch normalize_sketch(const Sketch& sketch) {
  if (sketch.events.empty()) throw ContractError("cannot normalize an empty sketch");
  const double count = 2.0 * static_cast<double>(sketch.events.size());
  double mean = 0.0;
  for (const auto& e : sketch.events) mean += e.dx + e.dy;
  mean /= count;
  double var = 0.0;
  for (const auto& e : sketch.events) var += (e.dx - mean) * (e.dx - mean) + (e.dy - mean) * (e.dy - mean);
  const double sd = std::sqrt(var / count);
  if (!(sd > 0.0) || !std::isfinite(sd)) throw DegenerateInputError("sketch offsets have zero spread");
  Sketch out = sketch;
  for (auto& e : out.events) {
    e.dx /= sd;
    e.dy /= sd;
  }
  return out;
}

std::string class_name(ShapeClass shape) {
  switch (shape) {
    case ShapeClass::Loop: return "loop";
    case ShapeClass::Box: return "box";
    case ShapeClass::Star: return "star";
  }
  return "loop";
}

ShapeClass parse_shape_class(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "loop") return ShapeClass::Loop;
  if (lower == "box") return ShapeClass::Box;
  if (lower == "star") return ShapeClass::Star;
  throw ConfigError("unknown synthetic class '" + name + "' (expected loop, box or star)");
}

namespace {

constexpr double kPi = std::numbers::pi;

Point rotate(Point p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p[0] - s * p[1], s * p[0] + c * p[1]};
}

// Points along the polygon through `corners`, `per_edge` segments per edge.
std::vector<Point> subdivide(const std::vector<Point>& corners, int per_edge) {
  std::vector<Point> pts;
  for (std::size_t e = 0; e + 1 < corners.size(); ++e) {
    for (int s = 0; s < per_edge; ++s) {
      const double t = static_cast<double>(s) / per_edge;
      pts.push_back({corners[e][0] + t * (corners[e + 1][0] - corners[e][0]),
                     corners[e][1] + t * (corners[e + 1][1] - corners[e][1])});
    }
  }
  pts.push_back(corners.back());
  return pts;
}

Sketch from_points(const std::vector<Point>& pts, const std::string& label) {
  Sketch s;
  s.class_label = label;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    s.events.push_back({pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1], Pen::Down});
  }
  s.events.push_back({0.0, 0.0, Pen::End});
  return s;
}

}  // namespace

Sketch generate_synthetic(ShapeClass shape, double jitter, std::uint64_t seed) {
  if (!(jitter >= 0.0 && jitter < 1.0)) throw ContractError("jitter must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double aspect = 1.0 + 0.6 * jitter * sym(rng);
  const double rotation = jitter * kPi * 0.5 * sym(rng);
  const double gap = 0.3 * jitter * unit(rng);
  const double noise = 0.04 * jitter;

  std::vector<Point> pts;
  switch (shape) {
    case ShapeClass::Loop: {
      constexpr int kSegments = 32;
      const double sweep = 2.0 * kPi * (1.0 - gap);
      for (int k = 0; k <= kSegments; ++k) {
        const double a = sweep * k / kSegments;
        pts.push_back({std::cos(a), aspect * std::sin(a)});
      }
      break;
    }
    case ShapeClass::Box: {
      const double h = aspect;
      std::vector<Point> corners = {{0, 0}, {1, 0}, {1, h}, {0, h}, {0, gap * h}};
      pts = subdivide(corners, 8);
      break;
    }
    case ShapeClass::Star: {
      std::vector<Point> corners;
      for (int k = 0; k <= 5; ++k) {
        const double a = kPi / 2 + 4.0 * kPi * k / 5.0;
        const double r = k == 0 || k == 5 ? 1.0 : 1.0 + 0.25 * jitter * sym(rng);
        corners.push_back({r * std::cos(a), aspect * r * std::sin(a)});
      }
      // The closing edge stops short by the gap fraction.
      corners.back() = {corners[4][0] + (1.0 - gap) * (corners[5][0] - corners[4][0]),
                        corners[4][1] + (1.0 - gap) * (corners[5][1] - corners[4][1])};
      pts = subdivide(corners, 6);
      break;
    }
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = rotate(pts[i], rotation);
    if (i > 0 && noise > 0.0) {
      pts[i][0] += noise * gauss(rng);
      pts[i][1] += noise * gauss(rng);
    }
  }
  return normalize_sketch(from_points(pts, class_name(shape)));
}

std::array<double, kFeatureCount> feature_array(const FeatureVec& f) {
  return {f.closure, f.roundness, static_cast<double>(f.stroke_count), f.path_length, f.smoothness};
}

std::vector<Polyline> render_polylines(const Sketch& sketch) {
  std::vector<Polyline> lines;
  Point p{0.0, 0.0};
  Polyline current{p};
  for (const auto& e : sketch.events) {
    p = {p[0] + e.dx, p[1] + e.dy};
    if (e.pen == Pen::Up) {
      lines.push_back(std::move(current));
      current = Polyline{p};
    } else {
      current.push_back(p);
    }
  }
  lines.push_back(std::move(current));
  return lines;
}

std::vector<StrokeEvent> polylines_to_events(const std::vector<Polyline>& polylines) {
  std::vector<StrokeEvent> events;
  Point prev{0.0, 0.0};
  bool first = true;
  for (const auto& line : polylines) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (first) {
        // The first point is the origin of the offset frame.
        prev = line[0];
        first = false;
        continue;
      }
      const Pen pen = i == 0 ? Pen::Up : Pen::Down;
      events.push_back({line[i][0] - prev[0], line[i][1] - prev[1], pen});
      prev = line[i];
    }
  }
  if (events.empty()) events.push_back({0.0, 0.0, Pen::End});
  events.back().pen = Pen::End;
  return events;
}

FeatureVec sketch_features(const Sketch& sketch) {
  const auto lines = render_polylines(sketch);
  FeatureVec f;
  f.stroke_count = static_cast<int>(lines.size());

  std::vector<Point> pts;
  for (const auto& line : lines) pts.insert(pts.end(), line.begin(), line.end());

  double min_x = pts[0][0], max_x = pts[0][0], min_y = pts[0][1], max_y = pts[0][1];
  for (const auto& p : pts) {
    min_x = std::min(min_x, p[0]);
    max_x = std::max(max_x, p[0]);
    min_y = std::min(min_y, p[1]);
    max_y = std::max(max_y, p[1]);
  }
  const double diag = std::hypot(max_x - min_x, max_y - min_y);
  if (diag > 0.0) f.closure = std::hypot(pts.back()[0] - pts.front()[0], pts.back()[1] - pts.front()[1]) / diag;

  double area2 = 0.0;
  double perimeter = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Point& a = pts[i];
    const Point& b = pts[(i + 1) % pts.size()];
    area2 += a[0] * b[1] - b[0] * a[1];
    perimeter += std::hypot(b[0] - a[0], b[1] - a[1]);
  }
  if (perimeter > 0.0) {
    f.roundness = std::clamp(2.0 * std::numbers::pi * std::abs(area2) / (perimeter * perimeter), 0.0, 1.0);
  }

  double turning = 0.0;
  std::size_t turns = 0;
  for (const auto& line : lines) {
    Point prev_seg{0.0, 0.0};
    bool have_prev = false;
    for (std::size_t i = 1; i < line.size(); ++i) {
      const Point seg{line[i][0] - line[i - 1][0], line[i][1] - line[i - 1][1]};
      const double len = std::hypot(seg[0], seg[1]);
      f.path_length += len;
      if (len == 0.0) continue;
      if (have_prev) {
        const double cross = prev_seg[0] * seg[1] - prev_seg[1] * seg[0];
        const double dot = prev_seg[0] * seg[0] + prev_seg[1] * seg[1];
        turning += std::abs(std::atan2(cross, dot));
        ++turns;
      }
      prev_seg = seg;
      have_prev = true;
    }
  }
  if (turns > 0) f.smoothness = turning / static_cast<double>(turns);
  return f;
}

std::string to_svg(const Sketch& sketch) {
  const auto lines = render_polylines(sketch);
  double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
  bool first = true;
  for (const auto& line : lines) {
    for (const auto& p : line) {
      if (first) {
        min_x = max_x = p[0];
        min_y = max_y = p[1];
        first = false;
      }
      min_x = std::min(min_x, p[0]);
      max_x = std::max(max_x, p[0]);
      min_y = std::min(min_y, p[1]);
      max_y = std::max(max_y, p[1]);
    }
  }
  double w = max_x - min_x, h = max_y - min_y;
  if (w <= 0.0) w = 1.0;
  if (h <= 0.0) h = 1.0;
  const double mx = 0.05 * w, my = 0.05 * h;

  std::ostringstream out;
  out.precision(10);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"" << (min_x - mx) << ' ' << (min_y - my) << ' '
      << (w + 2 * mx) << ' ' << (h + 2 * my) << "\">\n";
  for (const auto& line : lines) {
    out << "  <path fill=\"none\" stroke=\"black\" stroke-width=\"2\" vector-effect=\"non-scaling-stroke\" d=\"";
    for (std::size_t i = 0; i < line.size(); ++i) {
      out << (i == 0 ? "M" : " L") << line[i][0] << ' ' << line[i][1];
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// NDJSON

namespace {

// Builds the event list for the strokes; returns false when not even the
// first stroke fits.
bool strokes_to_sketch(const std::vector<Polyline>& strokes, std::size_t max_length, Sketch& out) {
  std::vector<Polyline> kept;
  std::size_t points = 0;
  for (const auto& stroke : strokes) {
    // Events = total points - 1 moves + 1 End marker = total points.
    if (points + stroke.size() > max_length) break;
    points += stroke.size();
    kept.push_back(stroke);
  }
  if (kept.empty()) return false;
  out.events.clear();
  Point prev = kept[0][0];
  for (std::size_t s = 0; s < kept.size(); ++s) {
    for (std::size_t i = 0; i < kept[s].size(); ++i) {
      if (s == 0 && i == 0) continue;
      const Point& p = kept[s][i];
      out.events.push_back({p[0] - prev[0], p[1] - prev[1], i == 0 ? Pen::Up : Pen::Down});
      prev = p;
    }
  }
  out.events.push_back({0.0, 0.0, Pen::End});
  return true;
}

}  // namespace

NdjsonLoad parse_ndjson(std::istream& in, std::size_t max_length, const std::string& default_label) {
  NdjsonLoad result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      const auto& drawing = doc.at("drawing");
      if (!drawing.is_array() || drawing.empty()) throw ContractError("\"drawing\" must be a non-empty array");
      std::vector<Polyline> strokes;
      for (const auto& stroke : drawing) {
        const auto& xs = stroke.at(0);
        const auto& ys = stroke.at(1);
        if (!xs.is_array() || !ys.is_array() || xs.size() != ys.size() || xs.empty()) {
          throw ContractError("stroke coordinate arrays must be non-empty and of equal length");
        }
        Polyline pl;
        for (std::size_t i = 0; i < xs.size(); ++i) pl.push_back({xs.at(i).get<double>(), ys.at(i).get<double>()});
        strokes.push_back(std::move(pl));
      }
      Sketch sketch;
      sketch.class_label = doc.contains("word") && doc["word"].is_string() ? doc["word"].get<std::string>()
                                                                            : default_label;
      if (!strokes_to_sketch(strokes, max_length, sketch)) {
        throw ContractError("first stroke alone exceeds the maximum length");
      }
      result.sketches.push_back(std::move(sketch));
    } catch (const std::exception& e) {
      result.skipped.push_back({line_no, e.what()});
    }
  }
  return result;
}

NdjsonLoad load_ndjson(const std::filesystem::path& path, std::size_t max_length, const std::string& default_label) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_ndjson(in, max_length, default_label);
}

std::string export_ndjson_line(const Sketch& sketch) {
  auto lines = render_polylines(sketch);
  if (!sketch.events.empty()) {
    const auto& last = sketch.events.back();
    if (last.pen == Pen::End && last.dx == 0.0 && last.dy == 0.0 && lines.back().size() > 1) lines.back().pop_back();
  }
  nlohmann::json drawing = nlohmann::json::array();
  for (const auto& line : lines) {
    nlohmann::json xs = nlohmann::json::array(), ys = nlohmann::json::array();
    for (const auto& p : line) {
      xs.push_back(p[0]);
      ys.push_back(p[1]);
    }
    drawing.push_back({xs, ys});
  }
  nlohmann::json doc = {{"word", sketch.class_label}, {"drawing", drawing}};
  return doc.dump();
}

}  // namespace lcfb
