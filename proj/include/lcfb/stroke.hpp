#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace lcfb {

enum class Pen : std::uint8_t { Down = 0, Up = 1, End = 2 };

// One pen move. Down draws the segment, Up moves without drawing and starts a
// new stroke at the destination, End draws the segment and terminates.
struct StrokeEvent {
  double dx = 0.0;
  double dy = 0.0;
  Pen pen = Pen::Down;
  friend bool operator==(const StrokeEvent&, const StrokeEvent&) = default;
};

inline constexpr std::size_t kDefaultMaxLength = 64;

struct Sketch {
  std::vector<StrokeEvent> events;
  std::string class_label;
  friend bool operator==(const Sketch&, const Sketch&) = default;
};

// Throws ContractError unless 1 <= length <= max_length, the last event is End,
// no other event is End and all offsets are finite.
void validate_sketch(const Sketch& sketch, std::size_t max_length = kDefaultMaxLength);

// Scales offsets so the population standard deviation of all dx and dy
// components is 1. Throws DegenerateInputError when that deviation is zero.
Sketch normalize_sketch(const Sketch& sketch);

enum class ShapeClass { Loop, Box, Star };

std::string class_name(ShapeClass shape);
ShapeClass parse_shape_class(const std::string& name);

// Deterministic procedural sketch of the given class, already normalized.
// jitter in [0, 1) controls aspect, rotation, closure gap and point noise;
// jitter 0 gives the same canonical figure for every seed.
Sketch generate_synthetic(ShapeClass shape, double jitter, std::uint64_t seed);

struct FeatureVec {
  double closure = 0.0;     // |first - last drawn point| / bounding-box diagonal
  double roundness = 0.0;   // isoperimetric quotient 4*pi*A / P^2 of the drawn points, in [0, 1]
  int stroke_count = 1;
  double path_length = 0.0;  // total drawn length
  double smoothness = 0.0;   // mean absolute turning angle (radians) within strokes
  friend bool operator==(const FeatureVec&, const FeatureVec&) = default;
};

inline constexpr std::size_t kFeatureCount = 5;
std::array<double, kFeatureCount> feature_array(const FeatureVec& f);

FeatureVec sketch_features(const Sketch& sketch);

using Point = std::array<double, 2>;
using Polyline = std::vector<Point>;

// Absolute point lists starting from the origin, split at pen-Up moves.
std::vector<Polyline> render_polylines(const Sketch& sketch);

// Inverse of render_polylines: the final event becomes End.
std::vector<StrokeEvent> polylines_to_events(const std::vector<Polyline>& polylines);

std::string to_svg(const Sketch& sketch);

struct SkippedRecord {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct NdjsonLoad {
  std::vector<Sketch> sketches;
  std::vector<SkippedRecord> skipped;
};

// Quick, Draw! style NDJSON: each line an object whose "drawing" is a list of
// [xs, ys] strokes in absolute coordinates. Malformed lines are skipped and
// reported; over-long drawings keep the whole strokes that fit.
NdjsonLoad parse_ndjson(std::istream& in, std::size_t max_length = kDefaultMaxLength,
                        const std::string& default_label = "");
NdjsonLoad load_ndjson(const std::filesystem::path& path, std::size_t max_length = kDefaultMaxLength,
                       const std::string& default_label = "");

// One NDJSON line for the sketch in absolute coordinates. A zero-length End
// move is left implicit, since the loader appends it.
std::string export_ndjson_line(const Sketch& sketch);

}  // namespace lcfb
