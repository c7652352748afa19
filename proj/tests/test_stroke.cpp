#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "lcfb/error.hpp"
#include "lcfb/stroke.hpp"

using namespace lcfb;

namespace {

double offset_std(const Sketch& s) {
  double sum = 0.0, sq = 0.0;
  const double n = 2.0 * static_cast<double>(s.events.size());
  for (const auto& e : s.events) sum += e.dx + e.dy;
  const double mean = sum / n;
  for (const auto& e : s.events) sq += (e.dx - mean) * (e.dx - mean) + (e.dy - mean) * (e.dy - mean);
  return std::sqrt(sq / n);
}

Sketch random_sketch(std::uint64_t seed, std::size_t length) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Sketch s;
  s.class_label = "random";
  for (std::size_t i = 0; i + 1 < length; ++i) s.events.push_back({g(rng), g(rng), u(rng) < 0.2 ? Pen::Up : Pen::Down});
  s.events.push_back({g(rng), g(rng), Pen::End});
  return s;
}

Sketch from_points(const std::vector<Point>& pts) {
  Sketch s;
  for (std::size_t i = 1; i < pts.size(); ++i) s.events.push_back({pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1], Pen::Down});
  s.events.back().pen = Pen::End;
  return s;
}

}  // namespace

TEST_CASE("validate_sketch enforces the End and length contract") {
  CHECK_NOTHROW(validate_sketch(Sketch{{{1, 1, Pen::End}}, ""}));
  CHECK_THROWS_AS(validate_sketch(Sketch{}), ContractError);
  CHECK_THROWS_AS(validate_sketch(Sketch{{{1, 1, Pen::Down}}, ""}), ContractError);
  CHECK_THROWS_AS(validate_sketch(Sketch{{{1, 1, Pen::End}, {1, 1, Pen::End}}, ""}), ContractError);
  CHECK_THROWS_AS(validate_sketch(Sketch{{{std::nan(""), 1, Pen::End}}, ""}), ContractError);
  CHECK_THROWS_AS(validate_sketch(random_sketch(1, 65)), ContractError);
  CHECK_NOTHROW(validate_sketch(random_sketch(1, 64)));
}

TEST_CASE("normalize_sketch") {
  const Sketch raw = random_sketch(3, 40);
  const Sketch unit = normalize_sketch(raw);
  CHECK(std::abs(offset_std(unit) - 1.0) < 1e-9);

  SUBCASE("identity on an already normalized sketch") {
    const Sketch again = normalize_sketch(unit);
    for (std::size_t i = 0; i < unit.events.size(); ++i) {
      CHECK(std::abs(again.events[i].dx - unit.events[i].dx) < 1e-12);
      CHECK(std::abs(again.events[i].dy - unit.events[i].dy) < 1e-12);
      CHECK(again.events[i].pen == unit.events[i].pen);
    }
  }
  SUBCASE("scale invariance") {
    Sketch doubled = raw;
    for (auto& e : doubled.events) {
      e.dx *= 2.0;
      e.dy *= 2.0;
    }
    const Sketch out = normalize_sketch(doubled);
    for (std::size_t i = 0; i < unit.events.size(); ++i) {
      CHECK(std::abs(out.events[i].dx - unit.events[i].dx) < 1e-12);
      CHECK(std::abs(out.events[i].dy - unit.events[i].dy) < 1e-12);
    }
  }
  SUBCASE("pen states preserved") {
    for (std::size_t i = 0; i < raw.events.size(); ++i) CHECK(unit.events[i].pen == raw.events[i].pen);
  }
  SUBCASE("degenerate input") {
    CHECK_THROWS_AS(normalize_sketch(Sketch{{{0, 0, Pen::Down}, {0, 0, Pen::End}}, ""}), DegenerateInputError);
    CHECK_THROWS_AS(normalize_sketch(Sketch{}), ContractError);
  }
}

TEST_CASE("generate_synthetic") {
  for (auto shape : {ShapeClass::Loop, ShapeClass::Box, ShapeClass::Star}) {
    const Sketch a = generate_synthetic(shape, 0.5, 42);
    CHECK(a == generate_synthetic(shape, 0.5, 42));
    CHECK_FALSE(a == generate_synthetic(shape, 0.5, 43));
    CHECK_NOTHROW(validate_sketch(a));
    CHECK(a.class_label == class_name(shape));
    CHECK(std::abs(offset_std(a) - 1.0) < 1e-9);
    // Jitter 0 removes every seed-dependent term.
    const auto f0 = feature_array(sketch_features(generate_synthetic(shape, 0.0, 1)));
    for (std::uint64_t seed : {2u, 99u, 12345u}) {
      const auto f = feature_array(sketch_features(generate_synthetic(shape, 0.0, seed)));
      for (std::size_t k = 0; k < kFeatureCount; ++k) CHECK(std::abs(f[k] - f0[k]) < 1e-12);
    }
  }
  CHECK(sketch_features(generate_synthetic(ShapeClass::Loop, 0.0, 7)).closure < 1e-9);

  const auto star = sketch_features(generate_synthetic(ShapeClass::Star, 0.0, 7));
  const auto loop = sketch_features(generate_synthetic(ShapeClass::Loop, 0.0, 7));
  CHECK(star.stroke_count == 1);
  CHECK(star.smoothness > loop.smoothness);

  CHECK_THROWS_AS(generate_synthetic(ShapeClass::Loop, 1.0, 1), ContractError);
  CHECK_THROWS_AS(generate_synthetic(ShapeClass::Loop, -0.1, 1), ContractError);
  CHECK(parse_shape_class("Star") == ShapeClass::Star);
  CHECK_THROWS_AS(parse_shape_class("cat"), ConfigError);
}

TEST_CASE("sketch_features") {
  SUBCASE("analytic circle sampled at 32 points") {
    std::vector<Point> pts;
    for (int k = 0; k <= 32; ++k) {
      const double a = 2.0 * std::numbers::pi * k / 32.0;
      pts.push_back({std::cos(a), std::sin(a)});
    }
    const auto f = sketch_features(from_points(pts));
    CHECK(f.closure < 1e-9);
    CHECK(f.roundness > 0.9);
    CHECK(f.stroke_count == 1);
    // Perimeter of the inscribed 32-gon.
    CHECK(std::abs(f.path_length - 64.0 * std::sin(std::numbers::pi / 32.0)) < 1e-12);
    CHECK(std::abs(f.smoothness - 2.0 * std::numbers::pi / 32.0) < 1e-12);
  }
  SUBCASE("collinear points do not turn") {
    const auto f = sketch_features(from_points({{0, 0}, {1, 1}, {2, 2}}));
    CHECK(f.smoothness == 0.0);
    CHECK(f.roundness == 0.0);
    CHECK(std::abs(f.closure - 1.0) < 1e-12);
  }
  SUBCASE("two strokes") {
    const Sketch s{{{1, 0, Pen::Down}, {0, 1, Pen::Up}, {1, 0, Pen::End}}, ""};
    CHECK(sketch_features(s).stroke_count == 2);
    CHECK(std::abs(sketch_features(s).path_length - 2.0) < 1e-12);
  }
  SUBCASE("single point is degenerate but defined") {
    const auto f = sketch_features(Sketch{{{0, 0, Pen::End}}, ""});
    CHECK(f.path_length == 0.0);
    CHECK(f.smoothness == 0.0);
    CHECK(f.closure == 0.0);
  }
}

TEST_CASE("render_polylines") {
  const auto single = render_polylines(Sketch{{{1, 1, Pen::End}}, ""});
  REQUIRE(single.size() == 1);
  CHECK(single[0] == Polyline{{0, 0}, {1, 1}});

  const auto closed = render_polylines(from_points({{0, 0}, {1, 0}, {1, 1}, {0, 0}}));
  CHECK(closed[0].front() == closed[0].back());

  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Sketch s = random_sketch(seed, 30);
    const auto events = polylines_to_events(render_polylines(s));
    REQUIRE(events.size() == s.events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
      CHECK(std::abs(events[i].dx - s.events[i].dx) < 1e-9);
      CHECK(std::abs(events[i].dy - s.events[i].dy) < 1e-9);
      CHECK(events[i].pen == s.events[i].pen);
    }
  }
}

TEST_CASE("svg export") {
  const Sketch s{{{1, 0, Pen::Down}, {0, 1, Pen::Up}, {1, 0, Pen::End}}, ""};
  const std::string svg = to_svg(s);
  std::size_t paths = 0;
  for (auto pos = svg.find("<path"); pos != std::string::npos; pos = svg.find("<path", pos + 1)) ++paths;
  CHECK(paths == 2);
  CHECK(svg.find("stroke-width=\"2\"") != std::string::npos);
  // Bounding box [0,2]x[0,1] with a 5% margin on each side.
  CHECK(svg.find("viewBox=\"-0.1 -0.05 2.2 1.1\"") != std::string::npos);
}

TEST_CASE("ndjson ingestion") {
  SUBCASE("hand-converted record") {
    std::istringstream in(R"({"word":"line","drawing":[[[0,10],[0,0]]]})");
    const auto load = parse_ndjson(in);
    REQUIRE(load.sketches.size() == 1);
    CHECK(load.skipped.empty());
    CHECK(load.sketches[0].class_label == "line");
    CHECK(load.sketches[0].events == std::vector<StrokeEvent>{{10, 0, Pen::Down}, {0, 0, Pen::End}});
  }
  SUBCASE("empty input") {
    std::istringstream in("");
    const auto load = parse_ndjson(in);
    CHECK(load.sketches.empty());
    CHECK(load.skipped.empty());
  }
  SUBCASE("malformed line is skipped and reported") {
    std::istringstream in(
        "{\"drawing\":[[[0,1],[0,1]]]}\n"
        "{\"drawing\":[[[0,1],[0,1]]]}\n"
        "{not json\n"
        "{\"drawing\":[[[0,1,2],[0,1,0]],[[5,6],[5,5]]]}\n");
    const auto load = parse_ndjson(in, kDefaultMaxLength, "fallback");
    CHECK(load.sketches.size() == 3);
    REQUIRE(load.skipped.size() == 1);
    CHECK(load.skipped[0].line == 3);
    CHECK(load.sketches[0].class_label == "fallback");
    CHECK(sketch_features(load.sketches[2]).stroke_count == 2);
  }
  SUBCASE("structurally invalid records are skipped") {
    std::istringstream in(
        "{\"drawing\":[]}\n"
        "{\"drawing\":[[[0,1],[0]]]}\n"
        "{\"nodrawing\":1}\n");
    const auto load = parse_ndjson(in);
    CHECK(load.sketches.empty());
    CHECK(load.skipped.size() == 3);
  }
  SUBCASE("over-long drawings keep whole strokes") {
    std::istringstream in("{\"drawing\":[[[0,1,2],[0,0,0]],[[0,1,2],[5,5,5]],[[9,9],[0,1]]]}");
    const auto load = parse_ndjson(in, 7);
    REQUIRE(load.sketches.size() == 1);
    const auto& ev = load.sketches[0].events;
    CHECK(ev.size() == 6);
    CHECK(sketch_features(load.sketches[0]).stroke_count == 2);
    CHECK_NOTHROW(validate_sketch(load.sketches[0], 7));
  }
  SUBCASE("first stroke too long") {
    std::istringstream in("{\"drawing\":[[[0,1,2,3],[0,0,0,0]]]}");
    const auto load = parse_ndjson(in, 3);
    CHECK(load.sketches.empty());
    CHECK(load.skipped.size() == 1);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_ndjson("/nonexistent/file.ndjson"), IoError);
  }
}

TEST_CASE("ndjson export round-trips the event list") {
  const auto dir = std::filesystem::temp_directory_path() / "lcfb_test_stroke";
  std::filesystem::create_directories(dir);
  const auto path = dir / "roundtrip.ndjson";
  std::vector<Sketch> originals;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    originals.push_back(generate_synthetic(static_cast<ShapeClass>(seed % 3), 0.5, seed));
  }
  Sketch multi{{{1, 0, Pen::Down}, {0, 2, Pen::Up}, {3, 0, Pen::Down}, {0, 0, Pen::End}}, "multi"};
  originals.push_back(multi);
  {
    std::ofstream out(path);
    for (const auto& s : originals) out << export_ndjson_line(s) << '\n';
  }
  const auto load = load_ndjson(path);
  REQUIRE(load.sketches.size() == originals.size());
  for (std::size_t k = 0; k < originals.size(); ++k) {
    const auto& a = originals[k].events;
    const auto& b = load.sketches[k].events;
    CHECK(load.sketches[k].class_label == originals[k].class_label);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(a[i].dx - b[i].dx) < 1e-9);
      CHECK(std::abs(a[i].dy - b[i].dy) < 1e-9);
      CHECK(a[i].pen == b[i].pen);
    }
  }
  std::filesystem::remove_all(dir);
}
