#include "lcfb/feedback.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "lcfb/checkpoint.hpp"
#include "lcfb/error.hpp"

namespace lcfb {
namespace {

double clamp0(double x) { return x < 0.0 ? 0.0 : x; }

ExpressionVec expression_from_json(const nlohmann::json& j, const char* field) {
  if (!j.is_array() || j.size() != kExpressionCount) {
    throw ContractError(std::string("'") + field + "' must be an array of 5 numbers");
  }
  ExpressionVec v{};
  for (std::size_t i = 0; i < kExpressionCount; ++i) v[i] = j.at(i).get<double>();
  return v;
}

FeatureVec features_from_json(const nlohmann::json& j, const FeatureVec& fallback) {
  FeatureVec f = fallback;
  f.closure = j.value("closure", f.closure);
  f.roundness = j.value("roundness", f.roundness);
  f.stroke_count = j.value("stroke_count", f.stroke_count);
  f.path_length = j.value("path_length", f.path_length);
  f.smoothness = j.value("smoothness", f.smoothness);
  return f;
}

nlohmann::json features_to_json(const FeatureVec& f) {
  return {{"closure", f.closure},
          {"roundness", f.roundness},
          {"stroke_count", f.stroke_count},
          {"path_length", f.path_length},
          {"smoothness", f.smoothness}};
}

}  // namespace

void validate_expression(const ExpressionVec& raw) {
  for (std::size_t i = 0; i < kExpressionCount; ++i) {
    if (!std::isfinite(raw[i]) || raw[i] < 0.0) {
      throw ContractError(std::string(kExpressionNames[i]) + " intensity must be finite and >= 0");
    }
  }
}

UserBaseline update_baseline(const UserBaseline& baseline, const ExpressionVec& raw) {
  validate_expression(raw);
  UserBaseline out = baseline;
  out.n += 1;
  const double n = static_cast<double>(out.n);
  for (std::size_t i = 0; i < kExpressionCount; ++i) out.mean[i] += (raw[i] - out.mean[i]) / n;
  return out;
}

ExpressionVec normalize_expression(const ExpressionVec& raw, const UserBaseline& baseline) {
  if (baseline.n == 0) throw ContractError("baseline for user '" + baseline.user_id + "' has no observations yet");
  ExpressionVec v{};
  for (std::size_t i = 0; i < kExpressionCount; ++i) v[i] = raw[i] - baseline.mean[i];
  return v;
}

double composite_value(const ExpressionVec& v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < kExpressionCount; ++i) acc += kCompositeWeights[i] * v[i];
  return acc;
}

ExpressionVec ingest_expression(UserBaseline& baseline, const ExpressionVec& raw) {
  validate_expression(raw);
  if (baseline.n == 0) {
    baseline = update_baseline(baseline, raw);
    return normalize_expression(raw, baseline);
  }
  const auto v = normalize_expression(raw, baseline);
  baseline = update_baseline(baseline, raw);
  return v;
}

nlohmann::json to_json(const FeedbackRecord& r) {
  return {{"user_id", r.user_id},         {"sketch_id", r.sketch_id},
          {"z", r.z},                     {"raw", r.raw},
          {"normalized", r.normalized},   {"composite", r.composite},
          {"session_index", r.session_index}, {"timestamp_ms", r.timestamp_ms}};
}

FeedbackRecord feedback_from_json(const nlohmann::json& j) {
  FeedbackRecord r;
  r.user_id = j.at("user_id").get<std::string>();
  r.sketch_id = j.at("sketch_id").get<std::string>();
  r.z = j.at("z").get<std::vector<double>>();
  r.raw = expression_from_json(j.at("raw"), "raw");
  r.normalized = expression_from_json(j.at("normalized"), "normalized");
  r.composite = j.at("composite").get<double>();
  r.session_index = j.at("session_index").get<std::int64_t>();
  r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  return r;
}

std::vector<FeedbackRecord> replay_feedback(const std::vector<FeedbackRecord>& records) {
  std::map<std::string, UserBaseline> baselines;
  std::vector<FeedbackRecord> out = records;
  for (auto& r : out) {
    auto& b = baselines[r.user_id];
    b.user_id = r.user_id;
    r.normalized = ingest_expression(b, r.raw);
    r.composite = composite_value(r.normalized);
  }
  return out;
}

std::string sketch_id_class(const std::string& sketch_id) {
  const auto dash = sketch_id.rfind('-');
  if (dash == std::string::npos || dash == 0) throw ContractError("malformed sketch id '" + sketch_id + "'");
  return sketch_id.substr(0, dash);
}

ViewerConfig default_viewer_config() {
  ViewerConfig cfg;
  for (auto shape : {ShapeClass::Loop, ShapeClass::Box, ShapeClass::Star}) {
    cfg.archetypes[class_name(shape)] = sketch_features(generate_synthetic(shape, 0.0, 0));
  }
  return cfg;
}

ViewerConfig viewer_config_from_json(const nlohmann::json& j) {
  ViewerConfig cfg = default_viewer_config();
  if (!j.is_object()) throw ConfigError("viewer config must be a JSON object");
  if (j.contains("archetypes")) {
    cfg.archetypes.clear();
    for (const auto& [name, f] : j.at("archetypes").items()) cfg.archetypes[name] = features_from_json(f, {});
  }
  if (j.contains("feature_scale")) cfg.feature_scale = features_from_json(j.at("feature_scale"), cfg.feature_scale);
  if (j.contains("base")) cfg.base = expression_from_json(j.at("base"), "base");
  cfg.sensitivity = j.value("sensitivity", cfg.sensitivity);
  cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
  cfg.drift_sadness = j.value("drift_sadness", cfg.drift_sadness);
  cfg.drift_concentration = j.value("drift_concentration", cfg.drift_concentration);
  cfg.user_offset_sigma = j.value("user_offset_sigma", cfg.user_offset_sigma);
  cfg.sketches_per_user = j.value("sketches_per_user", cfg.sketches_per_user);
  if (!(cfg.sensitivity > 0.0)) throw ConfigError("viewer sensitivity must be positive");
  if (!(cfg.noise_sigma >= 0.0) || !(cfg.user_offset_sigma >= 0.0)) {
    throw ConfigError("viewer noise levels must be non-negative");
  }
  if (cfg.sketches_per_user == 0) throw ConfigError("sketches_per_user must be positive");
  for (double s : feature_array(cfg.feature_scale)) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("feature scales must be positive and finite");
  }
  return cfg;
}

nlohmann::json to_json(const ViewerConfig& c) {
  nlohmann::json arch = nlohmann::json::object();
  for (const auto& [name, f] : c.archetypes) arch[name] = features_to_json(f);
  return {{"archetypes", arch},
          {"feature_scale", features_to_json(c.feature_scale)},
          {"base", c.base},
          {"sensitivity", c.sensitivity},
          {"noise_sigma", c.noise_sigma},
          {"drift_sadness", c.drift_sadness},
          {"drift_concentration", c.drift_concentration},
          {"user_offset_sigma", c.user_offset_sigma},
          {"sketches_per_user", c.sketches_per_user}};
}

ViewerConfig load_viewer_config(const std::filesystem::path& path) {
  try {
    return viewer_config_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

double sketch_quality(const Sketch& s, const ViewerConfig& cfg) {
  const auto it = cfg.archetypes.find(s.class_label);
  if (it == cfg.archetypes.end()) throw ConfigError("no viewer archetype for class '" + s.class_label + "'");
  const auto f = feature_array(sketch_features(s));
  const auto a = feature_array(it->second);
  const auto scale = feature_array(cfg.feature_scale);
  double acc = 0.0;
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const double d = (f[i] - a[i]) / scale[i];
    acc += d * d;
  }
  return -std::sqrt(acc);
}

ExpressionVec simulate_viewer(const Sketch& s, const ViewerConfig& cfg, std::int64_t session_index,
                              std::mt19937_64& rng) {
  if (session_index < 1) throw ContractError("session index starts at 1");
  const double q = sketch_quality(s, cfg);
  const double aq = cfg.sensitivity * q;
  const double t = static_cast<double>(session_index);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ExpressionVec eps{};
  for (auto& e : eps) e = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * gauss(rng) : 0.0;
  return {clamp0(cfg.base[0] + aq + eps[0]), clamp0(cfg.base[1] + aq + eps[1]), clamp0(cfg.base[2] + eps[2]),
          clamp0(cfg.base[3] - aq + cfg.drift_sadness * t + eps[3]),
          clamp0(cfg.base[4] - aq + cfg.drift_concentration * t + eps[4])};
}

ViewerConfig viewer_for_user(const ViewerConfig& cfg, std::uint64_t seed, std::uint64_t user) {
  ViewerConfig out = cfg;
  if (cfg.user_offset_sigma == 0.0) return out;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(user), static_cast<std::uint32_t>(user >> 32), 0x75736572u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> gauss(0.0, cfg.user_offset_sigma);
  for (auto& b : out.base) b += gauss(rng);
  return out;
}

JsonlWriter::JsonlWriter(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void JsonlWriter::append(const nlohmann::json& line) {
  const std::string text = line.dump() + "\n";
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot open " + path_.string() + " for appending");
  out << text;
  out.flush();
  if (!out) throw IoError("write to " + path_.string() + " failed");
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::vector<nlohmann::json> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

std::vector<FeedbackRecord> load_feedback(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("feedback log " + path.string() + " does not exist");
  std::vector<FeedbackRecord> out;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    try {
      out.push_back(feedback_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ": record " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

std::vector<FeedbackRecord> load_feedback_or_empty(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  return load_feedback(path);
}

void write_feedback(const std::filesystem::path& path, const std::vector<FeedbackRecord>& records) {
  std::string text;
  for (const auto& r : records) text += to_json(r).dump() + "\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

}  // namespace lcfb
