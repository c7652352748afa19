#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcfb/stroke.hpp"
#include "lcfb/vae.hpp"

namespace lcfb {

// Channel order used by every 5-vector: amusement, contentment, surprise,
// sadness, concentration.
inline constexpr std::size_t kExpressionCount = 5;
using ExpressionVec = std::array<double, kExpressionCount>;
inline constexpr std::array<const char*, kExpressionCount> kExpressionNames{"amusement", "contentment", "surprise",
                                                                           "sadness", "concentration"};
inline constexpr ExpressionVec kCompositeWeights{1.0, 1.0, 0.0, -1.0, -1.0};

// Throws ContractError unless every intensity is finite and >= 0.
void validate_expression(const ExpressionVec& raw);

struct UserBaseline {
  std::string user_id;
  ExpressionVec mean{};
  std::uint64_t n = 0;
};

UserBaseline update_baseline(const UserBaseline& baseline, const ExpressionVec& raw);
// raw - mean. Throws ContractError while the baseline is empty.
ExpressionVec normalize_expression(const ExpressionVec& raw, const UserBaseline& baseline);
double composite_value(const ExpressionVec& v);

// Normalizes against the baseline before this observation, then folds the
// observation in. The first observation is its own baseline and yields zero.
ExpressionVec ingest_expression(UserBaseline& baseline, const ExpressionVec& raw);

struct FeedbackRecord {
  std::string user_id;
  std::string sketch_id;
  LatentVec z;
  ExpressionVec raw{};
  ExpressionVec normalized{};
  double composite = 0.0;
  std::int64_t session_index = 1;
  std::int64_t timestamp_ms = 0;
  friend bool operator==(const FeedbackRecord&, const FeedbackRecord&) = default;
};

nlohmann::json to_json(const FeedbackRecord& r);
FeedbackRecord feedback_from_json(const nlohmann::json& j);

// Recomputes normalized vectors and composites from the raw values, in log
// order with one baseline per user.
std::vector<FeedbackRecord> replay_feedback(const std::vector<FeedbackRecord>& records);

// "<class>-<n>"; the class is everything before the last dash.
std::string sketch_id_class(const std::string& sketch_id);

struct ViewerConfig {
  std::map<std::string, FeatureVec> archetypes;
  // Divisors that put each feature difference on a comparable scale.
  FeatureVec feature_scale{0.25, 0.25, 1, 15.0, 0.15};
  ExpressionVec base{0.5, 0.5, 0.5, 0.5, 0.5};
  double sensitivity = 0.1;
  double noise_sigma = 0.1;
  double drift_sadness = 0.004;
  double drift_concentration = -0.002;
  // Spread of per-user resting offsets added to the base intensities.
  double user_offset_sigma = 0.05;
  std::size_t sketches_per_user = 12;
};

// Archetypes are the jitter-free synthetic figures of every shape class.
ViewerConfig default_viewer_config();
ViewerConfig viewer_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ViewerConfig& c);
ViewerConfig load_viewer_config(const std::filesystem::path& path);

// -|(features - archetype) / scale|, 0 at the archetype.
double sketch_quality(const Sketch& s, const ViewerConfig& cfg);

// Noisy expression intensities for sketch s shown at session index t >= 1.
// Throws ConfigError when the sketch class has no archetype.
ExpressionVec simulate_viewer(const Sketch& s, const ViewerConfig& cfg, std::int64_t session_index,
                              std::mt19937_64& rng);

// Per-user viewer: the base intensities shifted by the user's resting offset.
ViewerConfig viewer_for_user(const ViewerConfig& cfg, std::uint64_t seed, std::uint64_t user);

// Append-only JSON Lines file with a single serialized writer.
class JsonlWriter {
 public:
  explicit JsonlWriter(std::filesystem::path path);
  void append(const nlohmann::json& line);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

// Every line of a JSON Lines file; a missing file reads as empty. Throws
// IoError naming the line on malformed JSON.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
std::vector<FeedbackRecord> load_feedback(const std::filesystem::path& path);
// As load_feedback, but a missing file reads as an empty log.
std::vector<FeedbackRecord> load_feedback_or_empty(const std::filesystem::path& path);
void write_feedback(const std::filesystem::path& path, const std::vector<FeedbackRecord>& records);

}  // namespace lcfb
