#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcfb/feedback.hpp"
#include "lcfb/lcgan.hpp"
#include "lcfb/stats.hpp"
#include "lcfb/vae.hpp"

namespace lcfb {

// Child seed for a named purpose, so independent phases never share a stream.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose);

// n normalized synthetic sketches cycling through `classes`.
std::vector<Sketch> synthetic_dataset(const std::vector<ShapeClass>& classes, std::size_t n, double jitter,
                                      std::uint64_t seed);

inline constexpr double kDefaultJitter = 0.5;

// Samples n prior sketches and scores them with simulated viewers, each
// viewer seeing sketches_per_user sketches in a row. Timestamps are a
// simulated clock (one second per sketch) so output is reproducible.
std::vector<FeedbackRecord> collect_feedback(const VaeModel& model, std::size_t n, const ViewerConfig& viewer,
                                             std::uint64_t seed);

inline constexpr std::size_t kMinFeedbackRecords = 40;

struct LcganTrainConfig {
  DiscriminatorTrainConfig discriminator;
  GeneratorTrainConfig generator;
  // Null control: permute v across records before training.
  bool shuffle_values = false;
};

// Desk configuration: the generator keeps a distance penalty so it stays
// where the discriminator saw data.
inline constexpr double kDeskLambdaDist = 0.35;
LcganTrainConfig desk_lcgan_config(std::uint64_t seed);

struct LcganTrainSummary {
  LcganModel model;
  std::size_t record_count = 0;
  DiscriminatorTrainResult discriminator;
  double mean_d_prior = 0.0;
  double mean_d_shifted = 0.0;
  double mean_shift = 0.0;
};

nlohmann::json to_json(const LcganTrainSummary& s);

// Trains D then G on the records whose sketch id belongs to `class_label`.
// Throws InsufficientDataError below kMinFeedbackRecords.
LcganTrainSummary train_lcgan_on_feedback(const std::vector<FeedbackRecord>& records, const std::string& class_label,
                                          const LcganTrainConfig& config, std::size_t latent_dim);

// --- evaluation reports --------------------------------------------------------

inline constexpr const char* kSourcePrior = "prior";
inline constexpr const char* kSourceLcgan = "lcgan";

struct ScoredObservation {
  std::string source;  // kSourcePrior or kSourceLcgan
  ExpressionVec normalized{};
  double composite = 0.0;
};

struct PreferenceCounts {
  std::uint64_t lcgan = 0;
  std::uint64_t prior = 0;
};

struct RatingObservation {
  int likert = 0;
  ExpressionVec normalized{};
};

// Report sections; each is null when there is no data for it.
nlohmann::json expression_section(const std::vector<ScoredObservation>& obs);
nlohmann::json preference_section(const PreferenceCounts& counts);
nlohmann::json rating_section(const std::vector<RatingObservation>& ratings);

struct EvaluationConfig {
  std::size_t per_model = 268;
  std::size_t pairs = 1000;
  double temperature = 0.25;
  std::uint64_t seed = 1;
};

struct EvaluationResult {
  nlohmann::json report;
  double composite_p_one_sided = 1.0;  // Welch, lcgan > prior
  double preference_p = 1.0;
  double lcgan_preference_fraction = 0.0;
};

// Scores per_model sketches from each arm in one shuffled, blind stream of
// simulated viewers, then runs `pairs` preference votes where the viewer
// picks the sketch with the higher raw composite (ties by coin flip).
// `lcgan_model` decodes the second arm; `generator` shifts its latents when
// present. Passing the prior model and no generator is the identical-model
// null control.
EvaluationResult evaluate_models(const VaeModel& prior, const VaeModel& lcgan_model, const Generator* generator,
                                 const ViewerConfig& viewer, const EvaluationConfig& config);

}  // namespace lcfb
