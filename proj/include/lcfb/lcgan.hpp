#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lcfb/graph.hpp"
#include "lcfb/vae.hpp"

namespace lcfb {

struct ValuePair {
  LatentVec z;
  double v = 0.0;
};

struct ValueDataset {
  std::vector<ValuePair> pairs;
  std::optional<double> threshold;  // median of v when absent
};

inline constexpr std::size_t kMinValuePairs = 20;
inline constexpr std::size_t kLcganHidden = 64;

// d -> 64 -> 64 -> 1 tanh MLP; the output is P(v >= threshold).
struct Discriminator {
  std::size_t latent_dim = 0;
  double threshold = 0.0;
  ParameterSet params;  // d/w1 d/b1 d/w2 d/b2 d/w3 d/b3
};

// d -> 64 -> 64 -> 2d tanh MLP emitting [delta | gate logits].
struct Generator {
  std::size_t latent_dim = 0;
  ParameterSet params;  // g/w1 g/b1 g/w2 g/b2 g/w3 g/b3
};

Discriminator init_discriminator(std::size_t latent_dim, std::uint64_t seed);
// gate_bias sets the initial gate logits, so gates start near sigmoid(gate_bias).
Generator init_generator(std::size_t latent_dim, std::uint64_t seed, double gate_bias = -2.0);

double discriminator_logit(const Discriminator& d, const LatentVec& z);
double discriminate(const Discriminator& d, const LatentVec& z);

struct GeneratorOutput {
  LatentVec shifted;  // (1 - g) * z + g * delta
  std::vector<double> delta;
  std::vector<double> gates;
};
GeneratorOutput run_generator(const Generator& g, const LatentVec& z);
LatentVec generate_shift(const Generator& g, const LatentVec& z);

// Graph builders. `z` is a batch x d node.
NodeId build_discriminator(Graph& graph, const ParameterSet& params, NodeId z, bool trainable);
struct GeneratorNodes {
  NodeId shifted;
  NodeId delta;
  NodeId gates;
};
GeneratorNodes build_generator(Graph& graph, const ParameterSet& params, NodeId z, std::size_t latent_dim);
// Mean over the batch of -log D(z') + lambda_dist * |z' - z|^2 / d
// + lambda_norm * (|z'|^2 / d - 1)^2, with D frozen.
NodeId build_generator_loss(Graph& graph, const Generator& g, const Discriminator& d, const Tensor& z_batch,
                            double lambda_dist, double lambda_norm);

struct DiscriminatorTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double holdout_fraction = 0.2;
  // L2 penalty on the weight matrices, added to the mean cross-entropy.
  double weight_decay = 0.03;
  // Start from a flat D (zero output layer) and pick the epoch count by
  // 5-fold cross-validated cross-entropy on the training rows, so labels
  // without signal tend to leave D at 0.5.
  bool early_stopping = true;
  // Take the fewest epochs within this many standard errors of the
  // cross-validated minimum; 0 takes the minimum itself.
  double stopping_se = 0.0;
  std::uint64_t seed = 1;
};

struct DiscriminatorTrainResult {
  Discriminator model;
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;
  std::size_t train_count = 0;
  std::size_t holdout_count = 0;
  std::size_t positives = 0;
  std::size_t best_epoch = 0;  // epochs trained; 0 keeps the flat start
};

double median(std::vector<double> values);

DiscriminatorTrainResult train_discriminator(const ValueDataset& data, const DiscriminatorTrainConfig& config);

struct GeneratorTrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double lambda_dist = 0.0;
  double lambda_norm = 0.0;
  double gate_bias = -2.0;
  std::size_t check_samples = 1000;
  std::uint64_t seed = 1;
};

struct GeneratorTrainResult {
  Generator model;
  double mean_d_prior = 0.0;    // on fresh prior samples after training
  double mean_d_shifted = 0.0;  // on the same samples after the shift
  double mean_shift = 0.0;      // mean |z' - z|
  std::vector<double> loss_trace;
};

inline constexpr double kMinDiscriminatorOutput = 1e-12;

// Trains G against frozen D from `init`. Throws NumericError when D is
// below 1e-12 on every prior check sample, since -log D gives no usable signal.
GeneratorTrainResult train_generator(const Generator& init, const Discriminator& d,
                                     const GeneratorTrainConfig& config);

// Independent random stream for item `index` of a batch seeded with `seed`.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index);

struct SampledSketch {
  LatentVec z;  // the latent vector that was decoded (z' when shifted)
  Sketch sketch;
};

enum class Backend { Serial, Parallel };

// z ~ N(0, I), z' = G(z) (or z when g is null), decoded at `temperature`.
// Item i draws from stream_rng(seed, i), so results do not depend on the
// backend or the thread count.
std::vector<SampledSketch> sample_constrained(const Generator* g, const VaeModel& model, double temperature,
                                              std::uint64_t seed, std::size_t n, Backend backend = Backend::Parallel);

struct LcganModel {
  Discriminator discriminator;
  Generator generator;
  std::string class_label;
  double lambda_dist = 0.0;
  double lambda_norm = 0.0;
};

// Generator checkpoint at `path`, discriminator at <stem>-d.lck and a shared
// JSON sidecar at <stem>.json.
void save_lcgan(const std::filesystem::path& path, const LcganModel& model);
LcganModel load_lcgan(const std::filesystem::path& path);
std::filesystem::path discriminator_path(const std::filesystem::path& generator_checkpoint);

// "vae" or "lcgan", read from the sidecar.
std::string checkpoint_kind(const std::filesystem::path& path);

}  // namespace lcfb
