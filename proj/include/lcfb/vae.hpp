#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lcfb/graph.hpp"
#include "lcfb/stroke.hpp"

namespace lcfb {

using LatentVec = std::vector<double>;

struct VaeConfig {
  std::size_t latent_dim = 16;
  std::size_t hidden = 64;
  std::size_t mixtures = 5;
  std::size_t max_length = kDefaultMaxLength;
  std::string class_label;
  double temperature = 0.25;  // default sampling temperature recorded in the sidecar
};

struct VaeModel {
  VaeConfig config;
  ParameterSet params;
};

// log_var is soft-clamped into (-10, 10) by the encoder head.
struct LatentPosterior {
  std::vector<double> mu;
  std::vector<double> log_var;
};

// Mixture density output for one decoder step, after activations.
struct MDNParams {
  std::vector<double> pi;
  std::vector<double> mu_x;
  std::vector<double> mu_y;
  std::vector<double> sigma_x;
  std::vector<double> sigma_y;
  std::vector<double> rho;
  std::array<double, 3> pen_logits{};
};

inline constexpr double kLogVarBound = 10.0;

VaeModel init_vae(const VaeConfig& config, std::uint64_t seed);

// Encoder input rows: (dx, dy, one-hot pen).
inline constexpr std::size_t kEventWidth = 5;

// Posterior for one sketch. pad_to > length runs the encoder over trailing
// zero padding, which the masks must make invisible.
LatentPosterior encode(const VaeModel& model, const Sketch& sketch, std::size_t pad_to = 0);
std::vector<LatentPosterior> encode_batch(const VaeModel& model, std::span<const Sketch> sketches);

LatentVec reparam_sample(const LatentPosterior& posterior, std::mt19937_64& rng);

// Closed-form KL(N(mu, exp(log_var)) || N(0, I)).
double kl_loss(const LatentPosterior& posterior);

// Reference (non-graph) mixture NLL: mean over steps of the offset negative
// log-likelihood plus pen cross-entropy. Throws ContractError on invalid
// mixture parameters or misaligned lengths.
double mdn_nll(std::span<const MDNParams> params, const Sketch& target);

// Bivariate normal log-density with correlation.
double log_bivariate_normal(double x, double y, double mu_x, double mu_y, double sigma_x, double sigma_y,
                            double rho);

// Decoder outputs for the teacher-forced sketch given z.
std::vector<MDNParams> decode_teacher_forced(const VaeModel& model, const LatentVec& z, const Sketch& sketch);

// Autoregressive decode. Mixture and pen logits are divided by the
// temperature and component variances scaled by it; End is forced at the
// maximum length.
Sketch sample_sketch(const VaeModel& model, const LatentVec& z, double temperature, std::mt19937_64& rng);

struct VaeLossNodes {
  NodeId reconstruction;  // mean MDN NLL over valid steps
  NodeId kl;              // batch mean of the per-sketch KL
  NodeId total;           // reconstruction + kl_weight * kl
};

// Records the training loss for one batch. `noise` holds the reparameterization
// draws, one row per sketch.
VaeLossNodes build_vae_loss(Graph& graph, const VaeModel& model, std::span<const Sketch> batch, const Tensor& noise,
                            double kl_weight);

struct VaeTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 25;
  double kl_weight = 0.5;
  // The KL penalty is max(kl, kl_free_per_dim * latent_dim): below the floor
  // the encoder can carry information for free.
  double kl_free_per_dim = 0.2;
  double learning_rate = 1e-3;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double min_batch_kl = 0.0;
};

struct VaeTrainResult {
  VaeModel model;
  std::vector<EpochStats> trace;
};

inline constexpr std::size_t kMinTrainingSketches = 100;

VaeTrainResult train_vae(const std::vector<Sketch>& dataset, const VaeConfig& config,
                         const VaeTrainConfig& train_config);

// Checkpoint at `path` plus a JSON sidecar next to it (same stem, .json).
void save_vae(const std::filesystem::path& path, const VaeModel& model);
VaeModel load_vae(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

}  // namespace lcfb
