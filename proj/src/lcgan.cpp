#include "lcfb/lcgan.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "lcfb/checkpoint.hpp"
#include "lcfb/error.hpp"
#include "lcfb/optimizer.hpp"

namespace lcfb {
namespace {

constexpr std::size_t H = kLcganHidden;

void check_latent(const LatentVec& z, std::size_t d) {
  if (z.size() != d) {
    throw ContractError("latent dimension mismatch: expected " + std::to_string(d) + ", got " +
                        std::to_string(z.size()));
  }
  for (double v : z) {
    if (!std::isfinite(v)) throw ContractError("latent vector is not finite");
  }
}

// y = x W + b for one row.
std::vector<double> dense(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
  const std::size_t in = w.rows(), out = w.cols();
  std::vector<double> y(b.values().begin(), b.values().end());
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = x[i];
    const double* row = w.data() + i * out;
    for (std::size_t j = 0; j < out; ++j) y[j] += xi * row[j];
  }
  return y;
}

std::vector<double> mlp_head(const ParameterSet& ps, const std::string& prefix, const LatentVec& z) {
  auto h = dense(z, ps.at(prefix + "/w1"), ps.at(prefix + "/b1"));
  for (auto& v : h) v = std::tanh(v);
  h = dense(h, ps.at(prefix + "/w2"), ps.at(prefix + "/b2"));
  for (auto& v : h) v = std::tanh(v);
  return dense(h, ps.at(prefix + "/w3"), ps.at(prefix + "/b3"));
}

NodeId graph_mlp(Graph& g, const ParameterSet& ps, const std::string& prefix, NodeId z, bool trainable) {
  auto layer = [&](NodeId x, const std::string& n) {
    return g.add(g.matmul(x, g.param(ps, prefix + "/w" + n, trainable)), g.param(ps, prefix + "/b" + n, trainable));
  };
  NodeId h = g.tanh(layer(z, "1"));
  h = g.tanh(layer(h, "2"));
  return layer(h, "3");
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

constexpr std::size_t kEarlyStoppingFolds = 5;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void add_mlp(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  ps.add_glorot(prefix + "/w1", in, H, rng);
  ps.add_zeros(prefix + "/b1", {1, H});
  ps.add_glorot(prefix + "/w2", H, H, rng);
  ps.add_zeros(prefix + "/b2", {1, H});
  ps.add_glorot(prefix + "/w3", H, out, rng);
  ps.add_zeros(prefix + "/b3", {1, out});
}

std::vector<LatentVec> prior_draws(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<LatentVec> out(n, LatentVec(d));
  for (auto& z : out) {
    for (auto& v : z) v = gauss(rng);
  }
  return out;
}

double accuracy(const Discriminator& d, const std::vector<ValuePair>& pairs, const std::vector<std::size_t>& idx) {
  std::size_t hits = 0;
  for (std::size_t i : idx) {
    const bool predicted = discriminator_logit(d, pairs[i].z) >= 0.0;
    const bool label = pairs[i].v >= d.threshold;
    hits += predicted == label ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

}  // namespace

Discriminator init_discriminator(std::size_t latent_dim, std::uint64_t seed) {
  if (latent_dim == 0) throw ConfigError("latent dimension must be positive");
  std::mt19937_64 rng(seed);
  Discriminator d{latent_dim, 0.0, {}};
  add_mlp(d.params, "d", latent_dim, 1, rng);
  return d;
}

Generator init_generator(std::size_t latent_dim, std::uint64_t seed, double gate_bias) {
  if (latent_dim == 0) throw ConfigError("latent dimension must be positive");
  std::mt19937_64 rng(seed);
  Generator g{latent_dim, {}};
  add_mlp(g.params, "g", latent_dim, 2 * latent_dim, rng);
  auto& b = g.params.at("g/b3");
  for (std::size_t j = latent_dim; j < 2 * latent_dim; ++j) b[j] = gate_bias;
  return g;
}

double discriminator_logit(const Discriminator& d, const LatentVec& z) {
  check_latent(z, d.latent_dim);
  return mlp_head(d.params, "d", z)[0];
}

double discriminate(const Discriminator& d, const LatentVec& z) { return sigmoid(discriminator_logit(d, z)); }

GeneratorOutput run_generator(const Generator& g, const LatentVec& z) {
  check_latent(z, g.latent_dim);
  const std::size_t n = g.latent_dim;
  const auto head = mlp_head(g.params, "g", z);
  GeneratorOutput out;
  out.delta.assign(head.begin(), head.begin() + static_cast<std::ptrdiff_t>(n));
  out.gates.resize(n);
  out.shifted.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.gates[i] = sigmoid(head[n + i]);
    out.shifted[i] = z[i] + out.gates[i] * (out.delta[i] - z[i]);
  }
  return out;
}

LatentVec generate_shift(const Generator& g, const LatentVec& z) { return run_generator(g, z).shifted; }

NodeId build_discriminator(Graph& graph, const ParameterSet& params, NodeId z, bool trainable) {
  return graph_mlp(graph, params, "d", z, trainable);
}

GeneratorNodes build_generator(Graph& graph, const ParameterSet& params, NodeId z, std::size_t latent_dim) {
  NodeId head = graph_mlp(graph, params, "g", z, true);
  NodeId delta = graph.slice(head, 0, latent_dim);
  NodeId gates = graph.sigmoid(graph.slice(head, latent_dim, 2 * latent_dim));
  NodeId shifted = graph.add(z, graph.mul(gates, graph.sub(delta, z)));
  return {shifted, delta, gates};
}

NodeId build_generator_loss(Graph& graph, const Generator& g, const Discriminator& d, const Tensor& z_batch,
                            double lambda_dist, double lambda_norm) {
  if (g.latent_dim != d.latent_dim || z_batch.cols() != g.latent_dim) {
    throw ShapeError("generator, discriminator and batch latent dimensions disagree");
  }
  const double inv_d = 1.0 / static_cast<double>(g.latent_dim);
  NodeId z = graph.constant(z_batch);
  auto gen = build_generator(graph, g.params, z, g.latent_dim);
  NodeId logit = build_discriminator(graph, d.params, gen.shifted, false);
  NodeId loss = graph.mean(graph.softplus(graph.scale(logit, -1.0)));
  if (lambda_dist != 0.0) {
    NodeId dist = graph.mean(graph.sum_cols(graph.square(graph.sub(gen.shifted, z))));
    loss = graph.add(loss, graph.scale(dist, lambda_dist * inv_d));
  }
  if (lambda_norm != 0.0) {
    NodeId norm = graph.add_scalar(graph.scale(graph.sum_cols(graph.square(gen.shifted)), inv_d), -1.0);
    loss = graph.add(loss, graph.scale(graph.mean(graph.square(norm)), lambda_norm));
  }
  return loss;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

DiscriminatorTrainResult train_discriminator(const ValueDataset& data, const DiscriminatorTrainConfig& config) {
  const auto& pairs = data.pairs;
  if (pairs.size() < kMinValuePairs) {
    throw InsufficientDataError("discriminator training needs at least " + std::to_string(kMinValuePairs) +
                                    " (z, v) pairs, got " + std::to_string(pairs.size()),
                                pairs.size(), kMinValuePairs);
  }
  if (!(config.holdout_fraction > 0.0 && config.holdout_fraction < 1.0)) {
    throw ConfigError("holdout fraction must lie in (0, 1)");
  }
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t d = pairs.front().z.size();
  std::vector<double> vs;
  for (const auto& p : pairs) {
    check_latent(p.z, d);
    if (!std::isfinite(p.v)) throw ContractError("feedback value is not finite");
    vs.push_back(p.v);
  }
  const double threshold = data.threshold.value_or(median(vs));
  const auto positives = static_cast<std::size_t>(std::count_if(vs.begin(), vs.end(), [&](double v) {
    return v >= threshold;
  }));
  if (positives == 0 || positives == pairs.size()) {
    throw ContractError("all values fall on one side of the threshold " + std::to_string(threshold) +
                        "; adjust the threshold so both classes are non-empty");
  }

  DiscriminatorTrainResult result;
  result.model = init_discriminator(d, config.seed);
  result.model.threshold = threshold;
  result.positives = positives;
  std::mt19937_64 rng(config.seed ^ 0xd1b54a32d192ed03ULL);

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto holdout = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(config.holdout_fraction * static_cast<double>(pairs.size()))), 1,
      pairs.size() - 1);
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(holdout));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(holdout), order.end());

  auto mean_bce = [&](const Discriminator& model, const std::vector<std::size_t>& idx) {
    double total = 0.0;
    for (std::size_t i : idx) {
      const double logit = discriminator_logit(model, pairs[i].z);
      total += softplus(pairs[i].v >= threshold ? -logit : logit);
    }
    return total / static_cast<double>(idx.size());
  };
  // Trains from the initial model on rows for the given number of epochs.
  // When valid is non-empty, curve receives its cross-entropy after each
  // epoch, starting with the untrained model.
  const Discriminator start_model = [&] {
    Discriminator m = result.model;
    if (config.early_stopping) m.params.at("d/w3").fill(0.0);
    return m;
  }();
  auto fit = [&](std::vector<std::size_t> rows, std::size_t epochs, const std::vector<std::size_t>& valid,
                 std::vector<double>* curve) {
    Discriminator model = start_model;
    if (curve) curve->push_back(mean_bce(model, valid));
    Adam adam({.learning_rate = config.learning_rate});
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      std::shuffle(rows.begin(), rows.end(), rng);
      for (std::size_t start = 0; start < rows.size(); start += config.batch_size) {
        const std::size_t end = std::min(rows.size(), start + config.batch_size);
        Tensor z = Tensor::matrix(end - start, d);
        // softplus(-logit) for positives and softplus(logit) for negatives.
        Tensor sign = Tensor::matrix(end - start, 1);
        for (std::size_t r = start; r < end; ++r) {
          const auto& p = pairs[rows[r]];
          std::copy(p.z.begin(), p.z.end(), z.data() + (r - start) * d);
          sign[r - start] = p.v >= threshold ? -1.0 : 1.0;
        }
        Graph g;
        NodeId logit = build_discriminator(g, model.params, g.constant(std::move(z)), true);
        NodeId loss = g.mean(g.softplus(g.mul(logit, g.constant(std::move(sign)))));
        if (config.weight_decay > 0.0) {
          for (const char* w : {"d/w1", "d/w2", "d/w3"}) {
            NodeId l2 = g.scale(g.sum(g.square(g.param(model.params, w))), 0.5 * config.weight_decay);
            loss = g.add(loss, l2);
          }
        }
        g.forward();
        adam.step(model.params, g.backward(loss));
      }
      if (curve) curve->push_back(mean_bce(model, valid));
    }
    return model;
  };

  result.best_epoch = config.epochs;
  if (config.early_stopping) {
    // Choose the epoch count by k-fold cross-validation on the training rows.
    const std::size_t folds = std::min<std::size_t>(kEarlyStoppingFolds, train.size());
    std::vector<std::vector<double>> curves(folds);
    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<std::size_t> rows, valid;
      for (std::size_t i = 0; i < train.size(); ++i) (i % folds == f ? valid : rows).push_back(train[i]);
      fit(rows, config.epochs, valid, &curves[f]);
    }
    const double k = static_cast<double>(folds);
    std::vector<double> mean_curve(config.epochs + 1, 0.0);
    for (const auto& c : curves) {
      for (std::size_t e = 0; e < c.size(); ++e) mean_curve[e] += c[e] / k;
    }
    const auto best = static_cast<std::size_t>(
        std::min_element(mean_curve.begin(), mean_curve.end()) - mean_curve.begin());
    double var = 0.0;
    for (const auto& c : curves) var += (c[best] - mean_curve[best]) * (c[best] - mean_curve[best]);
    const double se = folds > 1 ? std::sqrt(var / (k - 1.0) / k) : 0.0;
    result.best_epoch = best;
    for (std::size_t e = 0; e < best; ++e) {
      if (mean_curve[e] <= mean_curve[best] + config.stopping_se * se) {
        result.best_epoch = e;
        break;
      }
    }
  }
  result.model = fit(train, result.best_epoch, {}, nullptr);
  result.model.threshold = threshold;
  result.train_count = train.size();
  result.holdout_count = test.size();
  result.train_accuracy = accuracy(result.model, pairs, train);
  result.holdout_accuracy = accuracy(result.model, pairs, test);
  return result;
}

GeneratorTrainResult train_generator(const Generator& init, const Discriminator& d,
                                     const GeneratorTrainConfig& config) {
  if (init.latent_dim != d.latent_dim) throw ContractError("generator and discriminator latent dimensions disagree");
  if (config.batch_size == 0 || config.check_samples == 0) throw ConfigError("batch sizes must be positive");
  const std::size_t dim = init.latent_dim;
  std::mt19937_64 check_rng(config.seed ^ 0x8cb92ba72f3d8dd7ULL);
  const auto check = prior_draws(config.check_samples, dim, check_rng);
  double best = 0.0;
  for (const auto& z : check) best = std::max(best, discriminate(d, z));
  if (best < kMinDiscriminatorOutput) {
    throw NumericError("discriminator is saturated: max D(z) = " + std::to_string(best) + " over " +
                       std::to_string(check.size()) + " prior samples, so -log D gives no training signal");
  }

  GeneratorTrainResult result{init, 0.0, 0.0, 0.0, {}};
  Adam adam({.learning_rate = config.learning_rate});
  std::mt19937_64 rng(config.seed ^ 0x94d049bb133111ebULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t step = 0; step < config.steps; ++step) {
    Tensor z = Tensor::matrix(config.batch_size, dim);
    for (auto& v : z.values()) v = gauss(rng);
    Graph g;
    NodeId loss = build_generator_loss(g, result.model, d, z, config.lambda_dist, config.lambda_norm);
    g.forward();
    result.loss_trace.push_back(g.value(loss).item());
    adam.step(result.model.params, g.backward(loss));
  }

  std::mt19937_64 eval_rng(config.seed ^ 0xbf58476d1ce4e5b9ULL);
  const auto fresh = prior_draws(config.check_samples, dim, eval_rng);
  for (const auto& z : fresh) {
    const auto shifted = generate_shift(result.model, z);
    result.mean_d_prior += discriminate(d, z);
    result.mean_d_shifted += discriminate(d, shifted);
    double dist = 0.0;
    for (std::size_t i = 0; i < dim; ++i) dist += (shifted[i] - z[i]) * (shifted[i] - z[i]);
    result.mean_shift += std::sqrt(dist);
  }
  const double n = static_cast<double>(fresh.size());
  result.mean_d_prior /= n;
  result.mean_d_shifted /= n;
  result.mean_shift /= n;
  return result;
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::vector<SampledSketch> sample_constrained(const Generator* g, const VaeModel& model, double temperature,
                                              std::uint64_t seed, std::size_t n, Backend backend) {
  if (!(temperature > 0.0 && temperature <= 1.0)) throw ContractError("temperature must lie in (0, 1]");
  const std::size_t dim = model.config.latent_dim;
  if (g != nullptr && g->latent_dim != dim) throw ContractError("generator and VAE latent dimensions disagree");
  std::vector<SampledSketch> out(n);
  auto one = [&](std::size_t i) {
    auto rng = stream_rng(seed, i);
    std::normal_distribution<double> gauss(0.0, 1.0);
    LatentVec z(dim);
    for (auto& v : z) v = gauss(rng);
    if (g != nullptr) z = generate_shift(*g, z);
    out[i].sketch = sample_sketch(model, z, temperature, rng);
    out[i].z = std::move(z);
  };
  if (backend == Backend::Serial) {
    for (std::size_t i = 0; i < n; ++i) one(i);
    return out;
  }
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    try {
      one(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::filesystem::path discriminator_path(const std::filesystem::path& generator_checkpoint) {
  auto p = generator_checkpoint;
  p.replace_filename(generator_checkpoint.stem().string() + "-d.lck");
  return p;
}

void save_lcgan(const std::filesystem::path& path, const LcganModel& model) {
  save_checkpoint(discriminator_path(path), model.discriminator.params);
  save_checkpoint(path, model.generator.params);
  save_json(sidecar_path(path), {{"kind", "lcgan"},
                                 {"latent_dim", model.generator.latent_dim},
                                 {"threshold", model.discriminator.threshold},
                                 {"lambda_dist", model.lambda_dist},
                                 {"lambda_norm", model.lambda_norm},
                                 {"class_label", model.class_label},
                                 {"discriminator", discriminator_path(path).filename().string()}});
}

LcganModel load_lcgan(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("cannot read checkpoint " + path.string());
  const auto meta = load_json(sidecar_path(path));
  if (meta.value("kind", "") != "lcgan") throw IoError(sidecar_path(path).string() + " is not an LC-GAN sidecar");
  LcganModel model;
  const auto dim = meta.at("latent_dim").get<std::size_t>();
  model.class_label = meta.at("class_label").get<std::string>();
  model.lambda_dist = meta.at("lambda_dist").get<double>();
  model.lambda_norm = meta.at("lambda_norm").get<double>();
  model.generator = {dim, load_checkpoint(path)};
  model.discriminator = {dim, meta.at("threshold").get<double>(), load_checkpoint(discriminator_path(path))};
  auto check = [&](const ParameterSet& loaded, const ParameterSet& ref, const std::string& what) {
    for (const auto& [name, t] : ref) {
      if (!loaded.contains(name) || loaded.at(name).shape() != t.shape()) {
        throw IoError(path.string() + ": " + what + " parameter '" + name + "' missing or misshapen");
      }
    }
  };
  check(model.generator.params, init_generator(dim, 0).params, "generator");
  check(model.discriminator.params, init_discriminator(dim, 0).params, "discriminator");
  return model;
}

std::string checkpoint_kind(const std::filesystem::path& path) {
  return load_json(sidecar_path(path)).value("kind", "");
}

}  // namespace lcfb
