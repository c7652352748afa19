#include "lcfb/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lcfb/error.hpp"

namespace lcfb {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

nlohmann::json test_or_null(auto&& fn) {
  try {
    return stats::to_json(fn());
  } catch (const ContractError&) {
    return nullptr;
  }
}

std::vector<double> channel(const std::vector<ScoredObservation>& obs, const std::string& source, std::size_t c) {
  std::vector<double> out;
  for (const auto& o : obs) {
    if (o.source == source) out.push_back(c < kExpressionCount ? o.normalized[c] : o.composite);
  }
  return out;
}

double mean_or_zero(const std::vector<double>& xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

std::vector<Sketch> synthetic_dataset(const std::vector<ShapeClass>& classes, std::size_t n, double jitter,
                                      std::uint64_t seed) {
  if (classes.empty()) throw ConfigError("at least one shape class is required");
  std::vector<Sketch> out;
  out.reserve(n);
  const auto base = derive_seed(seed, "synthetic");
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(generate_synthetic(classes[i % classes.size()], jitter, splitmix64(base + i)));
  }
  return out;
}

std::vector<FeedbackRecord> collect_feedback(const VaeModel& model, std::size_t n, const ViewerConfig& viewer,
                                             std::uint64_t seed) {
  const auto label = model.config.class_label;
  if (!viewer.archetypes.contains(label)) throw ConfigError("no viewer archetype for class '" + label + "'");
  const auto samples = sample_constrained(nullptr, model, model.config.temperature, derive_seed(seed, "collect"), n);
  const auto viewer_seed = derive_seed(seed, "collect-viewer");
  std::vector<FeedbackRecord> out;
  UserBaseline baseline;
  ViewerConfig user_cfg = viewer;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t user = i / viewer.sketches_per_user;
    const auto t = static_cast<std::int64_t>(i % viewer.sketches_per_user) + 1;
    if (t == 1) {
      baseline = {"sim-" + std::to_string(user + 1), {}, 0};
      user_cfg = viewer_for_user(viewer, viewer_seed, user);
    }
    auto rng = stream_rng(viewer_seed, i);
    FeedbackRecord r;
    r.user_id = baseline.user_id;
    r.sketch_id = label + "-" + std::to_string(i + 1);
    r.z = samples[i].z;
    r.raw = simulate_viewer(samples[i].sketch, user_cfg, t, rng);
    r.normalized = ingest_expression(baseline, r.raw);
    r.composite = composite_value(r.normalized);
    r.session_index = t;
    r.timestamp_ms = static_cast<std::int64_t>(i) * 1000;
    out.push_back(std::move(r));
  }
  return out;
}

LcganTrainConfig desk_lcgan_config(std::uint64_t seed) {
  LcganTrainConfig c;
  c.discriminator.seed = seed;
  c.generator.seed = seed;
  c.generator.lambda_dist = kDeskLambdaDist;
  return c;
}

nlohmann::json to_json(const LcganTrainSummary& s) {
  return {{"class_label", s.model.class_label},
          {"records", s.record_count},
          {"threshold", s.model.discriminator.threshold},
          {"positives", s.discriminator.positives},
          {"train_accuracy", s.discriminator.train_accuracy},
          {"holdout_accuracy", s.discriminator.holdout_accuracy},
          {"best_epoch", s.discriminator.best_epoch},
          {"holdout_count", s.discriminator.holdout_count},
          {"mean_d_prior", s.mean_d_prior},
          {"mean_d_shifted", s.mean_d_shifted},
          {"mean_shift", s.mean_shift}};
}

LcganTrainSummary train_lcgan_on_feedback(const std::vector<FeedbackRecord>& records, const std::string& class_label,
                                          const LcganTrainConfig& config, std::size_t latent_dim) {
  ValueDataset data;
  for (const auto& r : records) {
    if (sketch_id_class(r.sketch_id) != class_label) continue;
    if (r.z.size() != latent_dim) {
      throw ContractError("record " + r.sketch_id + " has a " + std::to_string(r.z.size()) +
                          "-dimensional z, expected " + std::to_string(latent_dim));
    }
    data.pairs.push_back({r.z, r.composite});
  }
  if (data.pairs.size() < kMinFeedbackRecords) {
    throw InsufficientDataError("LC-GAN training for class '" + class_label + "' needs at least " +
                                    std::to_string(kMinFeedbackRecords) + " feedback records, have " +
                                    std::to_string(data.pairs.size()),
                                data.pairs.size(), kMinFeedbackRecords);
  }
  if (config.shuffle_values) {
    std::vector<double> vs;
    for (const auto& p : data.pairs) vs.push_back(p.v);
    std::mt19937_64 rng(derive_seed(config.discriminator.seed, "shuffle-values"));
    std::shuffle(vs.begin(), vs.end(), rng);
    for (std::size_t i = 0; i < vs.size(); ++i) data.pairs[i].v = vs[i];
  }
  LcganTrainSummary s;
  s.record_count = data.pairs.size();
  s.discriminator = train_discriminator(data, config.discriminator);
  const auto& gc = config.generator;
  auto gen = train_generator(init_generator(latent_dim, gc.seed, gc.gate_bias), s.discriminator.model, gc);
  s.mean_d_prior = gen.mean_d_prior;
  s.mean_d_shifted = gen.mean_d_shifted;
  s.mean_shift = gen.mean_shift;
  s.model = {s.discriminator.model, std::move(gen.model), class_label, gc.lambda_dist, gc.lambda_norm};
  return s;
}

nlohmann::json expression_section(const std::vector<ScoredObservation>& obs) {
  if (obs.empty()) return nullptr;
  nlohmann::json models = nlohmann::json::object();
  for (const char* source : {kSourcePrior, kSourceLcgan}) {
    const auto composite = channel(obs, source, kExpressionCount);
    if (composite.empty()) {
      models[source] = nullptr;
      continue;
    }
    nlohmann::json means = nlohmann::json::object();
    for (std::size_t c = 0; c < kExpressionCount; ++c) means[kExpressionNames[c]] = mean_or_zero(channel(obs, source, c));
    models[source] = {{"n", composite.size()},
                      {"mean_normalized", means},
                      {"mean_composite", mean_or_zero(composite)},
                      {"one_sample_composite", test_or_null([&] { return stats::t_test_one_sample(composite, 0.0); })}};
  }
  nlohmann::json welch = nlohmann::json::object();
  for (std::size_t c = 0; c <= kExpressionCount; ++c) {
    const std::string name = c < kExpressionCount ? kExpressionNames[c] : "composite";
    welch[name] = test_or_null([&] {
      return stats::t_test_welch(channel(obs, kSourceLcgan, c), channel(obs, kSourcePrior, c));
    });
  }
  nlohmann::json one_sided = nullptr;
  if (!welch["composite"].is_null()) {
    stats::TestResult r;
    r.statistic = welch["composite"]["statistic"].get<double>();
    r.p_value = welch["composite"]["p_value"].get<double>();
    one_sided = stats::one_sided_greater(r);
  }
  return {{"models", models}, {"welch_lcgan_minus_prior", welch}, {"composite_p_one_sided", one_sided}};
}

nlohmann::json preference_section(const PreferenceCounts& counts) {
  const auto total = counts.lcgan + counts.prior;
  if (total == 0) return nullptr;
  return {{"lcgan", counts.lcgan},
          {"prior", counts.prior},
          {"lcgan_fraction", static_cast<double>(counts.lcgan) / static_cast<double>(total)},
          {"binomial", stats::to_json(stats::binom_test(counts.lcgan, total, 0.5))}};
}

nlohmann::json rating_section(const std::vector<RatingObservation>& ratings) {
  if (ratings.empty()) return nullptr;
  std::vector<double> likert;
  for (const auto& r : ratings) likert.push_back(r.likert);
  nlohmann::json corr = nlohmann::json::object();
  for (std::size_t c = 0; c < kExpressionCount; ++c) {
    std::vector<double> xs;
    for (const auto& r : ratings) xs.push_back(r.normalized[c]);
    corr[kExpressionNames[c]] = test_or_null([&] { return stats::pearson(likert, xs); });
  }
  return {{"n", ratings.size()}, {"mean_likert", mean_or_zero(likert)}, {"pearson_likert_vs_normalized", corr}};
}

EvaluationResult evaluate_models(const VaeModel& prior, const VaeModel& lcgan_model, const Generator* generator,
                                 const ViewerConfig& viewer, const EvaluationConfig& config) {
  if (config.per_model < 2) throw ConfigError("evaluation needs at least 2 sketches per model");
  if (prior.config.class_label != lcgan_model.config.class_label) {
    throw ConfigError("both arms must decode the same sketch class");
  }
  const double tau = config.temperature;
  const std::size_t n = config.per_model;
  const auto a = sample_constrained(nullptr, prior, tau, derive_seed(config.seed, "eval-prior"), n);
  const auto b = sample_constrained(generator, lcgan_model, tau, derive_seed(config.seed, "eval-lcgan"), n);

  // Blind presentation: both arms interleaved in random order.
  std::vector<std::pair<const char*, const Sketch*>> shown;
  for (const auto& s : a) shown.emplace_back(kSourcePrior, &s.sketch);
  for (const auto& s : b) shown.emplace_back(kSourceLcgan, &s.sketch);
  std::mt19937_64 order_rng(derive_seed(config.seed, "eval-order"));
  std::shuffle(shown.begin(), shown.end(), order_rng);

  const auto viewer_seed = derive_seed(config.seed, "eval-viewer");
  std::vector<ScoredObservation> obs;
  double q_prior = 0.0, q_lcgan = 0.0;
  UserBaseline baseline;
  ViewerConfig user_cfg = viewer;
  for (std::size_t i = 0; i < shown.size(); ++i) {
    const std::size_t user = i / viewer.sketches_per_user;
    const auto t = static_cast<std::int64_t>(i % viewer.sketches_per_user) + 1;
    if (t == 1) {
      baseline = {"eval-" + std::to_string(user + 1), {}, 0};
      user_cfg = viewer_for_user(viewer, viewer_seed, user);
    }
    auto rng = stream_rng(viewer_seed, i);
    const auto raw = simulate_viewer(*shown[i].second, user_cfg, t, rng);
    const auto v = ingest_expression(baseline, raw);
    obs.push_back({shown[i].first, v, composite_value(v)});
    (shown[i].first == kSourcePrior ? q_prior : q_lcgan) += sketch_quality(*shown[i].second, viewer);
  }

  PreferenceCounts counts;
  if (config.pairs > 0) {
    const auto pa = sample_constrained(nullptr, prior, tau, derive_seed(config.seed, "pair-prior"), config.pairs);
    const auto pb =
        sample_constrained(generator, lcgan_model, tau, derive_seed(config.seed, "pair-lcgan"), config.pairs);
    const auto pair_seed = derive_seed(config.seed, "pair-viewer");
    ViewerConfig pair_cfg = viewer;
    for (std::size_t j = 0; j < config.pairs; ++j) {
      const std::size_t user = j / viewer.sketches_per_user;
      const auto t = static_cast<std::int64_t>(j % viewer.sketches_per_user) + 1;
      if (t == 1) pair_cfg = viewer_for_user(viewer, pair_seed, user + (std::uint64_t{1} << 32));
      auto rng = stream_rng(pair_seed, j);
      std::bernoulli_distribution coin(0.5);
      const bool lcgan_left = coin(rng);
      const Sketch& left = lcgan_left ? pb[j].sketch : pa[j].sketch;
      const Sketch& right = lcgan_left ? pa[j].sketch : pb[j].sketch;
      const double cl = composite_value(simulate_viewer(left, pair_cfg, t, rng));
      const double cr = composite_value(simulate_viewer(right, pair_cfg, t, rng));
      const bool left_wins = cl > cr || (cl == cr && coin(rng));
      (left_wins == lcgan_left ? counts.lcgan : counts.prior) += 1;
    }
  }

  EvaluationResult result;
  result.report = {{"config",
                    {{"per_model", n},
                     {"pairs", config.pairs},
                     {"temperature", tau},
                     {"seed", config.seed},
                     {"class_label", prior.config.class_label},
                     {"viewer", to_json(viewer)}}},
                   {"expressions", expression_section(obs)},
                   {"preferences", preference_section(counts)},
                   {"ratings", nullptr},
                   {"oracle_quality",
                    {{kSourcePrior, q_prior / static_cast<double>(n)}, {kSourceLcgan, q_lcgan / static_cast<double>(n)}}}};
  const auto& p = result.report["expressions"]["composite_p_one_sided"];
  result.composite_p_one_sided = p.is_null() ? 1.0 : p.get<double>();
  if (counts.lcgan + counts.prior > 0) {
    result.preference_p = result.report["preferences"]["binomial"]["p_value"].get<double>();
    result.lcgan_preference_fraction = result.report["preferences"]["lcgan_fraction"].get<double>();
  }
  return result;
}

}  // namespace lcfb
