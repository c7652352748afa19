#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "lcfb/error.hpp"
#include "lcfb/lcgan.hpp"

using namespace lcfb;

namespace {

LatentVec normal_vec(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> g(0.0, 1.0);
  LatentVec z(d);
  for (auto& v : z) v = g(rng);
  return z;
}

// Labels follow the sign of z_0 with a margin; other dimensions are noise.
ValueDataset separable(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ValueDataset data;
  for (std::size_t i = 0; i < n; ++i) {
    LatentVec z = normal_vec(rng, d);
    const double sign = i % 2 == 0 ? 1.0 : -1.0;
    z[0] = sign * (1.0 + std::abs(z[0]));
    data.pairs.push_back({z, sign});
  }
  return data;
}

ValueDataset shuffled(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  ValueDataset data;
  for (std::size_t i = 0; i < n; ++i) data.pairs.push_back({normal_vec(rng, d), g(rng)});
  return data;
}

void zero_all(ParameterSet& ps) {
  for (auto& [name, t] : ps) t.fill(0.0);
}

double max_param_diff(const ParameterSet& a, const ParameterSet& b) {
  double m = 0.0;
  for (const auto& [name, t] : a) {
    const auto& u = b.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i] - u[i]));
  }
  return m;
}

VaeModel tiny_vae(std::size_t d) {
  VaeConfig c;
  c.latent_dim = d;
  c.hidden = 8;
  c.mixtures = 2;
  c.max_length = 24;
  c.class_label = "loop";
  return init_vae(c, 77);
}

}  // namespace

TEST_CASE("discriminator outputs") {
  Discriminator d = init_discriminator(6, 3);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double p = discriminate(d, normal_vec(rng, 6));
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  zero_all(d.params);
  CHECK(discriminate(d, normal_vec(rng, 6)) == 0.5);
  CHECK(discriminator_logit(d, normal_vec(rng, 6)) == 0.0);
}

TEST_CASE("generator gate extremes") {
  std::mt19937_64 rng(9);
  const Generator closed = init_generator(5, 2, -30.0);
  const Generator open = init_generator(5, 2, 30.0);
  for (int i = 0; i < 100; ++i) {
    const LatentVec z = normal_vec(rng, 5);
    const auto shifted = generate_shift(closed, z);
    const auto out = run_generator(open, z);
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(std::abs(shifted[k] - z[k]) < 1e-9);
      CHECK(std::abs(out.shifted[k] - out.delta[k]) < 1e-9);
      CHECK(out.gates[k] > 0.0);
      CHECK(out.gates[k] <= 1.0);
    }
  }
}

TEST_CASE("generator output follows the gating formula") {
  const Generator g = init_generator(4, 8);
  std::mt19937_64 rng(1);
  const LatentVec z = normal_vec(rng, 4);
  const auto out = run_generator(g, z);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(std::abs(out.shifted[k] - ((1.0 - out.gates[k]) * z[k] + out.gates[k] * out.delta[k])) < 1e-12);
  }
}

TEST_CASE("generator and discriminator gradients match finite differences") {
  const std::size_t d = 3;
  std::mt19937_64 rng(12);
  Tensor z = Tensor::matrix(4, d);
  for (auto& v : z.values()) v = std::normal_distribution<double>(0.0, 1.0)(rng);

  Generator gen = init_generator(d, 4);
  const Discriminator disc = init_discriminator(d, 5);
  const auto gres = testing::gradcheck(gen.params, [&](Graph& g) {
    return build_generator_loss(g, gen, disc, z, 0.3, 0.2);
  });
  INFO(gres.worst);
  CHECK(gres.max_rel_error < 1e-4);

  Discriminator trainable = init_discriminator(d, 6);
  const auto dres = testing::gradcheck(trainable.params, [&](Graph& g) {
    NodeId logit = build_discriminator(g, trainable.params, g.constant(z), true);
    Tensor sign(Shape{4, 1}, std::vector<double>{1, -1, -1, 1});
    return g.mean(g.softplus(g.mul(logit, g.constant(sign))));
  });
  INFO(dres.worst);
  CHECK(dres.max_rel_error < 1e-4);
}

TEST_CASE("discriminator training") {
  SUBCASE("separable labels") {
    const auto r = train_discriminator(separable(200, 4, 1), {});
    CHECK(r.train_accuracy == 1.0);
    CHECK(r.holdout_accuracy >= 0.95);
    CHECK(r.holdout_count == 40);
    CHECK(r.train_count == 160);
    CHECK(r.positives == 100);
    CHECK(r.model.threshold == 0.0);
  }
  SUBCASE("labels independent of z stay near chance") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      DiscriminatorTrainConfig cfg;
      cfg.seed = seed;
      const auto r = train_discriminator(shuffled(1000, 8, 100 + seed), cfg);
      CAPTURE(seed);
      CHECK(r.holdout_accuracy >= 0.35);
      CHECK(r.holdout_accuracy <= 0.65);
    }
  }
  SUBCASE("early stopping keeps signal and drops noise") {
    CHECK(train_discriminator(separable(200, 4, 1), {}).best_epoch > 0);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<LatentVec> probes(200, LatentVec(16));
    for (auto& z : probes) {
      for (auto& v : z) v = gauss(rng);
    }
    auto spread = [&](const Discriminator& d) {
      double total = 0.0;
      for (const auto& z : probes) total += std::abs(discriminator_logit(d, z));
      return total / static_cast<double>(probes.size());
    };
    int flat_strict = 0;
    double stopped = 0.0, full_spread = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      CAPTURE(seed);
      const auto data = shuffled(300, 16, 200 + seed);
      DiscriminatorTrainConfig cfg;
      cfg.seed = seed;
      stopped += spread(train_discriminator(data, cfg).model);
      cfg.early_stopping = false;
      const auto full = train_discriminator(data, cfg);
      CHECK(full.best_epoch == cfg.epochs);
      full_spread += spread(full.model);
      cfg.early_stopping = true;
      cfg.stopping_se = 1.0;
      const auto strict = train_discriminator(data, cfg);
      if (strict.best_epoch == 0) {
        ++flat_strict;
        CHECK(discriminate(strict.model, probes.front()) == 0.5);
      }
    }
    CHECK(stopped < 0.5 * full_spread);
    CHECK(flat_strict >= 4);
  }
  SUBCASE("deterministic given seed") {
    const auto data = shuffled(100, 4, 3);
    const auto a = train_discriminator(data, {});
    const auto b = train_discriminator(data, {});
    CHECK(a.model.params == b.model.params);
    CHECK(a.holdout_accuracy == b.holdout_accuracy);
  }
  SUBCASE("explicit threshold") {
    auto data = separable(100, 3, 2);
    data.threshold = 0.5;
    CHECK(train_discriminator(data, {}).model.threshold == 0.5);
  }
  SUBCASE("errors") {
    auto one_class = separable(40, 3, 2);
    one_class.threshold = 5.0;
    CHECK_THROWS_AS(train_discriminator(one_class, {}), ContractError);
    CHECK_THROWS_AS(train_discriminator(separable(19, 3, 2), {}), InsufficientDataError);
    auto ragged = separable(40, 3, 2);
    ragged.pairs[7].z.pop_back();
    CHECK_THROWS_AS(train_discriminator(ragged, {}), ContractError);
  }
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("generator training") {
  const std::size_t d = 4;

  SUBCASE("constant discriminator gives no signal") {
    Discriminator flat = init_discriminator(d, 1);
    zero_all(flat.params);
    const Generator init = init_generator(d, 2);
    GeneratorTrainConfig cfg;
    cfg.steps = 5;
    const auto r = train_generator(init, flat, cfg);
    CHECK(max_param_diff(init.params, r.model.params) < 5 * 1e-6);
    for (double l : r.loss_trace) CHECK(std::abs(l - std::log(2.0)) < 1e-12);
  }
  SUBCASE("one-dimensional signal moves z'_1 upwards") {
    Discriminator disc = init_discriminator(d, 1);
    zero_all(disc.params);
    disc.params.at("d/w1")(0, 0) = 1.0;
    disc.params.at("d/w2")(0, 0) = 1.0;
    disc.params.at("d/w3")(0, 0) = 4.0;
    GeneratorTrainConfig cfg;
    cfg.steps = 300;
    const auto r = train_generator(init_generator(d, 3), disc, cfg);
    CHECK(r.mean_d_shifted > r.mean_d_prior);
    std::mt19937_64 rng(999);
    double before = 0.0, after = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const LatentVec z = normal_vec(rng, d);
      before += z[0];
      after += generate_shift(r.model, z)[0];
    }
    CHECK(after / 1000 > before / 1000 + 0.5);
  }
  SUBCASE("dominant distance penalty keeps z' near z") {
    const auto disc = train_discriminator(separable(200, d, 4), {}).model;
    GeneratorTrainConfig cfg;
    cfg.lambda_dist = 1e6;
    const auto r = train_generator(init_generator(d, 5), disc, cfg);
    CHECK(r.mean_shift < 0.01);
  }
  SUBCASE("training is deterministic and improves D") {
    const auto disc = train_discriminator(separable(200, d, 4), {}).model;
    GeneratorTrainConfig cfg;
    cfg.steps = 200;
    const auto a = train_generator(init_generator(d, 6), disc, cfg);
    const auto b = train_generator(init_generator(d, 6), disc, cfg);
    CHECK(a.model.params == b.model.params);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.mean_d_shifted >= a.mean_d_prior);
  }
  SUBCASE("saturated discriminator aborts") {
    Discriminator dead = init_discriminator(d, 1);
    zero_all(dead.params);
    dead.params.at("d/b3")[0] = -100.0;
    CHECK_THROWS_AS(train_generator(init_generator(d, 2), dead, {}), NumericError);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(train_generator(init_generator(3, 2), init_discriminator(d, 1), {}), ContractError);
  }
}

TEST_CASE("constrained sampling") {
  const std::size_t d = 3;
  const VaeModel vae = tiny_vae(d);
  const Generator g = init_generator(d, 4, 0.0);

  SUBCASE("serial and parallel backends agree exactly") {
    const auto s = sample_constrained(&g, vae, 0.5, 11, 24, Backend::Serial);
    const auto p = sample_constrained(&g, vae, 0.5, 11, 24, Backend::Parallel);
    REQUIRE(s.size() == 24);
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(s[i].z == p[i].z);
      CHECK(s[i].sketch == p[i].sketch);
      CHECK_NOTHROW(validate_sketch(s[i].sketch, 24));
    }
  }
  SUBCASE("fixed seed reproduces the batch") {
    const auto a = sample_constrained(&g, vae, 0.5, 3, 8);
    const auto b = sample_constrained(&g, vae, 0.5, 3, 8);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].sketch == b[i].sketch);
  }
  SUBCASE("recorded z is the shifted latent") {
    const auto shifted = sample_constrained(&g, vae, 0.5, 3, 4);
    const auto prior = sample_constrained(nullptr, vae, 0.5, 3, 4);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto expect = generate_shift(g, prior[i].z);
      for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(shifted[i].z[k] - expect[k]) < 1e-15);
    }
  }
  SUBCASE("closed gates reduce to prior sampling") {
    const Generator identity = init_generator(d, 4, -30.0);
    const auto a = sample_constrained(&identity, vae, 0.5, 21, 16);
    const auto b = sample_constrained(nullptr, vae, 0.5, 21, 16);
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(a[i].z[k] - b[i].z[k]) < 1e-9);
      REQUIRE(a[i].sketch.events.size() == b[i].sketch.events.size());
      for (std::size_t t = 0; t < a[i].sketch.events.size(); ++t) {
        CHECK(a[i].sketch.events[t].pen == b[i].sketch.events[t].pen);
        CHECK(std::abs(a[i].sketch.events[t].dx - b[i].sketch.events[t].dx) < 1e-9);
      }
    }
  }
  SUBCASE("dimension mismatch") {
    const Generator wrong = init_generator(d + 1, 4);
    CHECK_THROWS_AS(sample_constrained(&wrong, vae, 0.5, 1, 2), ContractError);
  }
  CHECK(stream_rng(5, 1)() == stream_rng(5, 1)());
  CHECK(stream_rng(5, 1)() != stream_rng(5, 2)());
  CHECK(stream_rng(5, 1)() != stream_rng(6, 1)());
}

TEST_CASE("lcgan checkpoints") {
  const auto dir = std::filesystem::temp_directory_path() / "lcfb_test_lcgan";
  std::filesystem::create_directories(dir);
  LcganModel m{train_discriminator(separable(60, 3, 1), {}).model, init_generator(3, 2), "box", 0.35, 0.1};
  const auto path = dir / "lcgan-box.lck";
  save_lcgan(path, m);
  CHECK(std::filesystem::exists(discriminator_path(path)));
  CHECK(checkpoint_kind(path) == "lcgan");
  const auto loaded = load_lcgan(path);
  CHECK(loaded.class_label == "box");
  CHECK(loaded.lambda_dist == 0.35);
  CHECK(loaded.lambda_norm == 0.1);
  CHECK(loaded.discriminator.threshold == m.discriminator.threshold);
  CHECK(max_param_diff(loaded.generator.params, m.generator.params) < 1e-6);
  CHECK(max_param_diff(loaded.discriminator.params, m.discriminator.params) < 1e-6);

  save_vae(dir / "vae.lck", tiny_vae(3));
  CHECK(checkpoint_kind(dir / "vae.lck") == "vae");
  CHECK_THROWS_AS(load_lcgan(dir / "vae.lck"), IoError);
  CHECK_THROWS_AS(load_lcgan(dir / "absent.lck"), IoError);
  std::filesystem::remove_all(dir);
}
