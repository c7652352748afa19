#include "lcfb/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "lcfb/checkpoint.hpp"
#include "lcfb/error.hpp"
#include "lcfb/kernels.hpp"
#include "lcfb/optimizer.hpp"

namespace lcfb {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

std::size_t head_width(std::size_t mixtures) { return 6 * mixtures + 3; }

void add_lstm(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden, std::mt19937_64& rng) {
  ps.add_glorot(prefix + "/wx", in, 4 * hidden, rng);
  ps.add_glorot(prefix + "/wh", hidden, 4 * hidden, rng);
  Tensor b = Tensor::matrix(1, 4 * hidden);
  // Gate layout is [input, forget, output, cell]; start with the forget gate open.
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
  ps.add(prefix + "/b", std::move(b));
}

std::array<double, kEventWidth> event_row(const StrokeEvent& e) {
  std::array<double, kEventWidth> row{e.dx, e.dy, 0.0, 0.0, 0.0};
  row[2 + static_cast<std::size_t>(e.pen)] = 1.0;
  return row;
}

constexpr std::array<double, kEventWidth> kStartToken{0.0, 0.0, 1.0, 0.0, 0.0};

// --- graph building ---------------------------------------------------------

struct GraphLstm {
  NodeId wx;
  NodeId wh;
  NodeId b;
  std::size_t hidden;
};

GraphLstm graph_lstm(Graph& g, const ParameterSet& ps, const std::string& prefix, std::size_t hidden) {
  return {g.param(ps, prefix + "/wx"), g.param(ps, prefix + "/wh"), g.param(ps, prefix + "/b"), hidden};
}

struct State {
  NodeId h;
  NodeId c;
  bool zero;  // h and c are still the all-zero initial state
};

State lstm_step(Graph& g, const GraphLstm& cell, NodeId x_proj, const State& s) {
  NodeId pre = g.add(x_proj, cell.b);
  if (!s.zero) pre = g.add(pre, g.matmul(s.h, cell.wh));
  const std::size_t h = cell.hidden;
  NodeId gates = g.sigmoid(g.slice(pre, 0, 3 * h));
  NodeId i = g.slice(gates, 0, h);
  NodeId f = g.slice(gates, h, 2 * h);
  NodeId o = g.slice(gates, 2 * h, 3 * h);
  NodeId cand = g.tanh(g.slice(pre, 3 * h, 4 * h));
  NodeId c = g.mul(i, cand);
  if (!s.zero) c = g.add(g.mul(f, s.c), c);
  NodeId hn = g.mul(o, g.tanh(c));
  return {hn, c, false};
}

// Keeps rows whose mask is 0 at their previous state. Exact: 1*x + 0*y == x.
State masked(Graph& g, const State& next, const State& prev, const Tensor& mask, std::size_t batch,
             std::size_t hidden) {
  bool all_on = std::all_of(mask.values().begin(), mask.values().end(), [](double v) { return v == 1.0; });
  if (all_on) return next;
  Tensor inv = Tensor::matrix(batch, 1);
  for (std::size_t b = 0; b < batch; ++b) inv[b] = 1.0 - mask[b];
  NodeId m = g.constant(mask);
  NodeId im = g.constant(inv);
  NodeId ph = prev.zero ? g.constant(Tensor::matrix(batch, hidden)) : prev.h;
  NodeId pc = prev.zero ? g.constant(Tensor::matrix(batch, hidden)) : prev.c;
  return {g.add(g.mul(next.h, m), g.mul(ph, im)), g.add(g.mul(next.c, m), g.mul(pc, im)), false};
}

struct EncoderNodes {
  NodeId mu;
  NodeId log_var;
};

EncoderNodes build_encoder(Graph& g, const VaeModel& model, std::span<const Sketch> batch, std::size_t steps) {
  const auto& cfg = model.config;
  const auto& ps = model.params;
  const std::size_t B = batch.size(), H = cfg.hidden;

  std::vector<Tensor> inputs(steps, Tensor::matrix(B, kEventWidth));
  std::vector<Tensor> masks(steps, Tensor::matrix(B, 1));
  for (std::size_t b = 0; b < B; ++b) {
    const auto& ev = batch[b].events;
    for (std::size_t t = 0; t < ev.size() && t < steps; ++t) {
      const auto row = event_row(ev[t]);
      std::copy(row.begin(), row.end(), inputs[t].data() + b * kEventWidth);
      masks[t][b] = 1.0;
    }
  }

  auto run = [&](const std::string& prefix, bool reverse) {
    const GraphLstm cell = graph_lstm(g, ps, prefix, H);
    State s{g.constant(Tensor::matrix(B, H)), g.constant(Tensor::matrix(B, H)), true};
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = reverse ? steps - 1 - k : k;
      const NodeId x = g.matmul(g.constant(inputs[t]), cell.wx);
      const State next = lstm_step(g, cell, x, s);
      s = masked(g, next, s, masks[t], B, H);
    }
    return s.h;
  };
  const NodeId fw = run("enc_fw", false);
  const NodeId bw = run("enc_bw", true);
  const NodeId both = g.concat({fw, bw});
  const NodeId mu = g.add(g.matmul(both, g.param(ps, "enc/mu_w")), g.param(ps, "enc/mu_b"));
  const NodeId raw = g.add(g.matmul(both, g.param(ps, "enc/lv_w")), g.param(ps, "enc/lv_b"));
  const NodeId lv = g.scale(g.tanh(g.scale(raw, 1.0 / kLogVarBound)), kLogVarBound);
  return {mu, lv};
}

std::size_t longest(std::span<const Sketch> batch) {
  std::size_t n = 0;
  for (const auto& s : batch) n = std::max(n, s.events.size());
  return n;
}

// --- plain inference path -----------------------------------------------------

struct PlainLstm {
  const Tensor& wx;
  const Tensor& wh;
  const Tensor& b;
  std::size_t hidden;
};

// One LSTM step for a single row; `pre` arrives holding the input projection.
void plain_step(const PlainLstm& cell, std::vector<double>& pre, std::vector<double>& h, std::vector<double>& c) {
  const std::size_t H = cell.hidden;
  kernels::matmul_serial(h, cell.wh.values(), pre, 1, H, 4 * H, true);
  for (std::size_t j = 0; j < 4 * H; ++j) pre[j] += cell.b[j];
  for (std::size_t j = 0; j < H; ++j) {
    auto sig = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
    const double i = sig(pre[j]);
    const double f = sig(pre[H + j]);
    const double o = sig(pre[2 * H + j]);
    const double cand = std::tanh(pre[3 * H + j]);
    c[j] = f * c[j] + i * cand;
    h[j] = o * std::tanh(c[j]);
  }
}

MDNParams head_to_params(std::span<const double> row, std::size_t K) {
  MDNParams p;
  const double mx = *std::max_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(K));
  double total = 0.0;
  p.pi.resize(K);
  for (std::size_t k = 0; k < K; ++k) total += (p.pi[k] = std::exp(row[k] - mx));
  for (auto& v : p.pi) v /= total;
  for (std::size_t k = 0; k < K; ++k) {
    p.mu_x.push_back(row[K + k]);
    p.mu_y.push_back(row[2 * K + k]);
    p.sigma_x.push_back(std::exp(row[3 * K + k]));
    p.sigma_y.push_back(std::exp(row[4 * K + k]));
    p.rho.push_back(std::tanh(row[5 * K + k]));
  }
  for (std::size_t j = 0; j < 3; ++j) p.pen_logits[j] = row[6 * K + j];
  return p;
}

class PlainDecoder {
 public:
  PlainDecoder(const VaeModel& model, const LatentVec& z)
      : model_(model),
        cell_{model.params.at("dec/wx"), model.params.at("dec/wh"), model.params.at("dec/b"), model.config.hidden},
        zproj_(4 * model.config.hidden, 0.0),
        h_(model.config.hidden, 0.0),
        c_(model.config.hidden, 0.0) {
    if (z.size() != model.config.latent_dim) throw ContractError("latent dimension mismatch");
    for (double v : z) {
      if (!std::isfinite(v)) throw ContractError("latent vector is not finite");
    }
    kernels::matmul_serial(z, model.params.at("dec/wz").values(), zproj_, 1, z.size(), 4 * model.config.hidden,
                           false);
  }

  // Advances one step on the previous event row and returns the raw head.
  std::vector<double> step(const std::array<double, kEventWidth>& prev) {
    const std::size_t H = model_.config.hidden;
    std::vector<double> pre = zproj_;
    kernels::matmul_serial(prev, cell_.wx.values(), pre, 1, kEventWidth, 4 * H, true);
    plain_step(cell_, pre, h_, c_);
    const std::size_t W = head_width(model_.config.mixtures);
    std::vector<double> out(model_.params.at("out/b").values().begin(), model_.params.at("out/b").values().end());
    kernels::matmul_serial(h_, model_.params.at("out/w").values(), out, 1, H, W, true);
    return out;
  }

 private:
  const VaeModel& model_;
  PlainLstm cell_;
  std::vector<double> zproj_;
  std::vector<double> h_;
  std::vector<double> c_;
};

std::size_t sample_categorical(std::span<const double> probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  return probs.size() - 1;
}

std::vector<double> tempered_softmax(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  double mx = -INFINITY;
  for (double l : logits) mx = std::max(mx, l / temperature);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += (out[i] = std::exp(logits[i] / temperature - mx));
  for (auto& v : out) v /= total;
  return out;
}

}  // namespace

VaeModel init_vae(const VaeConfig& config, std::uint64_t seed) {
  if (config.latent_dim == 0 || config.hidden == 0 || config.mixtures == 0 || config.max_length == 0) {
    throw ConfigError("VAE dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  VaeModel model{config, {}};
  auto& ps = model.params;
  const std::size_t H = config.hidden, d = config.latent_dim;
  add_lstm(ps, "enc_fw", kEventWidth, H, rng);
  add_lstm(ps, "enc_bw", kEventWidth, H, rng);
  ps.add_glorot("enc/mu_w", 2 * H, d, rng);
  ps.add_zeros("enc/mu_b", {1, d});
  ps.add_glorot("enc/lv_w", 2 * H, d, rng);
  ps.add_zeros("enc/lv_b", {1, d});
  // Decoder input is [previous event, z]; the two blocks of the input
  // weight matrix are stored separately so z is projected once per sequence.
  add_lstm(ps, "dec", kEventWidth, H, rng);
  ps.add_glorot("dec/wz", d, 4 * H, rng);
  ps.add_glorot("out/w", H, head_width(config.mixtures), rng);
  ps.add_zeros("out/b", {1, head_width(config.mixtures)});
  return model;
}

LatentPosterior encode(const VaeModel& model, const Sketch& sketch, std::size_t pad_to) {
  validate_sketch(sketch, model.config.max_length);
  const std::size_t steps = std::max(pad_to, sketch.events.size());
  Graph g;
  const std::array<Sketch, 1> batch{sketch};
  auto enc = build_encoder(g, model, batch, steps);
  g.forward();
  const auto& mu = g.value(enc.mu).storage();
  const auto& lv = g.value(enc.log_var).storage();
  return {mu, lv};
}

std::vector<LatentPosterior> encode_batch(const VaeModel& model, std::span<const Sketch> sketches) {
  std::vector<LatentPosterior> out;
  if (sketches.empty()) return out;
  for (const auto& s : sketches) validate_sketch(s, model.config.max_length);
  Graph g;
  auto enc = build_encoder(g, model, sketches, longest(sketches));
  g.forward();
  const auto& mu = g.value(enc.mu);
  const auto& lv = g.value(enc.log_var);
  const std::size_t d = model.config.latent_dim;
  for (std::size_t b = 0; b < sketches.size(); ++b) {
    out.push_back({{mu.data() + b * d, mu.data() + (b + 1) * d}, {lv.data() + b * d, lv.data() + (b + 1) * d}});
  }
  return out;
}

LatentVec reparam_sample(const LatentPosterior& posterior, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  LatentVec z(posterior.mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = posterior.mu[i] + std::exp(0.5 * posterior.log_var[i]) * gauss(rng);
  }
  return z;
}

double kl_loss(const LatentPosterior& posterior) {
  double kl = 0.0;
  for (std::size_t i = 0; i < posterior.mu.size(); ++i) {
    const double lv = posterior.log_var[i];
    kl += std::exp(lv) + posterior.mu[i] * posterior.mu[i] - 1.0 - lv;
  }
  return 0.5 * kl;
}

double log_bivariate_normal(double x, double y, double mu_x, double mu_y, double sigma_x, double sigma_y,
                            double rho) {
  const double zx = (x - mu_x) / sigma_x;
  const double zy = (y - mu_y) / sigma_y;
  const double one_m = 1.0 - rho * rho;
  const double q = zx * zx + zy * zy - 2.0 * rho * zx * zy;
  return -kLog2Pi - std::log(sigma_x) - std::log(sigma_y) - 0.5 * std::log(one_m) - q / (2.0 * one_m);
}

double mdn_nll(std::span<const MDNParams> params, const Sketch& target) {
  if (params.size() != target.events.size()) {
    throw ContractError("mdn_nll: " + std::to_string(params.size()) + " parameter steps for " +
                        std::to_string(target.events.size()) + " target events");
  }
  if (params.empty()) throw ContractError("mdn_nll: empty sequence");
  double total = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const auto& p = params[t];
    const auto& e = target.events[t];
    const std::size_t K = p.pi.size();
    std::vector<double> terms(K);
    for (std::size_t k = 0; k < K; ++k) {
      if (!(p.sigma_x[k] > 0.0) || !(p.sigma_y[k] > 0.0)) throw ContractError("mdn_nll: sigma must be positive");
      if (!(std::abs(p.rho[k]) < 1.0)) throw ContractError("mdn_nll: |rho| must be below 1");
      terms[k] = std::log(p.pi[k]) +
                 log_bivariate_normal(e.dx, e.dy, p.mu_x[k], p.mu_y[k], p.sigma_x[k], p.sigma_y[k], p.rho[k]);
    }
    const double mx = *std::max_element(terms.begin(), terms.end());
    double acc = 0.0;
    for (double v : terms) acc += std::exp(v - mx);
    const double offset_nll = -(mx + std::log(acc));

    const double pm = *std::max_element(p.pen_logits.begin(), p.pen_logits.end());
    double pen_acc = 0.0;
    for (double l : p.pen_logits) pen_acc += std::exp(l - pm);
    const double pen_nll = (pm + std::log(pen_acc)) - p.pen_logits[static_cast<std::size_t>(e.pen)];
    total += offset_nll + pen_nll;
  }
  return total / static_cast<double>(params.size());
}

std::vector<MDNParams> decode_teacher_forced(const VaeModel& model, const LatentVec& z, const Sketch& sketch) {
  PlainDecoder dec(model, z);
  std::vector<MDNParams> out;
  auto prev = kStartToken;
  for (const auto& e : sketch.events) {
    const auto raw = dec.step(prev);
    out.push_back(head_to_params(raw, model.config.mixtures));
    prev = event_row(e);
  }
  return out;
}

Sketch sample_sketch(const VaeModel& model, const LatentVec& z, double temperature, std::mt19937_64& rng) {
  if (!(temperature > 0.0 && temperature <= 1.0)) throw ContractError("temperature must lie in (0, 1]");
  const std::size_t K = model.config.mixtures;
  PlainDecoder dec(model, z);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Sketch out;
  out.class_label = model.config.class_label;
  auto prev = kStartToken;
  const double scale = std::sqrt(temperature);
  for (std::size_t t = 0; t < model.config.max_length; ++t) {
    const auto raw = dec.step(prev);
    const auto weights = tempered_softmax(std::span<const double>(raw.data(), K), temperature);
    const std::size_t k = sample_categorical(weights, rng);
    const double mu_x = raw[K + k], mu_y = raw[2 * K + k];
    const double sx = std::exp(raw[3 * K + k]) * scale, sy = std::exp(raw[4 * K + k]) * scale;
    const double rho = std::tanh(raw[5 * K + k]);
    const double n1 = gauss(rng), n2 = gauss(rng);
    StrokeEvent e;
    e.dx = mu_x + sx * n1;
    e.dy = mu_y + sy * (rho * n1 + std::sqrt(1.0 - rho * rho) * n2);
    const auto pen_probs = tempered_softmax(std::span<const double>(raw.data() + 6 * K, 3), temperature);
    e.pen = static_cast<Pen>(sample_categorical(pen_probs, rng));
    if (t + 1 == model.config.max_length) e.pen = Pen::End;
    out.events.push_back(e);
    if (e.pen == Pen::End) break;
    prev = event_row(e);
  }
  return out;
}

VaeLossNodes build_vae_loss(Graph& g, const VaeModel& model, std::span<const Sketch> batch, const Tensor& noise,
                            double kl_weight) {
  const auto& cfg = model.config;
  const auto& ps = model.params;
  const std::size_t B = batch.size(), H = cfg.hidden, K = cfg.mixtures, d = cfg.latent_dim;
  if (B == 0) throw ContractError("empty batch");
  if (noise.rows() != B || noise.cols() != d) throw ShapeError("reparameterization noise must be batch x latent_dim");
  for (const auto& s : batch) validate_sketch(s, cfg.max_length);
  const std::size_t steps = longest(batch);

  const auto enc = build_encoder(g, model, batch, steps);
  const NodeId z = g.add(enc.mu, g.mul(g.exp(g.scale(enc.log_var, 0.5)), g.constant(noise)));

  // KL per sketch, averaged over the batch.
  const NodeId kl_terms = g.sub(g.add(g.exp(enc.log_var), g.square(enc.mu)), g.add_scalar(enc.log_var, 1.0));
  const NodeId kl = g.scale(g.sum(kl_terms), 0.5 / static_cast<double>(B));

  const GraphLstm cell = graph_lstm(g, ps, "dec", H);
  const NodeId zproj = g.matmul(z, g.param(ps, "dec/wz"));
  const NodeId out_w = g.param(ps, "out/w");
  const NodeId out_b = g.param(ps, "out/b");

  std::vector<NodeId> step_losses;
  double valid = 0.0;
  State s{g.constant(Tensor::matrix(B, H)), g.constant(Tensor::matrix(B, H)), true};
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor prev = Tensor::matrix(B, kEventWidth);
    Tensor dx = Tensor::matrix(B, 1), dy = Tensor::matrix(B, 1), pen = Tensor::matrix(B, 3), mask = Tensor::matrix(B, 1);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& ev = batch[b].events;
      const auto row = t == 0 ? kStartToken : t - 1 < ev.size() ? event_row(ev[t - 1]) : std::array<double, 5>{};
      std::copy(row.begin(), row.end(), prev.data() + b * kEventWidth);
      if (t < ev.size()) {
        dx[b] = ev[t].dx;
        dy[b] = ev[t].dy;
        pen[b * 3 + static_cast<std::size_t>(ev[t].pen)] = 1.0;
        mask[b] = 1.0;
        valid += 1.0;
      }
    }
    const NodeId x = g.add(g.matmul(g.constant(prev), cell.wx), zproj);
    s = lstm_step(g, cell, x, s);
    const NodeId head = g.add(g.matmul(s.h, out_w), out_b);

    const NodeId log_pi = g.log_softmax(g.slice(head, 0, K));
    const NodeId mu_x = g.slice(head, K, 2 * K);
    const NodeId mu_y = g.slice(head, 2 * K, 3 * K);
    const NodeId log_sx = g.slice(head, 3 * K, 4 * K);
    const NodeId log_sy = g.slice(head, 4 * K, 5 * K);
    const NodeId rho = g.tanh(g.slice(head, 5 * K, 6 * K));
    const NodeId pen_logits = g.slice(head, 6 * K, 6 * K + 3);

    // Standardized residuals carry a common sign flip, which cancels in q.
    const NodeId zx = g.mul(g.sub(mu_x, g.constant(dx)), g.exp(g.scale(log_sx, -1.0)));
    const NodeId zy = g.mul(g.sub(mu_y, g.constant(dy)), g.exp(g.scale(log_sy, -1.0)));
    const NodeId one_m = g.add_scalar(g.scale(g.square(rho), -1.0), 1.0);
    const NodeId log_one_m = g.log(one_m);
    const NodeId q = g.sub(g.add(g.square(zx), g.square(zy)), g.scale(g.mul(rho, g.mul(zx, zy)), 2.0));
    const NodeId quad = g.scale(g.mul(q, g.exp(g.scale(log_one_m, -1.0))), -0.5);
    const NodeId log_norm = g.add(
        g.add_scalar(g.scale(g.add(g.add(log_sx, log_sy), g.scale(log_one_m, 0.5)), -1.0), -kLog2Pi), quad);
    const NodeId offset_ll = g.logsumexp(g.add(log_pi, log_norm));
    const NodeId pen_ll = g.sum_cols(g.mul(g.log_softmax(pen_logits), g.constant(pen)));
    step_losses.push_back(g.sum(g.mul(g.add(offset_ll, pen_ll), g.constant(mask))));
  }
  const NodeId total_ll = step_losses.size() == 1 ? step_losses[0] : g.sum(g.concat(step_losses));
  const NodeId recon = g.scale(total_ll, -1.0 / valid);
  const NodeId total = g.add(recon, g.scale(kl, kl_weight));
  return {recon, kl, total};
}

VaeTrainResult train_vae(const std::vector<Sketch>& dataset, const VaeConfig& config,
                         const VaeTrainConfig& train_config) {
  if (dataset.size() < kMinTrainingSketches) {
    throw InsufficientDataError("VAE training needs at least " + std::to_string(kMinTrainingSketches) +
                                    " sketches, got " + std::to_string(dataset.size()),
                                dataset.size(), kMinTrainingSketches);
  }
  if (train_config.batch_size == 0) throw ConfigError("batch size must be positive");
  for (const auto& s : dataset) validate_sketch(s, config.max_length);

  VaeTrainResult result{init_vae(config, train_config.seed), {}};
  VaeModel& model = result.model;
  Adam adam({.learning_rate = train_config.learning_rate});
  std::mt19937_64 rng(train_config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t d = config.latent_dim;

  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats{.epoch = epoch, .min_batch_kl = INFINITY};
    double weight = 0.0;
    for (std::size_t start = 0, batch_no = 0; start < order.size(); start += train_config.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + train_config.batch_size);
      std::vector<Sketch> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
      Tensor noise = Tensor::matrix(batch.size(), d);
      for (auto& v : noise.values()) v = gauss(rng);

      Graph g;
      const auto nodes = build_vae_loss(g, model, batch, noise, train_config.kl_weight);
      try {
        g.forward();
      } catch (const NumericError& e) {
        std::ostringstream msg;
        msg << "VAE training diverged at epoch " << epoch << ", batch " << batch_no << ": " << e.what()
            << "; parameter norms:";
        for (const auto& [name, t] : model.params) msg << ' ' << name << '=' << std::sqrt(t.squared_norm());
        throw NumericError(msg.str());
      }
      const double kl = g.value(nodes.kl).item();
      const double kl_floor = train_config.kl_free_per_dim * static_cast<double>(d);
      auto grads = g.backward(kl < kl_floor ? nodes.reconstruction : nodes.total);
      clip_global_norm(grads, train_config.grad_clip);
      adam.step(model.params, grads);

      const double n = static_cast<double>(batch.size());
      const double recon = g.value(nodes.reconstruction).item();
      stats.reconstruction += n * recon;
      stats.kl += n * kl;
      stats.total += n * (recon + train_config.kl_weight * std::max(kl, kl_floor));
      stats.min_batch_kl = std::min(stats.min_batch_kl, kl);
      weight += n;
    }
    stats.reconstruction /= weight;
    stats.kl /= weight;
    stats.total /= weight;
    result.trace.push_back(stats);
  }
  return result;
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".json");
  return p;
}

void save_vae(const std::filesystem::path& path, const VaeModel& model) {
  const auto& c = model.config;
  save_checkpoint(path, model.params);
  save_json(sidecar_path(path), {{"kind", "vae"},
                                 {"latent_dim", c.latent_dim},
                                 {"hidden", c.hidden},
                                 {"mixtures", c.mixtures},
                                 {"max_length", c.max_length},
                                 {"class_label", c.class_label},
                                 {"temperature", c.temperature}});
}

VaeModel load_vae(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("cannot read checkpoint " + path.string());
  const auto meta = load_json(sidecar_path(path));
  if (meta.value("kind", "") != "vae") throw IoError(sidecar_path(path).string() + " is not a VAE sidecar");
  VaeConfig c;
  c.latent_dim = meta.at("latent_dim").get<std::size_t>();
  c.hidden = meta.at("hidden").get<std::size_t>();
  c.mixtures = meta.at("mixtures").get<std::size_t>();
  c.max_length = meta.at("max_length").get<std::size_t>();
  c.class_label = meta.at("class_label").get<std::string>();
  c.temperature = meta.at("temperature").get<double>();
  VaeModel model{c, load_checkpoint(path)};
  const VaeModel shape_ref = init_vae(c, 0);
  for (const auto& [name, t] : shape_ref.params) {
    if (!model.params.contains(name) || model.params.at(name).shape() != t.shape()) {
      throw IoError(path.string() + ": parameter '" + name + "' missing or misshapen");
    }
  }
  return model;
}

}  // namespace lcfb
