#include "lcfb/service.hpp"

#include <chrono>

#include <httplib.h>

#include "lcfb/checkpoint.hpp"
#include "lcfb/error.hpp"

namespace lcfb {
namespace {

using json = nlohmann::json;

ServiceResponse error(int status, const std::string& message) { return {status, {{"error", message}}}; }

const std::string& required_string(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key) || !body.at(key).is_string()) {
    throw ContractError(std::string("missing string field '") + key + "'");
  }
  return body.at(key).get_ref<const std::string&>();
}

ExpressionVec expression_from_body(const json& body) {
  ExpressionVec raw{};
  if (body.contains("raw")) {
    const auto& arr = body.at("raw");
    if (!arr.is_array() || arr.size() != kExpressionCount) throw ContractError("'raw' must hold 5 intensities");
    for (std::size_t i = 0; i < kExpressionCount; ++i) {
      if (!arr[i].is_number()) throw ContractError("intensities must be numbers");
      raw[i] = arr[i].get<double>();
    }
  } else {
    for (std::size_t i = 0; i < kExpressionCount; ++i) {
      const char* name = kExpressionNames[i];
      if (!body.contains(name) || !body.at(name).is_number()) {
        throw ContractError(std::string("missing intensity '") + name + "'");
      }
      raw[i] = body.at(name).get<double>();
    }
  }
  validate_expression(raw);
  return raw;
}

json polylines_json(const Sketch& sketch) {
  json out = json::array();
  for (const auto& line : render_polylines(sketch)) {
    json pts = json::array();
    for (const auto& p : line) pts.push_back({p[0], p[1]});
    out.push_back(std::move(pts));
  }
  return out;
}

}  // namespace

std::filesystem::path prior_checkpoint_path(const std::filesystem::path& data_dir, const std::string& class_label) {
  return data_dir / "models" / ("prior-" + class_label + ".lck");
}

std::filesystem::path lcgan_checkpoint_path(const std::filesystem::path& data_dir, const std::string& class_label) {
  return data_dir / "models" / ("lcgan-" + class_label + ".lck");
}

void assert_blind(const json& payload) {
  if (payload.is_object()) {
    for (const auto& [key, value] : payload.items()) {
      if (key == "source") throw ContractError("client payload exposes a source tag");
      assert_blind(value);
    }
  } else if (payload.is_array()) {
    for (const auto& v : payload) assert_blind(v);
  }
}

FeedbackService::FeedbackService(ServiceConfig config)
    : config_(std::move(config)),
      feedback_log_(config_.data_dir / "feedback.jsonl"),
      ratings_log_(config_.data_dir / "ratings.jsonl"),
      preferences_log_(config_.data_dir / "preferences.jsonl"),
      served_log_(config_.data_dir / "served.jsonl"),
      sessions_log_(config_.data_dir / "sessions.jsonl") {
  if (!config_.clock) {
    config_.clock = [] {
      return std::chrono::duration_cast<std::chrono::milliseconds>(
                 std::chrono::system_clock::now().time_since_epoch())
          .count();
    };
  }
  load_models();
  replay();
}

std::int64_t FeedbackService::now() const { return config_.clock(); }

void FeedbackService::load_models() {
  const auto dir = config_.data_dir / "models";
  if (!std::filesystem::is_directory(dir)) return;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    const std::string name = path.filename().string();
    if (path.extension() != ".lck") continue;
    const std::string stem = path.stem().string();
    if (stem.starts_with("prior-")) {
      models_[stem.substr(6)].prior = std::make_shared<VaeModel>(load_vae(path));
    } else if (stem.starts_with("lcgan-") && !stem.ends_with("-d")) {
      models_[stem.substr(6)].lcgan = std::make_shared<LcganModel>(load_lcgan(path));
    }
  }
}

void FeedbackService::replay() {
  for (const auto& j : read_jsonl(config_.data_dir / "sessions.jsonl")) {
    Session s{j.at("session_id"), j.at("user_id"), j.at("condition"), 0};
    sessions_[s.id] = s;
  }
  for (const auto& j : read_jsonl(config_.data_dir / "served.jsonl")) {
    if (j.at("kind") == "sketch") {
      Served s{j.at("sketch_id"), j.at("session_id"), j.at("class_label"), j.at("source"),
               j.at("z").get<LatentVec>(), j.at("polylines"), j.at("session_index")};
      sessions_.at(s.session_id).sketch_counter = s.session_index;
      served_[s.id] = std::move(s);
      ++sketch_counter_;
    } else {
      Pair p{j.at("pair_id"), j.at("session_id"), j.at("left"), j.at("right"), false};
      pairs_[p.id] = p;
      ++pair_counter_;
    }
  }
  for (const auto& r : load_feedback_or_empty(config_.data_dir / "feedback.jsonl")) {
    auto& b = baselines_[r.user_id];
    b.user_id = r.user_id;
    b = update_baseline(b, r.raw);
    expressed_.insert({served_.at(r.sketch_id).session_id, r.sketch_id});
    feedback_.push_back(r);
  }
  for (const auto& j : read_jsonl(config_.data_dir / "ratings.jsonl")) {
    rated_.insert({j.at("session_id").get<std::string>(), j.at("sketch_id").get<std::string>()});
  }
  for (const auto& j : read_jsonl(config_.data_dir / "preferences.jsonl")) pairs_.at(j.at("pair_id")).voted = true;
}

std::vector<std::string> FeedbackService::classes() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [name, m] : models_) {
    if (m.prior) out.push_back(name);
  }
  return out;
}

std::string FeedbackService::default_class() const {
  for (const auto& [name, m] : models_) {
    if (m.prior) return name;
  }
  return "";
}

FeedbackService::Session& FeedbackService::session_for(const Params& params) {
  const auto it = params.find("session");
  if (it == params.end()) throw ContractError("missing 'session' parameter");
  const auto s = sessions_.find(it->second);
  if (s == sessions_.end()) throw std::out_of_range("unknown session '" + it->second + "'");
  return s->second;
}

FeedbackService::Session& FeedbackService::session_for(const json& body) {
  return session_for(Params{{"session", required_string(body, "session")}});
}

FeedbackService::Served& FeedbackService::serve_one(Session& s, const std::string& class_label,
                                                    const std::string& source, const Models& m) {
  const std::uint64_t n = ++sketch_counter_;
  const Generator* g = source == kSourceLcgan ? &m.lcgan->generator : nullptr;
  const auto seed = derive_seed(config_.seed, "serve-" + std::to_string(n));
  auto sample = sample_constrained(g, *m.prior, m.prior->config.temperature, seed, 1, Backend::Serial).front();
  Served out{class_label + "-" + std::to_string(n), s.id, class_label, source, std::move(sample.z),
             polylines_json(sample.sketch), s.sketch_counter + 1};
  served_log_.append({{"kind", "sketch"},
                      {"sketch_id", out.id},
                      {"session_id", out.session_id},
                      {"class_label", out.class_label},
                      {"source", out.source},
                      {"z", out.z},
                      {"polylines", out.polylines},
                      {"session_index", out.session_index},
                      {"timestamp_ms", now()}});
  s.sketch_counter = out.session_index;
  const std::string id = out.id;
  return served_[id] = std::move(out);
}

json FeedbackService::sketch_payload(const Served& s) const {
  return {{"sketch_id", s.id},
          {"class_label", s.class_label},
          {"polylines", s.polylines},
          {"session_index", s.session_index}};
}

ServiceResponse FeedbackService::create_session(const json& body) {
  std::lock_guard lock(mutex_);
  const std::size_t n = sessions_.size() + 1;
  Session s;
  s.id = "session-" + std::to_string(n);
  s.user_id = "user-" + std::to_string(n);
  s.condition = "blind";
  if (body.is_object()) {
    if (body.contains("user_id")) s.user_id = required_string(body, "user_id");
    if (body.contains("condition")) s.condition = required_string(body, "condition");
  }
  if (s.user_id.empty()) throw ContractError("user_id must not be empty");
  sessions_log_.append({{"session_id", s.id}, {"user_id", s.user_id}, {"condition", s.condition},
                        {"timestamp_ms", now()}});
  sessions_[s.id] = s;
  return {200, {{"session", s.id}, {"user_id", s.user_id}, {"condition", s.condition}, {"sketches_viewed", 0}}};
}

ServiceResponse FeedbackService::get_sketch(const Params& params) {
  std::lock_guard lock(mutex_);
  Session& session = session_for(params);
  if (const auto id = params.find("id"); id != params.end()) {
    const auto it = served_.find(id->second);
    if (it == served_.end() || it->second.session_id != session.id) {
      return error(404, "sketch '" + id->second + "' was not served to this session");
    }
    return {200, sketch_payload(it->second)};
  }
  const auto mode_it = params.find("mode");
  const std::string mode = mode_it == params.end() ? "blind" : mode_it->second;
  if (mode != "prior" && mode != "lcgan" && mode != "blind") {
    throw ContractError("mode must be prior, lcgan or blind");
  }
  const auto class_it = params.find("class");
  const std::string label = class_it == params.end() ? default_class() : class_it->second;
  const auto m = models_.find(label);
  if (m == models_.end() || !m->second.prior) return error(503, "no prior checkpoint loaded for class '" + label + "'");
  if (mode != "prior" && !m->second.lcgan) {
    return error(503, "no LC-GAN checkpoint loaded for class '" + label + "'; train one or request mode=prior");
  }
  std::string source = mode;
  if (mode == "blind") {
    auto rng = stream_rng(derive_seed(config_.seed, "blind"), sketch_counter_ + 1);
    source = std::bernoulli_distribution(0.5)(rng) ? kSourceLcgan : kSourcePrior;
  }
  auto payload = sketch_payload(serve_one(session, label, source, m->second));
  payload["sketches_viewed"] = session.sketch_counter;
  return {200, payload};
}

ServiceResponse FeedbackService::post_expression(const json& body) {
  std::lock_guard lock(mutex_);
  Session& session = session_for(body);
  const std::string& sketch_id = required_string(body, "sketch_id");
  const auto raw = expression_from_body(body);
  const auto it = served_.find(sketch_id);
  if (it == served_.end() || it->second.session_id != session.id) {
    return error(400, "sketch '" + sketch_id + "' was not served to this session");
  }
  if (expressed_.contains({session.id, sketch_id})) {
    return error(409, "expression for sketch '" + sketch_id + "' already recorded");
  }
  UserBaseline baseline = baselines_[session.user_id];
  baseline.user_id = session.user_id;
  FeedbackRecord r;
  r.user_id = session.user_id;
  r.sketch_id = sketch_id;
  r.z = it->second.z;
  r.raw = raw;
  r.normalized = ingest_expression(baseline, raw);
  r.composite = composite_value(r.normalized);
  r.session_index = it->second.session_index;
  r.timestamp_ms = now();
  feedback_log_.append(to_json(r));
  baselines_[session.user_id] = baseline;
  expressed_.insert({session.id, sketch_id});
  feedback_.push_back(r);
  return {200,
          {{"ok", true},
           {"normalized", r.normalized},
           {"composite", r.composite},
           {"sketches_viewed", session.sketch_counter}}};
}

ServiceResponse FeedbackService::post_rating(const json& body) {
  std::lock_guard lock(mutex_);
  Session& session = session_for(body);
  const std::string& sketch_id = required_string(body, "sketch_id");
  if (!body.contains("likert") || !body.at("likert").is_number_integer()) {
    throw ContractError("likert must be an integer from 1 to 5");
  }
  const auto likert = body.at("likert").get<std::int64_t>();
  if (likert < 1 || likert > 5) throw ContractError("likert must be an integer from 1 to 5");
  const auto it = served_.find(sketch_id);
  if (it == served_.end() || it->second.session_id != session.id) {
    return error(400, "sketch '" + sketch_id + "' was not served to this session");
  }
  if (rated_.contains({session.id, sketch_id})) return error(409, "sketch '" + sketch_id + "' already rated");
  ratings_log_.append({{"session_id", session.id},
                       {"user_id", session.user_id},
                       {"sketch_id", sketch_id},
                       {"likert", likert},
                       {"timestamp_ms", now()}});
  rated_.insert({session.id, sketch_id});
  return {200, {{"ok", true}, {"sketches_viewed", session.sketch_counter}}};
}

ServiceResponse FeedbackService::get_pair(const Params& params) {
  std::lock_guard lock(mutex_);
  Session& session = session_for(params);
  const auto class_it = params.find("class");
  const std::string label = class_it == params.end() ? default_class() : class_it->second;
  const auto m = models_.find(label);
  if (m == models_.end() || !m->second.prior || !m->second.lcgan) {
    return error(503, "pairs need both prior and LC-GAN checkpoints for class '" + label + "'");
  }
  const std::uint64_t n = ++pair_counter_;
  auto rng = stream_rng(derive_seed(config_.seed, "pair-order"), n);
  const bool lcgan_left = std::bernoulli_distribution(0.5)(rng);
  const Served& a = serve_one(session, label, lcgan_left ? kSourceLcgan : kSourcePrior, m->second);
  const Served& b = serve_one(session, label, lcgan_left ? kSourcePrior : kSourceLcgan, m->second);
  Pair p{"pair-" + std::to_string(n), session.id, a.id, b.id, false};
  served_log_.append({{"kind", "pair"},
                      {"pair_id", p.id},
                      {"session_id", p.session_id},
                      {"left", p.left},
                      {"right", p.right},
                      {"left_source", a.source},
                      {"right_source", b.source},
                      {"timestamp_ms", now()}});
  pairs_[p.id] = p;
  return {200,
          {{"pair_id", p.id},
           {"left", sketch_payload(a)},
           {"right", sketch_payload(b)},
           {"sketches_viewed", session.sketch_counter}}};
}

ServiceResponse FeedbackService::post_preference(const json& body) {
  std::lock_guard lock(mutex_);
  Session& session = session_for(body);
  const std::string& pair_id = required_string(body, "pair_id");
  const std::string& choice = required_string(body, "choice");
  if (choice != "left" && choice != "right") throw ContractError("choice must be 'left' or 'right'");
  const auto it = pairs_.find(pair_id);
  if (it == pairs_.end() || it->second.session_id != session.id) {
    return error(400, "pair '" + pair_id + "' was not served to this session");
  }
  if (it->second.voted) return error(409, "pair '" + pair_id + "' already has a vote");
  const std::string& chosen = choice == "left" ? it->second.left : it->second.right;
  const std::string& other = choice == "left" ? it->second.right : it->second.left;
  preferences_log_.append({{"pair_id", pair_id},
                           {"session_id", session.id},
                           {"user_id", session.user_id},
                           {"choice", choice},
                           {"chosen_sketch_id", chosen},
                           {"chosen_source", served_.at(chosen).source},
                           {"other_source", served_.at(other).source},
                           {"timestamp_ms", now()}});
  it->second.voted = true;
  return {200, {{"ok", true}}};
}

ServiceResponse FeedbackService::train_lcgan(const json& body) {
  std::unique_lock train_lock(train_mutex_, std::try_to_lock);
  if (!train_lock.owns_lock()) return error(409, "an LC-GAN training run is already in progress");
  const json cfg = body.is_object() ? body.value("config", json::object()) : json::object();
  std::vector<FeedbackRecord> records;
  std::shared_ptr<const VaeModel> prior;
  std::string label;
  {
    std::lock_guard lock(mutex_);
    label = body.is_object() && body.contains("class") ? required_string(body, "class") : default_class();
    const auto m = models_.find(label);
    if (m == models_.end() || !m->second.prior) return error(503, "no prior checkpoint loaded for class '" + label + "'");
    prior = m->second.prior;
    records = feedback_;
  }
  auto tc = desk_lcgan_config(cfg.value("seed", config_.seed));
  tc.generator.lambda_dist = cfg.value("lambda_dist", tc.generator.lambda_dist);
  tc.generator.lambda_norm = cfg.value("lambda_norm", tc.generator.lambda_norm);
  tc.generator.steps = cfg.value("generator_steps", tc.generator.steps);
  tc.discriminator.epochs = cfg.value("discriminator_epochs", tc.discriminator.epochs);
  tc.discriminator.weight_decay = cfg.value("weight_decay", tc.discriminator.weight_decay);
  LcganTrainSummary summary;
  try {
    summary = train_lcgan_on_feedback(records, label, tc, prior->config.latent_dim);
  } catch (const InsufficientDataError& e) {
    return {422, {{"error", e.what()}, {"have", e.have()}, {"need", e.need()}}};
  }
  const auto path = lcgan_checkpoint_path(config_.data_dir, label);
  save_lcgan(path, summary.model);
  // Serve exactly what is on disk (float-rounded), so a restart changes nothing.
  auto loaded = std::make_shared<const LcganModel>(load_lcgan(path));
  {
    std::lock_guard lock(mutex_);
    models_[label].lcgan = std::move(loaded);
  }
  auto out = to_json(summary);
  out["checkpoint"] = path.filename().string();
  return {200, out};
}

ServiceResponse FeedbackService::report() const {
  std::lock_guard lock(mutex_);
  return {200, report_from_logs(config_.data_dir)};
}

json FeedbackService::report_from_logs(const std::filesystem::path& data_dir) {
  std::map<std::string, std::string> source_of;
  for (const auto& j : read_jsonl(data_dir / "served.jsonl")) {
    if (j.at("kind") == "sketch") source_of[j.at("sketch_id")] = j.at("source");
  }
  std::vector<ScoredObservation> obs;
  std::map<std::string, ExpressionVec> normalized_of;
  for (const auto& r : load_feedback_or_empty(data_dir / "feedback.jsonl")) {
    obs.push_back({source_of.at(r.sketch_id), r.normalized, r.composite});
    normalized_of[r.sketch_id] = r.normalized;
  }
  PreferenceCounts counts;
  for (const auto& j : read_jsonl(data_dir / "preferences.jsonl")) {
    (j.at("chosen_source") == kSourceLcgan ? counts.lcgan : counts.prior) += 1;
  }
  std::vector<RatingObservation> ratings;
  for (const auto& j : read_jsonl(data_dir / "ratings.jsonl")) {
    const auto it = normalized_of.find(j.at("sketch_id"));
    if (it != normalized_of.end()) ratings.push_back({j.at("likert").get<int>(), it->second});
  }
  return {{"expressions", expression_section(obs)},
          {"preferences", preference_section(counts)},
          {"ratings", rating_section(ratings)}};
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(FeedbackService& service, const std::filesystem::path& static_dir)
    : impl_(std::make_unique<Impl>()) {
  auto& server = impl_->server;
  // The library default also sets SO_REUSEPORT, which would let a second
  // server silently share a port that is already in use.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });
  auto send = [](httplib::Response& res, const ServiceResponse& r) {
    try {
      assert_blind(r.body);
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    } catch (const ContractError& e) {
      res.status = 500;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  };
  auto guarded = [send](auto&& fn) {
    return [send, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, fn(req));
      } catch (const json::exception& e) {
        send(res, error(400, std::string("malformed JSON: ") + e.what()));
      } catch (const std::out_of_range& e) {
        send(res, error(404, e.what()));
      } catch (const ContractError& e) {
        send(res, error(400, e.what()));
      } catch (const ConfigError& e) {
        send(res, error(400, e.what()));
      } catch (const std::exception& e) {
        send(res, error(500, e.what()));
      }
    };
  };
  auto params = [](const httplib::Request& req) {
    FeedbackService::Params p;
    for (const auto& [k, v] : req.params) p[k] = v;
    return p;
  };
  auto body = [](const httplib::Request& req) { return req.body.empty() ? json::object() : json::parse(req.body); };
  FeedbackService* svc = &service;

  server.Post("/api/session", guarded([=](const auto& req) { return svc->create_session(body(req)); }));
  server.Get("/api/sketch", guarded([=](const auto& req) { return svc->get_sketch(params(req)); }));
  server.Post("/api/expression", guarded([=](const auto& req) { return svc->post_expression(body(req)); }));
  server.Post("/api/rating", guarded([=](const auto& req) { return svc->post_rating(body(req)); }));
  server.Get("/api/pair", guarded([=](const auto& req) { return svc->get_pair(params(req)); }));
  server.Post("/api/preference", guarded([=](const auto& req) { return svc->post_preference(body(req)); }));
  server.Post("/api/train/lcgan", guarded([=](const auto& req) { return svc->train_lcgan(body(req)); }));
  server.Get("/api/report", guarded([=](const auto&) { return svc->report(); }));
  if (std::filesystem::is_directory(static_dir)) server.set_mount_point("/", static_dir.string());
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  auto& server = impl_->server;
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw EnvironmentError("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

void run_http_server(FeedbackService& service, const std::string& host, int port,
                     const std::filesystem::path& static_dir) {
  HttpServer server(service, static_dir);
  server.bind(host, port);
  server.listen();
}

}  // namespace lcfb
