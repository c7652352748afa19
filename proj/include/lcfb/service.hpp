#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcfb/feedback.hpp"
#include "lcfb/lcgan.hpp"
#include "lcfb/pipeline.hpp"
#include "lcfb/vae.hpp"

namespace lcfb {

// Data directory layout:
//   feedback.jsonl ratings.jsonl preferences.jsonl served.jsonl sessions.jsonl
//   models/prior-<class>.lck   VAE checkpoint (+ .json sidecar)
//   models/lcgan-<class>.lck   LC-GAN checkpoint written by training
//   static/                    files served under /
struct ServiceConfig {
  std::filesystem::path data_dir;
  std::uint64_t seed = 1;
  // Clock in milliseconds; replaceable for tests.
  std::function<std::int64_t()> clock;
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

std::filesystem::path prior_checkpoint_path(const std::filesystem::path& data_dir, const std::string& class_label);
std::filesystem::path lcgan_checkpoint_path(const std::filesystem::path& data_dir, const std::string& class_label);

// All request handling for the feedback service, independent of HTTP. State
// is rebuilt from the logs on construction, so a restarted service behaves
// as if it never stopped. Thread-safe.
class FeedbackService {
 public:
  explicit FeedbackService(ServiceConfig config);

  using Params = std::map<std::string, std::string>;
  ServiceResponse create_session(const nlohmann::json& body);
  ServiceResponse get_sketch(const Params& params);
  ServiceResponse post_expression(const nlohmann::json& body);
  ServiceResponse post_rating(const nlohmann::json& body);
  ServiceResponse get_pair(const Params& params);
  ServiceResponse post_preference(const nlohmann::json& body);
  ServiceResponse train_lcgan(const nlohmann::json& body);
  ServiceResponse report() const;

  // Report built from the log files alone.
  static nlohmann::json report_from_logs(const std::filesystem::path& data_dir);

  std::vector<std::string> classes() const;

 private:
  struct Session {
    std::string id;
    std::string user_id;
    std::string condition;
    std::int64_t sketch_counter = 0;
  };
  struct Served {
    std::string id;
    std::string session_id;
    std::string class_label;
    std::string source;
    LatentVec z;
    nlohmann::json polylines;
    std::int64_t session_index = 0;
  };
  struct Pair {
    std::string id;
    std::string session_id;
    std::string left;
    std::string right;
    bool voted = false;
  };
  struct Models {
    std::shared_ptr<const VaeModel> prior;
    std::shared_ptr<const LcganModel> lcgan;
  };

  void replay();
  void load_models();
  std::string default_class() const;
  Session& session_for(const Params& params);
  Session& session_for(const nlohmann::json& body);
  Served& serve_one(Session& s, const std::string& class_label, const std::string& source, const Models& m);
  nlohmann::json sketch_payload(const Served& s) const;
  std::int64_t now() const;

  ServiceConfig config_;
  mutable std::mutex mutex_;
  std::mutex train_mutex_;
  JsonlWriter feedback_log_;
  JsonlWriter ratings_log_;
  JsonlWriter preferences_log_;
  JsonlWriter served_log_;
  JsonlWriter sessions_log_;

  std::map<std::string, Models> models_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, Served> served_;
  std::map<std::string, Pair> pairs_;
  std::map<std::string, UserBaseline> baselines_;
  std::vector<FeedbackRecord> feedback_;
  std::set<std::pair<std::string, std::string>> expressed_;  // (session, sketch)
  std::set<std::pair<std::string, std::string>> rated_;
  std::uint64_t sketch_counter_ = 0;
  std::uint64_t pair_counter_ = 0;
};

// HTTP front end for a FeedbackService. Every response body passes
// assert_blind before it is sent.
class HttpServer {
 public:
  HttpServer(FeedbackService& service, const std::filesystem::path& static_dir);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port. Returns the bound port; throws
  // EnvironmentError when the port cannot be bound.
  int bind(const std::string& host, int port);
  // Serves until stop() is called from another thread.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Binds the service to host:port and blocks. Throws EnvironmentError when
// the port cannot be bound.
void run_http_server(FeedbackService& service, const std::string& host, int port,
                     const std::filesystem::path& static_dir);

// Throws ContractError if `payload` contains a "source" key at any depth.
void assert_blind(const nlohmann::json& payload);

}  // namespace lcfb
