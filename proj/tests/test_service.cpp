#include <doctest.h>

#include <httplib.h>

#include <filesystem>
#include <random>
#include <thread>

#include "lcfb/checkpoint.hpp"
#include "lcfb/error.hpp"
#include "lcfb/service.hpp"

using namespace lcfb;
using nlohmann::json;

namespace {

std::filesystem::path make_data_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "models");
  VaeConfig c;
  c.latent_dim = 3;
  c.hidden = 8;
  c.mixtures = 2;
  c.max_length = 24;
  c.class_label = "loop";
  c.temperature = 0.5;
  save_vae(prior_checkpoint_path(dir, "loop"), init_vae(c, 4));
  return dir;
}

ServiceConfig config_for(const std::filesystem::path& dir) {
  auto ticks = std::make_shared<std::int64_t>(0);
  return {dir, 7, [ticks] { return (*ticks)++; }};
}

std::string new_session(FeedbackService& svc, const std::string& user = "") {
  json body = json::object();
  if (!user.empty()) body["user_id"] = user;
  const auto r = svc.create_session(body);
  REQUIRE(r.status == 200);
  return r.body["session"];
}

// Serves n prior sketches to the session and posts a random expression for each.
void feed(FeedbackService& svc, const std::string& session, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto sketch = svc.get_sketch({{"session", session}, {"mode", "prior"}});
    REQUIRE(sketch.status == 200);
    json raw = json::array();
    for (int k = 0; k < 5; ++k) raw.push_back(u(rng));
    const auto r = svc.post_expression({{"session", session}, {"sketch_id", sketch.body["sketch_id"]}, {"raw", raw}});
    REQUIRE(r.status == 200);
  }
}

json quick_training(std::uint64_t seed) {
  return {{"class", "loop"},
          {"config", {{"seed", seed}, {"generator_steps", 40}, {"discriminator_epochs", 5}}}};
}

}  // namespace

TEST_CASE("blindness guard") {
  CHECK_NOTHROW(assert_blind({{"sketch_id", "a"}, {"polylines", json::array()}}));
  CHECK_THROWS_AS(assert_blind({{"source", "prior"}}), ContractError);
  CHECK_THROWS_AS(assert_blind({{"left", {{"x", {{"source", "lcgan"}}}}}}), ContractError);
  CHECK_THROWS_AS(assert_blind(json::array({json{{"source", 1}}})), ContractError);
}

TEST_CASE("sketch serving") {
  const auto dir = make_data_dir("lcfb_test_service_sketch");
  FeedbackService svc(config_for(dir));
  const auto session = new_session(svc);

  SUBCASE("prior payload schema") {
    const auto r = svc.get_sketch({{"session", session}, {"mode", "prior"}});
    REQUIRE(r.status == 200);
    CHECK(r.body.contains("sketch_id"));
    CHECK(r.body["polylines"].is_array());
    CHECK_FALSE(r.body.contains("source"));
    CHECK_NOTHROW(assert_blind(r.body));
    CHECK(r.body["sketches_viewed"] == 1);
    CHECK(r.body["class_label"] == "loop");
  }
  SUBCASE("refetching a sketch returns identical polylines") {
    const auto first = svc.get_sketch({{"session", session}, {"mode", "prior"}});
    const std::string id = first.body["sketch_id"];
    const auto again = svc.get_sketch({{"session", session}, {"id", id}});
    REQUIRE(again.status == 200);
    CHECK(again.body["polylines"] == first.body["polylines"]);
    const auto other = new_session(svc);
    CHECK(svc.get_sketch({{"session", other}, {"id", id}}).status == 404);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(svc.get_sketch({{"session", "nope"}}), std::out_of_range);
    CHECK(svc.get_sketch({{"session", session}, {"mode", "blind"}}).status == 503);
    CHECK(svc.get_sketch({{"session", session}, {"mode", "prior"}, {"class", "star"}}).status == 503);
    CHECK_THROWS_AS(svc.get_sketch({{"session", session}, {"mode", "other"}}), ContractError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("expressions and ratings") {
  const auto dir = make_data_dir("lcfb_test_service_expr");
  FeedbackService svc(config_for(dir));
  const auto session = new_session(svc);
  const auto s1 = svc.get_sketch({{"session", session}, {"mode", "prior"}}).body["sketch_id"];
  const auto s2 = svc.get_sketch({{"session", session}, {"mode", "prior"}}).body["sketch_id"];

  const auto first = svc.post_expression({{"session", session}, {"sketch_id", s1}, {"raw", {0.3, 0.4, 0.1, 0.2, 0.5}}});
  REQUIRE(first.status == 200);
  CHECK(first.body["normalized"] == json::array({0.0, 0.0, 0.0, 0.0, 0.0}));
  CHECK(first.body["composite"] == 0.0);
  const auto second = svc.post_expression({{"session", session},
                                           {"sketch_id", s2},
                                           {"amusement", 0.4},
                                           {"contentment", 0.4},
                                           {"surprise", 0.1},
                                           {"sadness", 0.2},
                                           {"concentration", 0.5}});
  REQUIRE(second.status == 200);
  CHECK(std::abs(second.body["normalized"][0].get<double>() - 0.1) < 1e-12);
  for (int k = 1; k < 5; ++k) CHECK(std::abs(second.body["normalized"][k].get<double>()) < 1e-15);

  CHECK(svc.post_expression({{"session", session}, {"sketch_id", s2}, {"raw", {0, 0, 0, 0, 0}}}).status == 409);
  CHECK(svc.post_expression({{"session", session}, {"sketch_id", "loop-999"}, {"raw", {0, 0, 0, 0, 0}}}).status == 400);
  CHECK_THROWS_AS(svc.post_expression({{"session", session}, {"sketch_id", s1}, {"raw", {-0.1, 0, 0, 0, 0}}}),
                  ContractError);
  CHECK_THROWS_AS(svc.post_expression({{"session", session}, {"sketch_id", s1}, {"raw", {0, 0, 0}}}), ContractError);

  const auto logged = load_feedback(dir / "feedback.jsonl");
  REQUIRE(logged.size() == 2);
  CHECK(replay_feedback(logged) == logged);

  SUBCASE("ratings") {
    CHECK(svc.post_rating({{"session", session}, {"sketch_id", s1}, {"likert", 3}}).status == 200);
    const auto lines = read_jsonl(dir / "ratings.jsonl");
    REQUIRE(lines.size() == 1);
    CHECK(lines[0]["likert"] == 3);
    CHECK(lines[0]["sketch_id"] == s1);
    CHECK(lines[0]["session_id"] == session);
    CHECK(svc.post_rating({{"session", session}, {"sketch_id", s1}, {"likert", 4}}).status == 409);
    CHECK_THROWS_AS(svc.post_rating({{"session", session}, {"sketch_id", s2}, {"likert", 6}}), ContractError);
    CHECK_THROWS_AS(svc.post_rating({{"session", session}, {"sketch_id", s2}, {"likert", 2.5}}), ContractError);
    CHECK(svc.post_rating({{"session", session}, {"sketch_id", "loop-77"}, {"likert", 2}}).status == 400);
    CHECK(read_jsonl(dir / "ratings.jsonl").size() == 1);
    FeedbackService restarted(config_for(dir));
    CHECK(restarted.post_rating({{"session", session}, {"sketch_id", s1}, {"likert", 4}}).status == 409);
    CHECK(restarted.post_expression({{"session", session}, {"sketch_id", s1}, {"raw", {0, 0, 0, 0, 0}}}).status ==
          409);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("training, blind serving, pairs and reports") {
  const auto dir = make_data_dir("lcfb_test_service_train");
  auto svc = std::make_unique<FeedbackService>(config_for(dir));

  const auto empty = svc->report();
  CHECK(empty.body["expressions"].is_null());
  CHECK(empty.body["preferences"].is_null());
  CHECK(empty.body["ratings"].is_null());

  const auto a = new_session(*svc, "alice");
  feed(*svc, a, 10, 1);
  const auto few = svc->train_lcgan(quick_training(3));
  CHECK(few.status == 422);
  CHECK(few.body["have"] == 10);
  CHECK(few.body["need"] == 40);
  CHECK_FALSE(std::filesystem::exists(lcgan_checkpoint_path(dir, "loop")));

  feed(*svc, a, 53, 2);
  const auto trained = svc->train_lcgan(quick_training(3));
  REQUIRE(trained.status == 200);
  CHECK(trained.body["records"] == 63);
  for (const char* key : {"holdout_accuracy", "mean_d_prior", "mean_d_shifted", "checkpoint"}) {
    CHECK(trained.body.contains(key));
  }
  const auto checkpoint = lcgan_checkpoint_path(dir, "loop");
  const std::string bytes = lcfb::read_file(checkpoint);
  CHECK(svc->train_lcgan(quick_training(3)).status == 200);
  CHECK(lcfb::read_file(checkpoint) == bytes);

  SUBCASE("blind requests split evenly and never reveal the source") {
    const auto b = new_session(*svc, "bob");
    for (int i = 0; i < 1000; ++i) {
      const auto r = svc->get_sketch({{"session", b}, {"mode", "blind"}});
      REQUIRE(r.status == 200);
      assert_blind(r.body);
    }
    int lcgan = 0, total = 0;
    for (const auto& line : read_jsonl(dir / "served.jsonl")) {
      if (line["kind"] != "sketch" || line["session_id"] != b) continue;
      ++total;
      lcgan += line["source"] == "lcgan";
    }
    CHECK(total == 1000);
    CHECK(lcgan >= 450);
    CHECK(lcgan <= 550);
  }
  SUBCASE("pairs and preferences") {
    const auto c = new_session(*svc, "carol");
    std::map<std::string, int> expected{{"lcgan", 0}, {"prior", 0}};
    std::vector<std::string> pair_ids;
    for (int i = 0; i < 6; ++i) {
      const auto p = svc->get_pair({{"session", c}});
      REQUIRE(p.status == 200);
      assert_blind(p.body);
      CHECK(p.body["left"]["sketch_id"] != p.body["right"]["sketch_id"]);
      pair_ids.push_back(p.body["pair_id"]);
      const std::string choice = i % 3 == 0 ? "right" : "left";
      CHECK(svc->post_preference({{"session", c}, {"pair_id", pair_ids.back()}, {"choice", choice}}).status == 200);
    }
    std::map<std::string, int> sources_left;
    for (const auto& line : read_jsonl(dir / "served.jsonl")) {
      if (line["kind"] != "pair") continue;
      CHECK(line["left_source"] != line["right_source"]);
      sources_left[line["left_source"]]++;
    }
    for (const auto& line : read_jsonl(dir / "preferences.jsonl")) expected[line["chosen_source"]]++;
    const auto report = svc->report();
    CHECK(report.body["preferences"]["lcgan"] == expected["lcgan"]);
    CHECK(report.body["preferences"]["prior"] == expected["prior"]);

    CHECK(svc->post_preference({{"session", c}, {"pair_id", pair_ids[0]}, {"choice", "left"}}).status == 409);
    CHECK(svc->post_preference({{"session", c}, {"pair_id", "pair-999"}, {"choice", "left"}}).status == 400);
    CHECK_THROWS_AS(svc->post_preference({{"session", c}, {"pair_id", pair_ids[1]}, {"choice", "up"}}), ContractError);
    CHECK(svc->report().body["preferences"] == report.body["preferences"]);
  }
  SUBCASE("ratings with expressions produce correlations") {
    const auto d = new_session(*svc, "dave");
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 30; ++i) {
      const auto sketch = svc->get_sketch({{"session", d}, {"mode", "blind"}});
      const auto id = sketch.body["sketch_id"];
      REQUIRE(svc->post_expression({{"session", d}, {"sketch_id", id}, {"raw", {u(rng), u(rng), u(rng), u(rng), u(rng)}}})
                  .status == 200);
      REQUIRE(svc->post_rating({{"session", d}, {"sketch_id", id}, {"likert", 1 + i % 5}}).status == 200);
    }
    const auto report = svc->report().body;
    CHECK(report["ratings"]["n"] == 30);
    CHECK(report["ratings"]["pearson_likert_vs_normalized"]["contentment"]["p_value"].is_number());
    CHECK(report["expressions"]["models"]["lcgan"]["n"].get<int>() > 0);
  }

  // Restarting rebuilds state from the logs and reports identically.
  const auto before = svc->report().body;
  CHECK(before == FeedbackService::report_from_logs(dir));
  svc.reset();
  FeedbackService restarted(config_for(dir));
  CHECK(restarted.report().body == before);
  CHECK(restarted.classes() == std::vector<std::string>{"loop"});
  const auto again = new_session(restarted);
  CHECK(again != a);
  std::filesystem::remove_all(dir);
}

TEST_CASE("http front end") {
  const auto dir = make_data_dir("lcfb_test_service_http");
  FeedbackService svc(config_for(dir));
  HttpServer server(svc, dir / "static");
  const int port = server.bind("127.0.0.1", 0);
  std::thread worker([&] { server.listen(); });

  httplib::Client client("127.0.0.1", port);
  const auto session = client.Post("/api/session", "{}", "application/json");
  REQUIRE(session);
  CHECK(session->status == 200);
  const std::string id = json::parse(session->body)["session"];
  for (int i = 0; i < 5; ++i) {
    const auto sketch = client.Get("/api/sketch?session=" + id + "&mode=prior");
    REQUIRE(sketch);
    REQUIRE(sketch->status == 200);
    const auto payload = json::parse(sketch->body);
    CHECK_FALSE(payload.contains("source"));
    const json body{{"session", id}, {"sketch_id", payload["sketch_id"]}, {"raw", {0.1 * i, 0.2, 0.3, 0.4, 0.5}}};
    const auto ack = client.Post("/api/expression", body.dump(), "application/json");
    REQUIRE(ack);
    CHECK(ack->status == 200);
  }
  CHECK(load_feedback(dir / "feedback.jsonl").size() == 5);
  CHECK(client.Get("/api/sketch?session=missing")->status == 404);
  CHECK(client.Post("/api/expression", "{broken", "application/json")->status == 400);
  CHECK(client.Post("/api/rating", json{{"session", id}, {"sketch_id", "loop-1"}, {"likert", 9}}.dump(),
                    "application/json")->status == 400);
  CHECK(client.Get("/api/pair?session=" + id)->status == 503);
  const auto report = client.Get("/api/report");
  REQUIRE(report);
  CHECK(json::parse(report->body)["expressions"]["models"]["prior"]["n"] == 5);

  HttpServer clash(svc, dir / "static");
  CHECK_THROWS_AS(clash.bind("127.0.0.1", port), EnvironmentError);

  server.stop();
  worker.join();
  std::filesystem::remove_all(dir);
}
