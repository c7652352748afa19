#include "lcfb/cli.hpp"

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lcfb/checkpoint.hpp"
#include "lcfb/error.hpp"
#include "lcfb/pipeline.hpp"
#include "lcfb/service.hpp"

namespace lcfb {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_classes(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError("empty class list");
  return out;
}

ViewerConfig viewer_from(const std::string& path) {
  return path.empty() ? default_viewer_config() : load_viewer_config(path);
}

// --- train-vae --------------------------------------------------------------------

struct TrainVaeArgs {
  std::string data;
  bool synthetic = false;
  std::string classes = "loop";
  std::size_t count = 2000;
  double jitter = kDefaultJitter;
  VaeConfig model;
  VaeTrainConfig train;
  std::string out;
};

void print_trace_header(std::ostream& out) { out << "epoch\treconstruction\tkl\ttotal\tmin_batch_kl\n"; }

void print_trace_row(std::ostream& out, const EpochStats& e) {
  out << e.epoch << '\t' << std::setprecision(10) << e.reconstruction << '\t' << e.kl << '\t' << e.total << '\t'
      << e.min_batch_kl << '\n';
}

VaeModel train_vae_command(const TrainVaeArgs& a, std::ostream& out, std::ostream& err) {
  if (a.synthetic == !a.data.empty()) throw ConfigError("pass exactly one of --data or --synthetic");
  const auto names = split_classes(a.classes);
  std::vector<Sketch> data;
  VaeConfig cfg = a.model;
  if (a.synthetic) {
    std::vector<ShapeClass> shapes;
    for (const auto& n : names) shapes.push_back(parse_shape_class(n));
    data = synthetic_dataset(shapes, a.count, a.jitter, a.train.seed);
    cfg.class_label = names.size() == 1 ? names.front() : "mixed";
  } else {
    if (!fs::exists(a.data)) throw IoError("cannot read data file " + a.data);
    const auto load = load_ndjson(a.data, cfg.max_length, names.front());
    for (const auto& skip : load.skipped) err << a.data << ": skipped line " << skip.line << ": " << skip.reason << '\n';
    for (std::size_t i = 0; i < load.sketches.size(); ++i) {
      try {
        data.push_back(normalize_sketch(load.sketches[i]));
        data.back().class_label = names.front();
      } catch (const DegenerateInputError& e) {
        err << a.data << ": skipped drawing " << i + 1 << ": " << e.what() << '\n';
      }
    }
    cfg.class_label = names.front();
  }
  auto result = train_vae(data, cfg, a.train);
  print_trace_header(out);
  for (const auto& e : result.trace) print_trace_row(out, e);
  save_vae(a.out, result.model);
  return result.model;
}

// --- collect -----------------------------------------------------------------------

struct CollectArgs {
  std::string model;
  std::size_t n = 334;
  std::string viewer;
  std::uint64_t seed = 1;
  std::string out;
};

std::size_t collect_command(const CollectArgs& a) {
  const auto model = load_vae(a.model);
  const auto records = collect_feedback(model, a.n, viewer_from(a.viewer), a.seed);
  write_feedback(a.out, records);
  return records.size();
}

// --- train-lcgan -------------------------------------------------------------------

struct TrainLcganArgs {
  std::string feedback;
  std::string class_label;
  std::uint64_t seed = 1;
  std::string out;
  double lambda_dist = kDeskLambdaDist;
  double lambda_norm = 0.0;
  bool shuffle_values = false;
};

nlohmann::json train_lcgan_command(const TrainLcganArgs& a) {
  const auto records = load_feedback(a.feedback);
  if (records.empty()) {
    throw InsufficientDataError("feedback log " + a.feedback + " is empty", 0, kMinFeedbackRecords);
  }
  auto tc = desk_lcgan_config(a.seed);
  tc.generator.lambda_dist = a.lambda_dist;
  tc.generator.lambda_norm = a.lambda_norm;
  tc.shuffle_values = a.shuffle_values;
  auto summary = train_lcgan_on_feedback(records, a.class_label, tc, records.front().z.size());
  save_lcgan(a.out, summary.model);
  return to_json(summary);
}

// --- evaluate ----------------------------------------------------------------------

struct EvaluateArgs {
  std::string prior;
  std::string lcgan;
  std::string viewer;
  std::string report;
  EvaluationConfig eval;
};

EvaluationResult evaluate_command(const EvaluateArgs& a) {
  const auto prior = load_vae(a.prior);
  const auto kind = checkpoint_kind(a.lcgan);
  EvaluationConfig ec = a.eval;
  ec.temperature = prior.config.temperature;
  EvaluationResult r;
  if (kind == "lcgan") {
    const auto lc = load_lcgan(a.lcgan);
    if (lc.class_label != prior.config.class_label) {
      throw ConfigError("LC-GAN class '" + lc.class_label + "' does not match prior class '" +
                        prior.config.class_label + "'");
    }
    r = evaluate_models(prior, prior, &lc.generator, viewer_from(a.viewer), ec);
  } else if (kind == "vae") {
    r = evaluate_models(prior, load_vae(a.lcgan), nullptr, viewer_from(a.viewer), ec);
  } else {
    throw ConfigError(a.lcgan + " is neither an LC-GAN nor a VAE checkpoint");
  }
  save_json(a.report, r.report);
  return r;
}

void print_evaluation(std::ostream& out, const EvaluationResult& r) {
  out << "composite_p_one_sided\t" << r.composite_p_one_sided << '\n'
      << "lcgan_preference_fraction\t" << r.lcgan_preference_fraction << '\n'
      << "preference_p\t" << r.preference_p << '\n';
}

int run(CLI::App& app, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  TrainVaeArgs tv;
  auto* train_vae_cmd = app.add_subcommand("train-vae", "Train the sketch VAE and print the loss trace as TSV");
  train_vae_cmd->add_option("--data", tv.data, "Quick, Draw! style NDJSON file");
  train_vae_cmd->add_flag("--synthetic", tv.synthetic, "Train on procedurally generated sketches");
  train_vae_cmd->add_option("--class", tv.classes, "Class name, or comma-separated synthetic classes")
      ->capture_default_str();
  train_vae_cmd->add_option("--count", tv.count, "Synthetic sketch count")->capture_default_str();
  train_vae_cmd->add_option("--jitter", tv.jitter, "Synthetic shape variation in [0, 1)")->capture_default_str();
  train_vae_cmd->add_option("--epochs", tv.train.epochs)->capture_default_str();
  train_vae_cmd->add_option("--latent-dim", tv.model.latent_dim)->capture_default_str();
  train_vae_cmd->add_option("--hidden", tv.model.hidden)->capture_default_str();
  train_vae_cmd->add_option("--mixtures", tv.model.mixtures)->capture_default_str();
  train_vae_cmd->add_option("--batch-size", tv.train.batch_size)->capture_default_str();
  train_vae_cmd->add_option("--learning-rate", tv.train.learning_rate)->capture_default_str();
  train_vae_cmd->add_option("--temperature", tv.model.temperature, "Sampling temperature stored with the model")
      ->capture_default_str();
  train_vae_cmd->add_option("--seed", tv.train.seed)->capture_default_str();
  train_vae_cmd->add_option("--out", tv.out, "Checkpoint path")->required();

  CollectArgs co;
  auto* collect_cmd = app.add_subcommand("collect", "Score prior samples with the simulated viewer");
  collect_cmd->add_option("--model", co.model, "VAE checkpoint")->required();
  collect_cmd->add_option("--n", co.n)->capture_default_str();
  collect_cmd->add_option("--viewer-config", co.viewer, "JSON viewer configuration");
  collect_cmd->add_option("--seed", co.seed)->capture_default_str();
  collect_cmd->add_option("--out", co.out, "Feedback log to write")->required();

  TrainLcganArgs tl;
  auto* lcgan_cmd = app.add_subcommand("train-lcgan", "Train the LC-GAN on a feedback log");
  lcgan_cmd->add_option("--feedback", tl.feedback)->required();
  lcgan_cmd->add_option("--class", tl.class_label)->required();
  lcgan_cmd->add_option("--seed", tl.seed)->capture_default_str();
  lcgan_cmd->add_option("--out", tl.out, "Generator checkpoint path")->required();
  lcgan_cmd->add_option("--lambda-dist", tl.lambda_dist)->capture_default_str();
  lcgan_cmd->add_option("--lambda-norm", tl.lambda_norm)->capture_default_str();
  lcgan_cmd->add_flag("--shuffle-values", tl.shuffle_values, "Permute feedback values (null control)");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compare LC-GAN and prior samples with the simulated viewer");
  eval_cmd->add_option("--prior", ev.prior, "Prior VAE checkpoint")->required();
  eval_cmd->add_option("--lcgan", ev.lcgan, "LC-GAN checkpoint, or a VAE checkpoint for a null control")
      ->required();
  eval_cmd->add_option("--n", ev.eval.per_model, "Sketches per model")->capture_default_str();
  eval_cmd->add_option("--pairs", ev.eval.pairs)->capture_default_str();
  eval_cmd->add_option("--viewer-config", ev.viewer);
  eval_cmd->add_option("--seed", ev.eval.seed)->capture_default_str();
  eval_cmd->add_option("--report", ev.report)->required();

  int port = 8080;
  std::string data_dir;
  std::string host = "127.0.0.1";
  std::string static_dir;
  std::uint64_t serve_seed = 1;
  auto* serve_cmd = app.add_subcommand("serve", "Run the feedback HTTP service");
  serve_cmd->add_option("--port", port)->capture_default_str();
  serve_cmd->add_option("--data-dir", data_dir, "Defaults to $LC_DATA_DIR, then ./data");
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--static-dir", static_dir, "Defaults to <data-dir>/static");
  serve_cmd->add_option("--seed", serve_seed)->capture_default_str();

  std::string repro_out;
  std::string repro_classes = "loop";
  std::uint64_t repro_seed = 1;
  std::size_t repro_epochs = 20, repro_count = 2000, repro_feedback = 334;
  EvaluationConfig repro_eval;
  std::string repro_viewer;
  auto* repro_cmd = app.add_subcommand("reproduce", "Run train-vae, collect, train-lcgan and evaluate per class");
  repro_cmd->add_option("--out", repro_out, "Output directory")->required();
  repro_cmd->add_option("--class", repro_classes)->capture_default_str();
  repro_cmd->add_option("--seed", repro_seed)->capture_default_str();
  repro_cmd->add_option("--epochs", repro_epochs)->capture_default_str();
  repro_cmd->add_option("--count", repro_count, "Synthetic training sketches per class")->capture_default_str();
  repro_cmd->add_option("--feedback-n", repro_feedback)->capture_default_str();
  repro_cmd->add_option("--n", repro_eval.per_model)->capture_default_str();
  repro_cmd->add_option("--pairs", repro_eval.pairs)->capture_default_str();
  repro_cmd->add_option("--viewer-config", repro_viewer);

  app.require_subcommand(1);
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  if (*train_vae_cmd) {
    train_vae_command(tv, out, err);
  } else if (*collect_cmd) {
    const auto n = collect_command(co);
    err << "wrote " << n << " records to " << co.out << '\n';
  } else if (*lcgan_cmd) {
    out << train_lcgan_command(tl).dump(2) << '\n';
  } else if (*eval_cmd) {
    print_evaluation(out, evaluate_command(ev));
  } else if (*serve_cmd) {
    if (data_dir.empty()) {
      const char* env = std::getenv("LC_DATA_DIR");
      data_dir = env != nullptr && *env != '\0' ? env : "data";
    }
    FeedbackService service({fs::path(data_dir), serve_seed, {}});
    const auto classes = service.classes();
    err << "serving " << data_dir << " on " << host << ':' << port << " (classes:";
    for (const auto& c : classes) err << ' ' << c;
    err << ")\n";
    run_http_server(service, host, port, static_dir.empty() ? fs::path(data_dir) / "static" : fs::path(static_dir));
  } else if (*repro_cmd) {
    const fs::path root(repro_out);
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& label : split_classes(repro_classes)) {
      const auto prior_path = root / "models" / ("prior-" + label + ".lck");
      const auto lcgan_path = root / "models" / ("lcgan-" + label + ".lck");
      const auto feedback_path = root / ("feedback-" + label + ".jsonl");
      const auto report_path = root / ("report-" + label + ".json");
      TrainVaeArgs t;
      t.synthetic = true;
      t.classes = label;
      t.count = repro_count;
      t.train.epochs = repro_epochs;
      t.train.seed = derive_seed(repro_seed, "vae-" + label);
      t.out = prior_path.string();
      std::ostringstream trace;
      train_vae_command(t, trace, err);
      write_file_atomic(root / ("vae-trace-" + label + ".tsv"), trace.str());
      collect_command({prior_path.string(), repro_feedback, repro_viewer, derive_seed(repro_seed, "collect-" + label),
                       feedback_path.string()});
      TrainLcganArgs l;
      l.feedback = feedback_path.string();
      l.class_label = label;
      l.seed = derive_seed(repro_seed, "lcgan-" + label);
      l.out = lcgan_path.string();
      const auto lcgan_summary = train_lcgan_command(l);
      EvaluateArgs e{prior_path.string(), lcgan_path.string(), repro_viewer, report_path.string(), repro_eval};
      e.eval.seed = derive_seed(repro_seed, "evaluate-" + label);
      const auto r = evaluate_command(e);
      summary[label] = {{"lcgan_training", lcgan_summary},
                        {"composite_p_one_sided", r.composite_p_one_sided},
                        {"lcgan_preference_fraction", r.lcgan_preference_fraction},
                        {"preference_p", r.preference_p}};
      out << label << '\t';
      print_evaluation(out, r);
    }
    save_json(root / "summary.json", summary);
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sketch VAE, LC-GAN and feedback-loop experiments", "lcfb"};
  try {
    return run(app, args, out, err);
  } catch (const InsufficientDataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInsufficientData;
  } catch (const EnvironmentError& e) {
    err << "error: " << e.what() << '\n';
    return kExitEnvironment;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
}

}  // namespace lcfb
