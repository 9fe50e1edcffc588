#include "mlbviz/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "mlbviz/analysis.hpp"
#include "mlbviz/checkpoint.hpp"
#include "mlbviz/explainer.hpp"
#include "mlbviz/image_io.hpp"
#include "mlbviz/selfcheck.hpp"
#include "mlbviz/synth.hpp"
#include "mlbviz/trainer.hpp"

namespace mlbviz::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad flags or input that can never work; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

json matrix_json(const Tensor& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.dim(0); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < m.dim(1); ++c) row.push_back(m.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<synth::Sample> load_split(const fs::path& dir, const char* name) {
  const fs::path path = dir / (std::string(name) + ".svqa");
  if (!fs::exists(path)) throw std::runtime_error("missing " + path.string());
  return synth::read_dataset(path);
}

GradMode parse_mode(const std::string& mode) { return mode == "standard" ? GradMode::Standard : GradMode::Guided; }

// ---- gen-data ----------------------------------------------------------

struct GenArgs {
  std::string out;
  std::uint64_t seed = 42;
  std::size_t train = 10000;
  std::size_t val = 1000;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  synth::build_dataset(a.out, {a.train, a.val, a.seed});
  out << "wrote " << a.train << " train + " << a.val << " val samples to " << a.out << "\n";
  return kExitOk;
}

// ---- train -------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  TrainConfig config;
  std::size_t limit = 0;
  bool no_val = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  auto train_set = load_split(a.data, "train");
  if (a.limit && a.limit < train_set.size()) train_set.resize(a.limit);
  std::vector<synth::Sample> val_set;
  if (!a.no_val && fs::exists(fs::path(a.data) / "val.svqa")) val_set = load_split(a.data, "val");

  ModelParams init = init_params(HyperParams{}, a.config.init_seed);
  const TrainResult result = train(std::move(init), train_set, a.config, val_set, [&](const EpochMetrics& m) {
    json line{{"epoch", m.epoch}, {"loss", m.loss}, {"acc", m.accuracy}};
    if (m.val_accuracy) line["val_acc"] = *m.val_accuracy;
    out << line.dump() << "\n" << std::flush;
  });
  save_checkpoint(result.params, a.out);
  return kExitOk;
}

// ---- explain -----------------------------------------------------------

struct ExplainArgs {
  std::string ckpt;
  std::string data;
  std::size_t index = 0;
  std::string image;
  std::string question;
  std::string mode = "guided";
  std::string out;
};

int cmd_explain(const ExplainArgs& a, std::ostream& out) {
  const ModelParams params = load_checkpoint(a.ckpt);
  Tensor image;
  std::vector<std::size_t> tokens;
  if (!a.image.empty()) {
    const auto tok = synth::tokenize(a.question);
    if (!tok.unknown.empty()) throw UsageError("unknown token: " + tok.unknown);
    if (tok.tokens.empty()) throw UsageError("empty question");
    if (tok.tokens.size() > params.hyper().max_tokens) throw UsageError("question longer than the model's token limit");
    tokens = tok.tokens;
    image = image_io::read_ppm(a.image);
    const std::size_t side = params.hyper().image_side();
    if (image.dim(1) != side || image.dim(2) != side) {
      throw UsageError("image must be " + std::to_string(side) + "x" + std::to_string(side));
    }
  } else {
    const auto samples = load_split(a.data, "val");
    if (a.index >= samples.size()) throw UsageError("--index out of range (" + std::to_string(samples.size()) + " samples)");
    image = samples[a.index].image();
    tokens = samples[a.index].tokens;
  }

  const GradMode mode = parse_mode(a.mode);
  const ForwardTrace trace = forward(params, image, tokens);
  const VisualSaliency visual = visual_saliency(trace, mode);
  TokenSaliency text;
  try {
    text = token_scores(textual_explanation(trace, mode));
  } catch (const std::domain_error& e) {
    throw UsageError(std::string(e.what()) + " (question needs at least two tokens)");
  }
  const AttentionComparison cmp = attention_comparison(trace, mode);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  image_io::write_pgm(dir / "heatmap.pgm", image_io::saliency_to_gray(visual.heatmap));
  const std::size_t factor = params.hyper().image_side() / params.hyper().lattice;
  json alpha = json::array();
  for (std::size_t g = 0; g < cmp.glimpse_maps.size(); ++g) {
    const auto gray = image_io::upsample(image_io::probability_to_gray(cmp.glimpse_maps[g]), factor);
    image_io::write_pgm(dir / ("alpha_" + std::to_string(g + 1) + ".pgm"), gray);
    alpha.push_back(matrix_json(cmp.glimpse_maps[g]));
  }
  image_io::write_ppm(dir / "image.ppm", image);

  const auto vocab = synth::vocabulary();
  const auto answers = synth::answer_names();
  json words = json::array();
  for (auto t : tokens) words.push_back(std::string(vocab[t]));
  const std::string answer(answers[trace.answer]);
  const json report{{"tokens", words},
                    {"z", text.z},
                    {"answer", answer},
                    {"probs", to_vector(trace.probs)},
                    {"mode", a.mode},
                    {"alpha", alpha},
                    {"heatmap", matrix_json(visual.heatmap)}};
  std::ofstream file(dir / "tokens.json");
  file << report.dump(2) << "\n";
  if (!file) throw std::runtime_error("write failed: " + (dir / "tokens.json").string());
  out << answer << "\n";
  return kExitOk;
}

// ---- eval --------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "val";
  std::string mode = "guided";
  bool no_heatmap = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const ModelParams params = load_checkpoint(a.ckpt);
  const auto samples = load_split(a.data, a.split.c_str());
  const EvalResult ev = evaluate(params, samples);
  const SaliencyReport sal = saliency_metrics(params, samples, parse_mode(a.mode), !a.no_heatmap);

  json kinds = json::object();
  for (std::size_t k = 0; k < synth::kKindCount; ++k) {
    kinds[synth::kind_name(static_cast<synth::QuestionKind>(k))] = ev.kind_accuracy[k];
  }
  json report{{"samples", samples.size()},
              {"accuracy", ev.accuracy},
              {"mean_loss", ev.mean_loss},
              {"kind_accuracy", kinds},
              {"attribute_correct", sal.attribute_correct},
              {"alpha_mask_mass", sal.glimpse_mean_mass},
              {"alpha_beats_baseline", sal.glimpse_beats_baseline},
              {"alpha_baseline", sal.mean_baseline},
              {"noun_over_function", sal.noun_over_function},
              {"noun_z_gap", sal.mean_noun_gap}};
  if (!a.no_heatmap) {
    report["heatmap_mask_mass"] = sal.heatmap_mask_mass;
    report["heatmap_area_baseline"] = sal.heatmap_area_baseline;
  }
  out << report.dump() << "\n";
  return kExitOk;
}

// ---- selfcheck ---------------------------------------------------------

int cmd_selfcheck(const SelfcheckOptions& options, bool inject_fault, std::ostream& out) {
  testing::set_relu_backward_fault(inject_fault);
  std::vector<CheckResult> results;
  try {
    results = run_selfcheck(options);
  } catch (...) {
    testing::set_relu_backward_fault(false);
    throw;
  }
  testing::set_relu_backward_fault(false);
  bool all = true;
  for (const auto& r : results) {
    out << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(42) << r.name << r.detail << "\n";
    all = all && r.passed;
  }
  out << results.size() << " checks, " << (all ? "all passed" : "FAILURES") << "\n";
  return all ? kExitOk : kExitRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hadamard-product explanations for a toy MLB visual question answering model"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic shapes dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
  gen_cmd->add_option("--train", gen.train, "Training samples")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--val", gen.val, "Validation samples")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train from a dataset directory; one JSON line per epoch");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--seed", tr.config.init_seed, "Initialization seed");
  train_cmd->add_option("--shuffle-seed", tr.config.shuffle_seed, "Minibatch shuffle seed");
  train_cmd->add_option("--epochs", tr.config.epochs, "Epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tr.config.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--feature-lr-scale", tr.config.feature_lr_scale, "Learning-rate multiplier for the CNN")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", tr.config.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--limit", tr.limit, "Use only the first N training samples");
  train_cmd->add_flag("--no-val", tr.no_val, "Skip validation accuracy");

  ExplainArgs ex;
  auto* explain_cmd = app.add_subcommand("explain", "Write saliency maps and token scores for one sample");
  explain_cmd->add_option("--ckpt", ex.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  auto* data_opt = explain_cmd->add_option("--data", ex.data, "Dataset directory (uses val.svqa)")->check(CLI::ExistingDirectory);
  explain_cmd->add_option("--index", ex.index, "Validation sample index")->needs(data_opt);
  auto* image_opt = explain_cmd->add_option("--image", ex.image, "Binary PPM scene")->check(CLI::ExistingFile);
  auto* question_opt = explain_cmd->add_option("--question", ex.question, "Question text");
  image_opt->needs(question_opt)->excludes(data_opt);
  question_opt->needs(image_opt);
  explain_cmd->add_option("--mode", ex.mode, "Backward mode")->check(CLI::IsMember({"guided", "standard"}));
  explain_cmd->add_option("--out", ex.out, "Output directory")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy and saliency-localization metrics as one JSON line");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", ev.split, "Split name")->check(CLI::IsMember({"train", "val"}));
  eval_cmd->add_option("--mode", ev.mode, "Backward mode for token scores")->check(CLI::IsMember({"guided", "standard"}));
  eval_cmd->add_flag("--no-heatmap", ev.no_heatmap, "Skip pixel-heatmap metrics");

  SelfcheckOptions sc;
  bool inject_fault = false;
  auto* self_cmd = app.add_subcommand("selfcheck", "Gradient checks, oracles and explanation identities");
  self_cmd->add_option("--seeds", sc.seeds, "Random instances per check")->check(CLI::PositiveNumber);
  self_cmd->add_option("--base-seed", sc.base_seed, "First seed");
  self_cmd->add_flag("--inject-relu-fault", inject_fault)->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(tr, out);
    if (*explain_cmd) {
      if (ex.image.empty() && ex.data.empty()) throw UsageError("explain needs --data/--index or --image/--question");
      return cmd_explain(ex, out);
    }
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*self_cmd) return cmd_selfcheck(sc, inject_fault, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace mlbviz::cli
