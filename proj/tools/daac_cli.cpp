// daac command-line entry point.
//
// Every subcommand reads its inputs from a run directory (--data, defaulting
// to --out) and writes artifacts plus the resolved config.json into --out.
// Exit codes: 0 success, 1 validation/config error or missing artifact,
// 2 runtime or training error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "daac/binary_io.hpp"
#include "daac/errors.hpp"
#include "daac/pipeline.hpp"
#include "daac/runtime.hpp"

using namespace daac;
using namespace daac::pipe;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;
  std::string out;
  std::string data;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool no_adversarial = false;
  bool no_de = false;
  std::string mode;
  std::string sweep;
  std::size_t jobs = 1;
};

RunConfig resolve_config(const Options& o) {
  json j = json::object();
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) throw ConfigError("config file not found: " + o.config_path);
    try {
      j = json::parse(io::read_text(o.config_path));
    } catch (const json::parse_error& e) {
      throw ConfigError("cannot parse " + o.config_path + ": " + e.what());
    }
  }
  json full = RunConfig::from_json(j).to_json();
  std::vector<std::string> sets = o.sets;
  if (o.no_de) sets.push_back("de.enabled=false");
  if (o.no_adversarial) sets.push_back("de.adversarial=false");
  if (!o.mode.empty()) sets.push_back("de.mode=" + o.mode);
  if (o.seed) sets.push_back("seeds=[" + std::to_string(*o.seed) + "]");
  return RunConfig::from_json(apply_overrides(full, sets));
}

fs::path out_dir(const Options& o, const std::string& command) {
  if (!o.out.empty()) return o.out;
  const char* root = std::getenv("DAAC_OUT_ROOT");
  return fs::path(root && *root ? root : "runs") / command;
}

fs::path data_dir(const Options& o, const fs::path& out) { return o.data.empty() ? out : fs::path(o.data); }

fs::path require(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ConfigError("missing " + what + ": " + p.string());
  return p;
}

void write_json(const fs::path& p, const json& j) { io::write_text(p, j.dump(2) + "\n"); }

// Augmented corpus if a previous stage wrote one, else the prepared target.
data::Corpus input_corpus(const RunConfig& c, const fs::path& data, std::uint64_t seed) {
  if (fs::exists(data / "corpus")) return data::load_corpus(data / "corpus");
  if (fs::exists(data / "target")) return data::load_corpus(data / "target");
  return prepare_data(c, seed).target;
}

PreparedData input_data(const RunConfig& c, const fs::path& data, std::uint64_t seed) {
  if (fs::exists(data / "target") && fs::exists(data / "external")) {
    return {data::load_corpus(data / "target"), data::load_corpus(data / "external")};
  }
  return prepare_data(c, seed);
}

void keep_corpus(const data::Corpus& corpus, const fs::path& data, const fs::path& out) {
  if (fs::exists(out / "corpus") && fs::equivalent(data, out)) return;
  data::save_corpus(corpus, out / "corpus");
}

json stage1_report(const de::DeModel& model, const data::Corpus& target, const data::Corpus& augmented,
                   const fs::path& out) {
  json m = {{"subjects_used", model.subjects_used}};
  std::set<int> classes;
  for (const auto& s : target.samples) classes.insert(s.label);
  if (classes.size() == 2) {
    auto rep = de::anomaly_report(model.generator, target);
    m["anomaly_auroc"] = rep.auroc;
    io::write_text(out / "error_histogram.csv", eval::error_histogram_csv(rep.histogram));
    auto mi = eval::mi_ranking(augmented);
    io::write_text(out / "mi_table.csv", eval::mi_table_csv(mi));
    m["mi_top_channel"] = mi.front().channel;
    m["mi_top_channel_is_discrepancy"] = mi.front().discrepancy;
  }
  return m;
}

int cmd_gen_data(const RunConfig& c, const fs::path& out) {
  auto p = prepare_data(c, c.seeds.front());
  data::save_corpus(p.target, out / "target");
  data::save_corpus(p.external, out / "external");
  auto count = [](const data::Corpus& c, data::Split s) { return c.indices(s).size(); };
  write_json(out / "metrics.json", {{"target_samples", p.target.size()},
                                    {"external_samples", p.external.size()},
                                    {"train", count(p.target, data::Split::kTrain)},
                                    {"val", count(p.target, data::Split::kVal)},
                                    {"test", count(p.target, data::Split::kTest)},
                                    {"config_hash", config_hash(c.to_json())}});
  return 0;
}

int cmd_train_de(const RunConfig& c, const fs::path& data, const fs::path& out) {
  const auto seed = c.seeds.front();
  auto p = input_data(c, data, seed);
  auto model = train_stage1(c, p.external, seed);
  de::save_de(model, out / "de");
  auto augmented = augment_target(c, model, p.target);
  data::save_corpus(augmented, out / "corpus");
  write_json(out / "metrics.json", stage1_report(model, p.target, augmented, out));
  return 0;
}

int cmd_score(const RunConfig& c, const fs::path& data, const fs::path& out) {
  auto model = de::load_de(require(data / "de", "stage-1 checkpoint"));
  auto target = input_data(c, data, c.seeds.front()).target;
  auto augmented = augment_target(c, model, target);
  data::save_corpus(augmented, out / "corpus");
  json m = stage1_report(model, target, augmented, out);
  m["mode"] = de::mode_name(c.de_mode);
  write_json(out / "metrics.json", m);
  return 0;
}

int cmd_pretrain(const RunConfig& c, const fs::path& data, const fs::path& out) {
  const auto seed = c.seeds.front();
  auto corpus = input_corpus(c, data, seed);
  auto pre = run_stage2(c, corpus, seed);
  save_encoder(pre.encoder, out / "encoder");
  io::write_text(out / "pretrain_log.csv", pretrain_log_csv(pre.steps));
  io::write_text(out / "pretrain_epochs.csv", pretrain_epochs_csv(pre));
  keep_corpus(corpus, data, out);
  write_json(out / "metrics.json", {{"seed", seed},
                                    {"best_epoch", pre.best_epoch},
                                    {"train_epoch_loss", pre.train_epoch_loss},
                                    {"val_epoch_loss", pre.val_epoch_loss}});
  return 0;
}

int cmd_finetune(const RunConfig& c, const fs::path& data, const fs::path& out) {
  const auto seed = c.seeds.front();
  auto encoder = load_encoder(require(data / "encoder", "stage-2 checkpoint"));
  auto corpus = input_corpus(c, data, seed);
  auto ft = run_stage3(c, encoder, corpus, seed);
  save_classifier(ft, out / "classifier");
  io::write_text(out / "finetune_log.csv", ft.log_csv);
  keep_corpus(corpus, data, out);
  json m = ft.test.to_json();
  m["seed"] = seed;
  m["n_labeled"] = ft.n_labeled;
  m["trainable_parameters"] = ft.trainable_parameters;
  write_json(out / "metrics.json", m);
  return 0;
}

int cmd_eval(const RunConfig& c, const fs::path& data, const fs::path& out) {
  auto clf = load_classifier(require(data / "classifier", "classifier checkpoint"));
  auto corpus = data::load_corpus(require(data / "corpus", "corpus"));
  json m = {{"test", evaluate_split(clf.encoder, clf.head, corpus, data::Split::kTest).to_json()},
            {"val", evaluate_split(clf.encoder, clf.head, corpus, data::Split::kVal).to_json()},
            {"config_hash", config_hash(c.to_json())}};
  write_json(out / "metrics.json", m);
  return 0;
}

int cmd_run(const RunConfig& c, const fs::path& out) {
  std::vector<SeedRun> runs;
  for (auto seed : c.seeds) runs.push_back(run_seed(c, seed, out / ("seed_" + std::to_string(seed))));
  write_json(out / "metrics.json", run_metrics_json(c, runs));
  return 0;
}

int cmd_ablate(const RunConfig& c, const Options& o, const fs::path& out) {
  const Sweep sweep = parse_sweep(o.sweep);
  auto cells = run_ablation(c, sweep, std::max<std::size_t>(o.jobs, 1));
  io::write_text(out / ("ablation_" + sweep_name(sweep) + ".csv"), ablation_csv(sweep, cells));
  json m = {{"sweep", sweep_name(sweep)}, {"config_hash", config_hash(c.to_json())}, {"cells", json::array()}};
  for (const auto& cell : cells) {
    json per = json::array();
    for (const auto& r : cell.reports) per.push_back(r.to_json());
    m["cells"].push_back({{"name", cell.name},
                          {"overrides", cell.overrides},
                          {"seeds", per},
                          {"aggregate", eval::aggregate(cell.reports)}});
  }
  write_json(out / "metrics.json", m);
  return 0;
}

int cmd_export(const RunConfig& c, const fs::path& data, const fs::path& out) {
  auto encoder = load_encoder(require(data / "encoder", "stage-2 checkpoint"));
  auto corpus = input_corpus(c, data, c.seeds.front());
  auto table = compute_embeddings(encoder, corpus);
  io::write_text(out / "embeddings.csv", embeddings_csv(table));
  auto sep = view_separation(table);
  write_json(out / "metrics.json", {{"inter_view_centroid_distance", sep.inter_view_centroid_distance},
                                    {"intra_view_dispersion", sep.intra_view_dispersion}});
  return 0;
}

void common_flags(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config_path, "JSON run config (missing keys take defaults)");
  sub->add_option("--out", o.out, "output run directory (default $DAAC_OUT_ROOT/<command>)");
  sub->add_option("--data", o.data, "input run directory (default: --out)");
  sub->add_option("--set", o.sets, "dotted override, e.g. loss.lambda_v=0")->take_all();
  sub->add_option("--seed", o.seed, "run with this single seed");
  sub->add_flag("--no-adversarial", o.no_adversarial, "train the estimator on reconstruction only");
  sub->add_flag("--no-de", o.no_de, "skip the discrepancy estimator");
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Discrepancy-aware contrastive learning for hierarchical biosignals"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "synthesize and split the target and external corpora"},
      {"train-de", "train the discrepancy estimator and augment the target"},
      {"score", "augment the target with a trained estimator"},
      {"pretrain", "contrastive pretraining of the encoder"},
      {"finetune", "train the classifier on labelled data"},
      {"eval", "evaluate a trained classifier"},
      {"run", "all stages for every configured seed"},
      {"ablate", "run an ablation sweep"},
      {"export-embeddings", "write per-sample embeddings"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    common_flags(sub, o);
    if (name == "score") sub->add_option("--mode", o.mode, "sequence_scalar, channel_vector, pointwise_sequence or cluster_distance");
    if (name == "ablate") {
      sub->add_option("--sweep", o.sweep, "blocks, weights, external_ratio or discrepancy_mode")->required();
      sub->add_option("--jobs", o.jobs, "parallel workers");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const RunConfig config = resolve_config(o);
    const fs::path out = out_dir(o, command);
    const fs::path data = data_dir(o, out);
    fs::create_directories(out);
    write_json(out / "config.json", config.to_json());
    if (command == "gen-data") return cmd_gen_data(config, out);
    if (command == "train-de") return cmd_train_de(config, data, out);
    if (command == "score") return cmd_score(config, data, out);
    if (command == "pretrain") return cmd_pretrain(config, data, out);
    if (command == "finetune") return cmd_finetune(config, data, out);
    if (command == "eval") return cmd_eval(config, data, out);
    if (command == "run") return cmd_run(config, out);
    if (command == "ablate") return cmd_ablate(config, o, out);
    return cmd_export(config, data, out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
