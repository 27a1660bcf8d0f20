#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "daac/errors.hpp"
#include "daac/pipeline.hpp"

using namespace daac;
using namespace daac::pipe;
namespace fs = std::filesystem;

namespace {

// Small enough that a full run takes well under a second.
json tiny_config() {
  json synth = {{"n_subjects", 8}, {"trials_per_subject", 2}, {"epochs_per_trial", 3},
                {"channels", 2},   {"length", 32},            {"seed", 1}};
  json ext = synth;
  ext["seed"] = 1000;
  ext["normal_only"] = true;
  return {{"seeds", {0}},
          {"data", {{"target_synth", synth}, {"external_synth", ext}}},
          {"split", {{"mode", "subject_dependent"}}},
          {"de", {{"hidden", 4}, {"latent_dim", 4}, {"n_down", 2}, {"epochs", 2}, {"clusters", 2}}},
          {"encoder", {{"output_dims", 8}, {"hidden_dims", 4}, {"depth", 2}, {"n_heads", 2}, {"head_dim", 4}}},
          {"pretrain", {{"epochs", 2}, {"batch", 8}}},
          {"finetune", {{"epochs", 2}, {"batch", 8}}}};
}

RunConfig tiny() { return RunConfig::from_json(tiny_config()); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("config round trip and strict keys") {
  auto c = tiny();
  auto again = RunConfig::from_json(c.to_json());
  CHECK(again.to_json() == c.to_json());
  CHECK(config_hash(c.to_json()) == config_hash(again.to_json()));
  CHECK(config_hash(c.to_json()).size() == 16);

  json bad = tiny_config();
  bad["pretrain"]["epoch"] = 3;
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
  bad = tiny_config();
  bad["finetune"]["label_fraction"] = 0.0;
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
  bad = tiny_config();
  bad["seeds"] = json::array();
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
}

TEST_CASE("dotted overrides") {
  auto j = apply_overrides(tiny_config(), {"loss.lambda_v=0", "finetune.mode=PFT", "de.mode=channel_vector"});
  auto c = RunConfig::from_json(j);
  CHECK(c.weights.view == 0.0);
  CHECK(c.finetune.mode == FinetuneMode::kPartial);
  CHECK(c.de_mode == de::DiscrepancyMode::kChannelVector);
  CHECK_THROWS_AS(apply_overrides(tiny_config(), {"loss.lambda_x=1"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(tiny_config(), {"nosuch=1"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(tiny_config(), {"loss=1"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(tiny_config(), {"loss.tau"}), ConfigError);
}

TEST_CASE("hierarchical batches mix subjects and trials") {
  auto c = tiny();
  auto prep = prepare_data(c, 0);
  const auto train = prep.target.indices(data::Split::kTrain);
  nn::Rng rng(3);
  auto batches = hierarchical_batches(prep.target, train, 8, 4, rng);
  CHECK(batches.size() == (train.size() + 7) / 8);
  for (const auto& b : batches) {
    std::map<std::int32_t, std::set<std::int32_t>> trials;
    for (auto i : b) trials[prep.target.samples[i].subject_id].insert(prep.target.samples[i].trial_id);
    CHECK(trials.size() >= 2);
    std::size_t multi = 0;
    for (const auto& [s, t] : trials) multi += t.size() >= 2;
    CHECK(multi >= 1);
  }
  auto one = data::subset(prep.target, {0, 1, 2});
  nn::Rng rng2(1);
  CHECK_THROWS_AS(hierarchical_batches(one, {0, 1, 2}, 8, 4, rng2), DegenerateBatchError);
}

TEST_CASE("label subsets") {
  auto c = tiny();
  c.target_synth.n_subjects = 20;
  auto prep = prepare_data(c, 0);
  const auto train = prep.target.indices(data::Split::kTrain);
  for (double f : {0.1, 0.25, 1.0}) {
    auto sub = label_subset(prep.target, train, f, 2);
    CHECK(sub.size() == static_cast<std::size_t>(std::floor(f * train.size() + 1e-9)));
    std::set<int> classes;
    for (auto i : sub) classes.insert(prep.target.samples[i].label);
    CHECK(classes.size() == 2);
    CHECK(label_subset(prep.target, train, f, 2) == sub);
  }
  CHECK_THROWS_AS(label_subset(prep.target, train, 0.0, 1), ConfigError);
}

TEST_CASE("sweep enumerations") {
  auto blocks = sweep_cells(Sweep::kBlocks);
  REQUIRE(blocks.size() == 8);
  CHECK(blocks.front().name == "O");
  CHECK(blocks.back().name == "P+R+S+O+V");
  CHECK(blocks.back().overrides["loss.lambda_v"] == 2.0);
  CHECK(blocks[6].overrides["loss.lambda_v"] == 0.0);

  auto weights = sweep_cells(Sweep::kWeights);
  std::vector<std::string> names;
  for (const auto& c : weights) names.push_back(c.name);
  CHECK(names == std::vector<std::string>{"1,1,1,1,0", "1,1,1,1,1", "1,1,1,1,2", "1,1,1,1,3", "1,1,1,2,1",
                                          "1,1,2,1,1", "1,2,1,1,1", "2,1,1,1,1"});
  CHECK(sweep_cells(Sweep::kExternalRatio).size() == 4);
  CHECK(sweep_cells(Sweep::kDiscrepancyMode).size() == 4);
  CHECK_THROWS_AS(parse_sweep("everything"), ConfigError);
  for (auto s : {Sweep::kBlocks, Sweep::kWeights, Sweep::kExternalRatio, Sweep::kDiscrepancyMode}) {
    CHECK(parse_sweep(sweep_name(s)) == s);
    // Every override addresses a real key.
    for (const auto& cell : sweep_cells(s)) {
      std::vector<std::string> list;
      for (const auto& [k, v] : cell.overrides.items()) list.push_back(k + "=" + v.dump());
      CHECK_NOTHROW(RunConfig::from_json(apply_overrides(tiny_config(), list)));
    }
  }
}

TEST_CASE("stage 1 augments with the configured mode") {
  auto c = tiny();
  auto prep = prepare_data(c, 0);
  auto model = train_stage1(c, prep.external, 0);
  auto aug = augment_target(c, model, prep.target);
  CHECK(aug.channels == prep.target.channels + 1);
  c.de.external_ratio = 0.05;
  CHECK(train_stage1(c, prep.external, 0).subjects_used.size() == 1);
}

TEST_CASE("stage 2 is deterministic and never reads labels") {
  auto c = tiny();
  auto prep = prepare_data(c, 0);
  auto a = run_stage2(c, prep.target, 0);
  auto b = run_stage2(c, prep.target, 0);
  auto zeroed = prep.target;
  for (auto& s : zeroed.samples) s.label = 0;
  auto z = run_stage2(c, zeroed, 0);
  const auto& pa = a.encoder.params().items();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto x = pa[i].second.data();
    CHECK(std::equal(x.begin(), x.end(), b.encoder.params().items()[i].second.data().begin()));
    CHECK(std::equal(x.begin(), x.end(), z.encoder.params().items()[i].second.data().begin()));
  }
  CHECK(pretrain_log_csv(a.steps) == pretrain_log_csv(z.steps));
  CHECK(pretrain_log_csv(a.steps).rfind("step,L_S,L_R,L_E,L_T,L_IRV,L_IAV,total,skipped_anchors\n", 0) == 0);
}

TEST_CASE("stage 3 trains only the head under PFT") {
  auto c = tiny();
  c.finetune.mode = FinetuneMode::kPartial;
  auto prep = prepare_data(c, 0);
  auto pre = run_stage2(c, prep.target, 0);
  auto ft = run_stage3(c, pre.encoder, prep.target, 0);
  CHECK(ft.trainable_parameters == (8 + 8) * 2 + 2);
  CHECK(ft.test.n_test == prep.target.indices(data::Split::kTest).size());
  const auto& before = pre.encoder.params().items();
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto x = before[i].second.data();
    CHECK(std::equal(x.begin(), x.end(), ft.encoder.params().items()[i].second.data().begin()));
  }
  c.finetune.mode = FinetuneMode::kFull;
  CHECK(run_stage3(c, pre.encoder, prep.target, 0).trainable_parameters ==
        pre.encoder.params().parameter_count() + (8 + 8) * 2 + 2);
}

TEST_CASE("run artifacts are reproducible") {
  auto c = tiny();
  const auto root = fs::temp_directory_path() / "daac_test_pipeline";
  fs::remove_all(root);
  auto a = run_seed(c, 0, root / "a");
  auto b = run_seed(c, 0, root / "b");
  for (const char* f : {"metrics.json", "encoder/params.bin", "classifier/params.bin", "de/params.bin",
                        "corpus/data.bin", "pretrain_log.csv", "finetune_log.csv", "mi_table.csv"}) {
    INFO(f);
    REQUIRE(fs::exists(root / "a" / f));
    CHECK(slurp(root / "a" / f) == slurp(root / "b" / f));
  }
  auto enc = load_encoder(root / "a" / "encoder");
  CHECK(enc.params().parameter_count() > 0);
  CHECK_THROWS_AS(load_encoder(root / "missing"), ConfigError);
  auto clf = load_classifier(root / "a" / "classifier");
  auto prep = data::load_corpus(root / "a" / "corpus");
  auto rep = evaluate_split(clf.encoder, clf.head, prep, data::Split::kTest);
  CHECK(rep.to_json() == a.metrics.to_json());
  auto agg = run_metrics_json(c, {a, b});
  CHECK(agg["seeds"].size() == 2);
  CHECK(agg["aggregate"]["f1"]["n"] == 2);
  fs::remove_all(root);
}

TEST_CASE("ablation cells aggregate one run per seed") {
  auto c = tiny();
  c.seeds = {0, 1};
  auto cells = run_ablation(c, Sweep::kExternalRatio, 2);
  REQUIRE(cells.size() == 4);
  for (const auto& cell : cells) CHECK(cell.reports.size() == 2);
  auto csv = ablation_csv(Sweep::kExternalRatio, cells);
  CHECK(csv.rfind("sweep,cell,n_seeds,accuracy_mean,accuracy_std", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  // Threads do not change results.
  auto serial = run_ablation(c, Sweep::kExternalRatio, 1);
  CHECK(ablation_csv(Sweep::kExternalRatio, serial) == csv);
}

TEST_CASE("embedding export") {
  auto c = tiny();
  auto prep = prepare_data(c, 0);
  auto pre = run_stage2(c, prep.target, 0);
  auto table = compute_embeddings(pre.encoder, prep.target);
  CHECK(table.sample_ids.size() == prep.target.size());
  CHECK(table.views_pooled[0].size() == 8);
  auto csv = embeddings_csv(table);
  CHECK(csv == embeddings_csv(compute_embeddings(pre.encoder, prep.target)));
  const auto header = csv.substr(0, csv.find('\n'));
  CHECK(header.rfind("sample_id,subject_id,label,h_0", 0) == 0);
  CHECK(header.find("g1_3") != std::string::npos);
  CHECK(header.substr(header.size() - 8) == ",pc1,pc2");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(prep.target.size() + 1));
  auto sep = view_separation(table);
  CHECK(sep.inter_view_centroid_distance >= 0.0);
  CHECK(sep.intra_view_dispersion >= 0.0);
}
