#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "mla/analysis/analysis.hpp"
#include "mla/cli/cli.hpp"
#include "mla/explain/explainers.hpp"
#include "mla/graph/attention_dag.hpp"
#include "mla/model/checkpoint.hpp"
#include "mla/training/manifest.hpp"

using namespace mla;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::initializer_list<std::string> args) {
  std::vector<std::string> owned{"mla"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : owned) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mla-cli-" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Result train_tiny(const fs::path& out, const std::string& seed) {
  return invoke({"train", "--data", "synth", "--samples", "200", "--synth-groups", "3", "--features-per-group", "2",
              "--layers", "1", "--heads", "2", "--d-model", "8", "--d-ff", "16", "--epochs", "2", "--batch-size", "32",
              "--seed", seed, "--out", out.string()});
}

Result distill_tiny(const fs::path& out, const fs::path& teacher, const std::string& extra_flag,
                    const std::string& extra_value) {
  return invoke({"distill", "--teacher", teacher.string(), "--layers", "2", "--d-model", "8", "--d-ff", "16", "--epochs", "2",
              "--batch-size", "32", "--seed", "1", extra_flag, extra_value, "--out", out.string()});
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and usage errors") {
    const Result help = invoke({"--help"});
    CHECK(help.code == 0);
    for (const char* sub : {"train", "distill", "explain", "report", "prepare"}) CHECK(help.out.find(sub) != std::string::npos);
    const Result train_help = invoke({"train", "--help"});
    CHECK(train_help.code == 0);
    for (const char* flag : {"--data", "--layers", "--heads", "--epochs", "--seed", "--out"}) {
      CHECK(train_help.out.find(flag) != std::string::npos);
    }
    CHECK(invoke({"train", "--no-such-flag"}).code == 1);
    CHECK(invoke({"distill"}).code == 1);
    CHECK(invoke({}).code == 1);
  }

  TEST_CASE("the installed binary runs") {
    const char* exe = std::getenv("MLA_CLI");
    if (exe == nullptr) return;
    CHECK(std::system((std::string(exe) + " --help > /dev/null").c_str()) == 0);
  }

  TEST_CASE("missing inputs fail without writing output") {
    const fs::path out = scratch("missing");
    const Result r = invoke({"distill", "--teacher", "/nonexistent/manifest.json", "--out", out.string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("error") != std::string::npos);
    CHECK_FALSE(fs::exists(out));
    CHECK(invoke({"report", "--inputs", "/nonexistent/dir", "--out", out.string()}).code == 2);
    CHECK(invoke({"train", "--data", "csv", "--input", "/nonexistent.csv", "--out", out.string()}).code != 0);
    CHECK_FALSE(fs::exists(out));
    CHECK(invoke({"train", "--data", "synth", "--dropout", "1.5", "--out", out.string()}).code == 1);
    CHECK_FALSE(fs::exists(out));
  }

  TEST_CASE("training is reproducible byte for byte") {
    const fs::path a = scratch("train-a"), b = scratch("train-b");
    REQUIRE(train_tiny(a, "3").code == 0);
    REQUIRE(train_tiny(b, "3").code == 0);
    CHECK(slurp(a / "teacher-seed3" / "checkpoint.json") == slurp(b / "teacher-seed3" / "checkpoint.json"));
    CHECK(slurp(a / "teacher-seed3" / "manifest.json") == slurp(b / "teacher-seed3" / "manifest.json"));
    fs::remove_all(a);
    fs::remove_all(b);
  }

  TEST_CASE("distill, explain, report") {
    const fs::path root = scratch("pipeline");
    REQUIRE(train_tiny(root, "5").code == 0);
    const fs::path teacher = root / "teacher-seed5";

    SUBCASE("single-value lambda sweep equals a fixed lambda") {
      const fs::path a = scratch("lambda-a"), b = scratch("lambda-b");
      REQUIRE(distill_tiny(a, teacher, "--lambda", "0.02").code == 0);
      REQUIRE(distill_tiny(b, teacher, "--lambdas", "0.02").code == 0);
      CHECK(slurp(a / "student-seed1" / "checkpoint.json") == slurp(b / "student-seed1" / "checkpoint.json"));
      const auto manifest = training::load_manifest(b / "student-seed1" / "manifest.json");
      CHECK(manifest.train_config.lambda == 0.02);
      CHECK(manifest.lambda_candidates == std::vector<double>{0.02});
      fs::remove_all(a);
      fs::remove_all(b);
    }

    SUBCASE("explanations and reports") {
      REQUIRE(distill_tiny(root, teacher, "--lambda", "0.01").code == 0);
      const fs::path student = root / "student-seed1";

      const Result bad = invoke({"explain", "--student", student.string(), "--methods", "mla,lime", "--out", root.string()});
      CHECK(bad.code != 0);
      CHECK(bad.err.find("mla, ll, sa, sh") != std::string::npos);

      REQUIRE(invoke({"explain", "--student", student.string(), "--methods", "mla", "--out", root.string()}).code == 0);
      const fs::path mla_file = root / "explanations" / "mla-seed1.jsonl";
      REQUIRE(fs::exists(mla_file));
      const auto set = explain::load_explanations(mla_file);
      CHECK(set.records.size() == 40);

      const fs::path single = scratch("single-report");
      REQUIRE(invoke({"report", "--inputs", mla_file.string(), "--out", single.string()}).code == 0);
      std::vector<std::string> names;
      for (const auto& e : fs::directory_iterator(single / "report")) names.push_back(e.path().filename().string());
      std::sort(names.begin(), names.end());
      CHECK(names == std::vector<std::string>{"distribution_mla.csv", "manifest.json"});
      fs::remove_all(single);

      // One sample's graph dump matches a direct library call.
      const std::size_t id = set.records.front().sample_id;
      REQUIRE(invoke({"explain", "--student", student.string(), "--methods", "mla,ll", "--sample-id", std::to_string(id),
                   "--out", root.string()})
                  .code == 0);
      const fs::path sdir = root / "samples" / ("sample-" + std::to_string(id) + "-seed1");
      const model::Model model = model::load_checkpoint(student / "checkpoint.json");
      const data::PreparedData data = cli::load_data_source(training::load_manifest(student / "manifest.json").data_source);
      const auto row = std::find(data.dataset.sample_ids.begin(), data.dataset.sample_ids.end(), id) -
                       data.dataset.sample_ids.begin();
      const model::Prediction p = model::predict(data.dataset.features.row(static_cast<std::size_t>(row)), model);
      const graph::AttentionDag dag = graph::AttentionDag::build(p.attention);
      CHECK(slurp(sdir / "dag.txt") == dag.dump(data.schema.names()));
      CHECK(slurp(sdir / "heatmap_mla.csv") ==
            analysis::render_table(
                analysis::heatmap_table("heatmap_mla", graph::path_probability_matrix(dag), data.schema.names())));
      CHECK(fs::exists(sdir / "attention_layer2_head1.csv"));
      CHECK(explain::load_explanations(root / "explanations" / "ll-seed1.jsonl").records.size() == 1);

      CHECK(invoke({"explain", "--student", student.string(), "--sample-id", "999999", "--out", root.string()}).code == 2);
    }
    fs::remove_all(root);
  }

  TEST_CASE("student defaults") {
    const fs::path root = scratch("defaults");
    REQUIRE(invoke({"train", "--data", "synth", "--samples", "120", "--layers", "1", "--d-model", "8", "--d-ff", "16",
                 "--epochs", "1", "--out", root.string()})
                .code == 0);
    REQUIRE(invoke({"distill", "--teacher", (root / "teacher-seed0").string(), "--epochs", "1", "--out", root.string()}).code == 0);
    const auto m = training::load_manifest(root / "student-seed0" / "manifest.json");
    CHECK(m.kind == "student");
    CHECK(m.model_config.layers == 4);
    CHECK(m.model_config.heads == 1);
    CHECK(m.model_config.d_model == 64);
    CHECK(m.model_config.d_ff == 128);
    CHECK(m.model_config.dropout == 0.1);
    CHECK(m.train_config.temperature == 2.0);
    CHECK(m.train_config.batch_size == 128);
    CHECK(m.train_config.lambda == 0.01);
    CHECK(m.teacher_manifest == "../teacher-seed0/manifest.json");
    fs::remove_all(root);
  }

  TEST_CASE("prepare writes a loadable cache") {
    const fs::path root = scratch("prepare");
    REQUIRE(invoke({"prepare", "--data", "synth", "--samples", "50", "--out", root.string()}).code == 0);
    const auto data = data::load_dataset(root / "dataset.json");
    CHECK(data.dataset.size() == 50);
    fs::remove_all(root);
  }
}
