#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include "doctest.h"
#include "epccg/error.hpp"
#include "epccg/pipeline.hpp"
#include "test_util.hpp"

using namespace epccg;

namespace {

struct Run {
  int code;
  std::string err;
};

Run run_cli(const std::string& args, const TempDir& dir) {
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string(EPCCG_CLI) + " " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return {WEXITSTATUS(status), read_file(err)};
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  TempDir dir("cli");
  const auto unknown = run_cli("frobnicate", dir);
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("frobnicate") != std::string::npos);
  CHECK(run_cli("", dir).code == 1);
  CHECK(run_cli("eval --generated x", dir).code == 1);
  CHECK(run_cli("pipeline --config " + (dir / "missing.json").string(), dir).code == 1);
}

TEST_CASE("synth, vocab and an eval line-count mismatch") {
  TempDir dir("cli");
  write_file(dir / "spec.json", R"({"num_aspects": 2, "docs_per_aspect": 10, "seed": 3})");
  REQUIRE(run_cli("-q synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "corpus").string(), dir).code == 0);
  const Corpus c = load_corpus(dir / "corpus");
  CHECK(c.copies().size() == 20);
  CHECK(read_file(dir / "corpus" / "gold.jsonl").find("\"aspect\"") != std::string::npos);

  REQUIRE(run_cli("-q vocab --corpus " + (dir / "corpus").string() + " --out " + (dir / "vocab.json").string(), dir)
              .code == 0);
  CHECK(std::filesystem::exists(dir / "vocab.tsv"));

  std::vector<GenerationLine> gens(3);
  for (std::size_t i = 0; i < gens.size(); ++i) gens[i].generation = {"S" + std::to_string(i), "battery", "text"};
  write_generations(gens, dir / "gen.jsonl");
  write_references({{"S0", "battery", "text"}, {"S1", "battery", "text"}}, dir / "refs.jsonl");
  const auto r = run_cli("eval --generated " + (dir / "gen.jsonl").string() + " --references " +
                             (dir / "refs.jsonl").string() + " --vocab " + (dir / "vocab.json").string() + " --out " +
                             (dir / "report.json").string(),
                         dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("3 generated") != std::string::npos);
  CHECK(r.err.find("2 references") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "report.json"));

  write_references({{"S0", "battery", "text"}, {"S1", "battery", "text"}, {"S2", "battery", "text"}},
                   dir / "refs.jsonl");
  CHECK(run_cli("eval --generated " + (dir / "gen.jsonl").string() + " --references " + (dir / "refs.jsonl").string() +
                    " --vocab " + (dir / "vocab.json").string() + " --out " + (dir / "report.json").string(),
                dir)
            .code == 0);
  const auto rep = nlohmann::json::parse(read_file(dir / "report.json"));
  CHECK(rep.at("rouge_1").at("f1").get<double>() == doctest::Approx(1.0));
}

TEST_CASE("pipeline config parsing") {
  TempDir dir("cli");
  write_file(dir / "stop.txt", "the\na\n");
  const nlohmann::json j = {{"output_dir", "run"},
                            {"stopwords", "stop.txt"},
                            {"seed", 10},
                            {"aspects", {{"grid", {2, 3}}, {"alpha", 0.1}}},
                            {"generate", {{"decode", "topk:5:0.8"}}}};
  const PipelineConfig c = pipeline_config_from_json(j, dir.path());
  CHECK(c.output_dir == dir / "run");
  CHECK(c.stopwords == std::set<std::string>{"a", "the"});
  CHECK(c.vocab.seed.stopwords == c.stopwords);
  CHECK(c.aspects.grid == std::vector<int>{2, 3});
  CHECK(c.aspects.alpha == 0.1);
  CHECK(c.synth.seed == 10);
  CHECK(c.split_seed == 11);
  CHECK(c.aspects.seed == 12);
  CHECK(c.model.seed == 13);
  CHECK(c.mlm.seed == 14);
  CHECK(c.finetune.seed == 15);
  CHECK(c.generate.gen.seed == 16);

  const PipelineConfig o = pipeline_config_from_json(j, dir.path(), 100);
  CHECK(o.synth.seed == 100);
  CHECK(o.generate.gen.seed == 106);
  CHECK(config_hash(o.source) != config_hash(c.source));

  CHECK_THROWS_AS(pipeline_config_from_json({{"stopwords", "nope.txt"}}, dir.path()), Error);
  CHECK_THROWS_AS(pipeline_config_from_json({{"generate", {{"decode", "beam"}}}}, dir.path()), ConfigError);
}

TEST_CASE("config hash") {
  const auto a = nlohmann::json::parse(R"({"b": 1, "a": [1, 2]})");
  const auto b = nlohmann::json::parse(R"({"a": [1, 2], "b": 1})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  CHECK(config_hash(a) != config_hash(nlohmann::json::parse(R"({"a": [2, 1], "b": 1})")));
}
