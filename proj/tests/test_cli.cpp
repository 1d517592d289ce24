#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "json.hpp"
#include "latmix/dataset.hpp"
#include "latmix/evaluator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = LATMIX_CLI_PATH;

int run(const std::string& args, const fs::path& stdout_file = {}) {
  std::string cmd = kCli + " " + args;
  if (!stdout_file.empty()) {
    cmd += " > " + stdout_file.string() + " 2>/dev/null";
  } else {
    cmd += " > /dev/null 2>&1";
  }
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path workdir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("latmix_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small-but-real training setup shared by the CLI tests.
const std::string kTinyTrainFlags =
    " --hidden 8,8 --centers 3 --rounds 4:1e-2,4:1e-3 --ensemble 2";

}  // namespace

TEST_CASE("generate writes dataset and sidecar, identically on reruns", "[cli]") {
  const fs::path dir = workdir("generate");
  REQUIRE(run("generate --preset mcs-sweep --count 200 --seed 5 --out " +
              (dir / "a").string()) == 0);
  REQUIRE(fs::exists(dir / "a" / "dataset.csv"));
  REQUIRE(fs::exists(dir / "a" / "ground_truth.json"));
  REQUIRE(run("generate --preset mcs-sweep --count 200 --seed 5 --out " +
              (dir / "b").string()) == 0);
  REQUIRE(slurp(dir / "a" / "dataset.csv") == slurp(dir / "b" / "dataset.csv"));
  REQUIRE(slurp(dir / "a" / "ground_truth.json") ==
          slurp(dir / "b" / "ground_truth.json"));

  // Row counts per condition match the spec.
  const latmix::Dataset ds = latmix::load_csv((dir / "a" / "dataset.csv").string());
  REQUIRE(ds.size() == 600);
  int per_condition[8] = {0};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    per_condition[static_cast<int>(ds.conditions[i])]++;
  }
  REQUIRE(per_condition[3] == 200);
  REQUIRE(per_condition[5] == 200);
  REQUIRE(per_condition[7] == 200);
}

TEST_CASE("generate accepts an explicit spec file", "[cli]") {
  const fs::path dir = workdir("genspec");
  const latmix::SyntheticSpec spec = latmix::make_heavy_tail_spec(150, 9);
  {
    std::ofstream out(dir / "spec.json");
    out << latmix::synthetic_spec_to_json(spec).dump(2);
  }
  REQUIRE(run("generate --spec " + (dir / "spec.json").string() + " --out " +
              (dir / "out").string()) == 0);
  const latmix::Dataset ds =
      latmix::load_csv((dir / "out" / "dataset.csv").string());
  REQUIRE(ds.size() == 150);
  REQUIRE(ds.dimension() == 0);

  REQUIRE(run("generate --out " + (dir / "nothing").string()) != 0);
  REQUIRE(run("generate --spec /no/such/file.json --out " +
              (dir / "nothing").string()) != 0);
}

TEST_CASE("train writes one model and trace per member, reproducibly", "[cli]") {
  const fs::path dir = workdir("train");
  REQUIRE(run("generate --preset heavy-tail --count 600 --seed 3 --out " +
              (dir / "data").string()) == 0);
  const std::string data = (dir / "data" / "dataset.csv").string();

  REQUIRE(run("train --data " + data + " --out " + (dir / "m1").string() +
              kTinyTrainFlags + " --seed 9") == 0);
  REQUIRE(fs::exists(dir / "m1" / "model_00.json"));
  REQUIRE(fs::exists(dir / "m1" / "model_01.json"));
  REQUIRE(fs::exists(dir / "m1" / "trace_00.csv"));
  REQUIRE(fs::exists(dir / "m1" / "trace_01.csv"));

  REQUIRE(run("train --data " + data + " --out " + (dir / "m2").string() +
              kTinyTrainFlags + " --seed 9") == 0);
  REQUIRE(slurp(dir / "m1" / "model_00.json") == slurp(dir / "m2" / "model_00.json"));
  REQUIRE(slurp(dir / "m1" / "model_01.json") == slurp(dir / "m2" / "model_01.json"));
  REQUIRE(slurp(dir / "m1" / "trace_00.csv") == slurp(dir / "m2" / "trace_00.csv"));
}

TEST_CASE("train --head gmm emits models with 45 raw outputs", "[cli]") {
  const fs::path dir = workdir("head");
  REQUIRE(run("generate --preset heavy-tail --count 400 --seed 4 --out " +
              (dir / "data").string()) == 0);
  REQUIRE(run("train --data " + (dir / "data" / "dataset.csv").string() +
              " --out " + (dir / "models").string() +
              " --rounds 2:1e-2 --ensemble 1 --head gmm --seed 1") == 0);
  const json model = json::parse(slurp(dir / "models" / "model_00.json"));
  REQUIRE(model.at("head_kind") == "gmm");
  REQUIRE(model.at("layers").back().at("rows") == 45);
}

TEST_CASE("train honors config files with CLI flags taking precedence", "[cli]") {
  const fs::path dir = workdir("config");
  REQUIRE(run("generate --preset heavy-tail --count 400 --seed 6 --out " +
              (dir / "data").string()) == 0);
  {
    std::ofstream out(dir / "cfg.json");
    out << R"({"model": {"hidden_sizes": [8,8], "num_centers": 2, "head": "gmm"},
               "train": {"rounds": [{"epochs": 3, "lr": 1e-2}],
                          "ensemble_size": 1, "seed": 42}})";
  }
  REQUIRE(run("train --data " + (dir / "data" / "dataset.csv").string() +
              " --out " + (dir / "models").string() + " --config " +
              (dir / "cfg.json").string() + " --head gmevm") == 0);
  const json model = json::parse(slurp(dir / "models" / "model_00.json"));
  REQUIRE(model.at("head_kind") == "gmevm");  // flag beat the config file
  REQUIRE(model.at("config").at("num_centers") == 2);
  REQUIRE(model.at("layers").back().at("rows") == 3 * 2 + 3);
}

TEST_CASE("evaluate against analytic truth reports deep-tail metrics", "[cli]") {
  const fs::path dir = workdir("evaltruth");
  REQUIRE(run("generate --preset heavy-tail --count 2000 --seed 11 --out " +
              (dir / "data").string()) == 0);
  REQUIRE(run("train --data " + (dir / "data" / "dataset.csv").string() +
              " --out " + (dir / "models").string() + kTinyTrainFlags +
              " --seed 2") == 0);
  REQUIRE(run("evaluate --models " + (dir / "models").string() + " --truth " +
              (dir / "data" / "ground_truth.json").string() + " --out " +
              (dir / "report").string() + " --levels 1e-2,1e-3,1e-5") == 0);
  const json report = json::parse(slurp(dir / "report" / "report.json"));
  REQUIRE(report.at("kind") == "latmix-report");
  REQUIRE(report.at("seeds").size() == 2);
  const json& metrics = report.at("conditions").at(0).at("metrics");
  REQUIRE(metrics.size() == 3);
  for (const auto& m : metrics) {
    REQUIRE(m.at("available") == true);  // analytic truth has no floor
  }

  // Band ordering holds in the emitted artifacts.
  const latmix::EvaluationReport back =
      latmix::read_report((dir / "report").string());
  for (const auto& cond : back.conditions) {
    for (std::size_t i = 0; i < cond.band.min.probs.size(); ++i) {
      REQUIRE(cond.band.min.probs[i] <= cond.band.avg.probs[i]);
      REQUIRE(cond.band.avg.probs[i] <= cond.band.max.probs[i]);
    }
  }
}

TEST_CASE("evaluate against an empirical set marks unresolvable levels", "[cli]") {
  const fs::path dir = workdir("evaldata");
  REQUIRE(run("generate --preset heavy-tail --count 10000 --seed 21 --out " +
              (dir / "test").string()) == 0);
  REQUIRE(run("generate --preset heavy-tail --count 1500 --seed 22 --out " +
              (dir / "trainset").string()) == 0);
  REQUIRE(run("train --data " + (dir / "trainset" / "dataset.csv").string() +
              " --out " + (dir / "models").string() + kTinyTrainFlags +
              " --seed 5") == 0);
  REQUIRE(run("evaluate --models " + (dir / "models").string() + " --data " +
              (dir / "test" / "dataset.csv").string() + " --out " +
              (dir / "report").string() + " --levels 1e-2,1e-3,1e-5,1e-6") == 0);
  const json report = json::parse(slurp(dir / "report" / "report.json"));
  const json& metrics = report.at("conditions").at(0).at("metrics");
  bool saw_available = false, saw_unavailable = false;
  for (const auto& m : metrics) {
    const double level = m.at("level").get<double>();
    if (level >= 1e-3) {
      REQUIRE(m.at("available") == true);
      saw_available = true;
    }
    if (level < 1e-4) {
      REQUIRE(m.at("available") == false);  // below the 1e4-sample resolution
      saw_unavailable = true;
    }
  }
  REQUIRE(saw_available);
  REQUIRE(saw_unavailable);
}

TEST_CASE("predict roundtrips the median and validates the schema", "[cli]") {
  const fs::path dir = workdir("predict");
  REQUIRE(run("generate --preset mcs-sweep --count 500 --seed 31 --out " +
              (dir / "data").string()) == 0);
  REQUIRE(run("train --data " + (dir / "data" / "dataset.csv").string() +
              " --out " + (dir / "models").string() + kTinyTrainFlags +
              " --seed 3") == 0);
  const std::string model = (dir / "models" / "model_00.json").string();

  REQUIRE(run("predict --model " + model + " --condition mcs=5 --level 0.5",
              dir / "q.txt") == 0);
  const double median = std::stod(slurp(dir / "q.txt"));
  REQUIRE(run("predict --model " + model + " --condition mcs=5 --y " +
              std::to_string(median), dir / "p.txt") == 0);
  const double ccdf = std::stod(slurp(dir / "p.txt"));
  REQUIRE(ccdf == Catch::Approx(0.5).margin(1e-6));

  // Out-of-schema condition name and missing conditions exit nonzero.
  REQUIRE(run("predict --model " + model + " --condition snr=5 --level 0.5") != 0);
  REQUIRE(run("predict --model " + model + " --level 0.5") != 0);
  REQUIRE(run("predict --model " + model + " --condition mcs=5") != 0);
  REQUIRE(run("predict --model " + model +
              " --condition mcs=5 --level 0.5 --y 3") != 0);
}

TEST_CASE("evaluate requires exactly one truth source", "[cli]") {
  const fs::path dir = workdir("evalargs");
  REQUIRE(run("evaluate --models nowhere --out " + (dir / "r").string()) != 0);
}
