#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "masrc/masrc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("masrc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  CliResult run(const std::string& args) const {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string(MASRC_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  fs::path write(const std::string& name, const json& j) const {
    const auto p = dir / name;
    std::ofstream(p) << j.dump();
    return p;
  }

  std::string small_data(const std::string& name, std::uint64_t seed, std::size_t videos = 3) const {
    const auto cfg = write(name + "_synth.json", {{"num_videos", videos},
                                                  {"scenes_per_video", 3},
                                                  {"min_shots_per_scene", 3},
                                                  {"max_shots_per_scene", 5},
                                                  {"dim_entity", 6},
                                                  {"dim_place", 6},
                                                  {"id_prefix", name}});
    const auto r = run("synth --config " + cfg.string() + " --seed " + std::to_string(seed) + " --out " +
                       (dir / name).string());
    EXPECT_EQ(r.code, 0) << r.err;
    return (dir / name / "manifest.jsonl").string();
  }

  std::string train_config(const json& extra = json::object()) const {
    json j{{"epochs", 1}, {"batch_size", 32}, {"peak_lr", 1e-3}, {"seed", 2}};
    j.update(extra);
    return write("train.json", j).string();
  }
};

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_F(Cli, HelpAndUnknownSubcommand) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("bogus").code, 1);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("train --modality audio --train x").code, 1);
}

TEST_F(Cli, SynthIsDeterministic) {
  const auto a = small_data("a", 7), b = small_data("b", 7);
  EXPECT_EQ(count_lines(slurp(a)), 3u);
  EXPECT_EQ(slurp(dir / "a" / "a_0000.entity.bin"), slurp(dir / "b" / "b_0000.entity.bin"));
  EXPECT_EQ(slurp(dir / "a" / "a_0002.place.bin"), slurp(dir / "b" / "b_0002.place.bin"));
  const auto da = masrc::load_dataset(a), db = masrc::load_dataset(b);
  ASSERT_EQ(da.size(), db.size());
  for (std::size_t i = 0; i < da.size(); ++i) {
    EXPECT_EQ(da[i].entity, db[i].entity);
    EXPECT_EQ(da[i].labels, db[i].labels);
  }
  const auto summary = json::parse(run("synth --seed 7 --out " + (dir / "c").string()).out);
  EXPECT_EQ(summary["videos"], 20);
  EXPECT_GE(summary["boundary_rate"].get<double>(), 0.1);
}

TEST_F(Cli, SynthBadConfigIsValidationError) {
  const auto cfg = write("bad.json", {{"scenes_per_video", 0}});
  const auto r = run("synth --config " + cfg.string() + " --out " + (dir / "x").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("scenes_per_video"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "x"));
  EXPECT_EQ(run("synth --config " + (dir / "missing.json").string() + " --out " + (dir / "y").string()).code, 1);
}

TEST_F(Cli, TrainWritesOutputContract) {
  const auto tr = small_data("tr", 1), va = small_data("va", 2, 2);
  const auto out = dir / "run";
  const auto r = run("train --config " + train_config() + " --train " + tr + " --val " + va + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "checkpoint.bin"));
  const auto cfg = json::parse(slurp(out / "config.json"));
  EXPECT_EQ(cfg["epochs"], 1);
  EXPECT_EQ(cfg["batch_size"], 32);
  std::istringstream log(slurp(out / "metrics.jsonl"));
  std::string line;
  bool has_val = false;
  while (std::getline(log, line)) {
    const auto j = json::parse(line);
    for (const char* k : {"epoch", "split", "ap", "miou", "f1", "loss"}) EXPECT_TRUE(j.contains(k)) << k;
    has_val = has_val || j["split"] == "val";
  }
  EXPECT_TRUE(has_val);
}

TEST_F(Cli, FlagsOverrideConfig) {
  const auto tr = small_data("tr", 1);
  const auto cfg = train_config({{"seed", 5}, {"model", {{"modality", "place"}}}});
  const auto out = dir / "run";
  const auto r = run("train --config " + cfg + " --seed 9 --modality entity --no-eld --threshold 0.4 --train " + tr +
                     " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto resolved = json::parse(slurp(out / "config.json"));
  EXPECT_EQ(resolved["seed"], 9);
  EXPECT_EQ(resolved["model"]["modality"], "entity");
  EXPECT_EQ(resolved["model"]["eld"], false);
  EXPECT_EQ(resolved["model"]["psd"], true);
  EXPECT_DOUBLE_EQ(resolved["threshold"].get<double>(), 0.4);
}

TEST_F(Cli, BaselineAblationTrains) {
  const auto tr = small_data("tr", 1);
  const auto r = run("train --config " + train_config() + " --no-eld --no-psd --train " + tr + " --out " +
                     (dir / "run").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = masrc::read_checkpoint(dir / "run" / "checkpoint.bin");
  for (const auto& s : ck.records) EXPECT_EQ(s.name.rfind("mcd.", 0), 0u) << s.name;
}

TEST_F(Cli, TransferWithoutPseudoLabelsFailsBeforeTraining) {
  const auto tr = small_data("tr", 1);
  auto videos = masrc::load_dataset(tr);
  for (auto& v : videos) v.pseudo_labels.reset();
  masrc::write_dataset(dir / "nopseudo", videos);
  const auto r = run("train --regime transfer --train " + (dir / "nopseudo" / "manifest.jsonl").string() + " --out " +
                     (dir / "run").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("pseudo labels"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST_F(Cli, EvalAndPredictAgree) {
  const auto tr = small_data("tr", 1), va = small_data("va", 2, 2);
  ASSERT_EQ(run("train --config " + train_config() + " --train " + tr + " --out " + (dir / "run").string()).code, 0);
  const auto ck = (dir / "run" / "checkpoint.bin").string();
  const auto ev = run("eval --checkpoint " + ck + " --data val=" + va + " --data " + tr);
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto metrics = json::parse(ev.out);
  ASSERT_TRUE(metrics.contains("val"));
  ASSERT_TRUE(metrics.contains("tr"));
  const auto pr = run("predict --checkpoint " + ck + " --data " + va + " --out " + (dir / "pred.jsonl").string());
  ASSERT_EQ(pr.code, 0) << pr.err;
  std::istringstream lines(slurp(dir / "pred.jsonl"));
  std::string line;
  std::vector<double> scores;
  std::vector<int> labels;
  while (std::getline(lines, line)) {
    const auto j = json::parse(line);
    auto s = j["scores"].get<std::vector<double>>();
    auto l = j["labels"].get<std::vector<int>>();
    EXPECT_EQ(j["boundaries"].size(), s.size());
    EXPECT_EQ(j["scenes"].back()[1].get<std::size_t>(), s.size() - 1);
    scores.insert(scores.end(), s.begin(), s.end());
    labels.insert(labels.end(), l.begin(), l.end());
  }
  EXPECT_NEAR(masrc::metrics::average_precision(scores, labels), metrics["val"]["ap"].get<double>(), 1e-12);
}

TEST_F(Cli, DimMismatchNamesSlot) {
  const auto tr = small_data("tr", 1);
  ASSERT_EQ(run("train --config " + train_config() + " --train " + tr + " --out " + (dir / "run").string()).code, 0);
  const auto other = write("wide.json", {{"num_videos", 1}, {"dim_entity", 7}, {"dim_place", 6}});
  ASSERT_EQ(run("synth --config " + other.string() + " --out " + (dir / "wide").string()).code, 0);
  const auto r = run("eval --checkpoint " + (dir / "run" / "checkpoint.bin").string() + " --data " +
                     (dir / "wide" / "manifest.jsonl").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("ejg.gcn1.weight"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingInputsAreValidationErrors) {
  EXPECT_EQ(run("eval --checkpoint " + (dir / "none.bin").string() + " --data " + (dir / "m.jsonl").string()).code, 1);
  EXPECT_EQ(run("train --train " + (dir / "m.jsonl").string() + " --out " + (dir / "r").string()).code, 1);
}

TEST_F(Cli, GradcheckPasses) {
  const auto r = run("gradcheck --seeds 1 --samples 4");
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("gradcheck passed"), std::string::npos);
}
