#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "molmamba/cli.hpp"
#include "molmamba/error.hpp"
#include "molmamba/fragmenter.hpp"
#include "molmamba/synth.hpp"

using namespace molmamba;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("molmamba_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write_small_config(const std::string& name, std::size_t epochs = 2, const std::string& extra = "") {
    std::ofstream os(path(name));
    os << "# tiny model for tests\n"
       << "d_model = 8\nd_inner = 16\nd_state = 4\ngnn_f_layers = 1\ngnn_a_layers = 1\nrbf_count = 8\n"
       << "epochs = " << epochs << "\nstage1_epochs = 1\nbatch_size = 8\nlr = 0.003\npatience = 5\n"
       << extra;
  }

  void corpus_and_vocab(std::size_t n = 20) {
    ASSERT_EQ(cli({"synth-data", "--molecules", std::to_string(n), "--seed", "3", "--out", path("corpus.jsonl")}).code,
              0);
    ASSERT_EQ(cli({"build-vocab", "--in", path("corpus.jsonl"), "--size", "24", "--out", path("vocab.jsonl")}).code,
              0);
  }

  fs::path dir_;
};

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void expect_manifest_matches(const fs::path& manifest, const fs::path& output_dir) {
  const auto m = read_json(manifest);
  if (m.contains("inputs"))
    for (const auto& [p, digest] : m["inputs"].items()) EXPECT_EQ(digest, file_sha256(p)) << p;
  ASSERT_TRUE(m.contains("outputs"));
  for (const auto& [name, digest] : m["outputs"].items()) EXPECT_EQ(digest, file_sha256(output_dir / name)) << name;
  for (const char* key : {"command", "args", "version", "timings"}) EXPECT_TRUE(m.contains(key)) << key;
}

TEST_F(CliTest, SynthDataIsByteIdenticalAcrossRuns) {
  ASSERT_EQ(cli({"synth-data", "--molecules", "256", "--seed", "7", "--out", path("a.jsonl")}).code, 0);
  ASSERT_EQ(cli({"synth-data", "--molecules", "256", "--seed", "7", "--out", path("b.jsonl")}).code, 0);
  EXPECT_EQ(file_sha256(path("a.jsonl")), file_sha256(path("b.jsonl")));
  EXPECT_EQ(read_molecules(path("a.jsonl")).size(), 256u);
  expect_manifest_matches(path("a.jsonl.manifest.json"), dir_);
  ASSERT_EQ(cli({"synth-data", "--molecules", "256", "--seed", "8", "--out", path("c.jsonl")}).code, 0);
  EXPECT_NE(file_sha256(path("a.jsonl")), file_sha256(path("c.jsonl")));
}

TEST_F(CliTest, SingleMoleculeIsValid) {
  ASSERT_EQ(cli({"synth-data", "--molecules", "1", "--seed", "0", "--out", path("one.jsonl")}).code, 0);
  const auto mols = read_molecules(path("one.jsonl"));
  ASSERT_EQ(mols.size(), 1u);
  EXPECT_NO_THROW(validate(mols[0]));
  EXPECT_TRUE(mols[0].descriptors.has_value());
}

TEST_F(CliTest, MissingVocabNamesTheFlag) {
  write_small_config("c.cfg");
  const auto r = cli({"pretrain", "--config", path("c.cfg"), "--corpus", path("x.jsonl"), "--out", path("run")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--vocab"), std::string::npos);
}

TEST_F(CliTest, UnknownFlagPrintsUsage) {
  const auto r = cli({"synth-data", "--molecules", "3", "--out", path("x.jsonl"), "--bogus"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(cli({"no-such-command"}).code, 1);
}

TEST_F(CliTest, InvalidInputExitsWithOne) {
  {
    std::ofstream os(path("bad.jsonl"));
    os << "{\"id\": \"x\", \"atoms\": [}\n";
  }
  const auto r = cli({"build-vocab", "--in", path("bad.jsonl"), "--out", path("v.jsonl")});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  {
    std::ofstream os(path("c.cfg"));
    os << "no_such_key = 1\n";
  }
  corpus_and_vocab(10);
  EXPECT_EQ(cli({"pretrain", "--config", path("c.cfg"), "--corpus", path("corpus.jsonl"), "--vocab",
                 path("vocab.jsonl"), "--out", path("run")})
                .code,
            1);
}

TEST_F(CliTest, BinaryExitCodes) {
  const std::string bin = MOLMAMBA_CLI_PATH;
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " synth-data --molecules 2 --out " + path("s.jsonl") + " >/dev/null").c_str())), 0);
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " synth-data --nope 2>/dev/null").c_str())), 1);
}

TEST_F(CliTest, HappyPathThroughEveryCommand) {
  corpus_and_vocab(80);
  write_small_config("c.cfg");
  const auto corpus_digest = file_sha256(path("corpus.jsonl"));
  const auto vocab_digest = file_sha256(path("vocab.jsonl"));
  expect_manifest_matches(path("vocab.jsonl.manifest.json"), dir_);

  auto r = cli({"fragment", "--in", path("corpus.jsonl"), "--vocab", path("vocab.jsonl"), "--out", path("frag.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  {
    const auto mols = read_molecules(path("corpus.jsonl"));
    std::ifstream is(path("frag.jsonl"));
    std::string line;
    std::size_t k = 0;
    while (std::getline(is, line)) {
      const auto j = nlohmann::json::parse(line);
      EXPECT_EQ(j["id"], mols[k].id);
      const auto assignment = j["assignment"].get<std::vector<std::size_t>>();
      EXPECT_EQ(assignment.size(), mols[k].atom_count());
      // every fragment is connected in the file's own numbering
      Fragmentation f;
      const auto ids = j["vocab_ids"].get<std::vector<std::size_t>>();
      std::map<std::size_t, std::size_t> relabel;
      for (auto a : assignment) relabel.emplace(a, 0);
      std::vector<std::size_t> first(ids.size(), SIZE_MAX);
      for (std::size_t i = 0; i < assignment.size(); ++i) first[assignment[i]] = std::min(first[assignment[i]], i);
      std::vector<std::size_t> rank(ids.size());
      std::iota(rank.begin(), rank.end(), std::size_t{0});
      std::sort(rank.begin(), rank.end(), [&](auto a, auto b) { return first[a] < first[b]; });
      std::vector<std::size_t> ordinal(ids.size());
      for (std::size_t q = 0; q < rank.size(); ++q) ordinal[rank[q]] = q;
      for (auto a : assignment) f.assignment.push_back(ordinal[a]);
      f.vocab_ids.resize(ids.size());
      EXPECT_NO_THROW(check_fragmentation(mols[k], f));
      ++k;
    }
    EXPECT_EQ(k, mols.size());
  }
  expect_manifest_matches(path("frag.jsonl.manifest.json"), dir_);

  r = cli({"pretrain", "--config", path("c.cfg"), "--corpus", path("corpus.jsonl"), "--vocab", path("vocab.jsonl"),
           "--out", path("run")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"checkpoint.bin", "curves.csv", "val_curves.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  expect_manifest_matches(dir_ / "run" / "manifest.json", dir_ / "run");
  {
    std::ifstream is(dir_ / "run" / "curves.csv");
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header, "epoch,loss_d,loss_s,loss_f,loss_mask,total");
    std::size_t rows = 0;
    for (std::string line; std::getline(is, line);) ++rows;
    EXPECT_EQ(rows, 2u);
  }
  const auto manifest = read_json(dir_ / "run" / "manifest.json");
  EXPECT_EQ(manifest["config"]["d_model"], "8");
  EXPECT_EQ(manifest["seed"], 0);

  r = cli({"finetune", "--config", path("c.cfg"), "--corpus", path("corpus.jsonl"), "--vocab", path("vocab.jsonl"),
           "--task", kPlantedLabel, "--checkpoint", path("run/checkpoint.bin"), "--out", path("ft")});
  ASSERT_EQ(r.code, 0) << r.err;
  expect_manifest_matches(dir_ / "ft" / "manifest.json", dir_ / "ft");
  const auto metrics = read_json(dir_ / "ft" / "metrics.json");
  EXPECT_EQ(metrics["metric"], "roc_auc");
  EXPECT_EQ(metrics["folds"].size(), 1u);
  const double auc = metrics["mean"];
  EXPECT_GE(auc, 0.0);
  EXPECT_LE(auc, 1.0);

  r = cli({"evaluate", "--config", path("c.cfg"), "--corpus", path("corpus.jsonl"), "--vocab", path("vocab.jsonl"),
           "--task", kPlantedLabel, "--checkpoint", path("ft/model.bin"), "--out", path("eval.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ev = read_json(path("eval.json"));
  EXPECT_EQ(ev["molecules"], 80);
  expect_manifest_matches(path("eval.json.manifest.json"), dir_);

  r = cli({"inspect", "--config", path("c.cfg"), "--corpus", path("corpus.jsonl"), "--vocab", path("vocab.jsonl"),
           "--checkpoint", path("run/checkpoint.bin"), "--out", path("weights.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  {
    const auto mols = read_molecules(path("corpus.jsonl"));
    std::ifstream is(path("weights.jsonl"));
    std::size_t k = 0;
    for (std::string line; std::getline(is, line); ++k) {
      const auto j = nlohmann::json::parse(line);
      EXPECT_EQ(j["node_weights"].size(), mols[k].atom_count());
    }
    EXPECT_EQ(k, mols.size());
  }

  // no command touched its inputs
  EXPECT_EQ(file_sha256(path("corpus.jsonl")), corpus_digest);
  EXPECT_EQ(file_sha256(path("vocab.jsonl")), vocab_digest);
}

TEST_F(CliTest, PretrainIsReproducibleFromManifest) {
  corpus_and_vocab(20);
  write_small_config("c.cfg");
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(cli({"pretrain", "--config", path("c.cfg"), "--corpus", path("corpus.jsonl"), "--vocab",
                   path("vocab.jsonl"), "--out", path(out), "--seed", "5"})
                  .code,
              0);
  }
  const auto a = read_json(dir_ / "a" / "manifest.json"), b = read_json(dir_ / "b" / "manifest.json");
  EXPECT_EQ(a["outputs"], b["outputs"]);
  EXPECT_EQ(a["seed"], 5);
  EXPECT_EQ(a["config"]["seed"], "5");
}

TEST_F(CliTest, FinetuneFoldsFlagOverridesConfig) {
  corpus_and_vocab(40);
  write_small_config("c.cfg", 1, "task_type = regression\n");
  std::vector<Molecule> mols = read_molecules(path("corpus.jsonl"));
  for (auto& m : mols) m.labels["size"] = static_cast<double>(m.atom_count());
  write_molecules(path("labelled.jsonl"), mols);
  const auto r = cli({"finetune", "--config", path("c.cfg"), "--corpus", path("labelled.jsonl"), "--vocab",
                      path("vocab.jsonl"), "--task", "size", "--folds", "2", "--out", path("ft")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = read_json(dir_ / "ft" / "metrics.json");
  EXPECT_EQ(metrics["metric"], "rmse");
  EXPECT_EQ(metrics["folds"].size(), 2u);
}

// Exhaustive search for an S atom bonded to two distinct O atoms.
bool contains_motif(const Molecule& m) {
  const std::size_t l = m.atom_count();
  auto bonded = [&](std::size_t a, std::size_t b) {
    for (const auto& bd : m.bonds)
      if ((bd.i == a && bd.j == b) || (bd.i == b && bd.j == a)) return true;
    return false;
  };
  for (std::size_t s = 0; s < l; ++s)
    for (std::size_t a = 0; a < l; ++a)
      for (std::size_t b = 0; b < l; ++b) {
        if (a == b || a == s || b == s) continue;
        if (m.atoms[s].z == 16 && m.atoms[a].z == 8 && m.atoms[b].z == 8 && bonded(s, a) && bonded(s, b)) return true;
      }
  return false;
}

TEST(SynthData, PlantedLabelMatchesExhaustiveSearch) {
  std::size_t positives = 0;
  for (const auto& m : synth_data(500, 21)) {
    const bool want = contains_motif(m);
    EXPECT_EQ(m.labels.at(kPlantedLabel), want ? 1.0 : 0.0) << m.id;
    positives += want;
  }
  EXPECT_GT(positives, 150u);
  EXPECT_LT(positives, 350u);
}

TEST(SynthData, AtomCountsUniformOnRange) {
  const auto mols = synth_data(1000, 22);
  std::vector<double> hist(21, 0.0);
  for (const auto& m : mols) {
    ASSERT_GE(m.atom_count(), 4u);
    ASSERT_LE(m.atom_count(), 24u);
    hist[m.atom_count() - 4] += 1.0;
    for (const auto& a : m.atoms) EXPECT_TRUE(a.z == 6 || a.z == 7 || a.z == 8 || a.z == 16 || a.z == 9);
    EXPECT_LE(m.bond_count(), m.atom_count() - 1 + 3);
  }
  const double expected = 1000.0 / 21.0;
  double chi2 = 0.0;
  for (double h : hist) chi2 += (h - expected) * (h - expected) / expected;
  EXPECT_LT(chi2, 45.3);  // chi-square, 20 degrees of freedom, p = 0.001
}

TEST(SynthData, BondLengthsNearOnePointFive) {
  for (const auto& m : synth_data(100, 23)) {
    const auto g = graph_matrices(m);
    std::size_t tree = 0;
    for (const auto& b : m.bonds) {
      const double d = g.dist(b.i, b.j);
      EXPECT_LT(d, 2.6);
      tree += d >= 1.4 - 1e-9 && d <= 1.6 + 1e-9;
    }
    EXPECT_GE(tree, m.atom_count() - 1);
  }
}

TEST(SynthData, RejectsZeroMolecules) {
  EXPECT_THROW(synth_data(0, 1), ValidationError);
  EXPECT_EQ(cli({"synth-data", "--molecules", "0", "--out", "/tmp/unused.jsonl"}).code, 1);
}

}  // namespace
