#include "molmamba/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "molmamba/error.hpp"
#include "molmamba/fragmenter.hpp"
#include "molmamba/kernels.hpp"
#include "molmamba/model.hpp"
#include "molmamba/synth.hpp"
#include "molmamba/training.hpp"

namespace molmamba {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

#ifndef MOLMAMBA_VERSION
#define MOLMAMBA_VERSION "0.0.0"
#endif

std::vector<Molecule> with_descriptors(std::vector<Molecule> mols) {
  for (auto& m : mols)
    if (!m.descriptors) m.descriptors = synth_descriptors(m, 0);
  return normalize_descriptors(std::move(mols));
}

std::vector<Molecule> load_corpus(const fs::path& path, bool lenient, std::ostream& log) {
  std::vector<std::string> warnings;
  auto mols = read_molecules(path, ParseOptions{lenient}, &warnings);
  for (const auto& w : warnings) log << "warning: " << w << '\n';
  if (mols.empty()) throw ValidationError(path.string() + " holds no molecules");
  return with_descriptors(std::move(mols));
}

std::string file_sha256(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

namespace {

struct Options {
  std::string config;
  std::string corpus;
  std::string vocab;
  std::string out;
  std::string task;
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::size_t folds = 0;
  std::size_t size = 0;
  std::size_t molecules = 0;
  bool lenient = false;
};

class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args) : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["args"] = args;
    doc_["version"] = MOLMAMBA_VERSION;
  }
  void config(const TrainConfig& cfg) {
    ordered_json c;
    std::istringstream is(format_config(cfg));
    for (std::string line; std::getline(is, line);) {
      const auto eq = line.find(" = ");
      if (eq != std::string::npos) c[line.substr(0, eq)] = line.substr(eq + 3);
    }
    doc_["config"] = c;
  }
  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void input(const fs::path& p) { doc_["inputs"][p.string()] = file_sha256(p); }
  void output(const fs::path& p) { outputs_.push_back(p); }
  void write(const fs::path& where) {
    for (const auto& p : outputs_) doc_["outputs"][p.filename().string()] = file_sha256(p);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    doc_["timings"]["seconds"] = secs;
    doc_["timings"]["threads"] = worker_threads();
    std::ofstream os(where);
    if (!os) throw ValidationError("cannot write " + where.string());
    os << doc_.dump(2) << '\n';
  }

 private:
  ordered_json doc_;
  std::vector<fs::path> outputs_;
  std::chrono::steady_clock::time_point start_;
};

fs::path file_manifest(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

fs::path ensure_dir(const std::string& out) {
  const fs::path dir(out);
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ValidationError(out + " exists and is not a directory");
  fs::create_directories(dir);
  return dir;
}

TrainConfig resolve_config(const Options& o, const CLI::App& sub) {
  TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_config(o.config);
  auto given = [&](const char* flag) {
    const auto* opt = sub.get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  };
  if (given("--seed")) cfg.seed = o.seed;
  if (given("--folds")) cfg.folds = o.folds;
  validate(cfg);
  return cfg;
}

std::vector<std::string> split_tasks(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string t; std::getline(ss, t, ',');)
    if (!t.empty()) out.push_back(t);
  if (out.empty()) throw ValidationError("--task names no label");
  return out;
}

void write_csv(const fs::path& path, const std::vector<EpochLosses>& curve) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write " + path.string());
  os << "epoch,loss_d,loss_s,loss_f,loss_mask,total\n" << std::setprecision(17);
  for (const auto& e : curve) {
    os << e.epoch << ',' << e.mean.d << ',' << e.mean.s << ',' << e.mean.f << ',' << e.mean.mask << ',' << e.total
       << '\n';
  }
}

/// Model sized from a checkpoint: the head width follows the stored tensors.
MolMamba model_from_checkpoint(const fs::path& path, const TrainConfig& cfg, std::size_t vocab_size) {
  const auto bytes = read_checkpoint_bytes(path);
  const auto stored = checkpoint_contents(bytes);
  std::size_t tasks = 0;
  if (stored.contains("head.1.b")) tasks = stored[stored.index("head.1.b")].shape.at(0);
  MolMamba model(cfg.model, vocab_size, tasks, cfg.seed);
  deserialize_checkpoint(bytes, model.params());
  return model;
}

int cmd_synth(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  Manifest man("synth-data", args);
  man.seed(o.seed);
  const auto mols = synth_data(o.molecules, o.seed);
  write_molecules(o.out, mols);
  man.output(o.out);
  man.write(file_manifest(o.out));
  out << "wrote " << mols.size() << " molecules to " << o.out << '\n';
  return 0;
}

int cmd_build_vocab(const Options& o, const CLI::App& sub, const std::vector<std::string>& args, std::ostream& out,
                    std::ostream& err) {
  const auto cfg = resolve_config(o, sub);
  Manifest man("build-vocab", args);
  man.config(cfg);
  man.input(o.corpus);
  if (!o.config.empty()) man.input(o.config);
  auto mols = load_corpus(o.corpus, o.lenient, err);
  for (auto& m : mols) m = canonicalize(m);
  const auto vocab = build_vocabulary(mols, o.size ? o.size : cfg.vocab_size);
  write_vocab(o.out, vocab);
  man.output(o.out);
  man.write(file_manifest(o.out));
  out << "vocabulary of " << vocab.size() << " entries written to " << o.out << '\n';
  return 0;
}

int cmd_fragment(const Options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Manifest man("fragment", args);
  man.input(o.corpus);
  man.input(o.vocab);
  const auto vocab = read_vocab(o.vocab);
  std::vector<std::string> warnings;
  const auto mols = read_molecules(o.corpus, ParseOptions{o.lenient}, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  std::ofstream os(o.out);
  if (!os) throw ValidationError("cannot write " + o.out);
  for (const auto& mol : mols) {
    const auto order = canonical_order(mol);
    const auto canon = permute_atoms(mol, order);
    const auto frag = fragment_molecule(canon, vocab);
    check_fragmentation(canon, frag);
    const auto graph = fragment_graph(canon, frag);
    // report assignments in the file's own atom numbering
    std::vector<std::size_t> assignment(mol.atom_count());
    for (std::size_t k = 0; k < order.size(); ++k) assignment[order[k]] = frag.assignment[k];
    ordered_json j;
    j["id"] = mol.id;
    j["assignment"] = assignment;
    j["vocab_ids"] = frag.vocab_ids;
    j["edges"] = ordered_json::array();
    for (const auto& [a, b] : graph.edges) j["edges"].push_back({a, b});
    os << j.dump() << '\n';
  }
  os.close();
  man.output(o.out);
  man.write(file_manifest(o.out));
  out << "fragmented " << mols.size() << " molecules into " << o.out << '\n';
  return 0;
}

int cmd_pretrain(const Options& o, const CLI::App& sub, const std::vector<std::string>& args, std::ostream& out,
                 std::ostream& err) {
  const auto cfg = resolve_config(o, sub);
  const auto dir = ensure_dir(o.out);
  Manifest man("pretrain", args);
  man.config(cfg);
  man.seed(cfg.seed);
  man.input(o.corpus);
  man.input(o.vocab);
  if (!o.config.empty()) man.input(o.config);
  const auto vocab = read_vocab(o.vocab);
  const auto mols = load_corpus(o.corpus, o.lenient, err);
  const auto data = prepare_all(mols, vocab, cfg.model, cfg.seed);
  MolMamba model(cfg.model, vocab.size(), 0, cfg.seed);
  const auto result = pretrain(model, data, cfg, [&](const EpochLosses& tr, const EpochLosses& va) {
    err << "epoch " << tr.epoch << " train " << tr.total << " val " << va.total << '\n';
  });
  save_checkpoint(dir / "checkpoint.bin", model.params());
  write_csv(dir / "curves.csv", result.train_curve);
  write_csv(dir / "val_curves.csv", result.val_curve);
  for (const char* f : {"checkpoint.bin", "curves.csv", "val_curves.csv"}) man.output(dir / f);
  man.write(dir / "manifest.json");
  out << "best validation total " << result.best_val_total << " at epoch " << result.best_epoch << '\n';
  return 0;
}

int cmd_finetune(const Options& o, const CLI::App& sub, const std::vector<std::string>& args, std::ostream& out,
                 std::ostream& err) {
  const auto cfg = resolve_config(o, sub);
  const auto dir = ensure_dir(o.out);
  const auto tasks = split_tasks(o.task);
  Manifest man("finetune", args);
  man.config(cfg);
  man.seed(cfg.seed);
  man.input(o.corpus);
  man.input(o.vocab);
  if (!o.config.empty()) man.input(o.config);
  std::optional<ParamStore> pretrained;
  if (!o.checkpoint.empty()) {
    man.input(o.checkpoint);
    pretrained = checkpoint_contents(read_checkpoint_bytes(o.checkpoint));
  }
  const auto vocab = read_vocab(o.vocab);
  const auto mols = load_corpus(o.corpus, o.lenient, err);
  const auto data = prepare_all(mols, vocab, cfg.model, cfg.seed);
  const auto labels = label_matrix(data, tasks, cfg);

  MetricsReport report;
  for (std::size_t t = 0; t < tasks.size(); ++t) report.task += (t ? "," : "") + tasks[t];
  report.metric = cfg.task_type == "classification" ? "roc_auc" : "rmse";
  for (std::size_t fold = 0; fold < cfg.folds; ++fold) {
    const auto seed = derive_seed(cfg.seed, fold);
    MolMamba model(cfg.model, vocab.size(), tasks.size(), seed);
    if (pretrained) model.params().assign_shared(*pretrained);
    auto r = finetune_fold(model, data, labels, split_indices(data.size(), cfg, seed), cfg, seed,
                           [&](std::size_t e, std::size_t, double tm, double vm) {
                             err << "fold " << fold << " epoch " << e << " train " << tm << " val " << vm << '\n';
                           });
    r.fold = fold;
    if (fold == 0) save_checkpoint(dir / "model.bin", model.params());
    report.folds.push_back(std::move(r));
  }
  double sum = 0.0;
  for (const auto& f : report.folds) sum += f.test.metric;
  report.mean = sum / static_cast<double>(report.folds.size());
  if (report.folds.size() > 1) {
    double sq = 0.0;
    for (const auto& f : report.folds) sq += (f.test.metric - report.mean) * (f.test.metric - report.mean);
    report.std = std::sqrt(sq / static_cast<double>(report.folds.size() - 1));
  }
  {
    std::ofstream os(dir / "metrics.json");
    os << report.to_json().dump(2) << '\n';
  }
  man.output(dir / "model.bin");
  man.output(dir / "metrics.json");
  man.write(dir / "manifest.json");
  out << report.metric << " " << report.mean << " +- " << report.std << " over " << report.folds.size()
      << " fold(s)\n";
  return 0;
}

int cmd_evaluate(const Options& o, const CLI::App& sub, const std::vector<std::string>& args, std::ostream& out,
                 std::ostream& err) {
  const auto cfg = resolve_config(o, sub);
  const auto tasks = split_tasks(o.task);
  Manifest man("evaluate", args);
  man.config(cfg);
  man.input(o.corpus);
  man.input(o.vocab);
  man.input(o.checkpoint);
  const auto vocab = read_vocab(o.vocab);
  const auto model = model_from_checkpoint(o.checkpoint, cfg, vocab.size());
  if (model.tasks() != tasks.size()) {
    throw ValidationError("checkpoint predicts " + std::to_string(model.tasks()) + " task(s), --task names " +
                          std::to_string(tasks.size()));
  }
  const auto mols = load_corpus(o.corpus, o.lenient, err);
  const auto data = prepare_all(mols, vocab, cfg.model, cfg.seed);
  const auto labels = label_matrix(data, tasks, cfg);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const bool classification = cfg.task_type == "classification";
  const auto s = score(predict_all(model, data, all), labels, all, classification);
  ordered_json j;
  j["task"] = o.task;
  j["metric"] = classification ? "roc_auc" : "rmse";
  j["value"] = s.metric;
  j["per_task"] = s.per_task;
  if (!classification) j["mae"] = s.mae;
  j["molecules"] = data.size();
  {
    std::ofstream os(o.out);
    if (!os) throw ValidationError("cannot write " + o.out);
    os << j.dump(2) << '\n';
  }
  man.output(o.out);
  man.write(file_manifest(o.out));
  out << j["metric"].get<std::string>() << " " << s.metric << '\n';
  return 0;
}

int cmd_inspect(const Options& o, const CLI::App& sub, const std::vector<std::string>& args, std::ostream& out,
                std::ostream& err) {
  const auto cfg = resolve_config(o, sub);
  Manifest man("inspect", args);
  man.config(cfg);
  man.input(o.corpus);
  man.input(o.vocab);
  man.input(o.checkpoint);
  const auto vocab = read_vocab(o.vocab);
  const auto model = model_from_checkpoint(o.checkpoint, cfg, vocab.size());
  const auto mols = load_corpus(o.corpus, o.lenient, err);
  std::ofstream os(o.out);
  if (!os) throw ValidationError("cannot write " + o.out);
  for (std::size_t i = 0; i < mols.size(); ++i) {
    const auto order = canonical_order(mols[i]);
    const auto pm = prepare(mols[i], vocab, cfg.model, cfg.seed, i);
    Binding p(model.params());
    const auto y = model.structure(p, pm).sequence;
    const std::size_t d = y.dim(1);
    // sequence slot -> canonical atom -> file atom
    std::vector<double> weights(mols[i].atom_count(), 0.0);
    for (std::size_t t = 0; t < y.dim(0); ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += y.at(t, c);
      weights[order[pm.ordering.perm[t]]] = s;
    }
    ordered_json j;
    j["id"] = mols[i].id;
    j["node_weights"] = weights;
    os << j.dump() << '\n';
  }
  os.close();
  man.output(o.out);
  man.write(file_manifest(o.out));
  out << "node weights for " << mols.size() << " molecules written to " << o.out << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (const char* env = std::getenv("MOLMAMBA_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) set_worker_threads(n);
  }
  CLI::App app{"MOL-Mamba molecular representation learning"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic molecule corpus");
  synth->add_option("--molecules", o.molecules, "number of molecules")->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", o.seed, "random seed");
  synth->add_option("--out", o.out, "output JSONL file")->required();

  auto common = [&](CLI::App* s, bool vocab) {
    s->add_option("--config", o.config, "key = value config file");
    s->add_option("--corpus,--in", o.corpus, "molecule JSONL file")->required();
    if (vocab) s->add_option("--vocab", o.vocab, "fragment vocabulary file")->required();
    s->add_option("--out", o.out, "output path")->required();
    s->add_option("--seed", o.seed, "random seed (overrides the config)");
    s->add_flag("--lenient", o.lenient, "skip unknown keys with a warning");
  };
  auto* bv = app.add_subcommand("build-vocab", "mine a fragment vocabulary");
  common(bv, false);
  bv->add_option("--size", o.size, "target vocabulary size");
  auto* fr = app.add_subcommand("fragment", "fragment molecules with a vocabulary");
  common(fr, true);
  auto* pt = app.add_subcommand("pretrain", "two-stage pretraining");
  common(pt, true);
  auto* ft = app.add_subcommand("finetune", "fine-tune on labelled molecules");
  common(ft, true);
  ft->add_option("--task", o.task, "label key(s), comma separated")->required();
  ft->add_option("--folds", o.folds, "number of folds")->check(CLI::PositiveNumber);
  ft->add_option("--checkpoint", o.checkpoint, "pretrained checkpoint");
  auto* ev = app.add_subcommand("evaluate", "score a fine-tuned checkpoint");
  common(ev, true);
  ev->add_option("--task", o.task, "label key(s), comma separated")->required();
  ev->add_option("--checkpoint", o.checkpoint, "fine-tuned checkpoint")->required();
  auto* in = app.add_subcommand("inspect", "dump per-atom node weights");
  common(in, true);
  in->add_option("--checkpoint", o.checkpoint, "checkpoint")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*synth) return cmd_synth(o, args, out);
    if (*bv) return cmd_build_vocab(o, *bv, args, out, err);
    if (*fr) return cmd_fragment(o, args, out, err);
    if (*pt) return cmd_pretrain(o, *pt, args, out, err);
    if (*ft) return cmd_finetune(o, *ft, args, out, err);
    if (*ev) return cmd_evaluate(o, *ev, args, out, err);
    if (*in) return cmd_inspect(o, *in, args, out, err);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace molmamba
