#include "molmamba/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>

#include "molmamba/error.hpp"

namespace molmamba {

namespace {

// Molecules per parallel shard. Fixed so that gradient sums do not depend on
// the thread count.
constexpr std::size_t kShard = 8;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void add_into(GradientSet& dst, const GradientSet& src) {
  for (std::size_t i = 0; i < dst.size(); ++i)
    for (std::size_t k = 0; k < dst[i].size(); ++k) dst[i][k] += src[i][k];
}

struct PretrainBatch {
  LossComponents sum;
  double total = 0.0;
};

PretrainBatch pretrain_batch(const MolMamba& model, std::span<const PreparedMolecule> data,
                             std::span<const std::size_t> idx, const TrainConfig& cfg, std::size_t epoch, bool stage2,
                             GradientSet* grads) {
  const std::size_t shards = (idx.size() + kShard - 1) / kShard;
  std::vector<PretrainBatch> outs(shards);
  std::vector<GradientSet> shard_grads(grads ? shards : 0);
  std::vector<std::exception_ptr> errors(shards);
  const double inv = 1.0 / static_cast<double>(idx.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t s = 0; s < shards; ++s) {
    try {
      Binding p(model.params());
      auto& out = outs[s];
      for (std::size_t k = s * kShard; k < std::min(idx.size(), (s + 1) * kShard); ++k) {
        const auto& m = data[idx[k]];
        Rng rng(derive_seed(cfg.seed, epoch, m.source_index));
        const auto plan = make_mask(cfg.alpha, EDescriptorVector::kRows, rng);
        const auto t = model.pretrain_terms(p, m, cfg, &plan);
        const LossComponents c{t.loss_d.item(), t.loss_s.item(), t.loss_f.item(), t.loss_mask.item()};
        out.total += total_loss(c, cfg);
        out.sum.d += c.d;
        out.sum.s += c.s;
        out.sum.f += c.f;
        out.sum.mask += c.mask;
        if (grads) {
          const auto objective = total_loss(t.loss_d, t.loss_s, t.loss_f, stage2 ? t.loss_mask : Tensor{}, cfg);
          ops::scale(objective, inv).backward();
        }
      }
      if (grads) {
        shard_grads[s] = model.params().zero_gradients();
        p.accumulate_into(shard_grads[s]);
      }
    } catch (...) {
      errors[s] = std::current_exception();
    }
  }
  rethrow_first(errors);
  PretrainBatch total;
  for (std::size_t s = 0; s < shards; ++s) {
    total.total += outs[s].total;
    total.sum.d += outs[s].sum.d;
    total.sum.s += outs[s].sum.s;
    total.sum.f += outs[s].sum.f;
    total.sum.mask += outs[s].sum.mask;
    if (grads) add_into(*grads, shard_grads[s]);
  }
  return total;
}

EpochLosses to_epoch(std::size_t epoch, const PretrainBatch& b, std::size_t n) {
  const double k = static_cast<double>(n);
  return {epoch, {b.sum.d / k, b.sum.s / k, b.sum.f / k, b.sum.mask / k}, b.total / k};
}

std::vector<std::size_t> shuffled(std::span<const std::size_t> idx, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(idx.begin(), idx.end());
  Rng rng(derive_seed(seed, 0xba7c, epoch));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw ValidationError("roc_auc: score and label counts differ");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] > 0.5) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw ValidationError("roc_auc: labels contain a single class");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double rmse(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) throw ValidationError("rmse: empty or mismatched inputs");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double mae(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) throw ValidationError("mae: empty or mismatched inputs");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

Split split_indices(std::size_t n, const TrainConfig& cfg, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5b117));
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t parts = cfg.split_train + cfg.split_val + cfg.split_test;
  const std::size_t n_train = n * cfg.split_train / parts;
  const std::size_t n_val = n * cfg.split_val / parts;
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  if (s.train.empty() || s.val.empty() || s.test.empty()) {
    throw ValidationError("split of " + std::to_string(n) + " molecules leaves an empty train, validation or test part");
  }
  return s;
}

double clip_global_norm(GradientSet& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

AdamW::AdamW(const ParamStore& store, const TrainConfig& cfg)
    : lr_(cfg.lr),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      decay_(cfg.weight_decay),
      clip_(cfg.grad_clip),
      m_(store.zero_gradients()),
      v_(store.zero_gradients()) {}

void AdamW::reset() {
  t_ = 0;
  for (auto& g : m_) std::fill(g.begin(), g.end(), 0.0);
  for (auto& g : v_) std::fill(g.begin(), g.end(), 0.0);
}

void AdamW::step(ParamStore& store, GradientSet& grads) {
  clip_global_norm(grads, clip_);
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto w = store.values(i);
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_) + decay_ * w[k];
      w[k] -= lr_ * update;
    }
  }
}

EpochLosses evaluate_pretrain(const MolMamba& model, std::span<const PreparedMolecule> data,
                              std::span<const std::size_t> indices, const TrainConfig& cfg, std::size_t epoch) {
  const auto b = pretrain_batch(model, data, indices, cfg, epoch, true, nullptr);
  return to_epoch(epoch, b, indices.size());
}

PretrainResult pretrain(MolMamba& model, std::span<const PreparedMolecule> data, const TrainConfig& cfg,
                        const std::function<void(const EpochLosses&, const EpochLosses&)>& on_epoch) {
  const auto split = split_indices(data.size(), cfg, cfg.seed);
  std::vector<std::size_t> train = split.train;
  train.insert(train.end(), split.test.begin(), split.test.end());
  std::sort(train.begin(), train.end());

  AdamW opt(model.params(), cfg);
  PretrainResult result;
  result.best_val_total = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const bool stage2 = epoch > cfg.stage1_epochs;
    if (stage2 && epoch == cfg.stage1_epochs + 1 && cfg.stage1_epochs > 0) opt.reset();
    const auto order = shuffled(train, cfg.seed, epoch);
    PretrainBatch sum;
    std::size_t step = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size, ++step) {
      const auto batch = std::span<const std::size_t>(order).subspan(b, std::min(cfg.batch_size, order.size() - b));
      auto grads = model.params().zero_gradients();
      try {
        const auto out = pretrain_batch(model, data, batch, cfg, epoch, stage2, &grads);
        sum.total += out.total;
        sum.sum.d += out.sum.d;
        sum.sum.s += out.sum.s;
        sum.sum.f += out.sum.f;
        sum.sum.mask += out.sum.mask;
        opt.step(model.params(), grads);
      } catch (const NumericError& e) {
        throw NumericError("pretraining diverged at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step) + ": " + e.what());
      }
    }
    const auto tr = to_epoch(epoch, sum, order.size());
    const auto va = evaluate_pretrain(model, data, split.val, cfg, 0);
    result.train_curve.push_back(tr);
    result.val_curve.push_back({epoch, va.mean, va.total});
    if (va.total < result.best_val_total) {
      result.best_val_total = va.total;
      result.best_epoch = epoch;
      result.best_checkpoint = serialize_checkpoint(model.params());
    }
    if (on_epoch) on_epoch(tr, result.val_curve.back());
  }
  if (!result.best_checkpoint.empty()) deserialize_checkpoint(result.best_checkpoint, model.params());
  return result;
}

std::vector<std::vector<double>> label_matrix(std::span<const PreparedMolecule> data,
                                              std::span<const std::string> tasks, const TrainConfig& cfg) {
  if (tasks.empty()) throw ValidationError("no task label given");
  const bool classification = cfg.task_type == "classification";
  std::vector<std::vector<double>> y(data.size(), std::vector<double>(tasks.size(), kNaN));
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    std::size_t present = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto it = data[i].mol.labels.find(tasks[t]);
      if (it == data[i].mol.labels.end() || std::isnan(it->second)) continue;
      if (classification && it->second != 0.0 && it->second != 1.0) {
        throw ValidationError("molecule '" + data[i].mol.id + "': label '" + tasks[t] + "' = " +
                              std::to_string(it->second) + " is not binary");
      }
      y[i][t] = it->second;
      ++present;
    }
    if (present == 0) throw ValidationError("task '" + tasks[t] + "' has no labels in the dataset");
  }
  return y;
}

std::vector<std::vector<double>> predict_all(const MolMamba& model, std::span<const PreparedMolecule> data,
                                             std::span<const std::size_t> indices) {
  std::vector<std::vector<double>> out(indices.size());
  std::vector<std::exception_ptr> errors(indices.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < indices.size(); ++k) {
    try {
      Binding p(model.params());
      const auto logits = model.predict(p, data[indices[k]]);
      out[k].assign(logits.data().begin(), logits.data().end());
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  rethrow_first(errors);
  return out;
}

TaskScore score(const std::vector<std::vector<double>>& logits, const std::vector<std::vector<double>>& labels,
                std::span<const std::size_t> indices, bool classification) {
  if (logits.size() != indices.size()) throw ValidationError("score: prediction count mismatch");
  const std::size_t tasks = labels.empty() ? 0 : labels[0].size();
  TaskScore out;
  std::size_t scored = 0;
  double mae_sum = 0.0;
  for (std::size_t t = 0; t < tasks; ++t) {
    std::vector<double> pred, y;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const double v = labels[indices[k]][t];
      if (std::isnan(v)) continue;
      pred.push_back(logits[k][t]);
      y.push_back(v);
    }
    double m = kNaN;
    if (classification) {
      const auto pos = std::count_if(y.begin(), y.end(), [](double v) { return v > 0.5; });
      if (pos > 0 && static_cast<std::size_t>(pos) < y.size()) m = roc_auc(pred, y);
    } else if (!y.empty()) {
      m = rmse(pred, y);
      mae_sum += mae(pred, y);
    }
    out.per_task.push_back(m);
    if (!std::isnan(m)) {
      out.metric += m;
      ++scored;
    }
  }
  if (scored == 0) {
    throw ValidationError(classification ? "no task has both classes in this split" : "no labels in this split");
  }
  out.metric /= static_cast<double>(scored);
  out.mae = classification ? 0.0 : mae_sum / static_cast<double>(scored);
  return out;
}

FoldResult finetune_fold(MolMamba& model, std::span<const PreparedMolecule> data,
                         const std::vector<std::vector<double>>& labels, const Split& split, const TrainConfig& cfg,
                         std::uint64_t seed,
                         const std::function<void(std::size_t, std::size_t, double, double)>& on_epoch) {
  const bool classification = cfg.task_type == "classification";
  const std::size_t tasks = model.tasks();
  auto better = [&](double a, double b) { return classification ? a > b : a < b; };

  FoldResult r;
  r.seed = seed;
  r.best_val = classification ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  std::string best_params = serialize_checkpoint(model.params());
  AdamW opt(model.params(), cfg);
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled(split.train, seed, epoch);
    std::vector<std::vector<double>> seen(order.size());
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - b);
      const std::size_t shards = (count + kShard - 1) / kShard;
      const double inv = 1.0 / static_cast<double>(count);
      std::vector<GradientSet> shard_grads(shards);
      std::vector<double> shard_loss(shards, 0.0);
      std::vector<std::exception_ptr> errors(shards);
#pragma omp parallel for schedule(dynamic)
      for (std::size_t s = 0; s < shards; ++s) {
        try {
          Binding p(model.params());
          for (std::size_t k = b + s * kShard; k < std::min(b + count, b + (s + 1) * kShard); ++k) {
            const auto i = order[k];
            const auto logits = model.predict(p, data[i]);
            seen[k].assign(logits.data().begin(), logits.data().end());
            std::vector<double> target(tasks), weight(tasks);
            for (std::size_t t = 0; t < tasks; ++t) {
              const bool has = !std::isnan(labels[i][t]);
              target[t] = has ? labels[i][t] : 0.0;
              weight[t] = has ? 1.0 : 0.0;
            }
            const auto y = Tensor::constant({1, tasks}, target);
            Tensor loss;
            if (classification) {
              loss = ops::bce_with_logits(logits, y, weight);
            } else {
              const double wsum = std::accumulate(weight.begin(), weight.end(), 0.0);
              if (wsum == 0.0) continue;
              const auto diff = ops::mul(ops::sub(logits, y), Tensor::constant({1, tasks}, weight));
              loss = ops::scale(ops::sum(ops::mul(diff, diff)), 1.0 / wsum);
            }
            shard_loss[s] += loss.item();
            ops::scale(loss, inv).backward();
          }
          shard_grads[s] = model.params().zero_gradients();
          p.accumulate_into(shard_grads[s]);
        } catch (...) {
          errors[s] = std::current_exception();
        }
      }
      rethrow_first(errors);
      auto grads = model.params().zero_gradients();
      for (std::size_t s = 0; s < shards; ++s) {
        add_into(grads, shard_grads[s]);
        loss_sum += shard_loss[s];
      }
      try {
        opt.step(model.params(), grads);
      } catch (const NumericError& e) {
        throw NumericError("fine-tuning diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    double train_metric = kNaN;
    try {
      train_metric = score(seen, labels, order, classification).metric;
    } catch (const ValidationError&) {
    }
    const auto val = score(predict_all(model, data, split.val), labels, split.val, classification).metric;
    r.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    r.train_metric.push_back(train_metric);
    r.val_metric.push_back(val);
    r.epochs_run = epoch;
    if (on_epoch) on_epoch(epoch, r.fold, train_metric, val);
    if (better(val, r.best_val)) {
      r.best_val = val;
      r.best_epoch = epoch;
      best_params = serialize_checkpoint(model.params());
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  deserialize_checkpoint(best_params, model.params());
  r.test = score(predict_all(model, data, split.test), labels, split.test, classification);
  return r;
}

MetricsReport finetune(std::span<const PreparedMolecule> data, std::span<const std::string> tasks,
                       std::size_t vocab_size, const TrainConfig& cfg, const ParamStore* pretrained,
                       const std::function<void(std::size_t, std::size_t, double, double)>& on_epoch) {
  if (cfg.folds == 0) throw ValidationError("folds must be at least 1");
  const auto labels = label_matrix(data, tasks, cfg);
  MetricsReport report;
  for (std::size_t t = 0; t < tasks.size(); ++t) report.task += (t ? "," : "") + tasks[t];
  report.metric = cfg.task_type == "classification" ? "roc_auc" : "rmse";
  for (std::size_t fold = 0; fold < cfg.folds; ++fold) {
    const auto seed = derive_seed(cfg.seed, fold);
    MolMamba model(cfg.model, vocab_size, tasks.size(), seed);
    if (pretrained) model.params().assign_shared(*pretrained);
    auto r = finetune_fold(model, data, labels, split_indices(data.size(), cfg, seed), cfg, seed,
                           [&](std::size_t e, std::size_t, double tm, double vm) {
                             if (on_epoch) on_epoch(e, fold, tm, vm);
                           });
    r.fold = fold;
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
  return report;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task;
  j["metric"] = metric;
  j["folds"] = nlohmann::ordered_json::array();
  nlohmann::ordered_json curves;
  curves["train_loss"] = nlohmann::ordered_json::array();
  curves["train_metric"] = nlohmann::ordered_json::array();
  curves["val_metric"] = nlohmann::ordered_json::array();
  for (const auto& f : folds) {
    nlohmann::ordered_json e;
    e["fold"] = f.fold;
    e["seed"] = f.seed;
    e["best_epoch"] = f.best_epoch;
    e["epochs_run"] = f.epochs_run;
    e["val"] = f.best_val;
    e["test"] = f.test.metric;
    e["per_task"] = f.test.per_task;
    if (metric == "rmse") e["mae"] = f.test.mae;
    j["folds"].push_back(e);
    curves["train_loss"].push_back(f.train_loss);
    curves["train_metric"].push_back(f.train_metric);
    curves["val_metric"].push_back(f.val_metric);
  }
  j["mean"] = mean;
  j["std"] = std;
  j["curves"] = curves;
  return j;
}

}  // namespace molmamba
