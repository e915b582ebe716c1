#include "molmamba/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "molmamba/error.hpp"

namespace molmamba {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ValidationError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) {
    throw ValidationError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: " + key + " expects true/false, got '" + v + "'");
}

// One accessor pair per key; keeps parse and format in sync.
struct Field {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T>
Field real(T TrainConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = to_double(k, v); },
          [m](const TrainConfig& c) { return fmt(c.*m); }};
}
template <class T>
Field count(T TrainConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = static_cast<T>(to_uint(k, v)); },
          [m](const TrainConfig& c) { return std::to_string(c.*m); }};
}
Field flag(bool TrainConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = to_bool(k, v); },
          [m](const TrainConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}
template <class T>
Field mreal(T ModelConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.model.*m = to_double(k, v); },
          [m](const TrainConfig& c) { return fmt(c.model.*m); }};
}
template <class T>
Field mcount(T ModelConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) {
            c.model.*m = static_cast<T>(to_uint(k, v));
          },
          [m](const TrainConfig& c) { return std::to_string(c.model.*m); }};
}
Field mflag(bool ModelConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.model.*m = to_bool(k, v); },
          [m](const TrainConfig& c) { return std::string(c.model.*m ? "true" : "false"); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table{
      {"tau", real(&TrainConfig::tau)},
      {"alpha", real(&TrainConfig::alpha)},
      {"lambda_d", real(&TrainConfig::lambda_d)},
      {"lambda_s", real(&TrainConfig::lambda_s)},
      {"lambda_f", real(&TrainConfig::lambda_f)},
      {"lambda_mask", real(&TrainConfig::lambda_mask)},
      {"lr", real(&TrainConfig::lr)},
      {"batch_size", count(&TrainConfig::batch_size)},
      {"epochs", count(&TrainConfig::epochs)},
      {"stage1_epochs", count(&TrainConfig::stage1_epochs)},
      {"patience", count(&TrainConfig::patience)},
      {"seed", count(&TrainConfig::seed)},
      {"split_train", count(&TrainConfig::split_train)},
      {"split_val", count(&TrainConfig::split_val)},
      {"split_test", count(&TrainConfig::split_test)},
      {"weight_decay", real(&TrainConfig::weight_decay)},
      {"beta1", real(&TrainConfig::beta1)},
      {"beta2", real(&TrainConfig::beta2)},
      {"adam_eps", real(&TrainConfig::adam_eps)},
      {"grad_clip", real(&TrainConfig::grad_clip)},
      {"detach_pseudo_labels", flag(&TrainConfig::detach_pseudo_labels)},
      {"task_type",
       {[](TrainConfig& c, const std::string&, const std::string& v) { c.task_type = unquote(v); },
        [](const TrainConfig& c) { return c.task_type; }}},
      {"folds", count(&TrainConfig::folds)},
      {"vocab_size", count(&TrainConfig::vocab_size)},
      {"d_model", mcount(&ModelConfig::d_model)},
      {"d_inner", mcount(&ModelConfig::d_inner)},
      {"d_state", mcount(&ModelConfig::d_state)},
      {"conv_kernel", mcount(&ModelConfig::conv_kernel)},
      {"gnn_f_layers", mcount(&ModelConfig::gnn_f_layers)},
      {"gnn_a_layers", mcount(&ModelConfig::gnn_a_layers)},
      {"mamba_layers", mcount(&ModelConfig::mamba_layers)},
      {"mt_layers", mcount(&ModelConfig::mt_layers)},
      {"attn_heads", mcount(&ModelConfig::attn_heads)},
      {"rbf_count", mcount(&ModelConfig::rbf_count)},
      {"rbf_cutoff", mreal(&ModelConfig::rbf_cutoff)},
      {"pf_table", mcount(&ModelConfig::pf_table)},
      {"pf_width", mcount(&ModelConfig::pf_width)},
      {"pd_table", mcount(&ModelConfig::pd_table)},
      {"pd_width", mcount(&ModelConfig::pd_width)},
      {"use_sort", mflag(&ModelConfig::use_sort)},
      {"use_pe", mflag(&ModelConfig::use_pe)},
      {"use_gssm", mflag(&ModelConfig::use_gssm)},
  };
  return table;
}

}  // namespace

TrainConfig parse_config(std::string_view text) {
  TrainConfig cfg;
  std::map<std::string, const Field*> lookup;
  for (const auto& [k, f] : fields()) lookup[k] = &f;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto body = trim(line);
    if (body.empty() || body.front() == '[') continue;  // blank, or a TOML table header
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(body.substr(0, eq));
    const auto value = trim(body.substr(eq + 1));
    const auto it = lookup.find(key);
    if (it == lookup.end()) throw ValidationError("config line " + std::to_string(line_no) + ": unknown key " + key);
    it->second->set(cfg, key, value);
  }
  validate(cfg);
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& cfg) {
  std::ostringstream os;
  for (const auto& [k, f] : fields()) os << k << " = " << f.get(cfg) << '\n';
  return os.str();
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
  if (c.lambda_d < 0 || c.lambda_s < 0 || c.lambda_f < 0 || c.lambda_mask < 0) fail("loss weights must be >= 0");
  if (c.split_train + c.split_val + c.split_test != 10) fail("split ratio parts must sum to 10");
  if (c.alpha <= 0 || c.alpha > 100) fail("alpha must be in (0, 100]");
  if (c.lr < 0) fail("lr must be >= 0");
  if (c.batch_size == 0) fail("batch_size must be >= 1");
  if (c.stage1_epochs > c.epochs) fail("stage1_epochs exceeds epochs");
  if (c.task_type != "classification" && c.task_type != "regression") fail("task_type must be classification or regression");
  if (c.folds == 0) fail("folds must be >= 1");
  const auto& m = c.model;
  if (m.d_model == 0 || m.d_inner == 0 || m.d_state == 0 || m.conv_kernel == 0) fail("model widths must be >= 1");
  if (m.attn_heads == 0 || m.d_model % m.attn_heads != 0) fail("d_model must be divisible by attn_heads");
  if (m.rbf_count < 2 || m.rbf_cutoff <= 0) fail("rbf_count >= 2 and rbf_cutoff > 0 required");
  if (m.pf_table == 0 || m.pd_table == 0) fail("positional tables must be non-empty");
}

}  // namespace molmamba
