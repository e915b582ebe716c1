#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace molmamba {

/// Architecture widths and depths.
struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t d_inner = 128;
  std::size_t d_state = 16;
  std::size_t conv_kernel = 4;
  std::size_t gnn_f_layers = 6;
  std::size_t gnn_a_layers = 6;
  std::size_t mamba_layers = 2;
  std::size_t mt_layers = 2;
  std::size_t attn_heads = 4;
  std::size_t rbf_count = 16;
  double rbf_cutoff = 8.0;
  std::size_t pf_table = 256;
  std::size_t pf_width = 8;
  std::size_t pd_table = 64;
  std::size_t pd_width = 8;
  // Ablation switches.
  bool use_sort = true;
  bool use_pe = true;
  bool use_gssm = true;
};

struct TrainConfig {
  double tau = 0.5;
  double alpha = 10.0;  // mask ratio, percent
  double lambda_d = 0.1;
  double lambda_s = 0.1;
  double lambda_f = 20.0;
  double lambda_mask = 0.1;
  double lr = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::size_t stage1_epochs = 50;  // pretraining: structure-only epochs before fusion training
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  std::size_t split_train = 8;
  std::size_t split_val = 1;
  std::size_t split_test = 1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 5.0;
  bool detach_pseudo_labels = true;
  std::string task_type = "classification";  // or "regression"
  std::size_t folds = 1;
  std::size_t vocab_size = 64;  // build-vocab default when --size is absent
  ModelConfig model;
};

/// Flat `key = value` text with `#` comments. Keys mirror the field names
/// above; unknown keys and malformed values raise ValidationError.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);
/// Round-trips through parse_config.
std::string format_config(const TrainConfig& cfg);
void validate(const TrainConfig& cfg);

}  // namespace molmamba
