#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stx/tensor.hpp"

namespace stx {

// Every experiment knob, serialized to a flat commented key=value file.
// parse(serialize(c)) == c holds exactly (doubles printed with 17 digits).
struct ExperimentConfig {
  // dataset
  Index data_image_size = 64;
  Index data_images_per_domain = 100;
  std::uint64_t data_seed = 7;
  double data_disk_frac_source = 0.26;
  double data_stripe_frac_source = 0.06;
  double data_disk_frac_target = 0.04;
  double data_stripe_frac_target = 0.28;

  // model
  Index model_base_width = 16;
  Index model_embed_dim = 16;
  Index model_head_hidden = 32;
  Index model_patch_count = 64;
  std::vector<int> model_embed_layers = {0, 1, 2, 3};

  // losses
  double loss_tau = 0.07;
  double loss_beta = 0.5;
  double loss_rho = 0.5;
  double loss_ridge = 1e-3;
  Index loss_basis_count = 64;
  Index loss_hdce_negative_count = 0;  // 0 -> K
  double loss_lambda_gan = 1.0;
  double loss_lambda_hdce = 1.0;
  double loss_lambda_ts = 2.0;
  double loss_lambda_branch_global = 1.0;
  double loss_lambda_branch_local = 1.0;

  // crops
  Index crop_global_size = 32;
  Index crop_local_size = 16;
  double crop_global_coverage = 0.5;
  Index crop_infer_stride = 0;  // 0 -> local_size / 2

  // optimizer
  double optim_lr = 2e-4;
  double optim_beta1 = 0.5;
  double optim_beta2 = 0.999;
  double optim_eps = 1e-8;

  // run
  Index run_steps = 2000;
  Index run_checkpoint_every = 500;
  std::uint64_t run_seed = 1;
  bool run_branch_global = true;
  bool run_branch_local = true;

  bool operator==(const ExperimentConfig&) const = default;

  Index infer_stride() const {
    return crop_infer_stride > 0 ? crop_infer_stride
                                 : (crop_local_size / 2 > 0 ? crop_local_size / 2 : 1);
  }

  // Throws ConfigError on out-of-range values.
  void validate() const;

  std::string serialize() const;
  static ExperimentConfig parse(const std::string& text);

  void save(const std::filesystem::path& path) const;
  static ExperimentConfig load(const std::filesystem::path& path);
};

}  // namespace stx
