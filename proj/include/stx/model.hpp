#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stx/checkpoint.hpp"
#include "stx/config.hpp"
#include "stx/contrastive.hpp"
#include "stx/multiscale.hpp"
#include "stx/nn.hpp"
#include "stx/rsmi.hpp"

namespace stx {

// Encoder-decoder residual generator. Three stride-2 encoder stages with
// widths {w, 2w, 4w}, two residual blocks, three upsample-conv stages, and a
// zero-initialized output conv feeding a global skip: y = tanh(x + r(x)).
// Encoder taps (layer 0 = the input itself) feed the embedding losses.
struct Generator {
  Conv2d enc1, enc2, enc3;
  Conv2d res1a, res1b, res2a, res2b;
  Conv2d up1, up2, up3, out;

  Generator() = default;
  Generator(Index base_width, Rng& rng);

  struct Forward {
    Tensor y;                  // 3 x H x W, in [-1, 1]
    std::vector<Tensor> taps;  // {3xHxW, wxH/2xW/2, 2wxH/4xW/4, 4wxH/8xW/8}
  };

  // Encoder taps only (used on translated outputs).
  std::vector<Tensor> encode(const Tensor& image) const;
  Forward forward(const Tensor& image) const;
  void collect(const std::string& prefix, NamedTensors& params) const;
};

// Patch-level least-squares classifier emitting a score map.
struct Discriminator {
  Conv2d c1, c2, c3;

  Discriminator() = default;
  Discriminator(Index base_width, Rng& rng);

  Tensor operator()(const Tensor& image) const;  // 1 x 1 x h x w scores
  void collect(const std::string& prefix, NamedTensors& params) const;
};

// One projection head per selected encoder layer, shared between the input
// and output features of that layer within a branch.
struct BranchHeads {
  std::vector<int> layers;
  std::vector<ProjectionHead> heads;

  BranchHeads() = default;
  BranchHeads(const ExperimentConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, NamedTensors& params) const;
};

// Least-squares adversarial objectives on raw score maps:
//   loss_D = 1/2 E[(D(real) - 1)^2] + 1/2 E[D(fake)^2]
//   loss_G = 1/2 E[(D(fake) - 1)^2]
Tensor lsgan_d_loss(const Tensor& real_scores, const Tensor& fake_scores);
Tensor lsgan_g_loss(const Tensor& fake_scores);

struct AdversarialLosses {
  Tensor loss_d;
  Tensor loss_g;
};
// Applies the discriminator to both batches; the fake is detached for loss_D.
AdversarialLosses adversarial_losses(const Discriminator& disc, const Tensor& real,
                                     const Tensor& fake);

// Deterministic generator-side objective of one branch (crop draw, forward,
// adversarial + hdce + ts against the current discriminator; no updates).
// Exposed so gradient oracles can probe the full composite.
Tensor branch_generator_objective(const TrainState& state, CropMode branch, const Tensor& src,
                                  const Tensor& tgt, std::uint64_t rng_seed);

struct StepReport {
  std::int64_t step = 0;
  double d_global = 0, d_local = 0;
  double gan_global = 0, gan_local = 0;
  double hdce_global = 0, hdce_local = 0;
  double ts_global = 0, ts_local = 0;
  double total_gen = 0;
  double fused_dev = 0;
  double millis = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

struct TrainState {
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  std::int64_t step = 0;

  Generator gen_global, gen_local;
  Discriminator disc_global, disc_local;
  BranchHeads heads_global, heads_local;
  ScaleAttention attn;
  Adam opt_gen, opt_disc;

  static TrainState create(const ExperimentConfig& cfg, std::uint64_t seed);

  NamedTensors named_params() const;
  void save_checkpoint(const std::filesystem::path& path) const;
  static TrainState load_checkpoint(const std::filesystem::path& path,
                                    const ExperimentConfig& cfg);
};

// One alternating discriminator/generator update on randomly drawn images.
// Throws DivergenceError naming the first non-finite loss term.
StepReport training_step(TrainState& state, const std::vector<Tensor>& source_images,
                         const std::vector<Tensor>& target_images);

// Tiled local branch + single resized global pass + scale-map fusion.
Tensor full_image_inference(const TrainState& state, const Tensor& image);

}  // namespace stx
